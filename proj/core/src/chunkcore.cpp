#include "blm/chunkcore.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace blm {

namespace {

ChunkPlan plan_from_probs(std::vector<double> probs) {
  ChunkPlan plan;
  plan.probs = std::move(probs);
  const int L = plan.length();
  plan.mask.resize(L);
  for (int i = 0; i < L; ++i) {
    plan.mask[i] = plan.probs[i] >= 0.5 ? 1 : 0;
    if (plan.mask[i]) plan.boundary_indices.push_back(i);
  }
  return plan;
}

}  // namespace

RouterOut route_lookahead(const double* x_curr, const double* x_next, int d,
                          int* degenerate_count, double eps) {
  double na = 0.0, nb = 0.0, ab = 0.0;
  for (int i = 0; i < d; ++i) {
    na += x_curr[i] * x_curr[i];
    nb += x_next[i] * x_next[i];
    ab += x_curr[i] * x_next[i];
  }
  if (na < eps * eps || nb < eps * eps) {
    if (degenerate_count) ++*degenerate_count;
    return {0.5, 1};
  }
  // sqrt(na * nb) instead of sqrt(na) * sqrt(nb): for x_next == +-x_curr the
  // quotient is then exactly +-1 (sqrt(fl(s*s)) == s in IEEE arithmetic), so
  // the identical/antipodal cases give p = 0 / 1 without tolerance
  const double cos = std::clamp(ab / std::sqrt(na * nb), -1.0, 1.0);
  const double p = (1.0 - cos) / 2.0;
  return {p, p >= 0.5 ? 1 : 0};
}

ChunkPlan route_sequence(const Tensor& encoder_states, int* degenerate_count) {
  const int L = encoder_states.rows;
  if (L < 1) throw std::invalid_argument("route_sequence: empty sequence");
  std::vector<double> p(L);
  for (int i = 0; i + 1 < L; ++i)
    p[i] = route_lookahead(encoder_states.row(i), encoder_states.row(i + 1),
                           encoder_states.cols, degenerate_count)
               .p;
  p[L - 1] = 1.0;  // terminal boundary is forced
  return plan_from_probs(std::move(p));
}

Tensor chunk_select(const Tensor& encoder_states, const ChunkPlan& plan) {
  if (plan.length() != encoder_states.rows)
    throw std::invalid_argument("chunk_select: plan length mismatch");
  Tensor h(plan.chunk_count(), encoder_states.cols);
  for (int k = 0; k < plan.chunk_count(); ++k) {
    const double* src = encoder_states.row(plan.boundary_indices[k]);
    std::copy(src, src + encoder_states.cols, h.row(k));
  }
  return h;
}

ChunkStates smooth_chunk_states(const ChunkStates& h, const std::vector<double>& p) {
  if (static_cast<int>(p.size()) != h.H.rows)
    throw std::invalid_argument("smooth_chunk_states: length mismatch");
  ChunkStates out{h.H, true};
  for (int k = 1; k < out.H.rows; ++k)
    for (int c = 0; c < out.H.cols; ++c)
      out.H.at(k, c) = p[k] * h.H.at(k, c) + (1.0 - p[k]) * out.H.at(k - 1, c);
  return out;
}

Tensor shifted_upsample(const ChunkStates& h, const ChunkPlan& plan, const Tensor& null_state) {
  if (h.H.rows != plan.chunk_count())
    throw std::invalid_argument("shifted_upsample: plan/state mismatch");
  Tensor u(plan.length(), h.H.cols);
  int k = 0;
  for (int i = 0; i < plan.length(); ++i) {
    const double* src = plan.mask[i] ? h.H.row(k) : (k == 0 ? null_state.row(0) : h.H.row(k - 1));
    std::copy(src, src + u.cols, u.row(i));
    if (plan.mask[i]) ++k;
  }
  return u;
}

TapeChunking route_sequence(Tape& t, Tape::Id encoder_states, int* degenerate_count) {
  const int L = t.val(encoder_states).rows;
  if (L < 1) throw std::invalid_argument("route_sequence: empty sequence");
  TapeChunking out;
  if (L == 1) {
    out.probs = t.leaf(Tensor::full(1, 1, 1.0));
  } else {
    std::vector<int> cur(L - 1), nxt(L - 1);
    std::iota(cur.begin(), cur.end(), 0);
    std::iota(nxt.begin(), nxt.end(), 1);
    Tape::Id cos = t.cosine_pairs(t.gather_rows(encoder_states, cur),
                                  t.gather_rows(encoder_states, nxt), 1e-12, degenerate_count);
    out.probs = t.concat_rows(t.affine(cos, -0.5, 0.5), t.leaf(Tensor::full(1, 1, 1.0)));
  }
  const Tensor& pv = t.val(out.probs);
  out.plan = [&] {
    std::vector<double> p(pv.v.begin(), pv.v.end());
    ChunkPlan plan;
    plan.probs = std::move(p);
    plan.mask.resize(L);
    for (int i = 0; i < L; ++i) {
      plan.mask[i] = plan.probs[i] >= 0.5 ? 1 : 0;
      if (plan.mask[i]) plan.boundary_indices.push_back(i);
    }
    return plan;
  }();
  return out;
}

Tape::Id chunk_select(Tape& t, Tape::Id encoder_states, const ChunkPlan& plan) {
  return t.gather_rows(encoder_states, plan.boundary_indices);
}

Tape::Id boundary_probs(Tape& t, const TapeChunking& ch) {
  return t.gather_rows(ch.probs, ch.plan.boundary_indices);
}

Tape::Id smooth_chunk_states(Tape& t, Tape::Id h, Tape::Id p_at_boundaries) {
  return t.smooth_chunks(h, p_at_boundaries);
}

Tape::Id shifted_upsample(Tape& t, Tape::Id h, Tape::Id null_state, const ChunkPlan& plan) {
  return t.shifted_upsample(h, null_state, plan.boundary_indices, plan.length());
}

Tape::Id residual_merge(Tape& t, Tape::Id u, Tape::Id encoder_states, Param& projection) {
  return t.add(u, t.matmul(encoder_states, t.param(projection), false, true));
}

Tape::Id confidence_scale(Tape& t, Tape::Id u, const TapeChunking& ch, bool hard) {
  const int L = ch.plan.length();
  Tensor sel(L, 1), off(L, 1);  // c = sel*p + off: boundary -> p, else 1-p
  for (int i = 0; i < L; ++i) {
    sel.at(i, 0) = ch.plan.mask[i] ? 1.0 : -1.0;
    off.at(i, 0) = ch.plan.mask[i] ? 0.0 : 1.0;
  }
  Tape::Id c = t.add(t.mul(ch.probs, t.leaf(std::move(sel))), t.leaf(std::move(off)));
  return t.confidence_scale(u, c, hard);
}

}  // namespace blm
