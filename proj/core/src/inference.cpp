#include "blm/inference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "blm/chunkcore.hpp"

namespace blm {

int sample(const double* logits, int n, const SamplerConfig& cfg, Rng& rng) {
  if (n < 1) throw std::invalid_argument("sample: empty logits");
  for (int i = 0; i < n; ++i)
    if (!std::isfinite(logits[i])) throw std::invalid_argument("sample: non-finite logits");

  if (cfg.kind == SamplerConfig::Kind::Greedy) {
    int best = 0;
    for (int i = 1; i < n; ++i)
      if (logits[i] > logits[best]) best = i;  // strict: ties keep the lowest id
    return best;
  }

  if (cfg.temperature <= 0.0) throw std::invalid_argument("sample: temperature must be > 0");
  std::vector<double> p(n);
  for (int i = 0; i < n; ++i) p[i] = logits[i] / cfg.temperature;

  if (cfg.kind == SamplerConfig::Kind::TopK) {
    if (cfg.top_k < 1) throw std::invalid_argument("sample: top_k must be >= 1");
    const int k = std::min(cfg.top_k, n);
    std::vector<double> sorted(p);
    std::nth_element(sorted.begin(), sorted.begin() + (k - 1), sorted.end(),
                     std::greater<double>());
    const double cutoff = sorted[k - 1];
    int quota = k;
    for (int i = 0; i < n; ++i)
      if (p[i] > cutoff) --quota;
    for (int i = 0; i < n; ++i) {
      if (p[i] > cutoff) continue;
      // break cutoff ties toward lower ids so exactly k survive
      if (p[i] == cutoff && quota > 0) {
        --quota;
        continue;
      }
      p[i] = -std::numeric_limits<double>::infinity();
    }
  }

  softmax_inplace(p.data(), n);
  double u = rng.uniform();
  for (int i = 0; i < n; ++i) {
    u -= p[i];
    if (u < 0.0) return i;
  }
  return n - 1;  // guard against accumulated rounding
}

namespace {

// Plan over the current prefix: committed bits, final byte forced closed.
ChunkPlan decode_plan(const std::vector<uint8_t>& bits) {
  std::vector<uint8_t> closed(bits);
  closed.back() = 1;
  return plan_from_labels(closed);
}

bool hits_stop(uint8_t byte, const std::vector<uint8_t>& stop_bytes) {
  return std::find(stop_bytes.begin(), stop_bytes.end(), byte) != stop_bytes.end();
}

}  // namespace

DecodeState prefill(const StudentModel& model, const ByteSequence& prompt, uint64_t seed) {
  if (prompt.empty()) throw std::invalid_argument("prefill: empty prompt");
  DecodeState state;
  state.bytes = prompt;
  state.prompt_len = prompt.size();
  state.rng = Rng(seed);

  Tape t;
  Stage2Out out = model.forward_stage2(t, prompt, /*training=*/false);
  state.boundary_bits = out.chunking.plan.mask;  // router already closes the last byte
  state.degenerate_events = model.router_degenerate_events();
  return state;
}

ByteSequence decode_jbp(const StudentModel& model, DecodeState& state, int max_bytes,
                        const SamplerConfig& sampler, const std::vector<uint8_t>& stop_bytes) {
  if (model.config().head_mode != HeadMode::Jbp)
    throw std::logic_error("decode_jbp: model head is not jbp");
  ByteSequence emitted;
  for (int step = 0; step < max_bytes; ++step) {
    const ChunkPlan plan = decode_plan(state.boundary_bits);
    Tape t;
    Stage2Out out = model.forward_stage2(t, state.bytes, false, &plan);
    const Tensor& logits = t.val(out.logits);
    const int id = sample(logits.row(logits.rows - 1), 512, sampler, state.rng);
    const auto [byte, boundary] = jbp_decode(id);
    state.bytes.push_back(static_cast<uint8_t>(byte));
    state.boundary_bits.push_back(static_cast<uint8_t>(boundary));
    emitted.push_back(static_cast<uint8_t>(byte));
    if (hits_stop(static_cast<uint8_t>(byte), stop_bytes)) break;
  }
  return emitted;
}

ByteSequence decode_mbp(const StudentModel& model, DecodeState& state, int max_bytes,
                        const SamplerConfig& sampler, const std::vector<uint8_t>& stop_bytes) {
  if (model.config().head_mode != HeadMode::Mbp)
    throw std::logic_error("decode_mbp: model head is not mbp");
  ByteSequence emitted;
  for (int step = 0; step < max_bytes; ++step) {
    const ChunkPlan plan = decode_plan(state.boundary_bits);
    Tape t;
    Stage2Out out = model.forward_stage2(t, state.bytes, false, &plan);
    const Tensor& primary = t.val(out.logits);
    const Tensor& aux = t.val(out.aux_logits);
    const int last = primary.rows - 1;

    const int byte = sample(primary.row(last), 256, sampler, state.rng);
    // aux head: greedy next-next byte, embedded through the adapter, stands
    // in for the unavailable lookahead state when routing the new byte
    int aux_byte = 0;
    for (int i = 1; i < 256; ++i)
      if (aux.row(last)[i] > aux.row(last)[aux_byte]) aux_byte = i;

    state.bytes.push_back(static_cast<uint8_t>(byte));
    emitted.push_back(static_cast<uint8_t>(byte));

    Tape te;
    const Tensor& enc = te.val(model.encode(te, state.bytes));
    const Tensor proxy = model.mbp_adapter_state(aux_byte);
    const RouterOut r = model.route_pair_eval(enc.row(enc.rows - 1), proxy.row(0));
    state.boundary_bits.push_back(static_cast<uint8_t>(r.b));
    state.degenerate_events = model.router_degenerate_events();
    if (hits_stop(static_cast<uint8_t>(byte), stop_bytes)) break;
  }
  return emitted;
}

Tensor forced_logits(const StudentModel& model, const ByteSequence& seq) {
  if (seq.empty()) throw std::invalid_argument("forced_logits: empty sequence");
  const int L = static_cast<int>(seq.size());
  Tensor out;
  for (int i = 0; i < L; ++i) {
    const int end = std::min(i + 1, L - 1);  // one-byte lookahead window
    ByteSequence prefix(seq.begin(), seq.begin() + end + 1);
    Tape t;
    Stage2Out o = model.forward_stage2(t, prefix, false);
    const Tensor& logits = t.val(o.logits);
    if (i == 0) out = Tensor(L, logits.cols);
    std::copy(logits.row(i), logits.row(i) + logits.cols, out.row(i));
  }
  return out;
}

}  // namespace blm
