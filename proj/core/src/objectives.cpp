#include "blm/objectives.hpp"

#include <cmath>
#include <stdexcept>

#include "blm/student.hpp"

namespace blm {

namespace {

void fill_report(Tape& t, Tape::Id root, const char* term, int count, LossReport* rep) {
  if (!rep) return;
  rep->value = t.val(root).at(0, 0);
  rep->terms = {{term, rep->value}};
  rep->count = count;
}

}  // namespace

Tape::Id loss_align(Tape& t, Tape::Id e_hat, const Tensor& e, LossReport* rep) {
  const Tensor& s = t.val(e_hat);
  if (s.rows != e.rows || s.cols != e.cols)
    throw std::invalid_argument("loss_align: shape mismatch");
  Tape::Id root = t.sq_l2_mean(e_hat, t.leaf(e));
  fill_report(t, root, "align", e.rows, rep);
  return root;
}

Tape::Id loss_distill(Tape& t, const Tensor& teacher_logits, Tape::Id student_logits,
                      double temperature, LossReport* rep) {
  if (temperature <= 0.0) throw std::invalid_argument("loss_distill: temperature must be > 0");
  const Tensor& s = t.val(student_logits);
  if (s.rows != teacher_logits.rows || s.cols != teacher_logits.cols)
    throw std::invalid_argument("loss_distill: shape mismatch");
  for (double v : teacher_logits.v)
    if (!std::isfinite(v)) throw std::invalid_argument("loss_distill: non-finite teacher logits");
  for (double v : s.v)
    if (!std::isfinite(v)) throw std::invalid_argument("loss_distill: non-finite student logits");
  Tape::Id root = t.kl_from_const(teacher_logits, student_logits, temperature);
  fill_report(t, root, "distill_kl", s.rows, rep);
  return root;
}

Tape::Id loss_boundary(Tape& t, Tape::Id probs, const std::vector<uint8_t>& y,
                       const std::vector<char>& whitespace_mask, double gamma,
                       LossReport* rep) {
  const Tensor& p = t.val(probs);
  if (p.rows != static_cast<int>(y.size()) || p.cols != 1)
    throw std::invalid_argument("loss_boundary: length mismatch");
  if (gamma != 0.0 && whitespace_mask.size() != y.size())
    throw std::invalid_argument("loss_boundary: whitespace mask length mismatch");

  std::vector<int> labels(y.begin(), y.end());
  Tape::Id bce = t.bce(probs, labels, 1e-7);
  Tape::Id root = bce;
  double penalty = 0.0;
  if (gamma != 0.0) {
    Tape::Id pen = t.affine(t.masked_mean(probs, whitespace_mask), gamma, 0.0);
    penalty = t.val(pen).at(0, 0);
    root = t.add(bce, pen);
  }
  if (rep) {
    rep->value = t.val(root).at(0, 0);
    rep->terms = {{"bce", t.val(bce).at(0, 0)}, {"whitespace_penalty", penalty}};
    rep->count = static_cast<int>(y.size());
  }
  return root;
}

std::vector<char> whitespace_penalty_mask(const ByteSequence& seq) {
  std::vector<char> mask(seq.size(), 0);
  for (size_t i = 0; i + 1 < seq.size(); ++i) mask[i] = seq[i + 1] == 0x20 ? 1 : 0;
  return mask;
}

Tape::Id loss_jbp(Tape& t, Tape::Id logits, const ByteSequence& bytes,
                  const std::vector<uint8_t>& boundaries, LossReport* rep) {
  const Tensor& l = t.val(logits);
  const int L = static_cast<int>(bytes.size());
  if (l.rows != L || boundaries.size() != bytes.size())
    throw std::invalid_argument("loss_jbp: length mismatch");
  if (l.cols != 512) throw std::invalid_argument("loss_jbp: logits must be 512-way");
  if (L < 2) throw std::invalid_argument("loss_jbp: need at least 2 bytes");

  std::vector<int> targets(L, -1);
  for (int i = 0; i + 1 < L; ++i) targets[i] = jbp_encode(bytes[i + 1], boundaries[i + 1]);
  Tape::Id root = t.cross_entropy_rows(logits, std::move(targets));
  fill_report(t, root, "jbp_ce", L - 1, rep);
  return root;
}

Tape::Id loss_mbp(Tape& t, Tape::Id primary, Tape::Id aux, const ByteSequence& bytes,
                  LossReport* rep) {
  const int L = static_cast<int>(bytes.size());
  if (L < 3) throw std::invalid_argument("loss_mbp: need at least 3 bytes");
  const Tensor& pl = t.val(primary);
  const Tensor& al = t.val(aux);
  if (pl.rows != L || al.rows != L || pl.cols != 256 || al.cols != 256)
    throw std::invalid_argument("loss_mbp: shape mismatch");

  std::vector<int> next(L, -1), next2(L, -1);
  for (int i = 0; i + 1 < L; ++i) next[i] = bytes[i + 1];
  for (int i = 0; i + 2 < L; ++i) next2[i] = bytes[i + 2];
  Tape::Id ce1 = t.cross_entropy_rows(primary, std::move(next));
  Tape::Id ce2 = t.cross_entropy_rows(aux, std::move(next2));
  Tape::Id root = t.add(ce1, ce2);
  if (rep) {
    rep->value = t.val(root).at(0, 0);
    rep->terms = {{"next_byte", t.val(ce1).at(0, 0)}, {"next_next_byte", t.val(ce2).at(0, 0)}};
    rep->count = (L - 1) + (L - 2);
  }
  return root;
}

double bits_per_byte(double total_ce_nats, long long total_bytes) {
  if (total_bytes <= 0) throw std::invalid_argument("bits_per_byte: byte count must be > 0");
  return total_ce_nats / (static_cast<double>(total_bytes) * std::log(2.0));
}

}  // namespace blm
