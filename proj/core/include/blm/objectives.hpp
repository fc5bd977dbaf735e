#pragma once

#include <map>
#include <string>
#include <vector>

#include "blm/bytecorpus.hpp"
#include "blm/tape.hpp"

namespace blm {

// Scalar loss plus its additive breakdown, for the training log.
struct LossReport {
  double value = 0.0;
  std::map<std::string, double> terms;
  int count = 0;  // contributing positions
};

// mean over tokens of ||e_k - e_hat_k||^2; e is the (constant) teacher side
Tape::Id loss_align(Tape& t, Tape::Id e_hat, const Tensor& e, LossReport* rep = nullptr);

// mean over rows of KL(softmax(teacher/T) || softmax(student/T)); the teacher
// side is a plain tensor, so no gradient can reach it
Tape::Id loss_distill(Tape& t, const Tensor& teacher_logits, Tape::Id student_logits,
                      double temperature = 1.0, LossReport* rep = nullptr);

// BCE over per-byte boundary probabilities (clipped to [1e-7, 1-1e-7]) plus
// gamma * mean(p over whitespace_mask); gamma = 0 disables the penalty term
Tape::Id loss_boundary(Tape& t, Tape::Id probs, const std::vector<uint8_t>& y,
                       const std::vector<char>& whitespace_mask, double gamma,
                       LossReport* rep = nullptr);

// positions whose NEXT byte is an ASCII space (the penalty site)
std::vector<char> whitespace_penalty_mask(const ByteSequence& seq);

// CE of L x 512 logits against jbp_encode(byte_{i+1}, boundary_{i+1}); the
// final position has no target
Tape::Id loss_jbp(Tape& t, Tape::Id logits, const ByteSequence& bytes,
                  const std::vector<uint8_t>& boundaries, LossReport* rep = nullptr);

// CE(primary_i, byte_{i+1}) + CE(aux_i, byte_{i+2}), equal weights
Tape::Id loss_mbp(Tape& t, Tape::Id primary, Tape::Id aux, const ByteSequence& bytes,
                  LossReport* rep = nullptr);

double bits_per_byte(double total_ce_nats, long long total_bytes);

}  // namespace blm
