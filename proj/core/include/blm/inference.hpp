#pragma once

#include <vector>

#include "blm/bytecorpus.hpp"
#include "blm/rng.hpp"
#include "blm/student.hpp"

namespace blm {

struct SamplerConfig {
  enum class Kind { Greedy, Temperature, TopK };
  Kind kind = Kind::Greedy;
  double temperature = 1.0;  // used by Temperature and TopK
  int top_k = 0;

  static SamplerConfig greedy() { return {}; }
  static SamplerConfig temp(double tau) { return {Kind::Temperature, tau, 0}; }
  static SamplerConfig topk(int k, double tau = 1.0) { return {Kind::TopK, tau, k}; }
};

// Greedy is argmax with lowest-id tie-break; temperature/top-k sample from the
// (renormalized) softmax. Throws on non-finite logits or temperature <= 0.
int sample(const double* logits, int n, const SamplerConfig& cfg, Rng& rng);

struct DecodeState {
  ByteSequence bytes;                  // prompt + everything generated
  std::vector<uint8_t> boundary_bits;  // committed per-byte boundary bits
  size_t prompt_len = 0;
  int degenerate_events = 0;
  Rng rng{0};
};

// Parallel forward over the prompt with lookahead routing. The final prompt
// byte closes a chunk before decoding begins (forced-boundary convention at
// the prompt/generation seam).
DecodeState prefill(const StudentModel& model, const ByteSequence& prompt, uint64_t seed);

// Autoregressive decoding by full recompute over the prefix each step (the
// core-sized caches are not worth it at this scale). JBP reads each byte's
// boundary bit out of the joint id; MBP resolves it from the auxiliary
// head's argmax byte through the adapter and the lookahead router.
// Returns the newly generated bytes; state is extended in place.
ByteSequence decode_jbp(const StudentModel& model, DecodeState& state, int max_bytes,
                        const SamplerConfig& sampler,
                        const std::vector<uint8_t>& stop_bytes = {});
ByteSequence decode_mbp(const StudentModel& model, DecodeState& state, int max_bytes,
                        const SamplerConfig& sampler,
                        const std::vector<uint8_t>& stop_bytes = {});

// Teacher-forced decoder logits: row i is computed from the prefix
// seq[0..i+1] only (the decoder's one-byte-lookahead bound), using the
// learned router. Equals the parallel eval forward row for row.
Tensor forced_logits(const StudentModel& model, const ByteSequence& seq);

}  // namespace blm
