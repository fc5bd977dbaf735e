#pragma once

#include <vector>

#include "blm/tape.hpp"

namespace blm {

// Dynamic-chunking plan for one byte window: per-byte boundary probabilities
// and the induced chunk structure. The final byte is always a boundary.
struct ChunkPlan {
  std::vector<double> probs;            // p_i in [0,1], length L
  std::vector<uint8_t> mask;            // b_i = 1 iff p_i >= 0.5
  std::vector<int> boundary_indices;    // strictly increasing, last = L-1
  int chunk_count() const { return static_cast<int>(boundary_indices.size()); }
  int length() const { return static_cast<int>(probs.size()); }
};

struct ChunkStates {
  Tensor H;  // chunk_count x d
  bool smoothed = false;
};

struct RouterOut {
  double p;
  int b;
};

// --- value-level (inference / eval / oracles) ---

// p = (1 - cos(x_curr, x_next)) / 2, b = I(p >= 0.5). Either norm < eps maps
// to p = 0.5, b = 1 and bumps *degenerate_count.
RouterOut route_lookahead(const double* x_curr, const double* x_next, int d,
                          int* degenerate_count = nullptr, double eps = 1e-12);

// One-byte lookahead over the whole window; position L-1 is forced p=1, b=1.
ChunkPlan route_sequence(const Tensor& encoder_states, int* degenerate_count = nullptr);

// H[k] = encoder_states[boundary_indices[k]]
Tensor chunk_select(const Tensor& encoder_states, const ChunkPlan& plan);

// z_1 = H_1; z_k = p_k*H_k + (1-p_k)*z_{k-1}
ChunkStates smooth_chunk_states(const ChunkStates& h, const std::vector<double>& p_at_boundaries);

// U_i = H_k at the final byte of chunk k, else H_{k-1} (null_state for k=1)
Tensor shifted_upsample(const ChunkStates& h, const ChunkPlan& plan, const Tensor& null_state);

// --- tape-level (training) ---

struct TapeChunking {
  ChunkPlan plan;
  Tape::Id probs;  // L x 1 on the tape; the forced final 1 carries no gradient
};

TapeChunking route_sequence(Tape& t, Tape::Id encoder_states, int* degenerate_count = nullptr);

Tape::Id chunk_select(Tape& t, Tape::Id encoder_states, const ChunkPlan& plan);

// probs gathered at the boundary bytes: chunk_count x 1
Tape::Id boundary_probs(Tape& t, const TapeChunking& ch);

Tape::Id smooth_chunk_states(Tape& t, Tape::Id h, Tape::Id p_at_boundaries);

Tape::Id shifted_upsample(Tape& t, Tape::Id h, Tape::Id null_state, const ChunkPlan& plan);

// U + encoder_states * projection^T; the projection starts at zero so the
// merge is initially the identity on U.
Tape::Id residual_merge(Tape& t, Tape::Id u, Tape::Id encoder_states, Param& projection);

// Straight-through confidence scaling: c_i = p_i at boundaries, 1 - p_i
// elsewhere (so c_i >= 0.5 always rounds to 1); forward leaves U unchanged
// when hard, gradients flow through c_i * U_i.
Tape::Id confidence_scale(Tape& t, Tape::Id u, const TapeChunking& ch, bool hard);

}  // namespace blm
