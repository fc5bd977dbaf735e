#pragma once

#include <string>
#include <vector>

#include "blm/params.hpp"
#include "blm/tape.hpp"

namespace blm {

enum class MixerKind { GatedStateRecurrence, CausalAttention };

struct MixerStackConfig {
  MixerKind kind = MixerKind::GatedStateRecurrence;
  int layers = 2;
  int width = 128;
  int ffn_width = 512;
  int n_heads = 4;    // attention variant only
  int max_pos = 512;  // attention variant only

  bool operator==(const MixerStackConfig&) const = default;
};

// Byte-resolution sequence mixer stack. Both variants are strictly causal:
//   gated-state-recurrence: per-channel h_t = sigmoid(a_t) * h_{t-1}
//                           + (1 - sigmoid(a_t)) * v_t, gated output, O(L)
//   causal-attention:       pre-norm MHA with learned positions
// Each mixer layer is followed by a pre-norm SwiGLU FFN.
class MixerStack {
 public:
  void init(ParamStore& ps, const std::string& group, const MixerStackConfig& cfg, Rng& rng);

  // L x width -> L x width
  Tape::Id forward(Tape& t, Tape::Id x) const;

  const MixerStackConfig& config() const { return cfg_; }

 private:
  struct Layer {
    Param* mix_gain = nullptr;
    // recurrence variant: value / gate / output-gate projections
    Param* w_v = nullptr;
    Param* w_a = nullptr;
    Param* w_g = nullptr;
    Param* w_out = nullptr;
    // attention variant
    Param* wq = nullptr;
    Param* wk = nullptr;
    Param* wv = nullptr;
    Param* wo = nullptr;
    Param* ffn_gain = nullptr;
    Param* w_gate = nullptr;
    Param* w_up = nullptr;
    Param* w_down = nullptr;
  };

  MixerStackConfig cfg_;
  Param* pos_emb_ = nullptr;  // attention variant only
  std::vector<Layer> layers_;
};

}  // namespace blm
