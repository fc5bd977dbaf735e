#pragma once

#include <string>
#include <vector>

#include "blm/params.hpp"
#include "blm/tape.hpp"

namespace blm {

struct TransformerConfig {
  int dim = 128;
  int n_layers = 2;
  int n_heads = 4;
  int ffn_width = 512;
  int max_pos = 512;

  bool operator==(const TransformerConfig&) const = default;
};

// Pre-norm causal transformer trunk: learned absolute positions, RMSNorm,
// multi-head attention, SwiGLU FFN, final RMSNorm. Shared verbatim between
// the teacher and the student core so a copied core computes identically.
class TransformerCore {
 public:
  void init(ParamStore& ps, const std::string& group, const TransformerConfig& cfg,
            Rng& rng);

  // x is Lxdim; returns final-normed Lxdim. Throws if L > max_pos.
  Tape::Id forward(Tape& t, Tape::Id x) const;

  // Parameters in a fixed order, for copying between models.
  std::vector<Param*> ordered_params() const;

  const TransformerConfig& config() const { return cfg_; }

 private:
  struct Block {
    Param* attn_gain;
    Param* wq;
    Param* wk;
    Param* wv;
    Param* wo;
    Param* ffn_gain;
    Param* w_gate;
    Param* w_up;
    Param* w_down;
  };

  TransformerConfig cfg_;
  Param* pos_emb_ = nullptr;
  std::vector<Block> blocks_;
  Param* final_gain_ = nullptr;
};

// value-copy between identically shaped parameter lists; throws on mismatch
void copy_params(const std::vector<Param*>& src, const std::vector<Param*>& dst);

}  // namespace blm
