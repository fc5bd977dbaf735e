#include "blm/transformer.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace blm {

void TransformerCore::init(ParamStore& ps, const std::string& group,
                           const TransformerConfig& cfg, Rng& rng) {
  cfg_ = cfg;
  const int d = cfg.dim;
  const double w_std = 0.02;
  // residual-output projections scaled down with depth
  const double res_std = w_std / std::sqrt(2.0 * cfg.n_layers);

  pos_emb_ = &ps.create_normal(group, "pos_emb", cfg.max_pos, d, rng, w_std);
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string b = "blk" + std::to_string(l) + ".";
    Block blk;
    blk.attn_gain = &ps.create_const(group, b + "attn_gain", 1, d, 1.0);
    blk.wq = &ps.create_normal(group, b + "wq", d, d, rng, w_std);
    blk.wk = &ps.create_normal(group, b + "wk", d, d, rng, w_std);
    blk.wv = &ps.create_normal(group, b + "wv", d, d, rng, w_std);
    blk.wo = &ps.create_normal(group, b + "wo", d, d, rng, res_std);
    blk.ffn_gain = &ps.create_const(group, b + "ffn_gain", 1, d, 1.0);
    blk.w_gate = &ps.create_normal(group, b + "w_gate", cfg.ffn_width, d, rng, w_std);
    blk.w_up = &ps.create_normal(group, b + "w_up", cfg.ffn_width, d, rng, w_std);
    blk.w_down = &ps.create_normal(group, b + "w_down", d, cfg.ffn_width, rng, res_std);
    blocks_.push_back(blk);
  }
  final_gain_ = &ps.create_const(group, "final_gain", 1, d, 1.0);
}

Tape::Id TransformerCore::forward(Tape& t, Tape::Id x) const {
  const int L = t.val(x).rows;
  if (L > cfg_.max_pos)
    throw std::runtime_error("transformer: sequence length exceeds max_pos");
  std::vector<int> pos(L);
  std::iota(pos.begin(), pos.end(), 0);
  x = t.add(x, t.gather_rows(t.param(*pos_emb_), pos));

  for (const Block& b : blocks_) {
    Tape::Id h = t.rmsnorm(x, t.param(*b.attn_gain));
    Tape::Id q = t.matmul(h, t.param(*b.wq), false, true);
    Tape::Id k = t.matmul(h, t.param(*b.wk), false, true);
    Tape::Id v = t.matmul(h, t.param(*b.wv), false, true);
    Tape::Id a = t.causal_attention(q, k, v, cfg_.n_heads);
    x = t.add(x, t.matmul(a, t.param(*b.wo), false, true));

    h = t.rmsnorm(x, t.param(*b.ffn_gain));
    Tape::Id gate = t.silu(t.matmul(h, t.param(*b.w_gate), false, true));
    Tape::Id up = t.matmul(h, t.param(*b.w_up), false, true);
    x = t.add(x, t.matmul(t.mul(gate, up), t.param(*b.w_down), false, true));
  }
  return t.rmsnorm(x, t.param(*final_gain_));
}

std::vector<Param*> TransformerCore::ordered_params() const {
  std::vector<Param*> out{pos_emb_};
  for (const Block& b : blocks_) {
    out.push_back(b.attn_gain);
    out.push_back(b.wq);
    out.push_back(b.wk);
    out.push_back(b.wv);
    out.push_back(b.wo);
    out.push_back(b.ffn_gain);
    out.push_back(b.w_gate);
    out.push_back(b.w_up);
    out.push_back(b.w_down);
  }
  out.push_back(final_gain_);
  return out;
}

void copy_params(const std::vector<Param*>& src, const std::vector<Param*>& dst) {
  if (src.size() != dst.size())
    throw std::runtime_error("copy_params: parameter count mismatch");
  for (size_t i = 0; i < src.size(); ++i) {
    if (!src[i]->value.same_shape(dst[i]->value))
      throw std::runtime_error("copy_params: shape mismatch at " + src[i]->name);
    dst[i]->value = src[i]->value;
  }
}

}  // namespace blm
