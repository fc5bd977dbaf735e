#include "blm/mixer.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace blm {

void MixerStack::init(ParamStore& ps, const std::string& group, const MixerStackConfig& cfg,
                      Rng& rng) {
  cfg_ = cfg;
  const int d = cfg.width;
  const double w_std = 0.02;
  const double res_std = w_std / std::sqrt(2.0 * cfg.layers);

  if (cfg.kind == MixerKind::CausalAttention)
    pos_emb_ = &ps.create_normal(group, "pos_emb", cfg.max_pos, d, rng, w_std);

  for (int l = 0; l < cfg.layers; ++l) {
    const std::string b = "lyr" + std::to_string(l) + ".";
    Layer lyr;
    lyr.mix_gain = &ps.create_const(group, b + "mix_gain", 1, d, 1.0);
    if (cfg.kind == MixerKind::GatedStateRecurrence) {
      lyr.w_v = &ps.create_normal(group, b + "w_v", d, d, rng, w_std);
      lyr.w_a = &ps.create_normal(group, b + "w_a", d, d, rng, w_std);
      lyr.w_g = &ps.create_normal(group, b + "w_g", d, d, rng, w_std);
      lyr.w_out = &ps.create_normal(group, b + "w_out", d, d, rng, res_std);
    } else {
      lyr.wq = &ps.create_normal(group, b + "wq", d, d, rng, w_std);
      lyr.wk = &ps.create_normal(group, b + "wk", d, d, rng, w_std);
      lyr.wv = &ps.create_normal(group, b + "wv", d, d, rng, w_std);
      lyr.wo = &ps.create_normal(group, b + "wo", d, d, rng, res_std);
    }
    lyr.ffn_gain = &ps.create_const(group, b + "ffn_gain", 1, d, 1.0);
    lyr.w_gate = &ps.create_normal(group, b + "w_gate", cfg.ffn_width, d, rng, w_std);
    lyr.w_up = &ps.create_normal(group, b + "w_up", cfg.ffn_width, d, rng, w_std);
    lyr.w_down = &ps.create_normal(group, b + "w_down", d, cfg.ffn_width, rng, res_std);
    layers_.push_back(lyr);
  }
}

Tape::Id MixerStack::forward(Tape& t, Tape::Id x) const {
  const int L = t.val(x).rows;
  if (t.val(x).cols != cfg_.width) throw std::invalid_argument("mixer: width mismatch");
  if (cfg_.kind == MixerKind::CausalAttention) {
    if (L > cfg_.max_pos) throw std::runtime_error("mixer: sequence length exceeds max_pos");
    std::vector<int> pos(L);
    std::iota(pos.begin(), pos.end(), 0);
    x = t.add(x, t.gather_rows(t.param(*pos_emb_), pos));
  }

  for (const Layer& l : layers_) {
    Tape::Id h = t.rmsnorm(x, t.param(*l.mix_gain));
    if (cfg_.kind == MixerKind::GatedStateRecurrence) {
      Tape::Id v = t.matmul(h, t.param(*l.w_v), false, true);
      Tape::Id a = t.sigmoid(t.matmul(h, t.param(*l.w_a), false, true));
      Tape::Id g = t.matmul(h, t.param(*l.w_g), false, true);
      Tape::Id u = t.sub(v, t.mul(a, v));  // (1 - a) * v
      Tape::Id state = t.linear_recurrence(a, u);
      Tape::Id y = t.mul(state, t.silu(g));
      x = t.add(x, t.matmul(y, t.param(*l.w_out), false, true));
    } else {
      Tape::Id q = t.matmul(h, t.param(*l.wq), false, true);
      Tape::Id k = t.matmul(h, t.param(*l.wk), false, true);
      Tape::Id v = t.matmul(h, t.param(*l.wv), false, true);
      Tape::Id a = t.causal_attention(q, k, v, cfg_.n_heads);
      x = t.add(x, t.matmul(a, t.param(*l.wo), false, true));
    }

    Tape::Id f = t.rmsnorm(x, t.param(*l.ffn_gain));
    Tape::Id gate = t.silu(t.matmul(f, t.param(*l.w_gate), false, true));
    Tape::Id up = t.matmul(f, t.param(*l.w_up), false, true);
    x = t.add(x, t.matmul(t.mul(gate, up), t.param(*l.w_down), false, true));
  }
  return x;
}

}  // namespace blm
