#include "blm/student.hpp"

#include <numeric>
#include <stdexcept>

#include "blm/checkpoint.hpp"

namespace blm {

const char* to_string(HeadMode m) {
  switch (m) {
    case HeadMode::Token: return "token";
    case HeadMode::Jbp: return "jbp";
    case HeadMode::Mbp: return "mbp";
  }
  return "?";
}

const char* to_string(BoundarySource s) {
  return s == BoundarySource::TeacherLabels ? "tokenizer" : "router";
}

const char* to_string(RouterKind k) {
  return k == RouterKind::LookaheadCosine ? "lookahead" : "decoupled";
}

void StudentConfig::validate() const {
  if (encoder.width != decoder.width || encoder.width != core.dim)
    throw std::invalid_argument(
        "student config: encoder, decoder and core widths must agree (no width adapter)");
  if (token_vocab < 1) throw std::invalid_argument("student config: token_vocab must be >= 1");
}

std::string StudentConfig::canonical() const {
  auto mixer = [](const MixerStackConfig& m) {
    return std::string(m.kind == MixerKind::GatedStateRecurrence ? "gsr" : "attn") + ":" +
           std::to_string(m.layers) + ":" + std::to_string(m.width) + ":" +
           std::to_string(m.ffn_width) + ":" + std::to_string(m.n_heads) + ":" +
           std::to_string(m.max_pos);
  };
  return std::string("student|enc=") + mixer(encoder) + "|dec=" + mixer(decoder) +
         "|core=" + std::to_string(core.dim) + ":" + std::to_string(core.n_layers) + ":" +
         std::to_string(core.n_heads) + ":" + std::to_string(core.ffn_width) + ":" +
         std::to_string(core.max_pos) + "|vocab=" + std::to_string(token_vocab) +
         "|head=" + to_string(head_mode) + "|labels=" + to_string(boundary_source) +
         "|router=" + to_string(router);
}

uint64_t StudentConfig::config_hash() const { return fnv1a64(canonical()); }

int jbp_encode(int byte, int boundary) {
  if (byte < 0 || byte >= 256) throw std::out_of_range("jbp_encode: byte out of [0,256)");
  if (boundary != 0 && boundary != 1) throw std::out_of_range("jbp_encode: boundary not a bit");
  return byte + 256 * boundary;
}

std::pair<int, int> jbp_decode(int id) {
  if (id < 0 || id >= 512) throw std::out_of_range("jbp_decode: id out of [0,512)");
  return {id % 256, id / 256};
}

StudentModel::StudentModel(const StudentConfig& cfg, uint64_t seed) : cfg_(cfg) {
  cfg.validate();
  Rng rng(seed);
  const int d = cfg.core.dim;

  byte_emb_ = &params_.create_normal("embed", "byte_emb", 256, d, rng, 0.02);
  encoder_.init(params_, "encoder", cfg.encoder, rng);

  if (cfg.router == RouterKind::LookaheadCosine) {
    router_q_ = &params_.create("router", "wq", d, d);
    router_k_ = &params_.create("router", "wk", d, d);
    for (int i = 0; i < d; ++i) {
      router_q_->value.at(i, i) = 1.0;
      router_k_->value.at(i, i) = 1.0;
    }
  } else {
    MixerStackConfig rm = cfg.encoder;
    rm.layers = 1;
    router_mixer_.init(params_, "router", rm, rng);
    router_w_ = &params_.create_normal("router", "w_p", 1, d, rng, 0.02);
    router_b_ = &params_.create("router", "b_p", 1, 1);
  }

  core_.init(params_, "core", cfg.core, rng);
  null_state_ = &params_.create_normal("chunk", "null_state", 1, d, rng, 0.02);
  residual_proj_ = &params_.create("chunk", "residual_proj", d, d);  // zero init

  if (cfg.head_mode == HeadMode::Token) {
    token_head_ = &params_.create_normal("token_head", "out", cfg.token_vocab, d, rng, 0.02);
  } else {
    decoder_.init(params_, "decoder", cfg.decoder, rng);
    const int primary = cfg.head_mode == HeadMode::Jbp ? 512 : 256;
    head_primary_ = &params_.create_normal("head", "primary", primary, d, rng, 0.02);
    if (cfg.head_mode == HeadMode::Mbp) {
      head_aux_ = &params_.create_normal("head", "aux", 256, d, rng, 0.02);
      head_adapter_ = &params_.create_normal("head", "adapter", d, d, rng, 0.02);
    }
  }
}

Stage1Out StudentModel::forward_stage1(Tape& t, const ByteSequence& seq,
                                       const TokenSegmentation& seg,
                                       const Tensor* inject) const {
  if (cfg_.head_mode != HeadMode::Token)
    throw std::logic_error("forward_stage1 requires the token head");
  if (seq.empty()) throw std::invalid_argument("forward_stage1: empty sequence");
  if (!seg.spans.empty() && seg.spans.back().second != static_cast<int>(seq.size()) - 1)
    throw std::invalid_argument("forward_stage1: segmentation does not cover the sequence");

  std::vector<int> bytes(seq.begin(), seq.end());
  Tape::Id enc = encoder_.forward(t, t.gather_rows(t.param(*byte_emb_), bytes));
  Stage1Out out;
  out.e_hat = t.gather_rows(enc, seg.boundary_positions());
  Tape::Id chunk_in = inject ? t.leaf(*inject) : out.e_hat;
  Tape::Id core_out = core_.forward(t, chunk_in);
  out.token_logits = t.matmul(core_out, t.param(*token_head_), false, true);
  return out;
}

Tape::Id StudentModel::encode(Tape& t, const ByteSequence& seq) const {
  if (seq.empty()) throw std::invalid_argument("encode: empty sequence");
  std::vector<int> bytes(seq.begin(), seq.end());
  return encoder_.forward(t, t.gather_rows(t.param(*byte_emb_), bytes));
}

Tape::Id StudentModel::mbp_adapter_predictions(Tape& t, const ByteSequence& seq) const {
  if (cfg_.head_mode != HeadMode::Mbp)
    throw std::logic_error("mbp_adapter_predictions: not in mbp mode");
  std::vector<int> bytes(seq.begin(), seq.end());
  return t.matmul(t.gather_rows(t.param(*byte_emb_), bytes), t.param(*head_adapter_), false,
                  true);
}

TapeChunking StudentModel::route(Tape& t, Tape::Id encoder_states) const {
  const int L = t.val(encoder_states).rows;
  TapeChunking ch;
  if (cfg_.router == RouterKind::LookaheadCosine) {
    if (L == 1) {
      ch.probs = t.leaf(Tensor::full(1, 1, 1.0));
    } else {
      Tape::Id q = t.matmul(encoder_states, t.param(*router_q_), false, true);
      Tape::Id k = t.matmul(encoder_states, t.param(*router_k_), false, true);
      std::vector<int> cur(L - 1), nxt(L - 1);
      std::iota(cur.begin(), cur.end(), 0);
      std::iota(nxt.begin(), nxt.end(), 1);
      Tape::Id cos = t.cosine_pairs(t.gather_rows(q, cur), t.gather_rows(k, nxt), 1e-12,
                                    &degenerate_events_);
      ch.probs = t.concat_rows(t.affine(cos, -0.5, 0.5), t.leaf(Tensor::full(1, 1, 1.0)));
    }
  } else {
    Tape::Id m = router_mixer_.forward(t, encoder_states);
    Tape::Id p = t.sigmoid(
        t.add_rowvec(t.matmul(m, t.param(*router_w_), false, true), t.param(*router_b_)));
    if (L == 1) {
      ch.probs = t.leaf(Tensor::full(1, 1, 1.0));
    } else {
      std::vector<int> head(L - 1);
      std::iota(head.begin(), head.end(), 0);
      ch.probs = t.concat_rows(t.gather_rows(p, head), t.leaf(Tensor::full(1, 1, 1.0)));
    }
  }

  const Tensor& pv = t.val(ch.probs);
  ch.plan.probs.assign(pv.v.begin(), pv.v.end());
  ch.plan.mask.resize(L);
  for (int i = 0; i < L; ++i) {
    ch.plan.mask[i] = ch.plan.probs[i] >= 0.5 ? 1 : 0;
    if (ch.plan.mask[i]) ch.plan.boundary_indices.push_back(i);
  }
  return ch;
}

Stage2Out StudentModel::forward_stage2(Tape& t, const ByteSequence& seq, bool training,
                                       const ChunkPlan* forced_plan) const {
  if (cfg_.head_mode == HeadMode::Token)
    throw std::logic_error("forward_stage2 requires a byte head (jbp or mbp)");
  if (seq.empty()) throw std::invalid_argument("forward_stage2: empty sequence");

  const int L = static_cast<int>(seq.size());
  std::vector<int> bytes(seq.begin(), seq.end());
  Tape::Id enc = encoder_.forward(t, t.gather_rows(t.param(*byte_emb_), bytes));

  Stage2Out out;
  out.encoder_states = enc;
  if (forced_plan) {
    if (forced_plan->length() != L)
      throw std::invalid_argument("forward_stage2: forced plan length mismatch");
    Tensor pv(L, 1);
    for (int i = 0; i < L; ++i) pv.at(i, 0) = forced_plan->probs[i];
    out.chunking = {*forced_plan, t.leaf(std::move(pv))};
  } else {
    out.chunking = route(t, enc);
  }
  const ChunkPlan& plan = out.chunking.plan;

  Tape::Id h = chunk_select(t, enc, plan);
  if (training) h = t.smooth_chunks(h, boundary_probs(t, out.chunking));
  Tape::Id core_out = core_.forward(t, h);
  Tape::Id u = shifted_upsample(t, core_out, t.param(*null_state_), plan);
  u = confidence_scale(t, u, out.chunking, /*hard=*/true);
  Tape::Id merged = residual_merge(t, u, enc, *residual_proj_);
  Tape::Id dec = decoder_.forward(t, merged);

  out.logits = t.matmul(dec, t.param(*head_primary_), false, true);
  out.aux_logits = cfg_.head_mode == HeadMode::Mbp
                       ? t.matmul(dec, t.param(*head_aux_), false, true)
                       : -1;
  return out;
}

Tensor StudentModel::mbp_adapter_state(int byte) const {
  if (cfg_.head_mode != HeadMode::Mbp) throw std::logic_error("mbp_adapter_state: not in mbp mode");
  if (byte < 0 || byte >= 256) throw std::out_of_range("mbp_adapter_state: byte out of range");
  const int d = cfg_.core.dim;
  Tensor out(1, d);
  const Tensor& w = head_adapter_->value;  // d x d, output = emb * w^T
  for (int o = 0; o < d; ++o) {
    double s = 0.0;
    for (int c = 0; c < d; ++c) s += byte_emb_->value.at(byte, c) * w.at(o, c);
    out.at(0, o) = s;
  }
  return out;
}

RouterOut StudentModel::route_pair_eval(const double* x_curr, const double* x_next) const {
  if (cfg_.router != RouterKind::LookaheadCosine)
    throw std::logic_error("route_pair_eval: needs the lookahead-cosine router");
  const int d = cfg_.core.dim;
  std::vector<double> q(d, 0.0), k(d, 0.0);
  for (int o = 0; o < d; ++o)
    for (int c = 0; c < d; ++c) {
      q[o] += x_curr[c] * router_q_->value.at(o, c);
      k[o] += x_next[c] * router_k_->value.at(o, c);
    }
  return route_lookahead(q.data(), k.data(), d, &degenerate_events_);
}

void StudentModel::save(const std::string& dir, const std::string& stage) const {
  save_checkpoint(dir, {"student", stage, cfg_.config_hash()}, params_.all());
}

StudentModel StudentModel::load(const std::string& dir, const StudentConfig& cfg,
                                const std::string& expected_stage, bool migrate,
                                uint64_t init_seed) {
  const CheckpointMeta meta = read_checkpoint_meta(dir);
  if (meta.role != "student")
    throw std::runtime_error("student load: checkpoint role is '" + meta.role + "'");
  if (!expected_stage.empty() && meta.stage != expected_stage)
    throw std::runtime_error("student load: stage mismatch (checkpoint '" + meta.stage +
                             "', expected '" + expected_stage +
                             "'); pass the migration flag to carry parameters across stages");
  StudentModel m(cfg, init_seed);
  if (migrate)
    load_checkpoint_partial(dir, m.params_.all());
  else
    load_checkpoint(dir, m.params_.all(), cfg.config_hash());
  return m;
}

StudentModel init_from_teacher(const TeacherModel& teacher, const StudentConfig& cfg,
                               uint64_t seed) {
  if (!(teacher.config().core == cfg.core))
    throw std::invalid_argument("init_from_teacher: core dimensions differ from the teacher");
  if (cfg.token_vocab != teacher.config().vocab)
    throw std::invalid_argument("init_from_teacher: token vocab differs from the teacher");
  StudentModel s(cfg, seed);
  copy_params(teacher.core().ordered_params(), s.core_.ordered_params());
  if (cfg.head_mode == HeadMode::Token)
    copy_params({&teacher.head()}, {s.token_head_});
  return s;
}

ChunkPlan plan_from_labels(const std::vector<uint8_t>& boundary_labels) {
  if (boundary_labels.empty() || boundary_labels.back() != 1)
    throw std::invalid_argument("plan_from_labels: labels must end with a boundary");
  ChunkPlan plan;
  const int L = static_cast<int>(boundary_labels.size());
  plan.probs.resize(L);
  plan.mask = boundary_labels;
  for (int i = 0; i < L; ++i) {
    plan.probs[i] = boundary_labels[i] ? 1.0 : 0.0;
    if (boundary_labels[i]) plan.boundary_indices.push_back(i);
  }
  return plan;
}

}  // namespace blm
