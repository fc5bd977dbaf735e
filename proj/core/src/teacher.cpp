#include "blm/teacher.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "blm/checkpoint.hpp"
#include "blm/optimizer.hpp"
#include "blm/schedule.hpp"

namespace blm {

std::string TeacherConfig::canonical() const {
  return "teacher|vocab=" + std::to_string(vocab) + "|dim=" + std::to_string(core.dim) +
         "|layers=" + std::to_string(core.n_layers) +
         "|heads=" + std::to_string(core.n_heads) +
         "|ffn=" + std::to_string(core.ffn_width) +
         "|maxpos=" + std::to_string(core.max_pos);
}

uint64_t TeacherConfig::config_hash() const { return fnv1a64(canonical()); }

TeacherModel::TeacherModel(const TeacherConfig& cfg, uint64_t seed) : cfg_(cfg) {
  Rng rng(seed);
  tok_emb_ = &params_.create_normal("embed", "tok_emb", cfg.vocab, cfg.core.dim, rng, 0.02);
  core_.init(params_, "core", cfg.core, rng);
  head_ = &params_.create_normal("head", "out", cfg.vocab, cfg.core.dim, rng, 0.02);
}

Tape::Id TeacherModel::forward(Tape& t, const std::vector<int>& ids) const {
  if (ids.empty()) throw std::invalid_argument("teacher: empty token sequence");
  for (int id : ids)
    if (id < 0 || id >= cfg_.vocab) throw std::out_of_range("teacher: token id out of range");
  Tape::Id x = t.gather_rows(t.param(*tok_emb_), ids);
  x = core_.forward(t, x);
  return t.matmul(x, t.param(*head_), false, true);
}

Tensor TeacherModel::logits_eval(const std::vector<int>& ids) const {
  Tape t;
  return t.val(forward(t, ids));
}

TeacherOutputs TeacherModel::outputs(const TokenSegmentation& seg) const {
  TeacherOutputs out;
  const int n = seg.token_count();
  out.embeddings = Tensor(n, cfg_.core.dim);
  for (int k = 0; k < n; ++k) {
    const double* src = tok_emb_->value.row(seg.token_ids[k]);
    std::copy(src, src + cfg_.core.dim, out.embeddings.row(k));
  }
  out.logits = logits_eval(seg.token_ids);
  out.positions = seg.boundary_positions();
  return out;
}

void TeacherModel::save(const std::string& dir) const {
  save_checkpoint(dir, {"teacher", "teacher", cfg_.config_hash()}, params_.all());
}

TeacherModel TeacherModel::load_from(const std::string& dir, const TeacherConfig& cfg) {
  TeacherModel m(cfg, 0);
  load_checkpoint(dir, m.params_.all(), cfg.config_hash());
  return m;
}

TeacherModel train_teacher(const ByteSequence& corpus, const TokenizerModel& tokenizer,
                           const TeacherConfig& arch, const TeacherTrainConfig& opt) {
  if (tokenizer.vocab_size() > arch.vocab)
    throw std::invalid_argument("train_teacher: tokenizer vocab exceeds model vocab");
  std::vector<ByteSequence> windows =
      cut_windows(corpus, opt.window_bytes, opt.window_bytes, opt.seed);
  if (windows.empty()) throw std::runtime_error("train_teacher: corpus smaller than one window");

  TeacherModel model(arch, opt.seed);
  AdamW adam;
  WarmupCosineSchedule sched(opt.peak_lr, opt.warmup_ratio, opt.steps);
  std::vector<Param*> all = model.params().all();

  std::ofstream log;
  if (!opt.log_path.empty()) log.open(opt.log_path, std::ios::app);

  size_t next = 0;
  for (int step = 1; step <= opt.steps; ++step) {
    model.params().zero_grads();
    double loss_sum = 0.0;
    int used = 0;
    for (int b = 0; b < opt.batch_size; ++b) {
      const ByteSequence& w = windows[next++ % windows.size()];
      std::vector<int> ids = tokenizer.tokenize(w);
      if (ids.size() < 2) continue;
      Tape t;
      Tape::Id logits = model.forward(t, ids);
      std::vector<int> targets(ids.begin() + 1, ids.end());
      targets.push_back(-1);  // final position predicts nothing
      Tape::Id loss = t.affine(t.cross_entropy_rows(logits, targets), 1.0 / opt.batch_size, 0.0);
      t.backward(loss);
      loss_sum += t.val(loss).v[0] * opt.batch_size;
      ++used;
    }
    if (used == 0) throw std::runtime_error("train_teacher: batch had no multi-token windows");
    const double loss = loss_sum / used;
    if (!std::isfinite(loss))
      throw std::runtime_error("train_teacher: non-finite loss at step " + std::to_string(step));
    const double lr = sched.lr(step);
    adam.step(all, lr);
    if (log.is_open())
      log << "phase=teacher step=" << step << " loss=" << loss << " lr=" << lr << "\n";
  }
  return model;
}

CeStats teacher_ce(const TeacherModel& model, const TokenizerModel& tokenizer,
                   const std::vector<ByteSequence>& windows) {
  CeStats s;
  for (const ByteSequence& w : windows) {
    TokenSegmentation seg = segment(tokenizer, w);
    const std::vector<int>& ids = seg.token_ids;
    if (ids.size() < 2) continue;
    Tensor logits = model.logits_eval(ids);
    for (size_t k = 0; k + 1 < ids.size(); ++k) {
      const double* row = logits.row(static_cast<int>(k));
      s.total_nats += log_sum_exp(row, logits.cols) - row[ids[k + 1]];
      ++s.tokens;
      s.bytes += seg.spans[k + 1].second - seg.spans[k + 1].first + 1;
    }
  }
  return s;
}

}  // namespace blm
