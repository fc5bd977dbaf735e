#include "blm/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>

#include "blm/checkpoint.hpp"

namespace blm {

int StageConfig::steps() const {
  const long long per_step = static_cast<long long>(batch_size) * window_bytes;
  if (per_step <= 0) throw std::invalid_argument("stage config: empty step");
  return static_cast<int>(std::max<long long>(1, total_bytes / per_step));
}

TrainingLog::TrainingLog(std::string path) : path_(std::move(path)) {}

void TrainingLog::record(const std::string& stage, int step, const LossReport& report,
                         double lr, double grad_norm, double wall_ms) {
  if (path_.empty()) return;
  std::ofstream f(path_, std::ios::app);
  f << "stage=" << stage << " step=" << step << " loss=" << report.value;
  for (const auto& [k, v] : report.terms) f << " term." << k << "=" << v;
  f << " count=" << report.count << " lr=" << lr << " grad_norm=" << grad_norm
    << " wall_ms=" << wall_ms << "\n";
}

void TrainingLog::note(const std::string& stage, const std::string& key, double value) {
  if (path_.empty()) return;
  std::ofstream f(path_, std::ios::app);
  f << "stage=" << stage << " " << key << "=" << value << "\n";
}

WarmupCosineSchedule make_schedule(const StageConfig& cfg, int total_steps) {
  return WarmupCosineSchedule(cfg.peak_lr, cfg.warmup_ratio, total_steps);
}

namespace {

using LossFn = std::function<Tape::Id(Tape&, const ByteSequence&, LossReport*)>;

void save_adam_state(const std::string& dir, const std::vector<Param*>& params) {
  std::vector<std::unique_ptr<Param>> owned;
  std::vector<Param*> ptrs;
  for (Param* p : params) {
    owned.push_back(std::make_unique<Param>(p->name + ".adam_m", p->m));
    ptrs.push_back(owned.back().get());
    owned.push_back(std::make_unique<Param>(p->name + ".adam_u", p->u));
    ptrs.push_back(owned.back().get());
  }
  save_checkpoint(dir, {"optstate", "adam", 0}, ptrs);
}

// One curriculum step: shuffled fixed windows, batched grad accumulation,
// AdamW with warmup+cosine, freeze verification, checkpoint at the end.
void train_stage(StudentModel& model, const StageConfig& cfg, const PipelineOptions& opt,
                 const ByteSequence& corpus, const std::vector<ByteSequence>& holdout,
                 const LossFn& loss_fn, bool require_zero_frozen_grads, TrainingLog& log) {
  for (const auto& g : cfg.trainable_groups)
    if (!model.params().has_group(g))
      throw std::invalid_argument(cfg.name + ": unknown trainable group '" + g + "'");

  const std::vector<ByteSequence> windows =
      cut_windows(corpus, cfg.window_bytes, cfg.window_bytes, cfg.seed);
  if (windows.empty())
    throw std::runtime_error(cfg.name + ": corpus smaller than one window");

  const std::vector<Param*> trainable = model.params().groups(cfg.trainable_groups);
  std::vector<Param*> frozen;
  for (Param* p : model.params().all())
    if (std::find(trainable.begin(), trainable.end(), p) == trainable.end())
      frozen.push_back(p);

  const int steps = cfg.steps();
  AdamW adam(cfg.adam);
  const WarmupCosineSchedule sched = make_schedule(cfg, steps);

  size_t cursor = 0;
  for (int step = 1; step <= steps; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    model.params().zero_grads();
    double loss_sum = 0.0;
    LossReport report;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const ByteSequence& w = windows[cursor++ % windows.size()];
      Tape t;
      Tape::Id root = loss_fn(t, w, b == 0 ? &report : nullptr);
      Tape::Id scaled = t.affine(root, 1.0 / cfg.batch_size, 0.0);
      t.backward(scaled);
      loss_sum += t.val(root).at(0, 0);
    }
    const double loss = loss_sum / cfg.batch_size;
    if (!std::isfinite(loss))
      throw std::runtime_error(cfg.name + ": non-finite loss at step " + std::to_string(step));

    if (require_zero_frozen_grads)
      for (const Param* p : frozen)
        for (double g : p->grad.v)
          if (g != 0.0)
            throw std::runtime_error(cfg.name + ": freeze-mask violation: gradient on frozen parameter " + p->name);

    const bool check = cfg.freeze_check_every > 0 && step % cfg.freeze_check_every == 0;
    const uint64_t frozen_before = check ? params_checksum(frozen) : 0;

    const double lr = sched.lr(step);
    std::vector<std::pair<Param*, double>> pairs;
    pairs.reserve(trainable.size());
    for (Param* p : trainable) {
      double scale = 1.0;
      const std::string group = p->name.substr(0, p->name.find('.'));
      if (auto it = cfg.group_lr_scale.find(group); it != cfg.group_lr_scale.end())
        scale = it->second;
      pairs.emplace_back(p, lr * scale);
    }
    const double grad_norm = adam.step(pairs);

    if (check && params_checksum(frozen) != frozen_before)
      throw std::runtime_error(cfg.name + ": freeze-mask violation: frozen parameters changed at step " +
                               std::to_string(step));

    const double wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    report.value = loss;  // batch mean; the term breakdown is from the first example
    log.record(cfg.name, step, report, lr, grad_norm, wall_ms);

    if (cfg.eval_every > 0 && !holdout.empty() && step % cfg.eval_every == 0) {
      double ev = 0.0;
      for (const ByteSequence& w : holdout) {
        Tape t;
        ev += t.val(loss_fn(t, w, nullptr)).at(0, 0);
      }
      log.note(cfg.name, "eval_loss", ev / holdout.size());
    }
  }

  const std::string dir = opt.out_dir + "/" + cfg.name;
  model.save(dir, cfg.name);
  save_adam_state(dir + "/optstate", trainable);
}

}  // namespace

StudentModel run_stage1(const TeacherModel& teacher, const TokenizerModel& tokenizer,
                        StudentModel student, const ByteSequence& corpus,
                        const std::vector<ByteSequence>& holdout,
                        const std::vector<StageConfig>& cfgs, const PipelineOptions& opt) {
  if (cfgs.size() != 3)
    throw std::invalid_argument("run_stage1 expects [align, distill, boundary] configs");
  if (student.config().head_mode != HeadMode::Token)
    throw std::invalid_argument("run_stage1: student must be in token head mode");

  const ByteSequence data = opt.trim_data ? trim_whitespace(corpus) : corpus;
  TrainingLog log(opt.log_path);
  const uint64_t teacher_sum = params_checksum(teacher.params().all());
  const int d = student.config().core.dim;

  LossFn align_fn = [&](Tape& t, const ByteSequence& w, LossReport* rep) {
    const TokenSegmentation seg = segment(tokenizer, w);
    Tape::Id e_hat = t.gather_rows(student.encode(t, w), seg.boundary_positions());
    Tensor e(seg.token_count(), d);
    for (int k = 0; k < seg.token_count(); ++k) {
      const double* src = teacher.token_embedding().value.row(seg.token_ids[k]);
      std::copy(src, src + d, e.row(k));
    }
    return loss_align(t, e_hat, e, rep);
  };

  LossFn distill_fn = [&](Tape& t, const ByteSequence& w, LossReport* rep) {
    const TokenSegmentation seg = segment(tokenizer, w);
    Stage1Out out = student.forward_stage1(t, w, seg);
    return loss_distill(t, teacher.logits_eval(seg.token_ids), out.token_logits, 1.0, rep);
  };

  LossFn boundary_fn = [&](Tape& t, const ByteSequence& w, LossReport* rep) {
    const TokenSegmentation seg = segment(tokenizer, w);
    Tensor enc_vals;
    {
      Tape frozen_tape;  // backbone is frozen: route over detached states
      enc_vals = frozen_tape.val(student.encode(frozen_tape, w));
    }
    TapeChunking ch = student.route(t, t.leaf(std::move(enc_vals)));
    return loss_boundary(t, ch.probs, seg.boundary_labels, whitespace_penalty_mask(w),
                         opt.whitespace_penalty, rep);
  };

  if (opt.skip_align)
    log.note(cfgs[0].name, "skipped", 1.0);
  else
    train_stage(student, cfgs[0], opt, data, holdout, align_fn, false, log);
  train_stage(student, cfgs[1], opt, data, holdout, distill_fn, false, log);
  train_stage(student, cfgs[2], opt, data, holdout, boundary_fn, true, log);

  if (params_checksum(teacher.params().all()) != teacher_sum)
    throw std::logic_error("run_stage1: teacher parameters were modified");
  return student;
}

StudentModel run_stage2(StudentModel student, const TokenizerModel& tokenizer,
                        const ByteSequence& corpus, const std::vector<ByteSequence>& holdout,
                        const std::vector<StageConfig>& cfgs, const PipelineOptions& opt,
                        const std::string& from_stage) {
  if (cfgs.size() != 2)
    throw std::invalid_argument("run_stage2 expects [head_adapt, e2e] configs");
  if (student.config().head_mode == HeadMode::Token)
    throw std::invalid_argument("run_stage2: student needs a byte head (jbp or mbp)");
  if (from_stage != "stage1_boundary" && from_stage.rfind("stage2", 0) != 0)
    throw std::runtime_error("run_stage2: checkpoint is not stage-1-complete (tag '" +
                             from_stage + "')");

  const ByteSequence data = opt.trim_data ? trim_whitespace(corpus) : corpus;
  TrainingLog log(opt.log_path);
  const bool mbp = student.config().head_mode == HeadMode::Mbp;

  LossFn loss_fn = [&](Tape& t, const ByteSequence& w, LossReport* rep) {
    Stage2Out out = student.forward_stage2(t, w, /*training=*/true);
    if (!mbp) {
      const std::vector<uint8_t> bounds = opt.stage2_labels == BoundarySource::TeacherLabels
                                              ? segment(tokenizer, w).boundary_labels
                                              : out.chunking.plan.mask;
      return loss_jbp(t, out.logits, w, bounds, rep);
    }
    Tape::Id byte_loss = loss_mbp(t, out.logits, out.aux_logits, w, rep);
    // the adapter chases the (detached) encoder states it must imitate at
    // decode time
    LossReport adapter_rep;
    Tape::Id adapter_loss = loss_align(t, student.mbp_adapter_predictions(t, w),
                                       t.val(out.encoder_states), &adapter_rep);
    if (rep) {
      rep->terms["adapter_mse"] = adapter_rep.value;
      rep->value += adapter_rep.value;
    }
    return t.add(byte_loss, adapter_loss);
  };

  train_stage(student, cfgs[0], opt, data, holdout, loss_fn, false, log);
  train_stage(student, cfgs[1], opt, data, holdout, loss_fn, false, log);
  return student;
}

std::vector<StageConfig> default_stage1_configs(long long stage_bytes, int window_bytes,
                                                int batch_size, uint64_t seed) {
  StageConfig align{.name = "stage1_align",
                    .trainable_groups = {"embed", "encoder"},
                    .peak_lr = 1e-3,
                    .warmup_ratio = 0.2,
                    .total_bytes = stage_bytes * 4 / 10,
                    .batch_size = batch_size,
                    .window_bytes = window_bytes,
                    .seed = seed};
  StageConfig distill{.name = "stage1_distill",
                      .trainable_groups = {"embed", "encoder", "core"},
                      .peak_lr = 2e-5,
                      .warmup_ratio = 0.01,
                      .total_bytes = stage_bytes * 4 / 10,
                      .batch_size = batch_size,
                      .window_bytes = window_bytes,
                      .seed = seed + 1,
                      .eval_every = 50};
  StageConfig boundary{.name = "stage1_boundary",
                       .trainable_groups = {"router"},
                       .peak_lr = 1e-3,
                       .warmup_ratio = 0.1,
                       .total_bytes = stage_bytes * 2 / 10,
                       .batch_size = batch_size,
                       .window_bytes = window_bytes,
                       .seed = seed + 2};
  return {align, distill, boundary};
}

std::vector<StageConfig> default_stage2_configs(long long stage_bytes, int window_bytes,
                                                int batch_size, uint64_t seed) {
  StageConfig head{.name = "stage2_head",
                   .trainable_groups = {"chunk", "decoder", "head"},
                   .peak_lr = 1e-3,
                   .warmup_ratio = 0.1,
                   .total_bytes = stage_bytes * 3 / 10,
                   .batch_size = batch_size,
                   .window_bytes = window_bytes,
                   .seed = seed + 3};
  StageConfig e2e{.name = "stage2_e2e",
                  .trainable_groups = {"embed", "encoder", "router", "core", "chunk",
                                       "decoder", "head"},
                  .peak_lr = 4e-5,
                  .group_lr_scale = {{"core", 0.5}},  // 2e-5 on the backbone
                  .warmup_ratio = 0.01,
                  .total_bytes = stage_bytes * 7 / 10,
                  .batch_size = batch_size,
                  .window_bytes = window_bytes,
                  .seed = seed + 4,
                  .eval_every = 50};
  return {head, e2e};
}

std::map<std::string, std::string> parse_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("config: cannot read " + path);
  std::map<std::string, std::string> out;
  std::string line;
  auto trim = [](std::string s) {
    const char* ws = " \t\r";
    s.erase(0, s.find_first_not_of(ws));
    const auto end = s.find_last_not_of(ws);
    s.erase(end == std::string::npos ? 0 : end + 1);
    return s;
  };
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config: line " + std::to_string(lineno) + " is not key=value");
    out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return out;
}

RunSettings RunSettings::from_file(const std::string& path) {
  RunSettings s;
  for (const auto& [k, v] : parse_config_file(path)) {
    if (k == "peak_lr") s.peak_lr = std::stod(v);
    else if (k == "warmup_ratio") s.warmup_ratio = std::stod(v);
    else if (k == "weight_decay") s.weight_decay = std::stod(v);
    else if (k == "beta1") s.beta1 = std::stod(v);
    else if (k == "beta2") s.beta2 = std::stod(v);
    else if (k == "max_grad_norm") s.max_grad_norm = std::stod(v);
    else if (k == "batch_size") s.batch_size = std::stoi(v);
    else if (k == "window_bytes") s.window_bytes = std::stoi(v);
    else if (k == "total_bytes") s.total_bytes = std::stoll(v);
    else throw std::runtime_error("config: unknown key '" + k + "'");
  }
  return s;
}

void RunSettings::apply(StageConfig& cfg) const {
  if (peak_lr > 0.0) cfg.peak_lr = peak_lr;
  if (warmup_ratio >= 0.0) cfg.warmup_ratio = warmup_ratio;
  cfg.adam.weight_decay = weight_decay;
  cfg.adam.beta1 = beta1;
  cfg.adam.beta2 = beta2;
  cfg.adam.max_grad_norm = max_grad_norm;
  cfg.batch_size = batch_size;
  cfg.window_bytes = window_bytes;
  cfg.total_bytes = total_bytes;
}

}  // namespace blm
