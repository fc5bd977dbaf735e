#pragma once

#include <map>
#include <string>
#include <vector>

#include "blm/bytecorpus.hpp"
#include "blm/objectives.hpp"
#include "blm/optimizer.hpp"
#include "blm/schedule.hpp"
#include "blm/student.hpp"
#include "blm/teacher.hpp"

namespace blm {

// One curriculum step: what is trainable, at what rate, on how many bytes.
struct StageConfig {
  std::string name;  // doubles as the checkpoint stage tag
  std::vector<std::string> trainable_groups;
  double peak_lr = 1e-3;
  // per-group multiplier on the scheduled LR (e.g. core at half rate in the
  // end-to-end step); groups default to 1.0
  std::map<std::string, double> group_lr_scale;
  double warmup_ratio = 0.1;
  long long total_bytes = 1 << 20;
  int batch_size = 16;
  int window_bytes = 512;
  uint64_t seed = 1;
  int eval_every = 0;         // 0 = no held-out evaluation
  int freeze_check_every = 1; // verify frozen groups every N steps
  AdamWConfig adam{};

  int steps() const;
};

// Append-only structured training log: one "key=value ..." record per line.
class TrainingLog {
 public:
  explicit TrainingLog(std::string path);  // "" disables logging
  void record(const std::string& stage, int step, const LossReport& report, double lr,
              double grad_norm, double wall_ms);
  void note(const std::string& stage, const std::string& key, double value);
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

struct PipelineOptions {
  bool skip_align = false;              // drop curriculum step 1
  bool trim_data = false;               // strip ASCII spaces from training bytes
  double whitespace_penalty = 0.0;      // gamma for loss_boundary
  BoundarySource stage2_labels = BoundarySource::TeacherLabels;
  std::string out_dir = "out";          // checkpoints under out_dir/<stage name>
  std::string log_path;                 // training log ("" = off)
};

// Warmup + cosine over the step budget at cfg.peak_lr.
WarmupCosineSchedule make_schedule(const StageConfig& cfg, int total_steps);

// Stage 1: [align, distill, boundary] (align dropped by skip_align). The
// teacher is read-only throughout; each step checkpoints model + optimizer
// moments under out_dir. Throws on non-finite loss (naming the step) and on
// any write to a frozen parameter group.
StudentModel run_stage1(const TeacherModel& teacher, const TokenizerModel& tokenizer,
                        StudentModel student, const ByteSequence& corpus,
                        const std::vector<ByteSequence>& holdout,
                        const std::vector<StageConfig>& cfgs, const PipelineOptions& opt);

// Stage 2: [head_adapt, e2e]. from_stage is the tag of the checkpoint the
// student came from and must be "stage1_boundary" (or a stage-2 tag when
// continuing); anything else is refused.
StudentModel run_stage2(StudentModel student, const TokenizerModel& tokenizer,
                        const ByteSequence& corpus, const std::vector<ByteSequence>& holdout,
                        const std::vector<StageConfig>& cfgs, const PipelineOptions& opt,
                        const std::string& from_stage);

// Desk-scale defaults. Stage 1 splits the byte budget 40/40/20 across
// align/distill/boundary with peak LRs 1e-3 / 2e-5 / 1e-3 and warmup ratios
// 0.2 / 0.01 / 0.1; Stage 2 splits 30/70 across head_adapt/e2e with 1e-3 then
// 4e-5 (core at 2e-5), warmups 0.1 / 0.01.
std::vector<StageConfig> default_stage1_configs(long long stage_bytes, int window_bytes,
                                                int batch_size, uint64_t seed);
std::vector<StageConfig> default_stage2_configs(long long stage_bytes, int window_bytes,
                                                int batch_size, uint64_t seed);

// key=value config file ('#' comments, blank lines ignored); unknown keys are
// an error so typos fail loudly.
struct RunSettings {
  double peak_lr = 0.0;  // 0 = keep stage defaults
  double warmup_ratio = -1.0;
  double weight_decay = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double max_grad_norm = 1.0;
  int batch_size = 16;
  int window_bytes = 512;
  long long total_bytes = 1 << 22;

  static RunSettings from_file(const std::string& path);
  void apply(StageConfig& cfg) const;  // overrides the stage's shared fields
};

std::map<std::string, std::string> parse_config_file(const std::string& path);

}  // namespace blm
