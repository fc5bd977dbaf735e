#pragma once

#include <string>
#include <vector>

#include "blm/bytecorpus.hpp"
#include "blm/params.hpp"
#include "blm/transformer.hpp"

namespace blm {

struct TeacherConfig {
  int vocab = 1024;
  TransformerConfig core;

  std::string canonical() const;
  uint64_t config_hash() const;
  bool operator==(const TeacherConfig&) const = default;
};

// Static token embeddings and next-token logits for one segmented window.
struct TeacherOutputs {
  Tensor embeddings;           // N x dim, table rows for each token
  Tensor logits;               // N x vocab; row k is P(. | t_<=k) pre-softmax
  std::vector<int> positions;  // pos(k): final byte of token k
};

// Tiny token-level causal transformer. Embedding table and output head are
// untied; the trunk is the shared TransformerCore.
class TeacherModel {
 public:
  TeacherModel(const TeacherConfig& cfg, uint64_t seed);

  // token ids -> N x vocab logits (differentiable)
  Tape::Id forward(Tape& t, const std::vector<int>& ids) const;

  // eval-mode logits (no gradients retained)
  Tensor logits_eval(const std::vector<int>& ids) const;

  // embeddings + logits + positions for a segmented window; the caller must
  // not backpropagate into these (they are plain tensors, detached).
  TeacherOutputs outputs(const TokenSegmentation& seg) const;

  void save(const std::string& dir) const;
  static TeacherModel load_from(const std::string& dir, const TeacherConfig& cfg);

  const TeacherConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  const TransformerCore& core() const { return core_; }
  Param& token_embedding() const { return *tok_emb_; }
  Param& head() const { return *head_; }

 private:
  TeacherConfig cfg_;
  ParamStore params_;
  Param* tok_emb_ = nullptr;  // vocab x dim
  TransformerCore core_;
  Param* head_ = nullptr;  // vocab x dim
};

struct TeacherTrainConfig {
  double peak_lr = 1e-3;
  double warmup_ratio = 0.1;
  int steps = 2000;
  int batch_size = 8;
  int window_bytes = 256;
  uint64_t seed = 1;
  std::string log_path;  // optional append-only training log
};

// Trains a fresh teacher with AdamW + warmup/cosine on fixed byte windows,
// tokenized per window. Throws (naming the step) if the loss goes non-finite.
TeacherModel train_teacher(const ByteSequence& corpus, const TokenizerModel& tokenizer,
                           const TeacherConfig& arch, const TeacherTrainConfig& opt);

struct CeStats {
  double total_nats = 0.0;
  long long tokens = 0;     // predicted tokens
  long long bytes = 0;      // bytes covered by predicted tokens
  double mean_nats_per_token() const { return tokens ? total_nats / tokens : 0.0; }
};

// Teacher-forced token cross entropy over windows (eval mode).
CeStats teacher_ce(const TeacherModel& model, const TokenizerModel& tokenizer,
                   const std::vector<ByteSequence>& windows);

}  // namespace blm
