#pragma once

#include <string>
#include <vector>

#include "blm/bytecorpus.hpp"
#include "blm/chunkcore.hpp"
#include "blm/mixer.hpp"
#include "blm/teacher.hpp"
#include "blm/transformer.hpp"

namespace blm {

enum class HeadMode { Token, Jbp, Mbp };
enum class BoundarySource { TeacherLabels, LearnedRouter };
enum class RouterKind { LookaheadCosine, Decoupled };

const char* to_string(HeadMode m);
const char* to_string(BoundarySource s);
const char* to_string(RouterKind k);

struct StudentConfig {
  MixerStackConfig encoder{};
  MixerStackConfig decoder{};
  TransformerConfig core{};
  int token_vocab = 1024;
  HeadMode head_mode = HeadMode::Token;
  BoundarySource boundary_source = BoundarySource::TeacherLabels;
  RouterKind router = RouterKind::LookaheadCosine;

  // throws unless encoder/decoder/core widths agree (no width adapter here)
  void validate() const;
  std::string canonical() const;
  uint64_t config_hash() const;
  bool operator==(const StudentConfig&) const = default;
};

// id = byte + 256 * boundary; the 512-way joint byte/boundary vocabulary
int jbp_encode(int byte, int boundary);
std::pair<int, int> jbp_decode(int id);  // -> (byte, boundary)

struct Stage1Out {
  Tape::Id e_hat;         // N x d, encoder states at token-final bytes
  Tape::Id token_logits;  // N x vocab
};

struct Stage2Out {
  Tape::Id logits;          // jbp: L x 512; mbp: primary L x 256
  Tape::Id aux_logits;      // mbp only (next-next byte), else -1
  Tape::Id encoder_states;  // L x d
  TapeChunking chunking;
};

// Hierarchical byte-level model: byte embedding -> encoder mixers -> router ->
// chunked core transformer -> shifted up-sampling -> decoder mixers -> head.
// Parameter groups: embed, encoder, router, core, chunk, and token_head
// (head_mode=token) or decoder + head (jbp/mbp).
class StudentModel {
 public:
  StudentModel(const StudentConfig& cfg, uint64_t seed);

  // Token-head forward with teacher-label chunking: encoder states at pos(k)
  // feed the core directly. `inject` replaces them (the teacher-bypass
  // switch used by the distillation oracle).
  Stage1Out forward_stage1(Tape& t, const ByteSequence& seq, const TokenSegmentation& seg,
                           const Tensor* inject = nullptr) const;

  // Full pipeline forward. training=true smooths chunk states through the
  // boundary probabilities; eval mode uses the hard selected states so that
  // incremental decoding reproduces the parallel forward exactly.
  // forced_plan overrides the learned router (teacher labels or decode-time
  // emitted boundaries).
  Stage2Out forward_stage2(Tape& t, const ByteSequence& seq, bool training,
                           const ChunkPlan* forced_plan = nullptr) const;

  // Byte embedding + encoder stack only: L x d states.
  Tape::Id encode(Tape& t, const ByteSequence& seq) const;

  // Learned-router chunking over already-computed encoder states.
  TapeChunking route(Tape& t, Tape::Id encoder_states) const;

  // adapter(emb(byte_i)) for every byte of seq: L x d. Trained to match the
  // encoder state at the same position so decode-time routing can stand in
  // for the unavailable next byte.
  Tape::Id mbp_adapter_predictions(Tape& t, const ByteSequence& seq) const;

  // Byte embedding of `byte` mapped through the MBP adapter into encoder-state
  // space; the decode-time stand-in for the next byte's encoder state.
  Tensor mbp_adapter_state(int byte) const;

  // Value-level lookahead routing through the learned query/key projections
  // (decode path). Requires the lookahead-cosine router.
  RouterOut route_pair_eval(const double* x_curr, const double* x_next) const;

  void save(const std::string& dir, const std::string& stage) const;
  // expected_stage "" skips the stage check. migrate=true loads only the
  // parameters present in the checkpoint (Stage-1 -> Stage-2 carry-over) and
  // skips the config-hash check.
  // init_seed seeds the parameters the checkpoint does not supply (all of
  // them before loading; only the new groups when migrating).
  static StudentModel load(const std::string& dir, const StudentConfig& cfg,
                           const std::string& expected_stage = "", bool migrate = false,
                           uint64_t init_seed = 0);

  const StudentConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  const TransformerCore& core() const { return core_; }
  int router_degenerate_events() const { return degenerate_events_; }

 private:
  StudentConfig cfg_;
  ParamStore params_;
  Param* byte_emb_ = nullptr;  // 256 x d
  MixerStack encoder_;
  // lookahead-cosine router: query/key projections, identity-initialized so
  // the initial routing equals raw-state routing exactly
  Param* router_q_ = nullptr;
  Param* router_k_ = nullptr;
  // decoupled-router ablation: boundary from the current state alone
  MixerStack router_mixer_;
  Param* router_w_ = nullptr;  // 1 x d
  Param* router_b_ = nullptr;  // 1 x 1
  TransformerCore core_;
  Param* null_state_ = nullptr;     // 1 x d
  Param* residual_proj_ = nullptr;  // d x d, zero-initialized
  Param* token_head_ = nullptr;     // token mode: vocab x d
  MixerStack decoder_;
  Param* head_primary_ = nullptr;  // jbp: 512 x d; mbp: 256 x d
  Param* head_aux_ = nullptr;      // mbp: 256 x d
  Param* head_adapter_ = nullptr;  // mbp: d x d
  mutable int degenerate_events_ = 0;

  friend StudentModel init_from_teacher(const TeacherModel&, const StudentConfig&, uint64_t);
};

// Copies the teacher's core transformer (and, in token mode, its LM head)
// into a freshly seeded student. Throws on dimension/vocab mismatch.
StudentModel init_from_teacher(const TeacherModel& teacher, const StudentConfig& cfg,
                               uint64_t seed);

// Plan derived from tokenizer boundary labels (probs are hard 0/1).
ChunkPlan plan_from_labels(const std::vector<uint8_t>& boundary_labels);

}  // namespace blm
