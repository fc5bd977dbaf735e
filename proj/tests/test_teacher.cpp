#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "blm/checkpoint.hpp"
#include "blm/teacher.hpp"
#include "doctest.h"

using namespace blm;

namespace {

TeacherConfig tiny_cfg(int vocab = 300) {
  TeacherConfig cfg;
  cfg.vocab = vocab;
  cfg.core = {.dim = 32, .n_layers = 1, .n_heads = 2, .ffn_width = 64, .max_pos = 64};
  return cfg;
}

}  // namespace

TEST_CASE("untrained teacher cross entropy is close to ln(vocab)") {
  TeacherConfig cfg = tiny_cfg(300);
  TeacherModel m(cfg, 7);
  std::vector<int> ids;
  Rng rng(3);
  for (int i = 0; i < 48; ++i) ids.push_back(static_cast<int>(rng.below(300)));
  Tape t;
  std::vector<int> targets(ids.begin() + 1, ids.end());
  targets.push_back(-1);
  double ce = t.val(t.cross_entropy_rows(m.forward(t, ids), targets)).v[0];
  CHECK(ce == doctest::Approx(std::log(300.0)).epsilon(0.05));
}

TEST_CASE("embeddings are static: same token id, same row, any context") {
  TeacherModel m(tiny_cfg(), 11);
  TokenizerModel tok = TokenizerModel::from_merges({});
  ByteSequence w1{'a', 'b', 'a', 'c'};
  ByteSequence w2{'x', 'x', 'a'};
  TeacherOutputs o1 = m.outputs(segment(tok, w1));
  TeacherOutputs o2 = m.outputs(segment(tok, w2));
  // 'a' occurs at rows 0 and 2 of w1 and row 2 of w2
  for (int c = 0; c < 32; ++c) {
    CHECK(o1.embeddings.at(0, c) == o1.embeddings.at(2, c));
    CHECK(o1.embeddings.at(0, c) == o2.embeddings.at(2, c));
  }
  CHECK(o1.positions == std::vector<int>{0, 1, 2, 3});
  CHECK(o1.logits.rows == 4);
  CHECK(o1.logits.cols == 300);
}

TEST_CASE("causality: perturbing token j leaves logits before j unchanged") {
  TeacherModel m(tiny_cfg(), 5);
  std::vector<int> ids{4, 9, 250, 17, 3, 88, 120, 1};
  Tensor base = m.logits_eval(ids);
  ids[5] = 211;
  Tensor pert = m.logits_eval(ids);
  for (int r = 0; r < 5; ++r)
    for (int c = 0; c < base.cols; ++c)
      CHECK(base.at(r, c) == doctest::Approx(pert.at(r, c)).epsilon(1e-12));
  // and some row at/after j must differ
  double diff = 0.0;
  for (int r = 5; r < base.rows; ++r)
    for (int c = 0; c < base.cols; ++c) diff += std::fabs(base.at(r, c) - pert.at(r, c));
  CHECK(diff > 1e-6);
}

TEST_CASE("training drives loss to near zero on an alternating corpus") {
  ByteSequence corpus;
  for (int i = 0; i < 2048; ++i) corpus.push_back(i % 2 ? 'b' : 'a');
  TokenizerModel tok = TokenizerModel::from_merges({});

  TeacherConfig cfg = tiny_cfg(256);
  TeacherTrainConfig opt;
  opt.peak_lr = 5e-3;
  opt.steps = 250;
  opt.batch_size = 4;
  opt.window_bytes = 32;
  opt.seed = 2;
  TeacherModel m = train_teacher(corpus, tok, cfg, opt);

  CeStats s = teacher_ce(m, tok, cut_windows(corpus, 32, 32));
  CHECK(s.tokens == 64 * 31);
  CHECK(s.bytes == s.tokens);  // byte-level tokenizer
  CHECK(s.mean_nats_per_token() < 0.2);
}

TEST_CASE("evaluation does not modify teacher parameters") {
  TeacherModel m(tiny_cfg(), 13);
  uint64_t before = params_checksum(m.params().all());
  (void)m.logits_eval({1, 2, 3, 4});
  TokenizerModel tok = TokenizerModel::from_merges({});
  (void)m.outputs(segment(tok, ByteSequence{'h', 'i'}));
  (void)teacher_ce(m, tok, {ByteSequence{'a', 'b', 'c'}});
  CHECK(params_checksum(m.params().all()) == before);
}

TEST_CASE("checkpoint round trip reproduces logits and re-saves bit-exactly") {
  namespace fs = std::filesystem;
  fs::path d1 = fs::temp_directory_path() / "blm_teacher_ckpt1";
  fs::path d2 = fs::temp_directory_path() / "blm_teacher_ckpt2";
  fs::remove_all(d1);
  fs::remove_all(d2);

  TeacherConfig cfg = tiny_cfg();
  TeacherModel m(cfg, 21);
  m.save(d1.string());
  TeacherModel r = TeacherModel::load_from(d1.string(), cfg);
  r.save(d2.string());

  for (const auto& e : fs::directory_iterator(d1)) {
    std::ifstream a(e.path(), std::ios::binary), b(d2 / e.path().filename(), std::ios::binary);
    std::string sa((std::istreambuf_iterator<char>(a)), {});
    std::string sb((std::istreambuf_iterator<char>(b)), {});
    CHECK(sa == sb);
  }

  // float32 storage: loaded logits agree to float precision
  std::vector<int> ids{5, 6, 7, 8, 9};
  Tensor lm = m.logits_eval(ids), lr = r.logits_eval(ids);
  for (size_t i = 0; i < lm.size(); ++i)
    CHECK(lm.v[i] == doctest::Approx(lr.v[i]).epsilon(1e-5));

  CHECK(read_checkpoint_meta(d1.string()).role == "teacher");
  CHECK_THROWS(TeacherModel::load_from(d1.string(), tiny_cfg(301)));  // config hash mismatch
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST_CASE("non-finite loss aborts with the failing step in the message") {
  ByteSequence corpus;
  for (int i = 0; i < 256; ++i) corpus.push_back('a' + i % 4);
  TokenizerModel tok = TokenizerModel::from_merges({});
  TeacherConfig cfg = tiny_cfg(256);
  TeacherTrainConfig opt;
  opt.peak_lr = 1e40;  // guaranteed overflow after the first update
  opt.warmup_ratio = 0.0;
  opt.steps = 5;
  opt.batch_size = 2;
  opt.window_bytes = 32;
  try {
    train_teacher(corpus, tok, cfg, opt);
    FAIL("expected divergence");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("step") != std::string::npos);
  }
}
