#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <numeric>

#include "blm/evalrobust.hpp"
#include "blm/rng.hpp"
#include "doctest.h"

using namespace blm;

namespace {

StudentConfig tiny_cfg(HeadMode head) {
  StudentConfig cfg;
  cfg.encoder = {.kind = MixerKind::GatedStateRecurrence,
                 .layers = 1,
                 .width = 16,
                 .ffn_width = 32,
                 .n_heads = 2,
                 .max_pos = 96};
  cfg.decoder = cfg.encoder;
  cfg.core = {.dim = 16, .n_layers = 1, .n_heads = 2, .ffn_width = 32, .max_pos = 96};
  cfg.head_mode = head;
  cfg.boundary_source = BoundarySource::LearnedRouter;
  return cfg;
}

PerturbationSpec spec(PerturbKind k, double rate = -1.0, uint64_t seed = 0) {
  return {k, rate, seed};
}

}  // namespace

TEST_CASE("perturbation rules on plain text") {
  CHECK(perturb("abC", spec(PerturbKind::Uppercase)) == "ABC");
  CHECK(perturb("a1 b!", spec(PerturbKind::Uppercase)) == "A1 B!");
  CHECK(perturb("hi", spec(PerturbKind::AntSpeak)) == "H I");
  CHECK(perturb("cat", spec(PerturbKind::AntSpeak)) == "C A T");
  // seed-independent kinds
  CHECK(perturb("mixed Case", spec(PerturbKind::AntSpeak, 0, 1)) ==
        perturb("mixed Case", spec(PerturbKind::AntSpeak, 0, 999)));

  CHECK(perturb("hello world", spec(PerturbKind::Drop, 0.0, 3)) == "hello world");
  CHECK(perturb("hello world", spec(PerturbKind::Repeat, 0.0, 3)) == "hello world");
  CHECK(perturb("abc", spec(PerturbKind::Drop, 1.0, 3)).empty());
  CHECK(perturb("abc", spec(PerturbKind::Repeat, 1.0, 3)) == "aabbcc");

  // deterministic per seed, varying across seeds
  const std::string text = "the quick brown fox jumps over the lazy dog";
  CHECK(perturb(text, spec(PerturbKind::Drop, 0.3, 7)) ==
        perturb(text, spec(PerturbKind::Drop, 0.3, 7)));
  CHECK(perturb(text, spec(PerturbKind::Drop, 0.3, 7)) !=
        perturb(text, spec(PerturbKind::Drop, 0.3, 8)));

  // random case only toggles letter case
  std::string rc = perturb(text, spec(PerturbKind::RandomCase, 0, 5));
  REQUIRE(rc.size() == text.size());
  for (size_t i = 0; i < rc.size(); ++i)
    CHECK(std::tolower(static_cast<unsigned char>(rc[i])) ==
          std::tolower(static_cast<unsigned char>(text[i])));
  CHECK(rc != text);

  CHECK_THROWS(parse_perturb_kind("scramble"));
  CHECK_THROWS(perturb("x", spec(PerturbKind::Drop, 1.5)));
}

TEST_CASE("perturbations treat UTF-8 code points as characters") {
  // U+00E9 is two bytes; it must survive intact
  const std::string e_acute = "\xc3\xa9";
  CHECK(perturb(e_acute, spec(PerturbKind::RandomCase, 0, 1)) == e_acute);
  CHECK(perturb("a" + e_acute, spec(PerturbKind::AntSpeak)) == "A " + e_acute);
  const std::string doubled = perturb(e_acute, spec(PerturbKind::Repeat, 1.0));
  CHECK(doubled == e_acute + e_acute);
  // drop removes whole characters, never half of one
  for (uint64_t s = 0; s < 50; ++s) {
    std::string out = perturb(e_acute + "x" + e_acute, spec(PerturbKind::Drop, 0.5, s));
    CHECK(out.find('\xc3') == out.find("\xc3\xa9"));
  }
}

TEST_CASE("drop survivor count follows Binomial(n, 1-r)") {
  const int n = 200;
  const double r = 0.1;
  const int trials = 10000;
  const std::string text(n, 'a');
  double sum = 0.0, sumsq = 0.0;
  for (int s = 0; s < trials; ++s) {
    const double len =
        static_cast<double>(perturb(text, spec(PerturbKind::Drop, r, 1000 + s)).size());
    sum += len;
    sumsq += len * len;
  }
  const double mean = sum / trials;
  const double want_mean = n * (1.0 - r);
  const double want_var = n * r * (1.0 - r);
  CHECK(std::abs(mean - want_mean) < 3.0 * std::sqrt(want_var / trials));
  const double var = sumsq / trials - mean * mean;
  // sample variance of a binomial: sd of the variance estimate ~ var*sqrt(2/N)
  CHECK(std::abs(var - want_var) < 3.0 * want_var * std::sqrt(2.0 / trials));
}

TEST_CASE("robustness score reproduces the published table rows") {
  struct Row {
    double clean, noise, score;
  };
  // clean / noise-average accuracy pairs with their reported scores
  const Row rows[] = {
      {73.64, 58.22, 68.29}, {72.47, 56.25, 65.83}, {69.70, 48.86, 53.38},
      {73.76, 54.10, 59.68}, {72.90, 53.29, 59.06}, {71.20, 51.40, 57.14},
  };
  for (const Row& row : rows) {
    CHECK(std::abs(robustness_score(row.clean, row.noise) - row.score) <= 0.02);
    // fraction and percent units agree
    CHECK(robustness_score(row.clean / 100.0, row.noise / 100.0) ==
          doctest::Approx(robustness_score(row.clean, row.noise)));
  }

  // delta column of the mitigation-strategy table
  const double deltas[][3] = {
      {73.76, 54.10, 19.66}, {72.90, 53.29, 19.61}, {72.57, 53.25, 19.32},
      {58.50, 44.05, 14.45},
  };
  for (const auto& d : deltas) {
    RobustnessReport rep = make_robustness_report(d[0], {{"noise", d[1]}});
    CHECK(std::abs(rep.delta - d[2]) <= 0.02);
    CHECK(rep.noise_average == doctest::Approx(d[1]));
  }

  CHECK(robustness_score(25.0, 40.0) == 0.0);  // chance-level clean accuracy
  CHECK(robustness_score(0.25, 0.4) == 0.0);
  CHECK_THROWS(robustness_score(0.7, 58.0));  // fraction vs percent mix
  CHECK_THROWS(robustness_score(101.0, 58.0));
  CHECK_THROWS(robustness_score(-0.1, 0.5));
}

TEST_CASE("robustness report aggregates and formats") {
  RobustnessReport rep = make_robustness_report(
      73.64, {{"antspeak", 59.86}, {"drop", 52.94}, {"randomcase", 59.27},
              {"repeat", 50.27}, {"uppercase", 68.80}});
  CHECK(rep.noise_average == doctest::Approx(58.228));
  CHECK(std::abs(rep.score - 68.29) <= 0.05);
  CHECK(rep.delta == doctest::Approx(73.64 - 58.228));
  const std::string text = format_report(rep);
  CHECK(text.find("robustness_score=") != std::string::npos);
  CHECK(text.find("perturbed.drop=") != std::string::npos);
  CHECK(text.find("delta=") != std::string::npos);
  CHECK_THROWS(make_robustness_report(0.5, {}));
}

TEST_CASE("boundary metrics match a confusion-matrix oracle") {
  const std::vector<uint8_t> same = {1, 0, 0, 1, 0, 1};
  BoundaryMetrics perfect = boundary_metrics(same, same);
  CHECK(perfect.precision == 1.0);
  CHECK(perfect.recall == 1.0);
  CHECK(perfect.f1 == 1.0);
  CHECK(perfect.accuracy == 1.0);

  BoundaryMetrics empty_pred = boundary_metrics({0, 0, 0, 0}, {1, 0, 1, 0});
  CHECK(empty_pred.precision == 0.0);
  CHECK(empty_pred.recall == 0.0);
  CHECK(empty_pred.f1 == 0.0);
  CHECK(empty_pred.accuracy == 0.5);

  // random masks vs independently tallied confusion matrix
  Rng rng(11);
  const int L = 128;
  std::vector<uint8_t> pred(L), gold(L);
  for (int i = 0; i < L; ++i) {
    pred[i] = rng.uniform() < 0.4;
    gold[i] = rng.uniform() < 0.3;
  }
  int tp = 0, fp = 0, fn = 0, correct = 0;
  for (int i = 0; i < L; ++i) {
    tp += pred[i] == 1 && gold[i] == 1;
    fp += pred[i] == 1 && gold[i] == 0;
    fn += pred[i] == 0 && gold[i] == 1;
    correct += pred[i] == gold[i];
  }
  BoundaryMetrics m = boundary_metrics(pred, gold);
  CHECK(m.precision == doctest::Approx(double(tp) / (tp + fp)));
  CHECK(m.recall == doctest::Approx(double(tp) / (tp + fn)));
  CHECK(m.f1 == doctest::Approx(2.0 * tp / (2.0 * tp + fp + fn)));
  CHECK(m.accuracy == doctest::Approx(double(correct) / L));

  // permutation equivariance: shuffling positions jointly changes nothing
  std::vector<int> perm(L);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng.engine());
  std::vector<uint8_t> pred2(L), gold2(L);
  for (int i = 0; i < L; ++i) {
    pred2[i] = pred[perm[i]];
    gold2[i] = gold[perm[i]];
  }
  BoundaryMetrics m2 = boundary_metrics(pred2, gold2);
  CHECK(m2.f1 == doctest::Approx(m.f1));
  CHECK(m2.accuracy == doctest::Approx(m.accuracy));

  CHECK_THROWS(boundary_metrics({1, 0}, {1}));
}

TEST_CASE("boundary visualization follows the router mask") {
  StudentModel model(tiny_cfg(HeadMode::Jbp), 29);
  const std::string text = "chunk the bytes";
  const ByteSequence bytes(text.begin(), text.end());
  Tape t;
  TapeChunking ch = model.route(t, model.encode(t, bytes));
  const auto& mask = ch.plan.mask;

  // independent re-rendering from the documented rule (ASCII: one byte = one char)
  std::string want;
  for (size_t i = 0; i < text.size(); ++i) {
    want += text[i];
    if (mask[i]) want += '|';
  }
  const std::string got = viz_boundaries(model, text);
  CHECK(got == want);
  CHECK(got.back() == '|');  // final byte always closes a chunk
  CHECK(std::count(got.begin(), got.end(), '|') ==
        std::count(mask.begin(), mask.end(), uint8_t(1)));
}

TEST_CASE("boundary visualization never splits UTF-8 characters") {
  StudentModel model(tiny_cfg(HeadMode::Jbp), 29);
  const std::string text = "caf\xc3\xa9 bar";  // "café bar"
  const std::string got = viz_boundaries(model, text);
  // the accented character's bytes stay adjacent in the rendering
  CHECK(got.find("\xc3\xa9") != std::string::npos);
  CHECK(got.find('\xc3') == got.find("\xc3\xa9"));

  // mask position inside the two-byte char => bar after the char + footnote
  const ByteSequence bytes(text.begin(), text.end());
  Tape t;
  TapeChunking ch = model.route(t, model.encode(t, bytes));
  if (ch.plan.mask[3] && !ch.plan.mask[4])  // boundary on the lead byte only
    CHECK(got.find("intra-character") != std::string::npos);

  // invalid UTF-8 falls back to a hex dump
  const std::string invalid = "ab\xffz";
  const std::string hex = viz_boundaries(model, invalid);
  CHECK(hex.find("ff") != std::string::npos);
  CHECK(hex.find("61") != std::string::npos);
  CHECK(hex.back() == '|');
  CHECK_THROWS(viz_boundaries(model, ""));
}

TEST_CASE("bits-per-byte: uniform heads give the analytic values") {
  const std::string text = "uniform head gives exactly eight bits per byte of entropy here";
  const ByteSequence corpus(text.begin(), text.end());

  StudentModel jbp(tiny_cfg(HeadMode::Jbp), 37);
  jbp.params().find("head.primary")->value.fill(0.0);
  BpbReport r = eval_bpb(jbp, corpus, 16);
  CHECK(r.byte_bpb == doctest::Approx(8.0).epsilon(1e-9));
  CHECK(r.joint_bpb == doctest::Approx(9.0).epsilon(1e-9));
  CHECK(r.bytes == (int(corpus.size()) / 16) * 15);

  StudentModel mbp(tiny_cfg(HeadMode::Mbp), 37);
  mbp.params().find("head.primary")->value.fill(0.0);
  BpbReport m = eval_bpb(mbp, corpus, 16);
  CHECK(m.byte_bpb == doctest::Approx(8.0).epsilon(1e-9));
  CHECK(m.joint_bpb == doctest::Approx(8.0).epsilon(1e-9));

  CHECK_THROWS(eval_bpb(jbp, corpus, 1));
  CHECK_THROWS(eval_bpb(jbp, ByteSequence{1, 2, 3}, 16));
}

TEST_CASE("bits-per-byte is independent of corpus sharding") {
  const std::string text = synth_corpus(512, 3);
  const ByteSequence corpus(text.begin(), text.end());
  StudentModel model(tiny_cfg(HeadMode::Jbp), 41);

  const int w = 32;
  BpbReport whole = eval_bpb(model, corpus, w);

  // same windows scored in two separate calls, recombined by byte count
  const size_t half = (corpus.size() / (2 * w)) * w;
  const ByteSequence a(corpus.begin(), corpus.begin() + half);
  const ByteSequence b(corpus.begin() + half, corpus.end());
  BpbReport ra = eval_bpb(model, a, w);
  BpbReport rb = eval_bpb(model, b, w);
  const double combined =
      (ra.joint_bpb * ra.bytes + rb.joint_bpb * rb.bytes) / double(ra.bytes + rb.bytes);
  CHECK(ra.bytes + rb.bytes == whole.bytes);
  CHECK(std::abs(combined - whole.joint_bpb) < 1e-6);
}
