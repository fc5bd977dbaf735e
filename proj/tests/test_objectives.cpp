#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <numeric>

#include "blm/objectives.hpp"
#include "blm/student.hpp"
#include "doctest.h"
#include "support/gradcheck.hpp"

using namespace blm;

namespace {

Tensor randn(int r, int c, uint64_t seed, double std = 1.0) {
  Tensor x(r, c);
  Rng rng(seed);
  rng.fill_normal(x, std);
  return x;
}

// independent row softmax for oracles
std::vector<double> soft_row(const Tensor& t, int r) {
  std::vector<double> p(t.row(r), t.row(r) + t.cols);
  double mx = *std::max_element(p.begin(), p.end());
  double z = 0.0;
  for (double& v : p) {
    v = std::exp(v - mx);
    z += v;
  }
  for (double& v : p) v /= z;
  return p;
}

}  // namespace

TEST_CASE("alignment loss: analytic values and elementwise oracle") {
  Tensor e = randn(4, 3, 1);
  Tape t;
  CHECK(t.val(loss_align(t, t.leaf(e), e)).at(0, 0) == doctest::Approx(0.0));

  Tensor a(1, 2), b(1, 2);
  a.at(0, 0) = 1.0;
  b.at(0, 1) = 1.0;
  Tape t2;
  CHECK(t2.val(loss_align(t2, t2.leaf(b), a)).at(0, 0) == doctest::Approx(2.0));

  Tensor eh = randn(16, 8, 2), ee = randn(16, 8, 3);
  double oracle = 0.0;
  for (int r = 0; r < 16; ++r)
    for (int c = 0; c < 8; ++c) oracle += (ee.at(r, c) - eh.at(r, c)) * (ee.at(r, c) - eh.at(r, c));
  oracle /= 16.0;
  Tape t3;
  LossReport rep;
  Tape::Id root = loss_align(t3, t3.leaf(eh), ee, &rep);
  CHECK(t3.val(root).at(0, 0) == doctest::Approx(oracle).epsilon(1e-7));
  CHECK(rep.count == 16);
  CHECK(rep.terms.at("align") == doctest::Approx(rep.value));

  Tape t4;
  CHECK_THROWS(loss_align(t4, t4.leaf(randn(3, 3, 4)), randn(4, 3, 5)));

  for (int inst = 0; inst < 20; ++inst) {
    Tensor target = randn(5, 4, 100 + inst);
    double err = gradcheck::max_grad_rel_err(
        {randn(5, 4, 200 + inst)}, [&](Tape& tp, const std::vector<Tape::Id>& ids) {
          return loss_align(tp, ids[0], target);
        });
    CHECK(err < 1e-3);
  }
}

TEST_CASE("distillation KL: analytic values, oracle, gradient, teacher isolation") {
  Tensor logits = randn(6, 10, 7);
  Tape t;
  CHECK(t.val(loss_distill(t, logits, t.leaf(logits))).at(0, 0) ==
        doctest::Approx(0.0).epsilon(1e-9));

  // near-one-hot teacher vs uniform student -> ln 2
  Tensor th(1, 2), st(1, 2);
  th.at(0, 0) = 40.0;
  th.at(0, 1) = -40.0;
  Tape t2;
  CHECK(t2.val(loss_distill(t2, th, t2.leaf(st))).at(0, 0) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-6));

  Tensor tl = randn(8, 32, 8), sl = randn(8, 32, 9);
  double oracle = 0.0;
  for (int r = 0; r < 8; ++r) {
    auto p = soft_row(tl, r), q = soft_row(sl, r);
    for (int c = 0; c < 32; ++c) oracle += p[c] * (std::log(p[c]) - std::log(q[c]));
  }
  oracle /= 8.0;
  Tape t3;
  CHECK(t3.val(loss_distill(t3, tl, t3.leaf(sl))).at(0, 0) ==
        doctest::Approx(oracle).epsilon(1e-6));

  Tensor bad = tl;
  bad.at(0, 0) = std::numeric_limits<double>::infinity();
  Tape t4;
  CHECK_THROWS(loss_distill(t4, bad, t4.leaf(sl)));
  CHECK_THROWS(loss_distill(t4, tl, t4.leaf(sl), 0.0));

  for (int inst = 0; inst < 20; ++inst) {
    Tensor teacher = randn(4, 6, 300 + inst);
    const double temp = inst % 2 ? 1.0 : 2.0;
    double err = gradcheck::max_grad_rel_err(
        {randn(4, 6, 400 + inst)}, [&](Tape& tp, const std::vector<Tape::Id>& ids) {
          return loss_distill(tp, teacher, ids[0], temp);
        });
    CHECK(err < 1e-3);
  }
}

TEST_CASE("boundary BCE with and without the whitespace penalty") {
  std::vector<uint8_t> y{1, 0, 0, 1, 0, 1, 1, 0};
  Tape t;
  CHECK(t.val(loss_boundary(t, t.leaf(Tensor::full(8, 1, 0.5)), y, {}, 0.0)).at(0, 0) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-9));

  Tensor exact(8, 1);
  for (int i = 0; i < 8; ++i) exact.at(i, 0) = y[i];
  Tape t1;
  CHECK(t1.val(loss_boundary(t1, t1.leaf(exact), y, {}, 0.0)).at(0, 0) <= 1e-6);

  // penalty on 2 of 8 positions, gamma = 0.1
  Tensor p = randn(8, 1, 11);
  for (int i = 0; i < 8; ++i) p.at(i, 0) = 0.5 + 0.4 * std::tanh(p.at(i, 0));
  std::vector<char> mask{0, 1, 0, 0, 0, 0, 1, 0};
  double bce = 0.0;
  for (int i = 0; i < 8; ++i)
    bce -= y[i] * std::log(p.at(i, 0)) + (1 - y[i]) * std::log(1 - p.at(i, 0));
  bce /= 8.0;
  const double oracle = bce + 0.1 * (p.at(1, 0) + p.at(6, 0)) / 2.0;
  Tape t2;
  LossReport rep;
  Tape::Id root = loss_boundary(t2, t2.leaf(p), y, mask, 0.1, &rep);
  CHECK(t2.val(root).at(0, 0) == doctest::Approx(oracle).epsilon(1e-9));
  CHECK(rep.terms.at("bce") + rep.terms.at("whitespace_penalty") ==
        doctest::Approx(rep.value).epsilon(1e-6));

  Tape t3;
  CHECK_THROWS(loss_boundary(t3, t3.leaf(Tensor::full(4, 1, 0.5)), y, {}, 0.0));

  for (double gamma : {0.0, 0.1}) {
    for (int inst = 0; inst < 20; ++inst) {
      std::vector<uint8_t> labels(6);
      std::vector<char> m(6);
      Rng rng(500 + inst);
      for (int i = 0; i < 6; ++i) {
        labels[i] = rng.below(2);
        m[i] = static_cast<char>(rng.below(2));
      }
      double err = gradcheck::max_grad_rel_err(
          {randn(6, 1, 600 + inst)}, [&](Tape& tp, const std::vector<Tape::Id>& ids) {
            return loss_boundary(tp, tp.sigmoid(ids[0]), labels, m, gamma);
          });
      CHECK(err < 1e-3);
    }
  }
}

TEST_CASE("whitespace mask marks positions whose next byte is a space") {
  ByteSequence seq{'a', ' ', 'b', 'c', ' ', ' '};
  CHECK(whitespace_penalty_mask(seq) == std::vector<char>{1, 0, 0, 1, 1, 0});
}

TEST_CASE("JBP loss: analytic values and per-position oracle") {
  ByteSequence bytes{'h', 'i', '!', ' ', 'x'};
  std::vector<uint8_t> bounds{0, 1, 0, 1, 1};

  Tape t;
  CHECK(t.val(loss_jbp(t, t.leaf(Tensor(5, 512)), bytes, bounds)).at(0, 0) ==
        doctest::Approx(std::log(512.0)).epsilon(1e-9));

  Tensor hot(5, 512);
  hot.fill(-30.0);
  for (int i = 0; i + 1 < 5; ++i) hot.at(i, jbp_encode(bytes[i + 1], bounds[i + 1])) = 30.0;
  Tape t1;
  CHECK(t1.val(loss_jbp(t1, t1.leaf(hot), bytes, bounds)).at(0, 0) < 1e-6);

  ByteSequence rb(16);
  std::vector<uint8_t> rbd(16);
  Rng rng(21);
  for (int i = 0; i < 16; ++i) {
    rb[i] = static_cast<uint8_t>(rng.below(256));
    rbd[i] = static_cast<uint8_t>(rng.below(2));
  }
  rbd[15] = 1;
  Tensor logits = randn(16, 512, 22);
  double oracle = 0.0;
  for (int i = 0; i < 15; ++i) {
    auto q = soft_row(logits, i);
    oracle -= std::log(q[jbp_encode(rb[i + 1], rbd[i + 1])]);
  }
  oracle /= 15.0;
  Tape t2;
  LossReport rep;
  CHECK(t2.val(loss_jbp(t2, t2.leaf(logits), rb, rbd, &rep)).at(0, 0) ==
        doctest::Approx(oracle).epsilon(1e-7));
  CHECK(rep.count == 15);

  for (int inst = 0; inst < 20; ++inst) {
    ByteSequence bs(4);
    std::vector<uint8_t> bd(4);
    Rng r2(700 + inst);
    for (int i = 0; i < 4; ++i) {
      bs[i] = static_cast<uint8_t>(r2.below(256));
      bd[i] = static_cast<uint8_t>(r2.below(2));
    }
    double err = gradcheck::max_grad_rel_err(
        {randn(4, 512, 800 + inst)}, [&](Tape& tp, const std::vector<Tape::Id>& ids) {
          return loss_jbp(tp, ids[0], bs, bd);
        });
    CHECK(err < 1e-3);
  }
}

TEST_CASE("MBP loss: dual-head targets with equal weighting") {
  ByteSequence bytes{'a', 'b', 'c', 'd'};
  Tape t;
  CHECK(t.val(loss_mbp(t, t.leaf(Tensor(4, 256)), t.leaf(Tensor(4, 256)), bytes)).at(0, 0) ==
        doctest::Approx(2.0 * std::log(256.0)).epsilon(1e-9));

  Tensor p1(4, 256), p2(4, 256);
  p1.fill(-30.0);
  p2.fill(-30.0);
  for (int i = 0; i < 3; ++i) p1.at(i, bytes[i + 1]) = 30.0;
  for (int i = 0; i < 2; ++i) p2.at(i, bytes[i + 2]) = 30.0;
  Tape t1;
  CHECK(t1.val(loss_mbp(t1, t1.leaf(p1), t1.leaf(p2), bytes)).at(0, 0) < 1e-6);

  Tape t2;
  CHECK_THROWS(loss_mbp(t2, t2.leaf(Tensor(2, 256)), t2.leaf(Tensor(2, 256)),
                        ByteSequence{'a', 'b'}));

  ByteSequence rb(8);
  Rng rng(31);
  for (auto& b : rb) b = static_cast<uint8_t>(rng.below(256));
  Tensor l1 = randn(8, 256, 32), l2 = randn(8, 256, 33);
  double oracle = 0.0, o1 = 0.0, o2 = 0.0;
  for (int i = 0; i < 7; ++i) o1 -= std::log(soft_row(l1, i)[rb[i + 1]]);
  for (int i = 0; i < 6; ++i) o2 -= std::log(soft_row(l2, i)[rb[i + 2]]);
  oracle = o1 / 7.0 + o2 / 6.0;
  Tape t3;
  LossReport rep;
  CHECK(t3.val(loss_mbp(t3, t3.leaf(l1), t3.leaf(l2), rb, &rep)).at(0, 0) ==
        doctest::Approx(oracle).epsilon(1e-7));
  CHECK(rep.terms.at("next_byte") + rep.terms.at("next_next_byte") ==
        doctest::Approx(rep.value).epsilon(1e-6));

  for (int inst = 0; inst < 20; ++inst) {
    ByteSequence bs(5);
    Rng r2(900 + inst);
    for (auto& b : bs) b = static_cast<uint8_t>(r2.below(256));
    double err = gradcheck::max_grad_rel_err(
        {randn(5, 256, 950 + inst), randn(5, 256, 975 + inst)},
        [&](Tape& tp, const std::vector<Tape::Id>& ids) {
          return loss_mbp(tp, ids[0], ids[1], bs);
        });
    CHECK(err < 1e-3);
  }
}

TEST_CASE("bits per byte conversion") {
  CHECK(bits_per_byte(std::log(2.0), 1) == doctest::Approx(1.0));
  CHECK(bits_per_byte(100 * std::log(256.0), 100) == doctest::Approx(8.0));
  CHECK_THROWS(bits_per_byte(1.0, 0));

  // accumulation-order stability: summing per example equals one big sum
  Rng rng(41);
  double total = 0.0;
  long long bytes = 0;
  std::vector<std::pair<double, long long>> parts;
  for (int i = 0; i < 10; ++i) {
    double nats = rng.below(1000) * 0.01 + 0.5;
    long long n = 1 + static_cast<long long>(rng.below(50));
    parts.emplace_back(nats, n);
    total += nats;
    bytes += n;
  }
  double split = 0.0;
  long long sb = 0;
  for (auto& [nats, n] : parts) {
    split += nats;
    sb += n;
  }
  CHECK(bits_per_byte(total, bytes) == doctest::Approx(bits_per_byte(split, sb)).epsilon(1e-12));
}
