#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "blm/rng.hpp"
#include "blm/tape.hpp"
#include "support/gradcheck.hpp"

using blm::Rng;
using blm::Tape;
using blm::Tensor;
using gradcheck::max_grad_rel_err;

namespace {

Tensor randn(Rng& rng, int r, int c, double s = 1.0) {
  Tensor t(r, c);
  rng.fill_normal(t, s);
  return t;
}

// Scalarize a matrix output against fixed weights so every entry contributes.
Tape::Id weighted_sum(Tape& t, Tape::Id out, const Tensor& w) {
  return t.sum_all(t.mul(out, t.leaf(w)));
}

constexpr double kTol = 1e-3;

}  // namespace

TEST_CASE("elementwise and broadcast ops match finite differences") {
  Rng rng(1);
  Tensor a = randn(rng, 4, 5), b = randn(rng, 4, 5);
  Tensor r = randn(rng, 1, 5), c = randn(rng, 4, 1);
  Tensor w = randn(rng, 4, 5);

  CHECK(max_grad_rel_err({a, b}, [&](Tape& t, const auto& in) {
          return weighted_sum(t, t.add(in[0], in[1]), w);
        }) < kTol);
  CHECK(max_grad_rel_err({a, b}, [&](Tape& t, const auto& in) {
          return weighted_sum(t, t.mul(t.sub(in[0], in[1]), in[1]), w);
        }) < kTol);
  CHECK(max_grad_rel_err({a}, [&](Tape& t, const auto& in) {
          return weighted_sum(t, t.affine(in[0], -2.5, 0.75), w);
        }) < kTol);
  CHECK(max_grad_rel_err({a, r}, [&](Tape& t, const auto& in) {
          return weighted_sum(t, t.add_rowvec(in[0], in[1]), w);
        }) < kTol);
  CHECK(max_grad_rel_err({a, c}, [&](Tape& t, const auto& in) {
          return weighted_sum(t, t.mul_colvec(in[0], in[1]), w);
        }) < kTol);
  CHECK(max_grad_rel_err({a}, [&](Tape& t, const auto& in) {
          return weighted_sum(t, t.sigmoid(in[0]), w);
        }) < kTol);
  CHECK(max_grad_rel_err({a}, [&](Tape& t, const auto& in) {
          return weighted_sum(t, t.silu(in[0]), w);
        }) < kTol);
}

TEST_CASE("matmul with all transpose combinations") {
  Rng rng(2);
  Tensor a = randn(rng, 3, 4), b = randn(rng, 4, 2), w = randn(rng, 3, 2);
  CHECK(max_grad_rel_err({a, b}, [&](Tape& t, const auto& in) {
          return weighted_sum(t, t.matmul(in[0], in[1]), w);
        }) < kTol);
  Tensor at = randn(rng, 4, 3);
  CHECK(max_grad_rel_err({at, b}, [&](Tape& t, const auto& in) {
          return weighted_sum(t, t.matmul(in[0], in[1], true, false), w);
        }) < kTol);
  Tensor bt = randn(rng, 2, 4);
  CHECK(max_grad_rel_err({a, bt}, [&](Tape& t, const auto& in) {
          return weighted_sum(t, t.matmul(in[0], in[1], false, true), w);
        }) < kTol);
  CHECK(max_grad_rel_err({at, bt}, [&](Tape& t, const auto& in) {
          return weighted_sum(t, t.matmul(in[0], in[1], true, true), w);
        }) < kTol);
}

TEST_CASE("gather, concat, rmsnorm") {
  Rng rng(3);
  Tensor a = randn(rng, 5, 4);
  Tensor w3 = randn(rng, 3, 4);
  CHECK(max_grad_rel_err({a}, [&](Tape& t, const auto& in) {
          return weighted_sum(t, t.gather_rows(in[0], {4, 0, 4}), w3);
        }) < kTol);

  Tensor b = randn(rng, 2, 4), w7 = randn(rng, 7, 4);
  CHECK(max_grad_rel_err({a, b}, [&](Tape& t, const auto& in) {
          return weighted_sum(t, t.concat_rows(in[0], in[1]), w7);
        }) < kTol);

  Tensor gain = randn(rng, 1, 4, 0.3);
  for (double& x : gain.v) x += 1.0;
  Tensor w5 = randn(rng, 5, 4);
  CHECK(max_grad_rel_err({a, gain}, [&](Tape& t, const auto& in) {
          return weighted_sum(t, t.rmsnorm(in[0], in[1]), w5);
        }) < kTol);
}

TEST_CASE("reduction losses match finite differences") {
  Rng rng(4);
  Tensor a = randn(rng, 6, 5), b = randn(rng, 6, 5);
  CHECK(max_grad_rel_err({a, b}, [&](Tape& t, const auto& in) {
          return t.sq_l2_mean(in[0], in[1]);
        }) < kTol);
  CHECK(max_grad_rel_err({a}, [&](Tape& t, const auto& in) {
          return t.mean_all(in[0]);
        }) < kTol);

  Tensor teacher = randn(rng, 6, 5);
  CHECK(max_grad_rel_err({a}, [&](Tape& t, const auto& in) {
          return t.kl_from_const(teacher, in[0], 1.0);
        }) < kTol);
  CHECK(max_grad_rel_err({a}, [&](Tape& t, const auto& in) {
          return t.kl_from_const(teacher, in[0], 2.5);
        }) < kTol);

  std::vector<int> targets{0, 3, -1, 2, 4, 1};
  CHECK(max_grad_rel_err({a}, [&](Tape& t, const auto& in) {
          return t.cross_entropy_rows(in[0], targets);
        }) < kTol);

  Tensor p(5, 1);
  for (int i = 0; i < 5; ++i) p.at(i, 0) = 0.1 + 0.17 * i;
  std::vector<int> y{1, 0, 1, 1, 0};
  CHECK(max_grad_rel_err({p}, [&](Tape& t, const auto& in) {
          return t.bce(in[0], y, 1e-7);
        }) < kTol);

  std::vector<char> mask{1, 0, 0, 1, 1};
  CHECK(max_grad_rel_err({p}, [&](Tape& t, const auto& in) {
          return t.masked_mean(in[0], mask);
        }) < kTol);
}

TEST_CASE("sequence ops match finite differences") {
  Rng rng(5);

  // linear recurrence: gates in (0,1)
  Tensor gate = randn(rng, 6, 3);
  for (double& x : gate.v) x = 1.0 / (1.0 + std::exp(-x));
  Tensor u = randn(rng, 6, 3), w = randn(rng, 6, 3);
  CHECK(max_grad_rel_err({gate, u}, [&](Tape& t, const auto& in) {
          return weighted_sum(t, t.linear_recurrence(in[0], in[1]), w);
        }) < kTol);

  // causal attention, 2 heads
  Tensor q = randn(rng, 5, 6), k = randn(rng, 5, 6), v = randn(rng, 5, 6);
  Tensor wa = randn(rng, 5, 6);
  CHECK(max_grad_rel_err({q, k, v}, [&](Tape& t, const auto& in) {
          return weighted_sum(t, t.causal_attention(in[0], in[1], in[2], 2), wa);
        }) < kTol);

  // cosine pairs
  Tensor ca = randn(rng, 4, 3), cb = randn(rng, 4, 3), wc = randn(rng, 4, 1);
  CHECK(max_grad_rel_err({ca, cb}, [&](Tape& t, const auto& in) {
          return weighted_sum(t, t.cosine_pairs(in[0], in[1]), wc);
        }) < kTol);

  // smoothing
  Tensor h = randn(rng, 4, 3);
  Tensor sp(4, 1);
  for (int i = 0; i < 4; ++i) sp.at(i, 0) = 0.2 + 0.2 * i;
  Tensor wh = randn(rng, 4, 3);
  CHECK(max_grad_rel_err({h, sp}, [&](Tape& t, const auto& in) {
          return weighted_sum(t, t.smooth_chunks(in[0], in[1]), wh);
        }) < kTol);

  // shifted upsample: chunks end at 1, 3, 6
  Tensor hh = randn(rng, 3, 3), nullrow = randn(rng, 1, 3), wu = randn(rng, 7, 3);
  CHECK(max_grad_rel_err({hh, nullrow}, [&](Tape& t, const auto& in) {
          return weighted_sum(t, t.shifted_upsample(in[0], in[1], {1, 3, 6}, 7), wu);
        }) < kTol);

  // confidence scale: STE backward equals the soft path's gradients
  Tensor uu = randn(rng, 5, 3), cc(5, 1), wcs = randn(rng, 5, 3);
  for (int i = 0; i < 5; ++i) cc.at(i, 0) = 0.5 + 0.09 * i;
  CHECK(max_grad_rel_err({uu, cc}, [&](Tape& t, const auto& in) {
          return weighted_sum(t, t.confidence_scale(in[0], in[1], /*hard=*/false), wcs);
        }) < kTol);
}

TEST_CASE("confidence scale STE: hard forward is identity, backward is soft") {
  Rng rng(6);
  Tensor u = randn(rng, 4, 3), c(4, 1);
  for (int i = 0; i < 4; ++i) c.at(i, 0) = 0.6 + 0.1 * i;
  Tape hard_t, soft_t;
  auto uid_h = hard_t.leaf(u);
  auto cid_h = hard_t.leaf(c);
  auto out_h = hard_t.confidence_scale(uid_h, cid_h, true);
  for (size_t i = 0; i < u.v.size(); ++i)
    CHECK(hard_t.val(out_h).v[i] == doctest::Approx(u.v[i]));

  auto uid_s = soft_t.leaf(u);
  auto cid_s = soft_t.leaf(c);
  auto out_s = soft_t.confidence_scale(uid_s, cid_s, false);
  hard_t.backward(hard_t.sum_all(out_h));
  soft_t.backward(soft_t.sum_all(out_s));
  for (size_t i = 0; i < u.v.size(); ++i)
    CHECK(hard_t.grad(uid_h).v[i] == doctest::Approx(soft_t.grad(uid_s).v[i]));
  for (int i = 0; i < 4; ++i)
    CHECK(hard_t.grad(cid_h).at(i, 0) == doctest::Approx(soft_t.grad(cid_s).at(i, 0)));
}

TEST_CASE("param leaves accumulate into external gradients") {
  Rng rng(7);
  blm::Param p("w", randn(rng, 2, 2));
  Tape t;
  auto a = t.param(p);
  auto b = t.param(p);  // same param used twice
  t.backward(t.sum_all(t.add(a, b)));
  for (double g : p.grad.v) CHECK(g == doctest::Approx(2.0));
}
