#include "ctsn/autodiff.hpp"
#include "ctsn/errors.hpp"
#include "ctsn/optim.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace ctsn;

namespace {

Tensor rand_t(std::size_t r, std::size_t c, std::mt19937_64& rng, double bound = 1.0) {
  return uniform_tensor(r, c, bound, rng);
}

// Entries in +-[lo, hi], away from zero.
Tensor off_zero(std::size_t r, std::size_t c, std::mt19937_64& rng, double lo = 0.1, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(r, c);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = (rng() & 1 ? 1.0 : -1.0) * u(rng);
  return t;
}

// Reduces an r x c output to a scalar with fixed random weights so every
// output entry contributes a distinct amount.
ad::Var weighted_sum(ad::Var y, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  ad::Tape& t = y.tape();
  return ad::mean_all(ad::mul(y, t.constant(uniform_tensor(y.rows(), y.cols(), 1.0, rng))));
}

double check(const ScalarFn& fn, const std::vector<Tensor>& params) {
  return finite_diff_check(fn, params).max_rel_error;
}

ad::SegmentsPtr segments() { return ad::Segments::from_sorted_ids({0, 0, 1, 2, 2, 2, 4}, 5); }

}  // namespace

TEST_CASE("primitive gradients match finite differences") {
  std::mt19937_64 rng(17);
  const double tol = 1e-6;

  SUBCASE("matmul") {
    CHECK(check([](ad::Tape&, const std::vector<ad::Var>& v) { return weighted_sum(ad::matmul(v[0], v[1])); },
                {rand_t(4, 3, rng), rand_t(3, 5, rng)}) < tol);
  }
  SUBCASE("add with row broadcast, sub, scale, mul") {
    CHECK(check([](ad::Tape&, const std::vector<ad::Var>& v) { return weighted_sum(ad::add(v[0], v[1])); },
                {rand_t(4, 3, rng), rand_t(1, 3, rng)}) < tol);
    CHECK(check([](ad::Tape&, const std::vector<ad::Var>& v) { return weighted_sum(ad::sub(v[0], v[1])); },
                {rand_t(4, 3, rng), rand_t(4, 3, rng)}) < tol);
    CHECK(check([](ad::Tape&, const std::vector<ad::Var>& v) { return weighted_sum(ad::scale(v[0], -2.5)); },
                {rand_t(4, 3, rng)}) < tol);
    CHECK(check([](ad::Tape&, const std::vector<ad::Var>& v) { return weighted_sum(ad::mul(v[0], v[1])); },
                {rand_t(4, 3, rng), rand_t(4, 3, rng)}) < tol);
  }
  SUBCASE("relu and sigmoid") {
    CHECK(check([](ad::Tape&, const std::vector<ad::Var>& v) { return weighted_sum(ad::relu(v[0])); },
                {off_zero(5, 4, rng)}) < tol);
    CHECK(check([](ad::Tape&, const std::vector<ad::Var>& v) { return weighted_sum(ad::sigmoid(v[0])); },
                {rand_t(5, 4, rng, 3.0)}) < tol);
  }
  SUBCASE("softmax_rows and layer_norm_rows") {
    CHECK(check([](ad::Tape&, const std::vector<ad::Var>& v) { return weighted_sum(ad::softmax_rows(v[0])); },
                {rand_t(3, 6, rng, 2.0)}) < tol);
    CHECK(check(
              [](ad::Tape&, const std::vector<ad::Var>& v) {
                return weighted_sum(ad::layer_norm_rows(v[0], v[1], v[2]));
              },
              {rand_t(4, 5, rng), rand_t(1, 5, rng), rand_t(1, 5, rng)}) < tol);
  }
  SUBCASE("concat, gather, repeat, fold") {
    auto idx = std::make_shared<const std::vector<std::uint32_t>>(std::vector<std::uint32_t>{2, 0, 2, 1, 3});
    CHECK(check(
              [](ad::Tape&, const std::vector<ad::Var>& v) { return weighted_sum(ad::concat_cols({v[0], v[1]})); },
              {rand_t(3, 2, rng), rand_t(3, 4, rng)}) < tol);
    CHECK(check([idx](ad::Tape&, const std::vector<ad::Var>& v) { return weighted_sum(ad::gather_rows(v[0], idx)); },
                {rand_t(4, 3, rng)}) < tol);
    CHECK(check([](ad::Tape&, const std::vector<ad::Var>& v) { return weighted_sum(ad::repeat_cols(v[0], 3)); },
                {rand_t(4, 2, rng)}) < tol);
    CHECK(check([](ad::Tape&, const std::vector<ad::Var>& v) { return weighted_sum(ad::fold_cols(v[0], 2)); },
                {rand_t(4, 6, rng)}) < tol);
  }
  SUBCASE("segment sum and softmax") {
    const auto seg = segments();
    CHECK(check([seg](ad::Tape&, const std::vector<ad::Var>& v) { return weighted_sum(ad::segment_sum_rows(v[0], seg)); },
                {rand_t(7, 3, rng)}) < tol);
    CHECK(check([seg](ad::Tape&, const std::vector<ad::Var>& v) { return weighted_sum(ad::segment_softmax(v[0], seg)); },
                {rand_t(7, 3, rng, 2.0)}) < tol);
  }
  SUBCASE("l2_norm_rows and mean_all") {
    CHECK(check([](ad::Tape&, const std::vector<ad::Var>& v) { return weighted_sum(ad::l2_norm_rows(v[0])); },
                {off_zero(6, 3, rng)}) < tol);
    CHECK(check([](ad::Tape&, const std::vector<ad::Var>& v) { return ad::mean_all(v[0]); }, {rand_t(3, 3, rng)}) <
          tol);
  }
  SUBCASE("fuse_weights away from the clamp") {
    std::uniform_real_distribution<double> u(0.1, 1.0);
    Tensor init(5, 4);
    for (std::size_t i = 0; i < init.size(); ++i) init[i] = u(rng);
    for (std::size_t r = 0; r < 5; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < 4; ++c) s += init(r, c);
      for (std::size_t c = 0; c < 4; ++c) init(r, c) /= s;
    }
    CHECK(check([init](ad::Tape&, const std::vector<ad::Var>& v) { return weighted_sum(ad::fuse_weights(init, v[0])); },
                {rand_t(5, 4, rng, 0.02)}) < tol);
  }
}

TEST_CASE("softmax rows sum to one") {
  std::mt19937_64 rng(3);
  ad::Tape t;
  const auto s = ad::softmax_rows(t.constant(uniform_tensor(20, 9, 30.0, rng)));
  for (std::size_t r = 0; r < 20; ++r) {
    double sum = 0.0;
    for (std::size_t c = 0; c < 9; ++c) sum += s.value()(r, c);
    CHECK(std::abs(sum - 1.0) < 1e-12);
  }
}

TEST_CASE("segment softmax normalises each column within each segment") {
  std::mt19937_64 rng(3);
  ad::Tape t;
  const auto seg = segments();
  const auto s = ad::segment_softmax(t.constant(uniform_tensor(7, 2, 5.0, rng)), seg);
  for (std::size_t g = 0; g < seg->count; ++g) {
    if (seg->offsets[g] == seg->offsets[g + 1]) continue;
    for (std::size_t c = 0; c < 2; ++c) {
      double sum = 0.0;
      for (auto e = seg->offsets[g]; e < seg->offsets[g + 1]; ++e) sum += s.value()(e, c);
      CHECK(std::abs(sum - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("fuse_weights clamps, renormalises and falls back") {
  ad::Tape t;
  Tensor init(3, 3, std::vector<double>{0.5, 0.5, 0.0, 0.2, 0.3, 0.5, 1.0, 0.0, 0.0});
  Tensor res(3, 3, std::vector<double>{0.0, 0.0, 0.0, -0.3, 0.1, 0.1, -2.0, 0.0, 0.0});
  const auto f = ad::fuse_weights(init, t.constant(res)).value();
  // zero residual: the initial row bit for bit
  CHECK(f(0, 0) == 0.5);
  CHECK(f(0, 1) == 0.5);
  CHECK(f(0, 2) == 0.0);
  // clamped entry, the rest renormalised
  CHECK(f(1, 0) == 0.0);
  CHECK(f(1, 1) == doctest::Approx(0.4 / 1.0));
  CHECK(f(1, 2) == doctest::Approx(0.6 / 1.0));
  // everything clamps to zero: initial row
  CHECK(f(2, 0) == 1.0);
  CHECK(f(2, 1) == 0.0);
}

TEST_CASE("shape mismatches and non-finite values are rejected") {
  ad::Tape t;
  CHECK_THROWS_AS(ad::matmul(t.constant(Tensor(2, 3)), t.constant(Tensor(2, 3))), ValidationError);
  CHECK_THROWS_AS(ad::add(t.constant(Tensor(2, 3)), t.constant(Tensor(2, 2))), ValidationError);
  CHECK_THROWS_AS(t.leaf(Tensor(1, 1, std::nan(""))), NumericError);
  CHECK_THROWS_AS(ad::scale(t.constant(Tensor(1, 1, 1e308)), 1e10), NumericError);
  CHECK_THROWS_AS(t.backward(t.leaf(Tensor(2, 2))), ValidationError);
  CHECK_THROWS_AS(ad::Segments::from_sorted_ids({1, 0}, 2), ValidationError);
}

TEST_CASE("gradients accumulate over shared subexpressions") {
  ad::Tape t;
  const auto x = t.leaf(Tensor(1, 1, 3.0));
  const auto y = ad::mul(x, x);  // x^2
  const auto z = ad::add(y, ad::scale(x, 2.0));
  t.backward(ad::mean_all(z));
  CHECK(t.grad(x)[0] == doctest::Approx(8.0));
}

TEST_CASE("kink margin tracks the closest ReLU input") {
  ad::Tape t;
  ad::relu(t.constant(Tensor(1, 3, std::vector<double>{0.5, -0.02, 3.0})));
  CHECK(t.kink_margin() == doctest::Approx(0.02));
}

TEST_CASE("adam step matches a hand computation") {
  ParamSet p, g;
  p.add("w", Tensor(1, 2, std::vector<double>{1.0, -1.0}));
  g.add("w", Tensor(1, 2, std::vector<double>{0.5, -2.0}));
  AdamState s;
  adam_step(p, g, s, 0.1);
  // First bias-corrected step moves each entry by lr * sign(g).
  CHECK(p.at("w")[0] == doctest::Approx(1.0 - 0.1).epsilon(1e-7));
  CHECK(p.at("w")[1] == doctest::Approx(-1.0 + 0.1).epsilon(1e-7));
  const double p1 = p.at("w")[0];
  adam_step(p, g, s, 0.1);
  const double m = 0.9 * 0.05 + 0.1 * 0.5, v = 0.999 * 0.00025 + 0.001 * 0.25;
  const double step = 0.1 * (m / (1 - 0.81)) / (std::sqrt(v / (1 - 0.999 * 0.999)) + 1e-8);
  CHECK(p.at("w")[0] == doctest::Approx(p1 - step).epsilon(1e-14));
}

TEST_CASE("adam leaves parameters without gradients untouched") {
  ParamSet p, g;
  p.add("a", Tensor(1, 1, 1.0));
  p.add("b", Tensor(1, 1, 2.0));
  g.add("a", Tensor(1, 1, 1.0));
  AdamState s;
  adam_step(p, g, s, 0.01);
  CHECK(p.at("b")[0] == 2.0);
  CHECK(p.at("a")[0] != 1.0);
}

TEST_CASE("finite difference check flags a wrong gradient") {
  // relu at a kink: analytic one-sided slope vs the central mean
  const auto r = finite_diff_check(
      [](ad::Tape&, const std::vector<ad::Var>& v) { return ad::mean_all(ad::relu(v[0])); },
      {Tensor(1, 1, 0.0)});
  CHECK(r.max_rel_error > 0.1);
}
