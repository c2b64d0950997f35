#include "doctest.h"

#include <cmath>
#include <vector>

#include "oracles.hpp"
#include "sqens/errors.hpp"
#include "sqens/quant.hpp"

using namespace sqens;

namespace {

BinGrid five_bins() { return make_bin_grid(0.0, 1.0, 5); }

}  // namespace

TEST_CASE("make_bin_grid places endpoints and spacing") {
  const BinGrid two = make_bin_grid(0, 1, 2);
  CHECK(two.bins[0] == 0.0);
  CHECK(two.bins[1] == 1.0);
  CHECK(two.spacing == 1.0);

  const BinGrid sixteen = make_bin_grid(0, 1, 16);
  CHECK(sixteen.spacing == doctest::Approx(1.0 / 15).epsilon(1e-15));
  CHECK(sixteen.bins[5] == doctest::Approx(1.0 / 3).epsilon(1e-15));
  CHECK(sixteen.hi() == 1.0);

  const BinGrid five = five_bins();
  const double expected[] = {0, 0.25, 0.5, 0.75, 1.0};
  for (int i = 0; i < 5; ++i) CHECK(five.bins[i] == expected[i]);

  CHECK_THROWS_AS(make_bin_grid(1, 1, 4), Error);
  try {
    make_bin_grid(2, 1, 4);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::degenerate_grid);
  }
  CHECK_THROWS_AS(make_bin_grid(0, 1, 1), Error);
}

TEST_CASE("from_bins enforces the grid invariants") {
  Eigen::VectorXd ok(3);
  ok << -1, 0, 1;
  CHECK(BinGrid::from_bins(ok).spacing == 1.0);
  Eigen::VectorXd uneven(3);
  uneven << 0, 1, 3;
  CHECK_THROWS_AS(BinGrid::from_bins(uneven), Error);
  Eigen::VectorXd decreasing(2);
  decreasing << 1, 0;
  CHECK_THROWS_AS(BinGrid::from_bins(decreasing), Error);
}

TEST_CASE("binary SQ matches the two-state input table") {
  const BinGrid g = make_bin_grid(0, 1, 2);
  const auto a = binary_sq_pmf(0.7, g);
  CHECK(a.probs[1] == doctest::Approx(0.7).epsilon(1e-15));
  CHECK(a.probs[0] == doctest::Approx(0.3).epsilon(1e-15));
  CHECK(binary_sq_pmf(0.6, g).probs[1] == doctest::Approx(0.6));
  CHECK(binary_sq_pmf(0.0, g).probs[0] == 1.0);
  CHECK(pmf_mean(a) == doctest::Approx(0.7).epsilon(1e-15));

  try {
    binary_sq_pmf(1.5, g);
    FAIL("expected out-of-range");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::out_of_range);
  }
}

TEST_CASE("naive multi-bin extension") {
  const BinGrid g2 = make_bin_grid(0, 1, 2);
  for (double v : {0.0, 0.13, 0.5, 0.99, 1.0}) {
    const auto naive = naive_multibin_pmf(v, g2);
    const auto bin = binary_sq_pmf(v, g2);
    CHECK((naive.probs - bin.probs).cwiseAbs().maxCoeff() < 1e-15);
  }

  // {0, 0.5, 1} at v = 0.5: pairs (0,1) -> b1 += 1, (0,2) -> b0, b2 += 1/2,
  // (1,2) -> b1 += 1; Z = 3.
  const BinGrid g3 = make_bin_grid(0, 1, 3);
  const auto mid = naive_multibin_pmf(0.5, g3);
  CHECK(mid.probs[0] == doctest::Approx(1.0 / 6));
  CHECK(mid.probs[1] == doctest::Approx(2.0 / 3));
  CHECK(mid.probs[2] == doctest::Approx(1.0 / 6));
  CHECK(mid.probs[0] == mid.probs[2]);
  CHECK(pmf_mean(mid) == doctest::Approx(0.5));
}

TEST_CASE("sparse SQ reproduces the pair-enumeration oracle") {
  const BinGrid g = five_bins();
  const auto d = sq_pmf(0.6, g, 2.0);
  const auto ref = oracle::sparse_sq(0.6, oracle::linspace(0, 1, 5), 2.0);
  for (int i = 0; i < 5; ++i) CHECK(d.probs[i] == doctest::Approx(ref[i]).epsilon(1e-12));

  // Frozen from the oracle: exact rationals of the six contributing pairs.
  CHECK(d.probs[0] == 0.0);
  CHECK(d.probs[1] == doctest::Approx(19.0 / 198).epsilon(1e-12));
  CHECK(d.probs[2] == doctest::Approx(232.0 / 495).epsilon(1e-12));
  CHECK(d.probs[3] == doctest::Approx(371.0 / 990).epsilon(1e-12));
  CHECK(d.probs[4] == doctest::Approx(2.0 / 33).epsilon(1e-12));
  CHECK(d.probs[1] == doctest::Approx(0.0960).epsilon(1e-3));
  CHECK(d.probs[2] == doctest::Approx(0.4687).epsilon(1e-3));
  CHECK(pmf_mean(d) == doctest::Approx(0.6).epsilon(1e-9));

  Rng rng(7);
  for (int n : {3, 9, 16}) {
    const BinGrid grid = make_bin_grid(-0.5, 2.0, n);
    const auto bins = oracle::linspace(-0.5, 2.0, n);
    for (double alpha : {1.5, 2.0, 3.7, 4.0}) {
      for (int t = 0; t < 50; ++t) {
        const double v = -0.5 + 2.5 * uniform_open(rng);
        const auto got = sq_pmf(v, grid, alpha);
        const auto want = oracle::sparse_sq(v, bins, alpha);
        for (int i = 0; i < n; ++i) REQUIRE(got.probs[i] == doctest::Approx(want[i]).epsilon(1e-10));
      }
    }
  }
}

TEST_CASE("sparse SQ on a two-bin grid is binary SQ") {
  const BinGrid g = make_bin_grid(0, 1, 2);
  for (double alpha : {1.01, 2.0, 4.0, 16.0}) {
    for (int k = 0; k <= 100; ++k) {
      const double v = k / 100.0;
      const auto a = sq_pmf(v, g, alpha);
      const auto b = binary_sq_pmf(v, g);
      CHECK((a.probs - b.probs).cwiseAbs().maxCoeff() <= 1e-12);
    }
  }
}

TEST_CASE("sparse SQ at bins") {
  const BinGrid g = make_bin_grid(0, 1, 16);
  for (double alpha : {2.0, 4.0}) {
    // Grid endpoints are exact point masses.
    CHECK(sq_pmf(0.0, g, alpha).probs[0] == 1.0);
    CHECK(sq_pmf(1.0, g, alpha).probs[15] == 1.0);
    // Interior bins keep the mode on themselves; pairs straddling the bin
    // spread some mass onto neighbours within alpha.
    for (int k = 1; k < 15; ++k) {
      const auto d = sq_pmf(g.bins[k], g, alpha);
      Eigen::Index mode;
      d.probs.maxCoeff(&mode);
      CHECK(mode == k);
      CHECK(pmf_mean(d) == doctest::Approx(g.bins[k]).epsilon(1e-12));
    }
  }
}

TEST_CASE("kernel derivative matches central differences") {
  const int n = 16;
  std::vector<double> p(n), dp(n), pp(n), pm(n), scratch(n);
  const double h = 1e-6;
  for (double alpha : {1.5, 2.0, 4.0}) {
    for (double c : {0.3, 2.71, 7.45, 13.2, 14.9}) {
      sq_coordinate_pmf(c, n, alpha, p, dp);
      sq_coordinate_pmf(c + h, n, alpha, pp, scratch);
      sq_coordinate_pmf(c - h, n, alpha, pm, scratch);
      for (int k = 0; k < n; ++k) CHECK(dp[k] == doctest::Approx((pp[k] - pm[k]) / (2 * h)).epsilon(1e-6));
    }
  }
}

TEST_CASE("alpha <= 1 falls back to nearest-bin behaviour and warns") {
  CHECK_FALSE(validate(SqParams{1.0, 16, 0.5}).empty());
  CHECK(validate(SqParams{4.0, 16, 0.5}).empty());
  CHECK_THROWS_AS(validate(SqParams{4.0, 1, 0.5}), Error);
  CHECK_THROWS_AS(validate(SqParams{4.0, 16, 0.0}), Error);

  const BinGrid g = make_bin_grid(0, 1, 5);
  // Between bins alpha = 1 reduces to adjacent stochastic rounding.
  const auto d = sq_pmf(0.6, g, 1.0);
  CHECK(d.probs[2] == doctest::Approx(0.6));
  CHECK(d.probs[3] == doctest::Approx(0.4));
  // On a bin the normalizer vanishes; the limit is a point mass.
  CHECK(sq_pmf(0.5, g, 1.0).probs[2] == 1.0);
}

TEST_CASE("pmf_mean") {
  const auto grid = std::make_shared<const BinGrid>(five_bins());
  CHECK(pmf_mean(point_mass(grid, 3)) == 0.75);
  CHECK(pmf_mean(binary_sq_pmf(0.7, make_bin_grid(0, 1, 2))) == doctest::Approx(0.7));
}

TEST_CASE("hard sampling") {
  const auto grid = std::make_shared<const BinGrid>(five_bins());
  Rng rng(3);
  const auto pm = point_mass(grid, 2);
  for (int i = 0; i < 100; ++i) CHECK(sample(pm, rng) == 0.5);

  const auto d = binary_sq_pmf(0.7, make_bin_grid(0, 1, 2));
  Rng r(11);
  int ones = 0;
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) ones += sample(d, r) == 1.0;
  CHECK(std::abs(ones / double(draws) - 0.7) <= 0.01);

  Rng a(99), b(99);
  const auto sparse = sq_pmf(0.37, make_bin_grid(0, 1, 16), 4.0);
  for (int i = 0; i < 200; ++i) CHECK(sample(sparse, a) == sample(sparse, b));
}

TEST_CASE("relaxed sampling") {
  const auto grid = std::make_shared<const BinGrid>(five_bins());
  Rng rng(5);
  const auto pm = point_mass(grid, 1);
  for (double tau : {0.01, 0.5, 10.0}) CHECK(relaxed_sample(pm, tau, rng).value == 0.25);

  // Sharpening: with the noise held fixed, tau -> 0 approaches a single bin.
  const auto d = sq_pmf(0.6, *grid, 2.0);
  Eigen::VectorXd noise(5);
  for (int k = 0; k < 5; ++k) noise[k] = gumbel(rng);
  const auto sharp = relaxed_sample(d, 1e-4, noise);
  double nearest = 1e9;
  for (int k = 0; k < 5; ++k) nearest = std::min(nearest, std::abs(sharp.value - grid->bins[k]));
  CHECK(nearest < 1e-9);
  CHECK(sharp.weights.sum() == doctest::Approx(1.0));
  CHECK(sharp.weights[0] == 0.0);

  // Monte Carlo: relaxed and hard sample means agree.
  const auto bin = binary_sq_pmf(0.7, make_bin_grid(0, 1, 2));
  Rng r1(21), r2(22);
  double relaxed_mean = 0, hard_mean = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    relaxed_mean += relaxed_sample(bin, 0.5, r1).value;
    hard_mean += sample(bin, r2);
  }
  CHECK(std::abs(relaxed_mean / n - hard_mean / n) <= 0.05);
}

TEST_CASE("quantize_vector range policies") {
  Rng rng(1);
  Eigen::VectorXd image(200);
  for (auto& x : image) x = uniform_open(rng);
  const SqParams params{4.0, 16, 0.5};
  const auto q = quantize_vector(image, params, RangePolicy::fixed(0, 1));
  CHECK(q.grid->lo() == 0.0);
  CHECK(q.grid->hi() == 1.0);
  const int bound = 2 * static_cast<int>(std::ceil(params.alpha)) + 1;
  for (const auto& d : q.pmfs) CHECK((d.probs.array() > 0).count() <= bound);

  Eigen::VectorXd feat(2);
  feat << 0.2, 0.8;
  const auto f = quantize_vector(feat, params, RangePolicy::per_vector_minmax());
  CHECK(f.grid->lo() == 0.2);
  CHECK(f.grid->hi() == 0.8);
  CHECK_FALSE(f.degenerate_range);

  Eigen::VectorXd flat = Eigen::VectorXd::Constant(2, 0.5);
  const auto c = quantize_vector(flat, params, RangePolicy::per_vector_minmax());
  CHECK(c.degenerate_range);
  CHECK(c.grid->lo() < 0.5);
  CHECK(c.grid->hi() > 0.5);
  for (const auto& d : c.pmfs) CHECK(std::abs(d.probs.sum() - 1.0) < 1e-12);

  CHECK_THROWS_AS(quantize_vector(Eigen::VectorXd(0), params, RangePolicy::fixed(0, 1)), Error);
}

TEST_CASE("sparse SQ properties on random values") {
  Rng rng(2024);
  for (int trial = 0; trial < 300; ++trial) {
    const int n = 2 + static_cast<int>(uniform_open(rng) * 30);
    const double alpha = 1.05 + 6.0 * uniform_open(rng);
    const double lo = -3 + 2 * uniform_open(rng);
    const BinGrid g = make_bin_grid(lo, lo + 0.1 + 5 * uniform_open(rng), n);
    const double v = g.lo() + (g.hi() - g.lo()) * uniform_open(rng);
    const auto d = sq_pmf(v, g, alpha);
    validate(d);
    CHECK(std::abs(d.probs.sum() - 1.0) <= 1e-9);
    for (int i = 0; i < n; ++i) {
      if (std::abs(v - g.bins[i]) / g.spacing >= alpha) CHECK(d.probs[i] == 0.0);
    }
    CHECK((d.probs.array() > 0).count() <= 2 * static_cast<int>(std::ceil(alpha)) + 1);
    CHECK(std::abs(pmf_mean(d) - v) <= g.spacing / 10);
    Rng s(trial);
    for (int k = 0; k < 20; ++k) CHECK(std::abs(sample(d, s) - v) <= alpha * g.spacing + 1e-12);
  }
}
