#include "doctest.h"

#include <cmath>
#include <vector>

#include "sqens/ensemble.hpp"
#include "sqens/errors.hpp"

using namespace sqens;

namespace {

constexpr double kT1Mi = 0.17714029618903482;
constexpr double kT2Mi = 0.11183106386590314;

Eigen::RowVectorXd random_image(Rng& rng, int n) {
  Eigen::RowVectorXd x(n);
  for (int i = 0; i < n; ++i) x[i] = uniform_open(rng);
  return x;
}

ArchConfig small_arch(int in = 6) {
  ArchConfig a;
  a.input_dim = in;
  a.extractor = {8, 5};
  a.classifier = {4};
  a.n_classes = 3;
  return a;
}

}  // namespace

TEST_CASE("build_model shapes and determinism") {
  ArchConfig arch;  // 784 -> 256 -> 64 -> 10
  SqConfig sq;
  const auto m = build_model<float>(arch, sq, 42);
  REQUIRE(m.extractor.size() == 2);
  REQUIRE(m.classifier.size() == 1);
  CHECK(m.extractor[0].w.rows() == 784);
  CHECK(m.extractor[0].w.cols() == 256);
  CHECK(m.extractor[1].w.cols() == 64);
  CHECK(m.classifier[0].w.cols() == 10);
  CHECK(m.sq.input.n_bins == 16);  // 4-bit activation grids
  CHECK(m.extractor[0].w.cwiseAbs().maxCoeff() <= std::sqrt(6.0 / 784) + 1e-6);
  const auto again = build_model<float>(arch, sq, 42);
  CHECK(again.extractor[0].w == m.extractor[0].w);
  CHECK(build_model<float>(arch, sq, 43).extractor[0].w != m.extractor[0].w);

  ArchConfig bad = arch;
  bad.extractor.clear();
  CHECK_THROWS_AS(build_model<float>(bad, sq, 1), Error);
  SqConfig zero = sq;
  zero.n_members = 0;
  CHECK_THROWS_AS(build_model<float>(arch, zero, 1), Error);
}

TEST_CASE("single member ensemble returns the member softmax") {
  const auto m = build_model<double>(small_arch(), SqConfig::vanilla(), 3);
  Rng rng(5);
  const Eigen::RowVectorXd x = random_image(rng, 6);
  const auto out = forward_ensemble(m, Tensor<double>(x), 1, std::span<Rng>(&rng, 1));
  const Eigen::RowVectorXd l = out.member_logits.row(0);
  const Eigen::RowVectorXd sm = (l.array() - l.maxCoeff()).exp() / (l.array() - l.maxCoeff()).exp().sum();
  CHECK((out.probs.row(0) - sm).cwiseAbs().maxCoeff() < 1e-15);
  CHECK(out.predictions[0] == argmax_lowest(sm));
}

TEST_CASE("appendix toy model reproduces the worked example") {
  const auto m = appendix_model();
  const Eigen::RowVector2d x(0.7, 0.6);
  const auto est = exact_feature_mi(m, x);
  REQUIRE(est.has_value());
  CHECK(est->n_samples == 4);
  CHECK(std::abs(est->per_feature_mi[0] - kT1Mi) <= 1e-12);
  CHECK(std::abs(est->per_feature_mi[1] - kT2Mi) <= 1e-12);
  CHECK(std::abs(est->h_marginal[0] - entropy(Eigen::Vector2d(0.47, 0.53))) <= 1e-12);

  // One member pass: feature PMF is the binary quantizer of t = x~ W.
  Rng rng(1);
  const auto mo = forward_member(m, x, rng, SampleMode::hard);
  const double t1 = 0.5 * mo.sampled_input[0] + 0.3 * mo.sampled_input[1];
  CHECK(mo.features[0] == doctest::Approx(t1).epsilon(1e-15));
  CHECK(mo.feature_probs(0, 1) == doctest::Approx(t1).epsilon(1e-12));
  CHECK(mo.input_probs(0, 1) == doctest::Approx(0.7).epsilon(1e-12));
  CHECK(mo.input_probs(1, 1) == doctest::Approx(0.6).epsilon(1e-12));
}

TEST_CASE("binary image on a two-bin grid passes through unchanged") {
  auto m = build_model<double>(small_arch(), SqConfig{}, 9);
  m.sq.input.n_bins = 2;
  Rng rng(3);
  const Eigen::RowVectorXd x = (Eigen::RowVectorXd(6) << 0, 1, 1, 0, 0, 1).finished();
  for (auto mode : {SampleMode::hard, SampleMode::relaxed}) {
    const auto mo = forward_member(m, x, rng, mode);
    CHECK(mo.sampled_input == x);
  }
}

TEST_CASE("same seed gives identical members and predictions") {
  const auto m = build_model<double>(small_arch(), SqConfig{}, 11);
  Rng src(2);
  const Eigen::RowVectorXd x = random_image(src, 6);
  Rng a(77), b(77);
  CHECK(forward_member(m, x, a, SampleMode::relaxed).logits == forward_member(m, x, b, SampleMode::relaxed).logits);
  Rng c(78), d(78);
  CHECK(predict(m, x, 16, c) == predict(m, x, 16, d));
}

TEST_CASE("per-image streams make results independent of batching") {
  const auto m = build_model<double>(small_arch(), SqConfig{}, 12);
  Rng src(4);
  Tensor<double> xs(3, 6);
  for (int i = 0; i < 3; ++i) xs.row(i) = random_image(src, 6);
  std::vector<Rng> streams{derive_rng(5, {0}), derive_rng(5, {1}), derive_rng(5, {2})};
  const auto batched = forward_ensemble(m, xs, 8, std::span<Rng>(streams));
  Rng solo = derive_rng(5, {1});
  const auto single = forward_ensemble(m, Tensor<double>(xs.row(1)), 8, std::span<Rng>(&solo, 1));
  CHECK(batched.probs.row(1) == single.probs.row(0));
  CHECK(batched.mi[1].mean_mi == single.mi[0].mean_mi);
}

TEST_CASE("aggregated probabilities lie on the simplex") {
  for (auto agg : {Aggregation::mean_probability, Aggregation::majority_vote}) {
    SqConfig sq;
    sq.aggregation = agg;
    const auto m = build_model<double>(small_arch(), sq, 13);
    Rng rng(6);
    Tensor<double> xs(5, 6);
    for (int i = 0; i < 5; ++i) xs.row(i) = random_image(rng, 6);
    const auto out = forward_ensemble(m, xs, 16, std::span<Rng>(&rng, 1));
    for (int i = 0; i < 5; ++i) {
      CHECK(std::abs(out.probs.row(i).sum() - 1.0) <= 1e-9);
      CHECK(out.probs.row(i).minCoeff() >= 0.0);
      CHECK(out.diversity[i] >= 0.0);
      CHECK(out.spacing[i] > 0.0);
    }
  }
}

TEST_CASE("sampled inputs stay within alpha bin widths") {
  SqConfig sq;
  sq.input.alpha = 3.0;
  sq.input.n_bins = 9;
  const auto m = build_model<double>(small_arch(), sq, 14);
  const double bound = sq.input.alpha / 8.0;
  Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    const Eigen::RowVectorXd x = random_image(rng, 6);
    const auto mode = trial % 2 ? SampleMode::hard : SampleMode::relaxed;
    const auto mo = forward_member(m, x, rng, mode);
    CHECK((mo.sampled_input - x).cwiseAbs().maxCoeff() <= bound + 1e-12);
  }
}

TEST_CASE("predict: ties go to the lowest index and class permutation is respected") {
  CHECK(argmax_lowest(Eigen::RowVector3d(0.2, 0.4, 0.4)) == 1);
  CHECK(argmax_lowest(Eigen::RowVector3d(0.5, 0.5, 0.0)) == 0);

  auto m = build_model<double>(small_arch(), SqConfig::vanilla(), 15);
  auto perm = m;
  // Class k of the permuted model is class (k + 1) % 3 of the original.
  for (int k = 0; k < 3; ++k) {
    perm.classifier.back().w.col(k) = m.classifier.back().w.col((k + 1) % 3);
    perm.classifier.back().b(0, k) = m.classifier.back().b(0, (k + 1) % 3);
  }
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::RowVectorXd x = random_image(rng, 6);
    Rng r1(1), r2(1);
    const int a = predict(m, x, 1, r1);
    const int b = predict(perm, x, 1, r2);
    CHECK((b + 1) % 3 == a);
  }
}

TEST_CASE("Monte Carlo MI agrees with exact enumeration on two-bin inputs") {
  SqConfig sq;
  sq.input = SqParams{2.0, 2, 0.5};
  sq.feature = SqParams{2.0, 4, 0.5};
  const auto m = build_model<double>(small_arch(6), sq, 21);
  Rng src(10);
  const Eigen::RowVectorXd x = random_image(src, 6);
  const auto exact = exact_feature_mi(m, x);
  REQUIRE(exact.has_value());
  CHECK(exact->n_samples == 64);

  const int reps = 12, n = 4096;
  std::vector<double> est;
  for (int r = 0; r < reps; ++r) {
    Rng rng = derive_rng(99, {static_cast<std::uint64_t>(r)});
    est.push_back(forward_ensemble(m, Tensor<double>(x), n, std::span<Rng>(&rng, 1)).mi[0].mean_mi);
  }
  double mean = 0;
  for (double e : est) mean += e;
  mean /= reps;
  double var = 0;
  for (double e : est) var += (e - mean) * (e - mean);
  const double sd = std::sqrt(var / (reps - 1));
  CHECK(std::abs(est.front() - exact->mean_mi) <= 3 * sd);
  CHECK(std::abs(mean - exact->mean_mi) <= 0.02 * exact->mean_mi + 3 * sd / std::sqrt(double(reps)));
}

TEST_CASE("exact enumeration refuses large supports") {
  const auto m = build_model<double>(small_arch(40), SqConfig{}, 22);
  Rng src(11);
  CHECK_FALSE(exact_feature_mi(m, random_image(src, 40)).has_value());
}
