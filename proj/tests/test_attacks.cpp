#include "doctest.h"

#include <cmath>
#include <vector>

#include "sqens/attacks.hpp"
#include "sqens/errors.hpp"
#include "sqens/training.hpp"

using namespace sqens;
using Mat = Tensor<double>;

namespace {

Mat random_mat(Rng& rng, int r, int c, double lo, double hi) {
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = lo + (hi - lo) * uniform_open(rng);
  return m;
}

SQEnsembleModel<double> small_model(const SqConfig& sq, std::uint64_t seed) {
  ArchConfig a;
  a.input_dim = 6;
  a.extractor = {10, 5};
  a.n_classes = 3;
  return build_model<double>(a, sq, seed);
}

std::vector<Rng> streams(std::uint64_t seed, int n) {
  std::vector<Rng> r;
  for (int i = 0; i < n; ++i) r.push_back(derive_rng(seed, {std::uint64_t(i)}));
  return r;
}

// Small vanilla model trained on overlapping blobs, shared by the harness tests.
const std::pair<SQEnsembleModel<double>, Dataset>& blob_setup() {
  static const auto setup = [] {
    Dataset d = synth_blobs(60, 3, 6, 5.0, 3);
    ArchConfig a;
    a.input_dim = 6;
    a.extractor = {16};
    a.n_classes = 3;
    auto m = build_model<double>(a, SqConfig::vanilla(), 4);
    TrainConfig cfg;
    cfg.n_members = 1;
    cfg.epochs = 30;
    cfg.batch_size = 20;
    cfg.learning_rate = 0.05;
    cfg.mu = 0;
    train(m, d, cfg);
    return std::pair{m, d};
  }();
  return setup;
}

}  // namespace

TEST_CASE("zero budget returns the input") {
  const auto m = small_model(SqConfig{}, 1);
  Rng rng(2);
  const Mat x = random_mat(rng, 3, 6, 0, 1);
  const std::vector<int> y{0, 1, 2};
  auto r = streams(5, 3);
  CHECK(fgm(m, x, std::span<const int>(y), 0.0, 4, std::span<Rng>(r)) == x);
  AttackConfig c;
  c.kind = AttackKind::pgd;
  c.epsilon = 0;
  CHECK(pgd(m, x, std::span<const int>(y), c, std::span<Rng>(r)) == x);
}

TEST_CASE("EOT gradient is reproducible and exact for deterministic models") {
  const auto m = small_model(SqConfig{}, 2);
  Rng rng(3);
  const Mat x = random_mat(rng, 2, 6, 0, 1);
  const std::vector<int> y{1, 2};
  auto a = streams(9, 2), b = streams(9, 2);
  CHECK(eot_gradient(m, x, std::span<const int>(y), 1, std::span<Rng>(a)) ==
        eot_gradient(m, x, std::span<const int>(y), 1, std::span<Rng>(b)));

  // Without quantizers the gradient is the plain cross-entropy gradient.
  const auto v = small_model(SqConfig::vanilla(), 2);
  auto c = streams(1, 2);
  const Mat g8 = eot_gradient(v, x, std::span<const int>(y), 8, std::span<Rng>(c));
  Tape<double> t;
  const ParamVars p = bind_params(t, v, false);
  const Var xv = t.parameter(x);
  const GraphOutput out = forward_graph(t, v, p, xv, 1, SampleMode::relaxed, {});
  t.backward(scale(t, softmax_cross_entropy(t, out.logits, std::span<const int>(y)), 2.0));
  CHECK((g8 - t.grad(xv)).cwiseAbs().maxCoeff() <= 1e-14);
}

TEST_CASE("EOT gradient variance shrinks with more samples") {
  const auto m = small_model(SqConfig{}, 4);
  Rng rng(5);
  const Mat x = random_mat(rng, 1, 6, 0.1, 0.9);
  const std::vector<int> y{0};
  auto variance = [&](int n) {
    const int reps = 300;
    std::vector<Mat> gs;
    Mat mean = Mat::Zero(1, 6);
    for (int r = 0; r < reps; ++r) {
      Rng s = derive_rng(77, {std::uint64_t(n), std::uint64_t(r)});
      gs.push_back(eot_gradient(m, x, std::span<const int>(y), n, std::span<Rng>(&s, 1)));
      mean += gs.back();
    }
    mean /= reps;
    double v = 0;
    for (const auto& g : gs) v += (g - mean).squaredNorm();
    return v / (reps - 1);
  };
  const double v1 = variance(1), v4 = variance(4), v16 = variance(16);
  CHECK(v4 < v1);
  CHECK(v16 < v4);
  // Roughly 1/n: a factor 16 in samples buys at least a factor 6 here.
  CHECK(v1 / v16 > 6.0);
}

TEST_CASE("FGM on a linear model moves the margin by eps times the l1 norm") {
  ArchConfig a;
  a.input_dim = 4;
  a.extractor = {2};
  a.n_classes = 2;
  a.activation = Activation::identity;
  auto m = build_model<double>(a, SqConfig::vanilla(), 1);
  m.extractor[0].w = (Mat(4, 2) << 0.5, -0.25, 1.0, 2.0, -0.75, 0.5, 0.1, -0.3).finished();
  m.extractor[0].b.setZero();
  m.classifier[0].w = Mat::Identity(2, 2);
  m.classifier[0].b.setZero();
  const Mat x = (Mat(1, 4) << 0.4, 0.5, 0.6, 0.5).finished();
  const std::vector<int> y{0};
  const double eps = 0.05;
  Rng rng(1);
  const Mat adv = fgm(m, x, std::span<const int>(y), eps, 1, std::span<Rng>(&rng, 1));
  const Eigen::RowVectorXd w = m.extractor[0].w.col(0) - m.extractor[0].w.col(1);
  CHECK((adv - x).isApprox(Mat(-eps * w.array().sign().matrix())));
  const double before = x.row(0).dot(w), after = adv.row(0).dot(w);
  CHECK(before - after == doctest::Approx(eps * w.cwiseAbs().sum()).epsilon(1e-12));
}

TEST_CASE("one-step PGD without random start is FGM") {
  const auto m = small_model(SqConfig{}, 6);
  Rng rng(7);
  const Mat x = random_mat(rng, 3, 6, 0, 1);
  const std::vector<int> y{2, 0, 1};
  AttackConfig c;
  c.kind = AttackKind::pgd;
  c.epsilon = 0.1;
  c.steps = 1;
  c.step_size = 0.1;
  c.random_init = false;
  c.eot_samples = 5;
  auto a = streams(3, 3), b = streams(3, 3);
  CHECK(pgd(m, x, std::span<const int>(y), c, std::span<Rng>(a)) ==
        fgm(m, x, std::span<const int>(y), 0.1, 5, std::span<Rng>(b)));
}

TEST_CASE("adversarial images respect the budget and the box") {
  const auto m = small_model(SqConfig{}, 8);
  Rng rng(9);
  Dataset d;
  d.images = random_mat(rng, 40, 6, 0, 1).cast<float>();
  d.images(0, 0) = 0;
  d.images(1, 1) = 1;
  for (int i = 0; i < 40; ++i) d.labels.push_back(i % 3);
  d.n_classes = 3;
  d.height = 1;
  d.width = 6;
  for (auto kind : {AttackKind::fgm, AttackKind::pgd})
    for (double eps : {0.03, 0.3}) {
      AttackConfig c;
      c.kind = kind;
      c.epsilon = eps;
      c.steps = 5;
      c.eot_samples = 3;
      // Pixels sitting at eps (as a float, a hair above it) next to the box
      // edges: the budget must hold exactly, and quickly.
      Dataset e = d;
      for (int i = 2; i < 40; i += 2) e.images(i, 2) = float(eps), e.images(i + 1, 2) = float(1 - eps);
      const Dataset adv_e = attack_dataset(m, e, c);
      CHECK((adv_e.images.cast<double>() - e.images.cast<double>()).cwiseAbs().maxCoeff() <= eps);

      const Dataset adv = attack_dataset(m, d, c);
      const Mat diff = adv.images.cast<double>() - d.images.cast<double>();
      CHECK(diff.cwiseAbs().maxCoeff() <= eps);
      CHECK(adv.images.minCoeff() >= 0.0f);
      CHECK(adv.images.maxCoeff() <= 1.0f);
      CHECK(adv.labels == d.labels);
      // Threads do not change the result.
      CHECK(attack_dataset(m, d, c, 3).images == adv.images);
    }
}

TEST_CASE("robustness harness") {
  const auto& [m, d] = blob_setup();
  EvalOptions opt;
  opt.members = 1;
  const AttackReport empty = evaluate_robustness(m, d, {}, opt);
  CHECK(empty.rows.empty());
  CHECK(empty.clean_accuracy > 0.8);

  AttackConfig zero;
  zero.epsilon = 0;
  AttackConfig f;
  f.epsilon = 0.1;
  f.eot_samples = 1;
  AttackConfig p = f;
  p.kind = AttackKind::pgd;
  p.steps = 20;
  const AttackReport r = evaluate_robustness(m, d, {zero, f, p}, opt);
  REQUIRE(r.rows.size() == 3);
  CHECK(r.rows[0].accuracy == r.clean_accuracy);
  CHECK(r.rows[0].mean_mi == r.clean_mi);
  CHECK(r.rows[1].accuracy < r.clean_accuracy);
  // PGD is at least as strong as FGM at the same budget.
  CHECK(r.rows[2].accuracy <= r.rows[1].accuracy);
  for (const auto& row : r.rows) CHECK((row.accuracy >= 0 && row.accuracy <= 1));
}

TEST_CASE("attack configuration is validated") {
  AttackConfig c;
  c.epsilon = -0.1;
  CHECK_THROWS_AS(validate(c), Error);
  c.epsilon = 0.1;
  c.eot_samples = 0;
  CHECK_THROWS_AS(validate(c), Error);
  c.eot_samples = 1;
  c.kind = AttackKind::pgd;
  c.steps = 0;
  CHECK_THROWS_AS(validate(c), Error);
  CHECK(attack_from_string("pgd") == AttackKind::pgd);
  CHECK_THROWS_AS(attack_from_string("cw"), Error);
  AttackConfig d;
  d.epsilon = 0.2;
  CHECK(d.effective_step() == doctest::Approx(0.025));
}
