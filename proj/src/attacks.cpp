#include "sqens/attacks.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <thread>

#include "sqens/errors.hpp"

namespace sqens {

namespace {

constexpr std::uint64_t kAttackTag = 0xa77ac4;
constexpr std::uint64_t kEvalTag = 0xe7a1;
constexpr int kChunk = 50;

template <typename Scalar>
Tensor<Scalar> clip_box(Tensor<Scalar> x) {
  return x.cwiseMax(Scalar(0)).cwiseMin(Scalar(1));
}

std::vector<Rng> streams(std::uint64_t seed, std::uint64_t tag, int start, int n) {
  std::vector<Rng> r;
  r.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) r.push_back(derive_rng(seed, {tag, static_cast<std::uint64_t>(start + i)}));
  return r;
}

}  // namespace

std::string_view to_string(AttackKind k) { return k == AttackKind::fgm ? "fgm" : "pgd"; }

AttackKind attack_from_string(std::string_view s) {
  if (s == "fgm") return AttackKind::fgm;
  if (s == "pgd") return AttackKind::pgd;
  fail(ErrorKind::config, "unknown attack '" + std::string(s) + "'");
}

void validate(const AttackConfig& c) {
  if (!(c.epsilon >= 0)) fail(ErrorKind::config, "epsilon must be non-negative");
  if (c.kind == AttackKind::pgd && c.steps < 1) fail(ErrorKind::config, "PGD needs at least one step");
  if (c.eot_samples < 1) fail(ErrorKind::config, "eot_samples must be at least 1");
  if (c.step_size < 0) fail(ErrorKind::config, "step_size must be non-negative");
}

double EvalResult::mean_mi() const {
  double s = 0;
  for (double v : mi) s += v;
  return mi.empty() ? 0.0 : s / static_cast<double>(mi.size());
}

void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
  threads = std::max(1, std::min(threads, n));
  if (threads == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::atomic<bool> failed{false};
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (int i; !failed && (i = next++) < n;) {
        try {
          fn(i);
        } catch (...) {
          if (!failed.exchange(true)) error = std::current_exception();
        }
      }
    });
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

template <typename Scalar>
Tensor<Scalar> eot_gradient(const SQEnsembleModel<Scalar>& m, const Tensor<Scalar>& images,
                            std::span<const int> labels, int n, std::span<Rng> rngs) {
  if (n < 1) fail(ErrorKind::invalid_argument, "eot samples must be at least 1");
  const bool stochastic = m.sq.input_enabled || m.sq.feature_enabled;
  const int members = stochastic ? n : 1;
  Tape<Scalar> t;
  const ParamVars p = bind_params(t, m, false);
  const Var x = t.parameter(images);
  const GraphOutput g = forward_graph(t, m, p, x, members, SampleMode::relaxed, rngs);
  t.backward(sum(t, ensemble_nll(t, g.logits, labels, members)));
  return t.grad(x);
}

template <typename Scalar>
Tensor<Scalar> fgm(const SQEnsembleModel<Scalar>& m, const Tensor<Scalar>& images, std::span<const int> labels,
                   double epsilon, int eot_samples, std::span<Rng> rngs) {
  if (epsilon == 0) return images;
  const Tensor<Scalar> g = eot_gradient(m, images, labels, eot_samples, rngs);
  return clip_box<Scalar>(images + Scalar(epsilon) * g.array().sign().matrix());
}

template <typename Scalar>
Tensor<Scalar> pgd(const SQEnsembleModel<Scalar>& m, const Tensor<Scalar>& images, std::span<const int> labels,
                   const AttackConfig& c, std::span<Rng> rngs) {
  validate(c);
  if (c.epsilon == 0) return images;
  const Scalar eps = Scalar(c.epsilon);
  const Tensor<Scalar> lo = (images.array() - eps).cwiseMax(Scalar(0));
  const Tensor<Scalar> hi = (images.array() + eps).cwiseMin(Scalar(1));
  Tensor<Scalar> x = images;
  if (c.random_init) {
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      Rng& rng = rngs.size() == 1 ? rngs[0] : rngs[static_cast<std::size_t>(r)];
      for (Eigen::Index j = 0; j < x.cols(); ++j) x(r, j) += Scalar(c.epsilon * (2 * uniform_open(rng) - 1));
    }
    x = x.cwiseMax(lo).cwiseMin(hi);
  }
  const Scalar step = Scalar(c.effective_step());
  for (int s = 0; s < c.steps; ++s) {
    const Tensor<Scalar> g = eot_gradient(m, x, labels, c.eot_samples, rngs);
    x = (x + step * g.array().sign().matrix()).cwiseMax(lo).cwiseMin(hi);
  }
  return x;
}

template <typename Scalar>
Dataset attack_dataset(const SQEnsembleModel<Scalar>& m, const Dataset& data, const AttackConfig& c, int threads) {
  validate(c);
  Dataset out = data;
  const int chunks = (data.size() + kChunk - 1) / kChunk;
  parallel_for(chunks, threads, [&](int chunk) {
    const int start = chunk * kChunk;
    const int b = std::min(kChunk, data.size() - start);
    auto rngs = streams(c.seed, kAttackTag, start, b);
    const Tensor<Scalar> x = data.images.middleRows(start, b).template cast<Scalar>();
    const std::span<const int> y(data.labels.data() + start, static_cast<std::size_t>(b));
    const Tensor<Scalar> adv = c.kind == AttackKind::fgm ? fgm(m, x, y, c.epsilon, c.eot_samples, std::span<Rng>(rngs))
                                                         : pgd(m, x, y, c, std::span<Rng>(rngs));
    out.images.middleRows(start, b) = adv.template cast<float>();
  });
  // Float storage can round a projected value a hair past the budget. Pull
  // the float ends of [x - eps, x + eps] inside the ball (at most an ulp or
  // two) and clip to them.
  for (Eigen::Index i = 0; i < out.images.size(); ++i) {
    const float x = data.images.data()[i];
    float lo = static_cast<float>(double(x) - c.epsilon), hi = static_cast<float>(double(x) + c.epsilon);
    while (double(x) - double(lo) > c.epsilon) lo = std::nextafter(lo, x);
    while (double(hi) - double(x) > c.epsilon) hi = std::nextafter(hi, x);
    float& a = out.images.data()[i];
    a = std::clamp(std::clamp(a, lo, hi), 0.0f, 1.0f);
  }
  return out;
}

template <typename Scalar>
EvalResult evaluate(const SQEnsembleModel<Scalar>& m, const Dataset& data, int members, std::uint64_t seed,
                    int threads) {
  if (data.size() == 0) fail(ErrorKind::insufficient_data, "evaluation set is empty");
  EvalResult r;
  r.mi.assign(static_cast<std::size_t>(data.size()), 0.0);
  r.predictions.assign(static_cast<std::size_t>(data.size()), 0);
  const int chunks = (data.size() + kChunk - 1) / kChunk;
  parallel_for(chunks, threads, [&](int chunk) {
    const int start = chunk * kChunk;
    const int b = std::min(kChunk, data.size() - start);
    auto rngs = streams(seed, kEvalTag, start, b);
    const Tensor<Scalar> x = data.images.middleRows(start, b).template cast<Scalar>();
    const auto out = forward_ensemble(m, x, members, std::span<Rng>(rngs));
    for (int i = 0; i < b; ++i) {
      r.predictions[static_cast<std::size_t>(start + i)] = out.predictions[static_cast<std::size_t>(i)];
      r.mi[static_cast<std::size_t>(start + i)] = out.mi[static_cast<std::size_t>(i)].mean_mi;
    }
  });
  int correct = 0;
  for (int i = 0; i < data.size(); ++i)
    correct += r.predictions[static_cast<std::size_t>(i)] == data.labels[static_cast<std::size_t>(i)];
  r.accuracy = double(correct) / data.size();
  return r;
}

template <typename Scalar>
AttackReport evaluate_robustness(const SQEnsembleModel<Scalar>& m, const Dataset& data,
                                 const std::vector<AttackConfig>& configs, const EvalOptions& opt) {
  for (const auto& c : configs) validate(c);
  AttackReport rep;
  const EvalResult clean = evaluate(m, data, opt.members, opt.seed, opt.threads);
  rep.clean_accuracy = clean.accuracy;
  rep.clean_mi = clean.mean_mi();
  rep.clean_mi_per_image = clean.mi;
  for (const auto& c : configs) {
    const Dataset adv = c.epsilon == 0 ? data : attack_dataset(m, data, c, opt.threads);
    const EvalResult e = evaluate(m, adv, opt.members, opt.seed, opt.threads);
    rep.rows.push_back({c, e.accuracy, e.mean_mi(), e.mi});
  }
  return rep;
}

#define SQENS_INSTANTIATE(S)                                                                                      \
  template Tensor<S> eot_gradient(const SQEnsembleModel<S>&, const Tensor<S>&, std::span<const int>, int,        \
                                  std::span<Rng>);                                                               \
  template Tensor<S> fgm(const SQEnsembleModel<S>&, const Tensor<S>&, std::span<const int>, double, int,         \
                         std::span<Rng>);                                                                        \
  template Tensor<S> pgd(const SQEnsembleModel<S>&, const Tensor<S>&, std::span<const int>, const AttackConfig&, \
                         std::span<Rng>);                                                                        \
  template Dataset attack_dataset(const SQEnsembleModel<S>&, const Dataset&, const AttackConfig&, int);         \
  template EvalResult evaluate(const SQEnsembleModel<S>&, const Dataset&, int, std::uint64_t, int);             \
  template AttackReport evaluate_robustness(const SQEnsembleModel<S>&, const Dataset&,                         \
                                            const std::vector<AttackConfig>&, const EvalOptions&);
SQENS_INSTANTIATE(float)
SQENS_INSTANTIATE(double)
#undef SQENS_INSTANTIATE

}  // namespace sqens
