#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "sqens/data.hpp"
#include "sqens/ensemble.hpp"

namespace sqens {

enum class AttackKind { fgm, pgd };

std::string_view to_string(AttackKind k);
AttackKind attack_from_string(std::string_view s);

struct AttackConfig {
  AttackKind kind = AttackKind::fgm;
  double epsilon = 0.1;   // L-inf budget in image units
  int steps = 20;         // PGD iterations
  double step_size = 0;   // 0 selects 2.5 * epsilon / steps
  int eot_samples = 16;   // quantizer samples per gradient
  bool random_init = true;
  std::uint64_t seed = 1;

  double effective_step() const { return step_size > 0 ? step_size : 2.5 * epsilon / steps; }
};

void validate(const AttackConfig& c);

/// Gradient of the attacker loss with respect to each image, through relaxed
/// quantizer samples (the training path). The loss is -log of the mean member
/// softmax at the true label, i.e. the cross-entropy of the aggregated
/// ensemble over n samples. Models without quantizers use one sample.
/// One random stream per image.
template <typename Scalar>
Tensor<Scalar> eot_gradient(const SQEnsembleModel<Scalar>& m, const Tensor<Scalar>& images,
                            std::span<const int> labels, int n, std::span<Rng> rngs);

/// x + eps * sign(grad), clipped to [0, 1].
template <typename Scalar>
Tensor<Scalar> fgm(const SQEnsembleModel<Scalar>& m, const Tensor<Scalar>& images, std::span<const int> labels,
                   double epsilon, int eot_samples, std::span<Rng> rngs);

/// Projected sign-gradient ascent on the eps-ball intersected with [0, 1].
template <typename Scalar>
Tensor<Scalar> pgd(const SQEnsembleModel<Scalar>& m, const Tensor<Scalar>& images, std::span<const int> labels,
                   const AttackConfig& c, std::span<Rng> rngs);

/// Attacks every image; image i uses derive_rng(c.seed, {i}) whatever the
/// batching, so the result is independent of the thread count.
template <typename Scalar>
Dataset attack_dataset(const SQEnsembleModel<Scalar>& m, const Dataset& data, const AttackConfig& c,
                       int threads = 1);

struct EvalResult {
  double accuracy = 0;
  std::vector<double> mi;  // per image mean MI (0 without a feature quantizer)
  std::vector<int> predictions;
  double mean_mi() const;
};

/// Hard-sampled ensemble predictions and MI. Image i uses a stream derived
/// from (seed, i) under a tag disjoint from the attack streams.
template <typename Scalar>
EvalResult evaluate(const SQEnsembleModel<Scalar>& m, const Dataset& data, int members, std::uint64_t seed,
                    int threads = 1);

struct AttackRow {
  AttackConfig config;
  double accuracy = 0;
  double mean_mi = 0;
  std::vector<double> mi;
};

struct AttackReport {
  double clean_accuracy = 0;
  double clean_mi = 0;
  std::vector<double> clean_mi_per_image;
  std::vector<AttackRow> rows;
};

struct EvalOptions {
  int members = 16;
  std::uint64_t seed = 0x5eed;
  int threads = 1;
};

template <typename Scalar>
AttackReport evaluate_robustness(const SQEnsembleModel<Scalar>& m, const Dataset& data,
                                 const std::vector<AttackConfig>& configs, const EvalOptions& opt);

/// Runs fn(chunk) for chunk in [0, n) on up to `threads` workers.
void parallel_for(int n, int threads, const std::function<void(int)>& fn);

}  // namespace sqens
