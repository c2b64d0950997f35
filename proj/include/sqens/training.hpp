#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "sqens/data.hpp"
#include "sqens/ensemble.hpp"

namespace sqens {

enum class OptimizerKind { sgd_momentum, adam };

std::string_view to_string(OptimizerKind k);
OptimizerKind optimizer_from_string(std::string_view s);

struct TrainConfig {
  double alpha = 4.0;
  double beta = 0.0;   // weight of the MI term
  double mu = 1.0;     // weight of the feature bin spacing term
  int n_bins = 16;
  int n_members = 16;  // quantizer samples per image during training
  double tau = 0.5;
  double learning_rate = 0.01;
  double momentum = 0.9;
  OptimizerKind optimizer = OptimizerKind::sgd_momentum;
  int batch_size = 64;
  int epochs = 5;
  std::uint64_t seed = 1;
};

/// Throws config errors; returns warnings (e.g. alpha <= 1).
std::vector<std::string> validate(const TrainConfig& cfg);

/// Copies alpha, n_bins, tau and n_members into both quantizers of the model.
template <typename Scalar>
void apply(SQEnsembleModel<Scalar>& m, const TrainConfig& cfg) {
  for (SqParams* p : {&m.sq.input, &m.sq.feature}) {
    p->alpha = cfg.alpha;
    p->n_bins = cfg.n_bins;
    p->tau = cfg.tau;
  }
  m.sq.n_members = cfg.n_members;
}

struct LossTerms {
  Var total, ce, mi, spacing;
};

struct LossBreakdown {
  double total = 0, ce = 0, mi = 0, spacing = 0;
};

/// ce + beta * MI + mu * spacing over a relaxed forward pass. Each term is a
/// mean over members and images; MI is the per-image member table averaged
/// over features.
template <typename Scalar>
LossTerms loss_graph(Tape<Scalar>& t, const SQEnsembleModel<Scalar>& m, const ParamVars& p, Var x,
                     std::span<const int> labels, double beta, double mu, int members, std::span<Rng> rngs,
                     const FixedNoise* fixed = nullptr, GraphOutput* graph = nullptr) {
  const GraphOutput g = forward_graph(t, m, p, x, members, SampleMode::relaxed, rngs, fixed);
  if (graph) *graph = g;
  std::vector<int> rep;
  rep.reserve(labels.size() * static_cast<std::size_t>(members));
  for (int y : labels) rep.insert(rep.end(), static_cast<std::size_t>(members), y);
  LossTerms l;
  l.ce = softmax_cross_entropy(t, g.logits, std::span<const int>(rep));
  if (g.has_feature_probs) {
    l.mi = mean(t, feature_mi(t, g.feature_probs, m.sq.feature.n_bins, members));
    l.spacing = mean(t, grid_spacing(t, g.feature_grid, m.sq.feature.n_bins));
  } else {
    l.mi = t.constant(Tensor<Scalar>::Zero(1, 1));
    l.spacing = t.constant(Tensor<Scalar>::Zero(1, 1));
  }
  l.total = linear_combination(t, {l.ce, l.mi, l.spacing}, {1.0, beta, mu});
  return l;
}

template <typename Scalar>
LossBreakdown loss(const SQEnsembleModel<Scalar>& m, const Tensor<Scalar>& images, std::span<const int> labels,
                   const TrainConfig& cfg, std::span<Rng> rngs) {
  Tape<Scalar> t;
  const ParamVars p = bind_params(t, m, false);
  const LossTerms l = loss_graph(t, m, p, t.constant(images), labels, cfg.beta, cfg.mu, cfg.n_members, rngs);
  return {double(t.value(l.total)(0, 0)), double(t.value(l.ce)(0, 0)), double(t.value(l.mi)(0, 0)),
          double(t.value(l.spacing)(0, 0))};
}

struct EpochRecord {
  int epoch = 0;
  double total = 0, ce = 0, mi = 0, spacing = 0;
  double accuracy = 0;  // on the training batches, relaxed members averaged
};

using History = std::vector<EpochRecord>;

struct TrainHooks {
  std::function<void(const EpochRecord&)> on_epoch;
  const std::atomic<bool>* stop = nullptr;  // checked between batches
};

/// Mini-batch training of all parameters. Shuffling and quantizer noise are
/// derived from cfg.seed, so runs are reproducible. On a non-finite loss the
/// parameters are restored to the end of the last finished epoch and a
/// non_finite error naming the diverged term is raised.
template <typename Scalar>
History train(SQEnsembleModel<Scalar>& m, const Dataset& data, const TrainConfig& cfg, const TrainHooks& hooks = {});

/// Accuracy of hard-sampled ensemble predictions, evaluated in batches. Image
/// i uses the stream derive_rng(seed, {i}).
template <typename Scalar>
double accuracy(const SQEnsembleModel<Scalar>& m, const Dataset& data, int members, std::uint64_t seed);

template <typename Scalar>
struct Checkpoint {
  SQEnsembleModel<Scalar> model;
  TrainConfig config;
  History history;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// "SQAR", u32 version, u64 header length, JSON header, then raw
/// little-endian parameter blocks in declaration order.
template <typename Scalar>
void save_checkpoint(const Checkpoint<Scalar>& c, const std::filesystem::path& path);

/// Reads either dtype and converts to Scalar.
template <typename Scalar>
Checkpoint<Scalar> load_checkpoint(const std::filesystem::path& path);

}  // namespace sqens
