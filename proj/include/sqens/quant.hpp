#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "sqens/rng.hpp"

namespace sqens {

/// Evenly spaced, strictly increasing quantization bins b_0 < ... < b_{n-1}.
struct BinGrid {
  Eigen::VectorXd bins;
  double spacing = 0.0;

  int size() const { return static_cast<int>(bins.size()); }
  double lo() const { return bins[0]; }
  double hi() const { return bins[bins.size() - 1]; }

  /// Validates an explicit bin list (at least two bins, strictly increasing,
  /// spacing uniform to 1e-9 relative).
  static BinGrid from_bins(const Eigen::VectorXd& bins);
};

/// b_0 = min, b_{n-1} = max, spacing (max - min) / (n_bins - 1).
BinGrid make_bin_grid(double min, double max, int n_bins);

struct SqParams {
  double alpha = 4.0;  // sparsity radius in bin units
  int n_bins = 16;
  double tau = 0.5;  // Gumbel-softmax temperature
};

/// Throws on unusable parameters (n_bins < 2, tau <= 0, alpha <= 0) and
/// returns warnings for the permitted-but-unusual alpha <= 1 regime.
std::vector<std::string> validate(const SqParams& params);

/// Categorical distribution over the bins of a grid for one scalar value.
struct QuantDistribution {
  std::shared_ptr<const BinGrid> grid;
  Eigen::VectorXd probs;

  double bin(int i) const { return grid->bins[i]; }
  int size() const { return static_cast<int>(probs.size()); }
};

/// Checks non-negativity, normalization to 1e-9 and grid agreement.
void validate(const QuantDistribution& dist);

QuantDistribution point_mass(std::shared_ptr<const BinGrid> grid, int index);

// Two-bin stochastic rounding; unbiased on [b_0, b_1].
QuantDistribution binary_sq_pmf(double v, std::shared_ptr<const BinGrid> grid);
QuantDistribution binary_sq_pmf(double v, const BinGrid& grid);

// Unbiased multi-bin extension: every pair (i, j) with b_i <= v <= b_j
// contributes its two-bin probabilities, normalized by the total.
QuantDistribution naive_multibin_pmf(double v, std::shared_ptr<const BinGrid> grid);
QuantDistribution naive_multibin_pmf(double v, const BinGrid& grid);

// Sparse stochastic quantizer: pair weights are scaled by
// relu(1 - d_i/alpha) * relu(1 - d_j/alpha) with d_k = |v - b_k| / spacing.
QuantDistribution sq_pmf(double v, std::shared_ptr<const BinGrid> grid, double alpha);
QuantDistribution sq_pmf(double v, const BinGrid& grid, double alpha);

double pmf_mean(const QuantDistribution& dist);

/// Hard draw b_i with probability probs[i].
double sample(const QuantDistribution& dist, Rng& rng);

struct RelaxedSample {
  double value = 0.0;
  Eigen::VectorXd weights;  // simplex over the bins; zero on zero-probability bins
};

/// Gumbel-softmax relaxation with freshly drawn noise (one Gumbel per bin).
RelaxedSample relaxed_sample(const QuantDistribution& dist, double tau, Rng& rng);
/// Same relaxation with caller-supplied noise, which makes the result a
/// deterministic, differentiable function of the probabilities.
RelaxedSample relaxed_sample(const QuantDistribution& dist, double tau,
                             const Eigen::VectorXd& gumbel_noise);

struct RangePolicy {
  enum class Kind { fixed, per_vector_minmax };
  Kind kind = Kind::fixed;
  double lo = 0.0;
  double hi = 1.0;

  static RangePolicy fixed(double lo, double hi) { return {Kind::fixed, lo, hi}; }
  static RangePolicy per_vector_minmax() { return {Kind::per_vector_minmax, 0.0, 0.0}; }
};

struct ResolvedRange {
  double lo = 0.0;
  double hi = 0.0;
  bool padded = false;  // the observed range was degenerate and got widened
};

/// Widens a degenerate [min, max] by max(1e-6, 1e-6 |max|) on each side.
ResolvedRange resolve_range(double min, double max);

struct QuantizedVector {
  std::shared_ptr<const BinGrid> grid;
  std::vector<QuantDistribution> pmfs;
  bool degenerate_range = false;
};

QuantizedVector quantize_vector(const Eigen::Ref<const Eigen::VectorXd>& values,
                                const SqParams& params, RangePolicy policy);

// ---------------------------------------------------------------------------
// Kernels shared by the scalar API above and the batched tape operators.

/// Probabilities of the sparse quantizer for a value at continuous bin
/// coordinate c = (v - b_0) / spacing in [0, n_bins - 1], together with their
/// derivative with respect to c. Both spans have n_bins entries.
///
/// Pairs are taken half-open, b_i <= v < b_j (the last interval closed), so a
/// value sitting exactly on an interior bin is not counted from both sides.
///
/// Returns false when all pair weights vanish (alpha <= 1 exactly on a bin,
/// or alpha <= 1/2); probs is then the nearest-bin point mass, which is the
/// limit of the normalized distribution, and the derivative is zero.
bool sq_coordinate_pmf(double c, int n_bins, double alpha, std::span<double> probs,
                       std::span<double> dprobs_dc);

/// Gumbel-softmax weights w_k proportional to exp((log p_k + g_k) / tau) over
/// the bins with p_k > 0. Returns sum_k w_k * bins(k) for bins(k) = lo + k * spacing.
template <typename Scalar>
double gumbel_softmax(const Scalar* probs, const Scalar* noise, int n_bins, double tau,
                      double lo, double spacing, double* weights) {
  double best = -INFINITY;
  for (int k = 0; k < n_bins; ++k) {
    if (probs[k] > 0) {
      weights[k] = (std::log(static_cast<double>(probs[k])) + static_cast<double>(noise[k])) / tau;
      best = std::max(best, weights[k]);
    }
  }
  double total = 0.0;
  for (int k = 0; k < n_bins; ++k) {
    if (probs[k] > 0) {
      weights[k] = std::exp(weights[k] - best);
      total += weights[k];
    } else {
      weights[k] = 0.0;
    }
  }
  double value = 0.0;
  for (int k = 0; k < n_bins; ++k) {
    weights[k] /= total;
    value += weights[k] * (lo + k * spacing);
  }
  return value;
}

/// Index drawn by inverting the cumulative distribution at u in (0, 1).
template <typename Scalar>
int inverse_cdf_index(const Scalar* probs, int n_bins, double u) {
  double acc = 0.0;
  int last_positive = 0;
  for (int k = 0; k < n_bins; ++k) {
    if (probs[k] <= 0) continue;
    last_positive = k;
    acc += static_cast<double>(probs[k]);
    if (u < acc) return k;
  }
  return last_positive;
}

}  // namespace sqens
