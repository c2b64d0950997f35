#pragma once

#include <Eigen/Dense>

#include <array>
#include <memory>
#include <span>
#include <vector>

#include "sqens/quant.hpp"

namespace sqens {

// All quantities are in nats; 0 log 0 = 0.

/// p(x~) for each conditioning sample and p(T | x~) over one shared bin grid.
/// Row s of `cond` is the conditional distribution for sample s.
struct ConditionalPmfTable {
  std::shared_ptr<const BinGrid> grid;
  Eigen::VectorXd weights;
  Eigen::MatrixXd cond;

  int samples() const { return static_cast<int>(weights.size()); }
  QuantDistribution cond_pmf(int s) const { return {grid, cond.row(s).transpose()}; }

  static ConditionalPmfTable from_distributions(const Eigen::VectorXd& weights,
                                                const std::vector<QuantDistribution>& conds);
  /// Uniform weights 1/n, as for n samples drawn from p(X~).
  static ConditionalPmfTable uniform(std::shared_ptr<const BinGrid> grid, Eigen::MatrixXd cond);
};

void validate(const ConditionalPmfTable& table);

double entropy(const Eigen::Ref<const Eigen::VectorXd>& pmf);
double entropy(const QuantDistribution& pmf);

/// sum_s w_s p(T | x~_s), renormalized to absorb rounding.
QuantDistribution marginal(const ConditionalPmfTable& table);
double conditional_entropy(const ConditionalPmfTable& table);
/// H(T) - H(T | X~); tiny negative rounding is clamped to zero.
double mutual_information(const ConditionalPmfTable& table);

struct MIEstimate {
  Eigen::VectorXd per_feature_mi;
  double mean_mi = 0.0;
  Eigen::VectorXd h_marginal;
  Eigen::VectorXd h_conditional;
  int n_samples = 0;
};

MIEstimate feature_mi(std::span<const ConditionalPmfTable> tables);

inline double nats_to_bits(double nats) { return nats / 0.69314718055994530942; }

/// The two-input, two-feature worked example with binary quantizers at both
/// layers (x = (0.7, 0.6), t = x W).
struct AppendixFixture {
  Eigen::Vector2d input;             // x_1, x_2
  Eigen::Vector2d input_one_probs;   // P(X_i = 1)
  Eigen::Matrix2d weight;            // t = x W, x as a row vector
  Eigen::Vector2d features;          // t_1, t_2
  std::vector<std::array<int, 2>> input_states;  // 00, 01, 10, 11
  ConditionalPmfTable t1;
  ConditionalPmfTable t2;
  Eigen::Vector2d t1_marginal;       // P(T_1 = 0), P(T_1 = 1)
};

AppendixFixture appendix_fixture();

}  // namespace sqens
