#include "sqens/infotheory.hpp"

#include <cmath>

#include "sqens/errors.hpp"

namespace sqens {

ConditionalPmfTable ConditionalPmfTable::from_distributions(
    const Eigen::VectorXd& weights, const std::vector<QuantDistribution>& conds) {
  if (conds.empty()) fail(ErrorKind::insufficient_data, "empty conditional table");
  if (static_cast<Eigen::Index>(conds.size()) != weights.size())
    fail(ErrorKind::shape_mismatch, "one weight per conditional distribution is required");
  ConditionalPmfTable t;
  t.grid = conds.front().grid;
  t.weights = weights;
  t.cond.resize(static_cast<Eigen::Index>(conds.size()), conds.front().size());
  for (std::size_t s = 0; s < conds.size(); ++s) {
    if (conds[s].size() != t.cond.cols())
      fail(ErrorKind::shape_mismatch, "conditional distributions must share one grid");
    t.cond.row(static_cast<Eigen::Index>(s)) = conds[s].probs.transpose();
  }
  return t;
}

ConditionalPmfTable ConditionalPmfTable::uniform(std::shared_ptr<const BinGrid> grid,
                                                 Eigen::MatrixXd cond) {
  ConditionalPmfTable t;
  t.grid = std::move(grid);
  t.weights = Eigen::VectorXd::Constant(cond.rows(), 1.0 / static_cast<double>(cond.rows()));
  t.cond = std::move(cond);
  return t;
}

void validate(const ConditionalPmfTable& table) {
  if (table.samples() == 0) fail(ErrorKind::insufficient_data, "empty conditional table");
  if (table.cond.rows() != table.weights.size())
    fail(ErrorKind::shape_mismatch, "weights and conditionals disagree in length");
  if (table.grid && table.cond.cols() != table.grid->size())
    fail(ErrorKind::shape_mismatch, "conditionals do not match the grid");
  if (std::abs(table.weights.sum() - 1.0) > 1e-9)
    fail(ErrorKind::invalid_argument, "conditioning weights do not sum to 1");
  if ((table.weights.array() < 0).any() || (table.cond.array() < 0).any())
    fail(ErrorKind::invalid_argument, "negative probability in conditional table");
}

double entropy(const Eigen::Ref<const Eigen::VectorXd>& pmf) {
  double h = 0.0;
  for (Eigen::Index i = 0; i < pmf.size(); ++i)
    if (pmf[i] > 0.0) h -= pmf[i] * std::log(pmf[i]);
  return h;
}

double entropy(const QuantDistribution& pmf) { return entropy(pmf.probs); }

QuantDistribution marginal(const ConditionalPmfTable& table) {
  validate(table);
  Eigen::VectorXd m = table.cond.transpose() * table.weights;
  m /= m.sum();
  return {table.grid, std::move(m)};
}

double conditional_entropy(const ConditionalPmfTable& table) {
  validate(table);
  double h = 0.0;
  for (int s = 0; s < table.samples(); ++s)
    h += table.weights[s] * entropy(table.cond.row(s).transpose());
  return h;
}

double mutual_information(const ConditionalPmfTable& table) {
  const double mi = entropy(marginal(table)) - conditional_entropy(table);
  return (mi < 0.0 && mi > -1e-12) ? 0.0 : mi;
}

MIEstimate feature_mi(std::span<const ConditionalPmfTable> tables) {
  if (tables.empty()) fail(ErrorKind::insufficient_data, "feature_mi needs at least one feature");
  const auto n = static_cast<Eigen::Index>(tables.size());
  MIEstimate est;
  est.per_feature_mi.resize(n);
  est.h_marginal.resize(n);
  est.h_conditional.resize(n);
  est.n_samples = tables.front().samples();
  for (Eigen::Index f = 0; f < n; ++f) {
    const auto& t = tables[static_cast<std::size_t>(f)];
    est.h_marginal[f] = entropy(marginal(t));
    est.h_conditional[f] = conditional_entropy(t);
    const double mi = est.h_marginal[f] - est.h_conditional[f];
    est.per_feature_mi[f] = (mi < 0.0 && mi > -1e-12) ? 0.0 : mi;
  }
  est.mean_mi = est.per_feature_mi.mean();
  return est;
}

AppendixFixture appendix_fixture() {
  AppendixFixture fx;
  fx.input << 0.7, 0.6;
  fx.input_one_probs = fx.input;
  fx.weight << 0.5, 0.4,
               0.3, 0.2;
  fx.features = (fx.input.transpose() * fx.weight).transpose();
  fx.input_states = {{0, 0}, {0, 1}, {1, 0}, {1, 1}};

  auto grid = std::make_shared<const BinGrid>(make_bin_grid(0.0, 1.0, 2));
  Eigen::VectorXd weights(4);
  for (int s = 0; s < 4; ++s) {
    const auto& st = fx.input_states[static_cast<std::size_t>(s)];
    weights[s] = (st[0] ? fx.input_one_probs[0] : 1 - fx.input_one_probs[0]) *
                 (st[1] ? fx.input_one_probs[1] : 1 - fx.input_one_probs[1]);
  }
  auto table = [&](const Eigen::Vector4d& p_one) {
    ConditionalPmfTable t;
    t.grid = grid;
    t.weights = weights;
    t.cond.resize(4, 2);
    t.cond.col(0) = (1.0 - p_one.array()).matrix();
    t.cond.col(1) = p_one;
    return t;
  };
  fx.t1 = table(Eigen::Vector4d(0.0, 0.3, 0.5, 0.8));
  fx.t2 = table(Eigen::Vector4d(0.0, 0.2, 0.4, 0.6));
  fx.t1_marginal << 0.47, 0.53;
  return fx;
}

}  // namespace sqens
