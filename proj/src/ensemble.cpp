#include "sqens/ensemble.hpp"

#include "sqens/errors.hpp"

namespace sqens {

std::string_view to_string(Activation a) { return a == Activation::relu ? "relu" : "identity"; }

std::string_view to_string(Aggregation a) {
  return a == Aggregation::mean_probability ? "mean_probability" : "majority_vote";
}

Activation activation_from_string(std::string_view s) {
  if (s == "relu") return Activation::relu;
  if (s == "identity") return Activation::identity;
  fail(ErrorKind::config, "unknown activation '" + std::string(s) + "'");
}

Aggregation aggregation_from_string(std::string_view s) {
  if (s == "mean_probability") return Aggregation::mean_probability;
  if (s == "majority_vote") return Aggregation::majority_vote;
  fail(ErrorKind::config, "unknown aggregation '" + std::string(s) + "'");
}

void validate(const ArchConfig& arch) {
  if (arch.input_dim < 1) fail(ErrorKind::config, "input_dim must be positive");
  if (arch.extractor.empty()) fail(ErrorKind::config, "the feature extractor needs at least one layer");
  for (int w : arch.extractor)
    if (w < 1) fail(ErrorKind::config, "layer widths must be positive");
  for (int w : arch.classifier)
    if (w < 1) fail(ErrorKind::config, "layer widths must be positive");
  if (arch.n_classes < 2) fail(ErrorKind::config, "n_classes must be at least 2");
}

SqConfig SqConfig::vanilla() {
  SqConfig c;
  c.input_enabled = false;
  c.feature_enabled = false;
  c.n_members = 1;
  return c;
}

void validate(const SqConfig& sq) {
  if (sq.n_members < 1) fail(ErrorKind::config, "n_members must be at least 1");
  if (sq.input_enabled) {
    validate(sq.input);
    if (sq.input_range.kind == RangePolicy::Kind::fixed && !(sq.input_range.hi > sq.input_range.lo))
      fail(ErrorKind::config, "input range needs max > min");
  }
  if (sq.feature_enabled) validate(sq.feature);
}

int argmax_lowest(const Eigen::Ref<const Eigen::RowVectorXd>& row) {
  int best = 0;
  for (Eigen::Index k = 1; k < row.size(); ++k)
    if (row[k] > row[best]) best = static_cast<int>(k);
  return best;
}

std::vector<ConditionalPmfTable> member_tables(const Eigen::MatrixXd& member_probs, int n_bins) {
  const auto grid = std::make_shared<const BinGrid>(make_bin_grid(0.0, 1.0, n_bins));
  const Eigen::Index d = member_probs.cols() / n_bins;
  std::vector<ConditionalPmfTable> tables;
  tables.reserve(static_cast<std::size_t>(d));
  for (Eigen::Index f = 0; f < d; ++f)
    tables.push_back(ConditionalPmfTable::uniform(grid, member_probs.middleCols(f * n_bins, n_bins)));
  return tables;
}

SQEnsembleModel<double> appendix_model() {
  ArchConfig arch;
  arch.input_dim = 2;
  arch.extractor = {2};
  arch.n_classes = 2;
  arch.activation = Activation::identity;
  SqConfig sq;
  sq.input = SqParams{2.0, 2, 0.5};
  sq.feature = SqParams{2.0, 2, 0.5};
  sq.feature_range = RangePolicy::fixed(0.0, 1.0);
  sq.n_members = 16;
  auto m = build_model<double>(arch, sq, 0);
  const auto fx = appendix_fixture();
  m.extractor[0].w = fx.weight;
  m.extractor[0].b.setZero();
  m.classifier[0].w = Tensor<double>::Identity(2, 2);
  m.classifier[0].b.setZero();
  return m;
}

}  // namespace sqens
