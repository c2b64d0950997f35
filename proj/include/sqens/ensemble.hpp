#pragma once

// Shared-parameter ensemble: SQ at the input, a feature extractor, SQ at the
// feature layer, a classifier per member, and aggregation over members.

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sqens/infotheory.hpp"
#include "sqens/quant.hpp"
#include "sqens/rng.hpp"
#include "sqens/sq_ops.hpp"
#include "sqens/tensor.hpp"

namespace sqens {

enum class Activation { relu, identity };
enum class Aggregation { mean_probability, majority_vote };
enum class SampleMode { relaxed, hard };

std::string_view to_string(Activation a);
std::string_view to_string(Aggregation a);
Activation activation_from_string(std::string_view s);
Aggregation aggregation_from_string(std::string_view s);

/// Layer widths. The last extractor width is the quantized feature layer; the
/// classifier maps it through optional hidden layers to n_classes logits.
struct ArchConfig {
  int input_dim = 784;
  std::vector<int> extractor{256, 64};
  std::vector<int> classifier{};
  int n_classes = 10;
  Activation activation = Activation::relu;  // every extractor and hidden classifier layer
};

void validate(const ArchConfig& arch);

struct SqConfig {
  bool input_enabled = true;
  bool feature_enabled = true;
  SqParams input{};
  SqParams feature{};
  RangePolicy input_range = RangePolicy::fixed(0.0, 1.0);
  RangePolicy feature_range = RangePolicy::per_vector_minmax();
  int n_members = 16;
  Aggregation aggregation = Aggregation::mean_probability;

  /// One member without quantization: a plain network.
  static SqConfig vanilla();
};

void validate(const SqConfig& sq);

template <typename Scalar>
struct Layer {
  Tensor<Scalar> w;  // in x out
  Tensor<Scalar> b;  // 1 x out
};

template <typename Scalar>
struct SQEnsembleModel {
  ArchConfig arch;
  SqConfig sq;
  std::vector<Layer<Scalar>> extractor;
  std::vector<Layer<Scalar>> classifier;

  int feature_dim() const { return arch.extractor.back(); }

  template <typename To>
  SQEnsembleModel<To> cast() const {
    SQEnsembleModel<To> m{arch, sq, {}, {}};
    for (const auto& l : extractor) m.extractor.push_back({l.w.template cast<To>(), l.b.template cast<To>()});
    for (const auto& l : classifier) m.classifier.push_back({l.w.template cast<To>(), l.b.template cast<To>()});
    return m;
  }
};

/// He-uniform weights (limit sqrt(6 / fan_in)), zero biases.
template <typename Scalar>
SQEnsembleModel<Scalar> build_model(const ArchConfig& arch, const SqConfig& sq, std::uint64_t seed) {
  validate(arch);
  validate(sq);
  SQEnsembleModel<Scalar> m{arch, sq, {}, {}};
  int fan_in = arch.input_dim;
  std::uint64_t index = 0;
  auto make = [&](int out) {
    Rng rng = derive_rng(seed, {0x6c61796572ULL, index++});
    const double limit = std::sqrt(6.0 / fan_in);
    Layer<Scalar> l{Tensor<Scalar>(fan_in, out), Tensor<Scalar>::Zero(1, out)};
    for (Eigen::Index i = 0; i < l.w.size(); ++i) l.w.data()[i] = Scalar(limit * (2 * uniform_open(rng) - 1));
    fan_in = out;
    return l;
  };
  for (int w : arch.extractor) m.extractor.push_back(make(w));
  for (int w : arch.classifier) m.classifier.push_back(make(w));
  m.classifier.push_back(make(arch.n_classes));
  return m;
}

/// Parameters placed on a tape, in declaration order (extractor then
/// classifier, weight before bias).
struct ParamVars {
  std::vector<Var> vars;
};

template <typename Scalar>
ParamVars bind_params(Tape<Scalar>& t, const SQEnsembleModel<Scalar>& m, bool trainable) {
  ParamVars p;
  auto put = [&](const Tensor<Scalar>& x) { p.vars.push_back(trainable ? t.parameter(x) : t.constant(x)); };
  for (const auto& l : m.extractor) put(l.w), put(l.b);
  for (const auto& l : m.classifier) put(l.w), put(l.b);
  return p;
}

/// Fixed Gumbel tables for both quantizers (gradient checks).
struct FixedNoise {
  const Tensor<double>* input = nullptr;
  const Tensor<double>* feature = nullptr;
};

/// Nodes of one batched forward pass. Rows are image-major: row i*M + m is
/// member m of image i.
struct GraphOutput {
  Var logits;
  Var sampled_input;
  Var input_probs;    // per image (rows = images); invalid if input SQ is off
  Var features;       // pre-quantization t
  Var feature_grid;
  Var feature_probs;  // per member row; invalid if feature SQ is off
  Var sampled_features;
  int members = 1;
  bool has_input_probs = false;
  bool has_feature_probs = false;
};

template <typename Scalar>
GraphOutput forward_graph(Tape<Scalar>& t, const SQEnsembleModel<Scalar>& m, const ParamVars& p, Var x,
                          int members, SampleMode mode, std::span<Rng> rngs,
                          const FixedNoise* fixed = nullptr) {
  if (members < 1) fail(ErrorKind::invalid_argument, "n_members must be at least 1");
  const auto& xv = t.value(x);
  detail::require_shape(xv.cols() == m.arch.input_dim, "input width does not match the model");
  const Eigen::Index images = xv.rows();
  const RowStreams streams{rngs, rngs.size() == 1 ? Eigen::Index(0) : Eigen::Index(members)};
  if (rngs.empty() && !(fixed && fixed->input && fixed->feature) &&
      (m.sq.input_enabled || m.sq.feature_enabled))
    fail(ErrorKind::invalid_argument, "forward pass needs random streams");
  if (rngs.size() > 1 && static_cast<Eigen::Index>(rngs.size()) != images)
    fail(ErrorKind::shape_mismatch, "one random stream per image is required");

  GraphOutput out;
  out.members = members;
  auto quantize = [&](Var v, Var grid, const SqParams& sq, int repeat, const Tensor<double>* table) {
    const Var probs = sq_probs(t, v, grid, sq.alpha, sq.n_bins);
    Var s;
    if (mode == SampleMode::relaxed)
      s = gumbel_relax(t, probs, grid, sq.n_bins, sq.tau, repeat, GumbelNoise{table, streams});
    else
      s = hard_sample(t, probs, grid, sq.n_bins, repeat, streams);
    return std::pair{probs, s};
  };

  Var h;
  if (m.sq.input_enabled) {
    const Var grid = row_grid(t, x, m.sq.input_range);
    auto [probs, s] = quantize(x, grid, m.sq.input, members, fixed ? fixed->input : nullptr);
    out.input_probs = probs;
    out.has_input_probs = true;
    h = s;
  } else {
    h = members == 1 ? x : repeat_rows(t, x, members);
  }
  out.sampled_input = h;

  std::size_t k = 0;
  auto layer = [&](Var in, bool activate) {
    const Var z = affine(t, in, p.vars[k], p.vars[k + 1]);
    k += 2;
    return activate && m.arch.activation == Activation::relu ? relu(t, z) : z;
  };
  for (std::size_t i = 0; i < m.extractor.size(); ++i) h = layer(h, true);
  out.features = h;
  if (m.sq.feature_enabled) {
    out.feature_grid = row_grid(t, h, m.sq.feature_range);
    auto [probs, s] = quantize(h, out.feature_grid, m.sq.feature, 1, fixed ? fixed->feature : nullptr);
    out.feature_probs = probs;
    out.has_feature_probs = true;
    h = s;
  }
  out.sampled_features = h;
  for (std::size_t i = 0; i < m.classifier.size(); ++i) h = layer(h, i + 1 < m.classifier.size());
  out.logits = h;
  (void)images;
  return out;
}

/// Evaluation results for a batch of images.
struct EnsembleOutput {
  Eigen::MatrixXd probs;          // images x classes, aggregated
  Eigen::MatrixXd member_logits;  // images*members x classes
  std::vector<MIEstimate> mi;     // per image; empty estimates when feature SQ is off
  Eigen::VectorXd diversity;      // per image mean_i H(T_i | X)
  Eigen::VectorXd spacing;        // per image mean feature bin spacing
  std::vector<int> predictions;

  Eigen::VectorXd mean_mi() const {
    Eigen::VectorXd v(static_cast<Eigen::Index>(mi.size()));
    for (std::size_t i = 0; i < mi.size(); ++i) v[static_cast<Eigen::Index>(i)] = mi[i].mean_mi;
    return v;
  }
};

/// Argmax with ties toward the lowest index.
int argmax_lowest(const Eigen::Ref<const Eigen::RowVectorXd>& row);

/// Per-feature conditional tables of one image from its member PMF rows
/// (rows x d*n_bins), uniform weights, bins mixed by position.
std::vector<ConditionalPmfTable> member_tables(const Eigen::MatrixXd& member_probs, int n_bins);

template <typename Scalar>
EnsembleOutput forward_ensemble(const SQEnsembleModel<Scalar>& m, const Tensor<Scalar>& images, int members,
                                std::span<Rng> rngs, SampleMode mode = SampleMode::hard) {
  Tape<Scalar> t;
  const ParamVars p = bind_params(t, m, false);
  const Var x = t.constant(images);
  const GraphOutput g = forward_graph(t, m, p, x, members, mode, rngs);
  const Eigen::MatrixXd logits = t.value(g.logits).template cast<double>();
  const Eigen::Index n = images.rows();
  const Eigen::Index classes = logits.cols();

  EnsembleOutput out;
  out.member_logits = logits;
  out.probs = Eigen::MatrixXd::Zero(n, classes);
  out.diversity = Eigen::VectorXd::Zero(n);
  out.spacing = Eigen::VectorXd::Zero(n);
  out.mi.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int k = 0; k < members; ++k) {
      const Eigen::RowVectorXd l = logits.row(i * members + k);
      if (m.sq.aggregation == Aggregation::majority_vote) {
        out.probs(i, argmax_lowest(l)) += 1.0 / members;
      } else {
        Eigen::RowVectorXd e = (l.array() - l.maxCoeff()).exp();
        out.probs.row(i) += e / (e.sum() * members);
      }
    }
    out.predictions.push_back(argmax_lowest(out.probs.row(i)));
    if (g.has_feature_probs) {
      const auto& fp = t.value(g.feature_probs);
      const Eigen::MatrixXd rows = fp.middleRows(i * members, members).template cast<double>();
      const auto tables = member_tables(rows, m.sq.feature.n_bins);
      out.mi[static_cast<std::size_t>(i)] = feature_mi(tables);
      out.diversity[i] = out.mi[static_cast<std::size_t>(i)].h_conditional.mean();
      const auto& gr = t.value(g.feature_grid);
      double s = 0.0;
      for (int k = 0; k < members; ++k) {
        const Eigen::Index r = gr.rows() == 1 ? 0 : i * members + k;
        s += static_cast<double>(gr(r, 1) - gr(r, 0)) / (m.sq.feature.n_bins - 1);
      }
      out.spacing[i] = s / members;
    }
  }
  return out;
}

/// One member pass for a single image.
struct MemberOutput {
  Eigen::RowVectorXd logits;
  Eigen::MatrixXd input_probs;    // d_in x n_bins (empty if input SQ is off)
  Eigen::MatrixXd feature_probs;  // d_feat x n_bins (empty if feature SQ is off)
  double feature_lo = 0.0, feature_hi = 0.0;
  Eigen::RowVectorXd sampled_input;
  Eigen::RowVectorXd features;
};

template <typename Scalar>
MemberOutput forward_member(const SQEnsembleModel<Scalar>& m, const Eigen::RowVectorXd& image, Rng& rng,
                            SampleMode mode) {
  Tape<Scalar> t;
  const ParamVars p = bind_params(t, m, false);
  const Var x = t.constant(image.cast<Scalar>());
  const GraphOutput g = forward_graph(t, m, p, x, 1, mode, std::span<Rng>(&rng, 1));
  MemberOutput o;
  o.logits = t.value(g.logits).template cast<double>();
  o.sampled_input = t.value(g.sampled_input).template cast<double>();
  o.features = t.value(g.features).template cast<double>();
  auto unpack = [](const Tensor<Scalar>& row, int n_bins) {
    const Eigen::Index d = row.cols() / n_bins;
    Eigen::MatrixXd out(d, n_bins);
    for (Eigen::Index f = 0; f < d; ++f)
      for (int k = 0; k < n_bins; ++k) out(f, k) = static_cast<double>(row(0, f * n_bins + k));
    return out;
  };
  if (g.has_input_probs) o.input_probs = unpack(t.value(g.input_probs), m.sq.input.n_bins);
  if (g.has_feature_probs) {
    o.feature_probs = unpack(t.value(g.feature_probs), m.sq.feature.n_bins);
    o.feature_lo = static_cast<double>(t.value(g.feature_grid)(0, 0));
    o.feature_hi = static_cast<double>(t.value(g.feature_grid)(0, 1));
  }
  return o;
}

template <typename Scalar>
int predict(const SQEnsembleModel<Scalar>& m, const Eigen::RowVectorXd& image, int members, Rng& rng) {
  return forward_ensemble(m, Tensor<Scalar>(image.cast<Scalar>()), members, std::span<Rng>(&rng, 1)).predictions[0];
}

/// Exact MI for one image by enumerating every input state with positive
/// probability under the input quantizer (at most max_states states).
template <typename Scalar>
std::optional<MIEstimate> exact_feature_mi(const SQEnsembleModel<Scalar>& m, const Eigen::RowVectorXd& image,
                                           long max_states = 1L << 16) {
  if (!m.sq.input_enabled || !m.sq.feature_enabled)
    fail(ErrorKind::invalid_argument, "exact enumeration needs both quantizers");
  const int nb = m.sq.input.n_bins;
  const auto grid = std::make_shared<const BinGrid>(make_bin_grid(m.sq.input_range.lo, m.sq.input_range.hi, nb));
  std::vector<std::vector<std::pair<double, double>>> support;  // (bin value, prob) per pixel
  long states = 1;
  for (Eigen::Index j = 0; j < image.size(); ++j) {
    const auto d = sq_pmf(image[j], grid, m.sq.input.alpha);
    std::vector<std::pair<double, double>> s;
    for (int k = 0; k < nb; ++k)
      if (d.probs[k] > 0) s.emplace_back(d.bin(k), d.probs[k]);
    states *= static_cast<long>(s.size());
    if (states > max_states) return std::nullopt;
    support.push_back(std::move(s));
  }
  Tensor<Scalar> inputs(states, image.size());
  Eigen::VectorXd weights(states);
  for (long s = 0; s < states; ++s) {
    long rest = s;
    double w = 1.0;
    for (Eigen::Index j = image.size(); j-- > 0;) {
      const auto& sup = support[static_cast<std::size_t>(j)];
      const auto& [v, pr] = sup[static_cast<std::size_t>(rest % static_cast<long>(sup.size()))];
      rest /= static_cast<long>(sup.size());
      inputs(s, j) = Scalar(v);
      w *= pr;
    }
    weights[s] = w;
  }
  // Deterministic pass: quantizers off, features then their PMFs.
  SQEnsembleModel<Scalar> plain = m;
  plain.sq.input_enabled = false;
  plain.sq.feature_enabled = false;
  Tape<Scalar> t;
  const ParamVars p = bind_params(t, plain, false);
  const GraphOutput g = forward_graph(t, plain, p, t.constant(inputs), 1, SampleMode::hard, {});
  const Var grid_t = row_grid(t, g.features, m.sq.feature_range);
  const Var probs = sq_probs(t, g.features, grid_t, m.sq.feature.alpha, m.sq.feature.n_bins);
  const Eigen::MatrixXd pm = t.value(probs).template cast<double>();
  const int fb = m.sq.feature.n_bins;
  const auto fgrid = std::make_shared<const BinGrid>(make_bin_grid(0.0, 1.0, fb));  // positional
  std::vector<ConditionalPmfTable> tables;
  for (int f = 0; f < m.feature_dim(); ++f)
    tables.push_back({fgrid, weights, pm.middleCols(f * fb, fb)});
  return feature_mi(tables);
}

/// The two-input worked example as a model: 2 -> 2 linear extractor with the
/// example weights, 2-bin quantizers on [0, 1] at both layers, and a 2-class
/// linear classifier.
SQEnsembleModel<double> appendix_model();

}  // namespace sqens
