#include "sqens/quant.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "sqens/errors.hpp"

namespace sqens {

namespace {

std::shared_ptr<const BinGrid> share(const BinGrid& grid) {
  return std::make_shared<const BinGrid>(grid);
}

// Continuous bin coordinate of v, clamped to [0, n-1] after a 1e-9-bin tolerance check.
double coordinate_of(double v, const BinGrid& grid) {
  const double tol = 1e-9 * grid.spacing;
  if (!(v >= grid.lo() - tol && v <= grid.hi() + tol)) {
    std::ostringstream os;
    os << "value " << v << " outside quantization range [" << grid.lo() << ", " << grid.hi()
       << "]";
    fail(ErrorKind::out_of_range, os.str());
  }
  const double c = (v - grid.lo()) / grid.spacing;
  return std::clamp(c, 0.0, static_cast<double>(grid.size() - 1));
}

}  // namespace

BinGrid BinGrid::from_bins(const Eigen::VectorXd& bins) {
  if (bins.size() < 2) fail(ErrorKind::degenerate_grid, "a bin grid needs at least 2 bins");
  const double spacing = bins[1] - bins[0];
  for (Eigen::Index i = 0; i + 1 < bins.size(); ++i) {
    const double step = bins[i + 1] - bins[i];
    if (!(step > 0.0)) fail(ErrorKind::degenerate_grid, "bins must be strictly increasing");
    if (std::abs(step - spacing) > 1e-9 * std::abs(spacing))
      fail(ErrorKind::invalid_argument, "bins must be evenly spaced");
  }
  return BinGrid{bins, spacing};
}

BinGrid make_bin_grid(double min, double max, int n_bins) {
  if (n_bins < 2) fail(ErrorKind::invalid_argument, "n_bins must be at least 2");
  if (!(max > min) || !std::isfinite(min) || !std::isfinite(max)) {
    std::ostringstream os;
    os << "degenerate bin grid range [" << min << ", " << max << "]";
    fail(ErrorKind::degenerate_grid, os.str());
  }
  BinGrid grid;
  grid.spacing = (max - min) / (n_bins - 1);
  grid.bins.resize(n_bins);
  for (int i = 0; i < n_bins; ++i) grid.bins[i] = min + i * grid.spacing;
  grid.bins[n_bins - 1] = max;
  return grid;
}

std::vector<std::string> validate(const SqParams& params) {
  if (params.n_bins < 2) fail(ErrorKind::config, "n_bins must be at least 2");
  if (!(params.tau > 0.0)) fail(ErrorKind::config, "tau must be positive");
  if (!(params.alpha > 0.0)) fail(ErrorKind::config, "alpha must be positive");
  std::vector<std::string> warnings;
  if (params.alpha <= 1.0) {
    warnings.emplace_back(
        "alpha <= 1: cross-bin pair weights vanish on bin centers; the quantizer degrades "
        "toward nearest-bin rounding (alpha > 1 is the intended regime)");
  }
  return warnings;
}

void validate(const QuantDistribution& dist) {
  if (!dist.grid) fail(ErrorKind::invalid_argument, "distribution without a grid");
  if (dist.probs.size() != dist.grid->size())
    fail(ErrorKind::shape_mismatch, "distribution size does not match its grid");
  if ((dist.probs.array() < 0.0).any())
    fail(ErrorKind::invalid_argument, "negative probability");
  if (std::abs(dist.probs.sum() - 1.0) > 1e-9)
    fail(ErrorKind::invalid_argument, "probabilities do not sum to 1");
}

QuantDistribution point_mass(std::shared_ptr<const BinGrid> grid, int index) {
  QuantDistribution d{std::move(grid), {}};
  d.probs = Eigen::VectorXd::Zero(d.grid->size());
  d.probs[index] = 1.0;
  return d;
}

QuantDistribution binary_sq_pmf(double v, std::shared_ptr<const BinGrid> grid) {
  if (grid->size() != 2) fail(ErrorKind::invalid_argument, "binary SQ needs a two-bin grid");
  coordinate_of(v, *grid);
  const double b0 = grid->bins[0];
  const double b1 = grid->bins[1];
  QuantDistribution d{std::move(grid), Eigen::VectorXd(2)};
  const double v_in = std::clamp(v, b0, b1);
  d.probs[0] = (b1 - v_in) / (b1 - b0);
  d.probs[1] = (v_in - b0) / (b1 - b0);
  return d;
}

QuantDistribution binary_sq_pmf(double v, const BinGrid& grid) {
  return binary_sq_pmf(v, share(grid));
}

QuantDistribution naive_multibin_pmf(double v, std::shared_ptr<const BinGrid> grid) {
  coordinate_of(v, *grid);
  const auto& b = grid->bins;
  const int n = grid->size();
  const double x = std::clamp(v, grid->lo(), grid->hi());
  Eigen::VectorXd w = Eigen::VectorXd::Zero(n);
  for (int i = 0; i < n; ++i) {
    if (b[i] > x) break;
    for (int j = i + 1; j < n; ++j) {
      if (b[j] < x) continue;
      const double width = b[j] - b[i];
      w[i] += (b[j] - x) / width;
      w[j] += (x - b[i]) / width;
    }
  }
  QuantDistribution d{std::move(grid), w / w.sum()};
  return d;
}

QuantDistribution naive_multibin_pmf(double v, const BinGrid& grid) {
  return naive_multibin_pmf(v, share(grid));
}

bool sq_coordinate_pmf(double c, int n_bins, double alpha, std::span<double> probs,
                       std::span<double> dprobs_dc) {
  std::fill(probs.begin(), probs.end(), 0.0);
  std::fill(dprobs_dc.begin(), dprobs_dc.end(), 0.0);
  c = std::clamp(c, 0.0, static_cast<double>(n_bins - 1));

  // Lower partners satisfy i <= c, upper partners j > c; the top bin closes the
  // last interval.
  const int m = std::min(static_cast<int>(std::floor(c)), n_bins - 2);
  const int reach = static_cast<int>(std::ceil(alpha));
  const int i_first = std::max(0, m - reach);
  const int j_last = std::min(n_bins - 1, m + 1 + reach);
  const double inv_alpha = 1.0 / alpha;

  for (int i = m; i >= i_first; --i) {
    const double di = c - i;
    const double fi = 1.0 - di * inv_alpha;
    if (fi <= 0.0) break;
    for (int j = m + 1; j <= j_last; ++j) {
      const double dj = j - c;
      const double fj = 1.0 - dj * inv_alpha;
      if (fj <= 0.0) break;
      const double width = j - i;
      const double shared = fi * fj;
      const double dshared = (fi - fj) * inv_alpha;
      probs[i] += dj / width * shared;
      probs[j] += di / width * shared;
      dprobs_dc[i] += (-shared + dj * dshared) / width;
      dprobs_dc[j] += (shared + di * dshared) / width;
    }
  }

  double z = 0.0;
  double dz = 0.0;
  for (int k = 0; k < n_bins; ++k) {
    z += probs[k];
    dz += dprobs_dc[k];
  }
  if (!(z > 0.0)) {
    std::fill(probs.begin(), probs.end(), 0.0);
    std::fill(dprobs_dc.begin(), dprobs_dc.end(), 0.0);
    probs[static_cast<std::size_t>(std::lround(c))] = 1.0;
    return false;
  }
  for (int k = 0; k < n_bins; ++k) {
    probs[k] /= z;
    dprobs_dc[k] = (dprobs_dc[k] - probs[k] * dz) / z;
  }
  return true;
}

QuantDistribution sq_pmf(double v, std::shared_ptr<const BinGrid> grid, double alpha) {
  if (!(alpha > 0.0)) fail(ErrorKind::invalid_argument, "alpha must be positive");
  const double c = coordinate_of(v, *grid);
  const int n = grid->size();
  QuantDistribution d{std::move(grid), Eigen::VectorXd(n)};
  Eigen::VectorXd scratch(n);
  const bool regular = sq_coordinate_pmf(c, n, alpha, {d.probs.data(), std::size_t(n)},
                                         {scratch.data(), std::size_t(n)});
  if (!regular && alpha > 1.0)
    fail(ErrorKind::internal_invariant, "sparse quantizer normalizer vanished for alpha > 1");
  return d;
}

QuantDistribution sq_pmf(double v, const BinGrid& grid, double alpha) {
  return sq_pmf(v, share(grid), alpha);
}

double pmf_mean(const QuantDistribution& dist) { return dist.probs.dot(dist.grid->bins); }

double sample(const QuantDistribution& dist, Rng& rng) {
  const int k = inverse_cdf_index(dist.probs.data(), dist.size(), uniform_open(rng));
  return dist.bin(k);
}

RelaxedSample relaxed_sample(const QuantDistribution& dist, double tau, Rng& rng) {
  Eigen::VectorXd noise(dist.size());
  for (int k = 0; k < dist.size(); ++k) noise[k] = gumbel(rng);
  return relaxed_sample(dist, tau, noise);
}

RelaxedSample relaxed_sample(const QuantDistribution& dist, double tau,
                             const Eigen::VectorXd& gumbel_noise) {
  if (!(tau > 0.0)) fail(ErrorKind::invalid_argument, "tau must be positive");
  if (gumbel_noise.size() != dist.size())
    fail(ErrorKind::shape_mismatch, "noise length does not match the distribution");
  if (!(dist.probs.array() > 0.0).any())
    fail(ErrorKind::invalid_argument, "distribution has no positive entry");
  RelaxedSample out;
  out.weights.resize(dist.size());
  out.value = gumbel_softmax(dist.probs.data(), gumbel_noise.data(), dist.size(), tau,
                             dist.grid->lo(), dist.grid->spacing, out.weights.data());
  // Report the value on the stored bins so a point mass returns its bin exactly.
  out.value = out.weights.dot(dist.grid->bins);
  return out;
}

ResolvedRange resolve_range(double min, double max) {
  if (max > min) return {min, max, false};
  const double pad = std::max(1e-6, 1e-6 * std::abs(max));
  return {min - pad, max + pad, true};
}

QuantizedVector quantize_vector(const Eigen::Ref<const Eigen::VectorXd>& values,
                                const SqParams& params, RangePolicy policy) {
  if (values.size() == 0) fail(ErrorKind::invalid_argument, "cannot quantize an empty vector");
  validate(params);
  QuantizedVector out;
  if (policy.kind == RangePolicy::Kind::fixed) {
    out.grid = share(make_bin_grid(policy.lo, policy.hi, params.n_bins));
  } else {
    const ResolvedRange r = resolve_range(values.minCoeff(), values.maxCoeff());
    out.degenerate_range = r.padded;
    out.grid = share(make_bin_grid(r.lo, r.hi, params.n_bins));
  }
  out.pmfs.reserve(values.size());
  for (Eigen::Index i = 0; i < values.size(); ++i)
    out.pmfs.push_back(sq_pmf(values[i], out.grid, params.alpha));
  return out;
}

}  // namespace sqens
