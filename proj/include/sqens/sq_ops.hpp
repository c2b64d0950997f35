#pragma once

// Tape operators for stochastic quantization inside a network.
//
// Layouts: values are (rows x d). PMFs are (rows x d*n_bins) with the bins of
// feature f in columns [f*n_bins, (f+1)*n_bins). Grids are (1 x 3) when shared
// by every row or (rows x 3) per row, holding [lo, hi, padded]; the third
// column flags a degenerate range that was widened and carries no gradient.

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "sqens/quant.hpp"
#include "sqens/rng.hpp"
#include "sqens/tensor.hpp"

namespace sqens {

namespace detail {

template <typename Scalar>
struct GridRow {
  double lo, hi, spacing;
  bool padded;
};

template <typename Scalar>
GridRow<Scalar> grid_row(const Tensor<Scalar>& grid, Eigen::Index r, int n_bins) {
  const Eigen::Index gr = grid.rows() == 1 ? 0 : r;
  const double lo = static_cast<double>(grid(gr, 0));
  const double hi = static_cast<double>(grid(gr, 1));
  return {lo, hi, (hi - lo) / (n_bins - 1), grid(gr, 2) != Scalar(0)};
}

}  // namespace detail

/// Grid bounds for each row of v. A fixed policy yields a shared constant
/// grid; per-vector min/max follows the extreme elements (subgradient at the
/// argmin/argmax element).
template <typename Scalar>
Var row_grid(Tape<Scalar>& t, Var v, const RangePolicy& policy) {
  if (policy.kind == RangePolicy::Kind::fixed) {
    if (!(policy.hi > policy.lo)) fail(ErrorKind::degenerate_grid, "fixed range needs max > min");
    Tensor<Scalar> g(1, 3);
    g << Scalar(policy.lo), Scalar(policy.hi), Scalar(0);
    return t.constant(std::move(g));
  }
  const auto& vv = t.value(v);
  if (vv.cols() == 0) fail(ErrorKind::invalid_argument, "row_grid on an empty vector");
  Tensor<Scalar> g(vv.rows(), 3);
  std::vector<Eigen::Index> arg_lo(static_cast<std::size_t>(vv.rows()));
  std::vector<Eigen::Index> arg_hi(arg_lo.size());
  for (Eigen::Index r = 0; r < vv.rows(); ++r) {
    Eigen::Index imin = 0, imax = 0;
    const double mn = vv.row(r).minCoeff(&imin);
    const double mx = vv.row(r).maxCoeff(&imax);
    if (!std::isfinite(mn) || !std::isfinite(mx))
      fail(ErrorKind::non_finite, "non-finite activation in feature vector");
    const ResolvedRange rr = resolve_range(mn, mx);
    g(r, 0) = Scalar(rr.lo);
    g(r, 1) = Scalar(rr.hi);
    g(r, 2) = Scalar(rr.padded ? 1 : 0);
    // A float grid can round a narrow but valid range to zero width.
    if (!(g(r, 1) > g(r, 0))) {
      const ResolvedRange wide = resolve_range(mx, mx);
      g(r, 0) = Scalar(std::min<double>(mn, wide.lo));
      g(r, 1) = Scalar(std::max<double>(mx, wide.hi));
      g(r, 2) = Scalar(1);
    }
    arg_lo[static_cast<std::size_t>(r)] = imin;
    arg_hi[static_cast<std::size_t>(r)] = imax;
  }
  return t.record(std::move(g), {v},
                  [v, arg_lo = std::move(arg_lo), arg_hi = std::move(arg_hi)](
                      Tape<Scalar>& tp, const Tensor<Scalar>& gout) {
                    const auto& vv = tp.value(v);
                    Tensor<Scalar> gv = Tensor<Scalar>::Zero(vv.rows(), vv.cols());
                    for (Eigen::Index r = 0; r < vv.rows(); ++r) {
                      gv(r, arg_lo[static_cast<std::size_t>(r)]) += gout(r, 0);
                      gv(r, arg_hi[static_cast<std::size_t>(r)]) += gout(r, 1);
                    }
                    tp.accumulate(v, gv);
                  });
}

/// Sparse SQ distribution of every element of v on its row's grid.
template <typename Scalar>
Var sq_probs(Tape<Scalar>& t, Var v, Var grid, double alpha, int n_bins) {
  if (!(alpha > 0.0)) fail(ErrorKind::invalid_argument, "alpha must be positive");
  if (n_bins < 2) fail(ErrorKind::invalid_argument, "at least two bins are required");
  const auto& vv = t.value(v);
  const auto& gg = t.value(grid);
  detail::require_shape(gg.cols() == 3 && (gg.rows() == 1 || gg.rows() == vv.rows()),
                        "sq_probs: grid must be 1 x 3 or rows x 3");
  const bool keep = t.requires_grad(v) || t.requires_grad(grid);
  const Eigen::Index d = vv.cols();
  Tensor<Scalar> out(vv.rows(), d * n_bins);
  Tensor<Scalar> dp;
  if (keep) dp.resize(vv.rows(), d * n_bins);
  std::vector<double> p(static_cast<std::size_t>(n_bins)), dpdc(p.size());
  const double top = n_bins - 1;
  for (Eigen::Index r = 0; r < vv.rows(); ++r) {
    const auto gr = detail::grid_row(gg, r, n_bins);
    const double tol = 1e-9 * std::max(1.0, top);
    for (Eigen::Index f = 0; f < d; ++f) {
      const double x = static_cast<double>(vv(r, f));
      if (!std::isfinite(x)) fail(ErrorKind::non_finite, "non-finite value entering the quantizer");
      const double c = (x - gr.lo) / gr.spacing;
      if (c < -tol || c > top + tol) fail(ErrorKind::out_of_range, "value outside the bin grid");
      sq_coordinate_pmf(c, n_bins, alpha, p, dpdc);
      for (int k = 0; k < n_bins; ++k) {
        out(r, f * n_bins + k) = Scalar(p[static_cast<std::size_t>(k)]);
        if (keep) dp(r, f * n_bins + k) = Scalar(dpdc[static_cast<std::size_t>(k)]);
      }
    }
  }
  return t.record(
      std::move(out), {v, grid},
      [v, grid, n_bins, dp = std::move(dp)](Tape<Scalar>& tp, const Tensor<Scalar>& g) {
        const auto& vv = tp.value(v);
        const auto& gg = tp.value(grid);
        const bool want_v = tp.requires_grad(v);
        const bool want_grid = tp.requires_grad(grid);
        Tensor<Scalar> gv = Tensor<Scalar>::Zero(vv.rows(), vv.cols());
        Tensor<Scalar> ggrid = Tensor<Scalar>::Zero(gg.rows(), gg.cols());
        const double top = n_bins - 1;
        for (Eigen::Index r = 0; r < vv.rows(); ++r) {
          const auto gr = detail::grid_row(gg, r, n_bins);
          if (gr.padded) continue;
          const Eigen::Index grow = gg.rows() == 1 ? 0 : r;
          for (Eigen::Index f = 0; f < vv.cols(); ++f) {
            double gc = 0.0;
            for (int k = 0; k < n_bins; ++k)
              gc += static_cast<double>(g(r, f * n_bins + k)) * static_cast<double>(dp(r, f * n_bins + k));
            if (gc == 0.0) continue;
            const double c = std::clamp((static_cast<double>(vv(r, f)) - gr.lo) / gr.spacing, 0.0, top);
            if (want_v) gv(r, f) += Scalar(gc / gr.spacing);
            if (want_grid) {
              ggrid(grow, 0) += Scalar(gc * (c / top - 1.0) / gr.spacing);
              ggrid(grow, 1) += Scalar(-gc * c / (top * gr.spacing));
            }
          }
        }
        if (want_v) tp.accumulate(v, gv);
        if (want_grid) tp.accumulate(grid, ggrid);
      });
}

/// Random streams for sampling layers. Output row o draws from
/// rngs[o / rows_per_stream], so each image keeps its own stream regardless of
/// how inputs are batched; rows_per_stream = 0 sends every row to rngs[0].
struct RowStreams {
  std::span<Rng> rngs;
  Eigen::Index rows_per_stream = 0;

  Rng& at(Eigen::Index row) const {
    const auto i = rows_per_stream == 0 ? 0 : static_cast<std::size_t>(row / rows_per_stream);
    if (i >= rngs.size()) fail(ErrorKind::shape_mismatch, "not enough random streams for the batch");
    return rngs[i];
  }
};

/// Source of Gumbel noise for gumbel_relax: either a fixed dense table
/// (out_rows x d*n_bins) or streams drawn for positive-probability bins in
/// row, feature, bin order.
struct GumbelNoise {
  const Tensor<double>* fixed = nullptr;
  RowStreams streams{};
};

/// Relaxed sample sum_k w_k b_k with Gumbel-softmax weights at temperature
/// tau. Output row o uses PMF row o / repeat, so one PMF row can feed
/// `repeat` ensemble members. Gradients treat the noise as fixed.
template <typename Scalar>
Var gumbel_relax(Tape<Scalar>& t, Var probs, Var grid, int n_bins, double tau, int repeat,
                 GumbelNoise noise) {
  if (!(tau > 0.0)) fail(ErrorKind::invalid_argument, "tau must be positive");
  if (repeat < 1) fail(ErrorKind::invalid_argument, "repeat must be positive");
  const auto& pv = t.value(probs);
  const auto& gg = t.value(grid);
  detail::require_shape(pv.cols() % n_bins == 0, "gumbel_relax: PMF width is not a multiple of n_bins");
  detail::require_shape(gg.rows() == 1 || gg.rows() == pv.rows(), "gumbel_relax: grid rows");
  const Eigen::Index d = pv.cols() / n_bins;
  const Eigen::Index rows = pv.rows() * repeat;
  if (noise.fixed)
    detail::require_shape(noise.fixed->rows() == rows && noise.fixed->cols() == pv.cols(),
                          "gumbel_relax: noise shape");
  else if (noise.streams.rngs.empty())
    fail(ErrorKind::invalid_argument, "gumbel_relax needs a noise source");

  Tensor<Scalar> out(rows, d);
  Tensor<Scalar> weights(rows, pv.cols());
  std::vector<double> pk(static_cast<std::size_t>(n_bins)), nk(pk.size()), wk(pk.size());
  for (Eigen::Index o = 0; o < rows; ++o) {
    const Eigen::Index r = o / repeat;
    const auto gr = detail::grid_row(gg, r, n_bins);
    Rng* rng = noise.fixed ? nullptr : &noise.streams.at(o);
    for (Eigen::Index f = 0; f < d; ++f) {
      const Eigen::Index base = f * n_bins;
      int positive = 0, only = 0;
      for (int k = 0; k < n_bins; ++k) {
        pk[static_cast<std::size_t>(k)] = static_cast<double>(pv(r, base + k));
        if (pk[static_cast<std::size_t>(k)] > 0) ++positive, only = k;
      }
      if (positive == 0) fail(ErrorKind::invalid_argument, "distribution has no positive entry");
      if (positive == 1 && !noise.fixed) {
        // Point mass: the relaxation is exact and needs no noise.
        for (int k = 0; k < n_bins; ++k) weights(o, base + k) = Scalar(k == only ? 1 : 0);
        out(o, f) = Scalar(gr.lo + only * gr.spacing);
        continue;
      }
      for (int k = 0; k < n_bins; ++k) {
        if (noise.fixed)
          nk[static_cast<std::size_t>(k)] = (*noise.fixed)(o, base + k);
        else
          nk[static_cast<std::size_t>(k)] = pk[static_cast<std::size_t>(k)] > 0 ? gumbel(*rng) : 0.0;
      }
      const double value = gumbel_softmax(pk.data(), nk.data(), n_bins, tau, gr.lo, gr.spacing, wk.data());
      for (int k = 0; k < n_bins; ++k) weights(o, base + k) = Scalar(wk[static_cast<std::size_t>(k)]);
      out(o, f) = Scalar(value);
    }
  }
  return t.record(
      std::move(out), {probs, grid},
      [probs, grid, n_bins, tau, repeat, weights = std::move(weights)](Tape<Scalar>& tp,
                                                                      const Tensor<Scalar>& g) {
        const auto& pv = tp.value(probs);
        const auto& gg = tp.value(grid);
        const bool want_p = tp.requires_grad(probs);
        const bool want_grid = tp.requires_grad(grid);
        const Eigen::Index d = pv.cols() / n_bins;
        Tensor<Scalar> gp;
        if (want_p) gp = Tensor<Scalar>::Zero(pv.rows(), pv.cols());
        Tensor<Scalar> ggrid = Tensor<Scalar>::Zero(gg.rows(), gg.cols());
        const double top = n_bins - 1;
        for (Eigen::Index o = 0; o < g.rows(); ++o) {
          const Eigen::Index r = o / repeat;
          const Eigen::Index grow = gg.rows() == 1 ? 0 : r;
          const auto gr = detail::grid_row(gg, r, n_bins);
          for (Eigen::Index f = 0; f < d; ++f) {
            const double gy = static_cast<double>(g(o, f));
            if (gy == 0.0) continue;
            const Eigen::Index base = f * n_bins;
            double y = 0.0, s_lo = 0.0, s_hi = 0.0;
            for (int k = 0; k < n_bins; ++k) {
              const double w = static_cast<double>(weights(o, base + k));
              y += w * (gr.lo + k * gr.spacing);
              s_lo += w * (1.0 - k / top);
              s_hi += w * (k / top);
            }
            if (want_p) {
              for (int k = 0; k < n_bins; ++k) {
                const double p = static_cast<double>(pv(r, base + k));
                const double w = static_cast<double>(weights(o, base + k));
                if (p > 0 && w > 0)
                  gp(r, base + k) += Scalar(gy * w * ((gr.lo + k * gr.spacing) - y) / (tau * p));
              }
            }
            if (want_grid) {
              ggrid(grow, 0) += Scalar(gy * s_lo);
              ggrid(grow, 1) += Scalar(gy * s_hi);
            }
          }
        }
        if (want_p) tp.accumulate(probs, gp);
        if (want_grid) tp.accumulate(grid, ggrid);
      });
}

/// Hard categorical draw per element (inverse CDF); not differentiable.
template <typename Scalar>
Var hard_sample(Tape<Scalar>& t, Var probs, Var grid, int n_bins, int repeat, RowStreams streams) {
  const auto& pv = t.value(probs);
  const auto& gg = t.value(grid);
  detail::require_shape(pv.cols() % n_bins == 0, "hard_sample: PMF width is not a multiple of n_bins");
  const Eigen::Index d = pv.cols() / n_bins;
  Tensor<Scalar> out(pv.rows() * repeat, d);
  for (Eigen::Index o = 0; o < out.rows(); ++o) {
    const Eigen::Index r = o / repeat;
    const auto gr = detail::grid_row(gg, r, n_bins);
    Rng& rng = streams.at(o);
    for (Eigen::Index f = 0; f < d; ++f) {
      const Scalar* p = pv.data() + r * pv.cols() + f * n_bins;
      int positive = 0, only = 0;
      for (int k = 0; k < n_bins; ++k)
        if (p[k] > 0) ++positive, only = k;
      const int k = positive == 1 ? only : inverse_cdf_index(p, n_bins, uniform_open(rng));
      out(o, f) = Scalar(k == n_bins - 1 ? gr.hi : gr.lo + k * gr.spacing);
    }
  }
  return t.record_non_differentiable(std::move(out), {probs, grid}, "a hard quantizer sample");
}

/// Per group of `group_size` consecutive rows and per feature:
/// H(mean_m P_m) - mean_m H(P_m), bins mixed by position. Output (groups x d).
template <typename Scalar>
Var feature_mi(Tape<Scalar>& t, Var probs, int n_bins, int group_size) {
  const auto& pv = t.value(probs);
  detail::require_shape(pv.cols() % n_bins == 0 && group_size >= 1 && pv.rows() % group_size == 0,
                        "feature_mi: rows must be a multiple of group_size");
  const Eigen::Index d = pv.cols() / n_bins;
  const Eigen::Index groups = pv.rows() / group_size;
  Tensor<Scalar> out(groups, d);
  std::vector<double> q(static_cast<std::size_t>(n_bins));
  for (Eigen::Index gi = 0; gi < groups; ++gi) {
    for (Eigen::Index f = 0; f < d; ++f) {
      std::fill(q.begin(), q.end(), 0.0);
      double h_cond = 0.0;
      for (int m = 0; m < group_size; ++m) {
        const Eigen::Index r = gi * group_size + m;
        for (int k = 0; k < n_bins; ++k) {
          const double p = static_cast<double>(pv(r, f * n_bins + k));
          q[static_cast<std::size_t>(k)] += p;
          if (p > 0) h_cond -= p * std::log(p);
        }
      }
      double h_marg = 0.0;
      for (double& x : q) {
        x /= group_size;
        if (x > 0) h_marg -= x * std::log(x);
      }
      const double mi = h_marg - h_cond / group_size;
      out(gi, f) = Scalar(mi < 0.0 && mi > -1e-12 ? 0.0 : mi);
    }
  }
  return t.record(std::move(out), {probs}, [probs, n_bins, group_size](Tape<Scalar>& tp, const Tensor<Scalar>& g) {
    const auto& pv = tp.value(probs);
    const Eigen::Index d = pv.cols() / n_bins;
    Tensor<Scalar> gp = Tensor<Scalar>::Zero(pv.rows(), pv.cols());
    std::vector<double> q(static_cast<std::size_t>(n_bins));
    for (Eigen::Index gi = 0; gi < g.rows(); ++gi) {
      for (Eigen::Index f = 0; f < d; ++f) {
        const double go = static_cast<double>(g(gi, f));
        if (go == 0.0) continue;
        std::fill(q.begin(), q.end(), 0.0);
        for (int m = 0; m < group_size; ++m)
          for (int k = 0; k < n_bins; ++k)
            q[static_cast<std::size_t>(k)] += static_cast<double>(pv(gi * group_size + m, f * n_bins + k));
        for (double& x : q) x /= group_size;
        // dI/dP_mk = (log P_mk - log q_k) / M
        for (int m = 0; m < group_size; ++m) {
          const Eigen::Index r = gi * group_size + m;
          for (int k = 0; k < n_bins; ++k) {
            const double p = static_cast<double>(pv(r, f * n_bins + k));
            if (p > 0)
              gp(r, f * n_bins + k) = Scalar(go * (std::log(p) - std::log(q[static_cast<std::size_t>(k)])) / group_size);
          }
        }
      }
    }
    tp.accumulate(probs, gp);
  });
}

/// Bin spacing (hi - lo) / (n_bins - 1) per grid row, (rows x 1).
template <typename Scalar>
Var grid_spacing(Tape<Scalar>& t, Var grid, int n_bins) {
  const auto& gg = t.value(grid);
  Tensor<Scalar> out(gg.rows(), 1);
  for (Eigen::Index r = 0; r < gg.rows(); ++r) out(r, 0) = (gg(r, 1) - gg(r, 0)) / Scalar(n_bins - 1);
  return t.record(std::move(out), {grid}, [grid, n_bins](Tape<Scalar>& tp, const Tensor<Scalar>& g) {
    const auto& gg = tp.value(grid);
    Tensor<Scalar> gd = Tensor<Scalar>::Zero(gg.rows(), gg.cols());
    gd.col(0) = -g.col(0) / Scalar(n_bins - 1);
    gd.col(1) = g.col(0) / Scalar(n_bins - 1);
    tp.accumulate(grid, gd);
  });
}

}  // namespace sqens
