#pragma once

// Matrix-level reverse-mode differentiation. A Tape records every operator
// applied to its variables; backward() walks the records in reverse and
// accumulates gradients into every node that depends on a parameter.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sqens/errors.hpp"

namespace sqens {

/// Dense row-major 2-D array; batch rows by feature columns throughout.
template <typename Scalar>
using Tensor = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Var {
  std::uint32_t id = 0;
};

template <typename Scalar>
class Tape {
 public:
  using Mat = Tensor<Scalar>;
  /// Receives the gradient flowing into the node and pushes contributions to
  /// its inputs through Tape::accumulate.
  using Backward = std::function<void(Tape&, const Mat&)>;

  Var constant(Mat value) { return push(std::move(value), false, {}, {}); }
  Var parameter(Mat value) { return push(std::move(value), true, {}, {}); }

  Var record(Mat value, std::initializer_list<Var> inputs, Backward backward) {
    return push(std::move(value), any_requires_grad(inputs), std::move(backward), {});
  }
  Var record(Mat value, std::span<const Var> inputs, Backward backward) {
    return push(std::move(value), any_requires_grad(inputs), std::move(backward), {});
  }

  /// A node that blocks differentiation (e.g. a hard categorical draw).
  /// Reaching it during backward is an error.
  Var record_non_differentiable(Mat value, std::initializer_list<Var> inputs, std::string what) {
    return push(std::move(value), any_requires_grad(inputs), {}, std::move(what));
  }

  const Mat& value(Var v) const { return nodes_[v.id].value; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  /// Gradient after backward(); a zero matrix for nodes the loss does not reach.
  Mat grad(Var v) const {
    const Node& n = nodes_[v.id];
    if (n.grad.size() == 0) return Mat::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  template <typename Derived>
  void accumulate(Var v, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[v.id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
    n.touched = true;
  }

  void backward(Var loss) {
    Node& root = nodes_.at(loss.id);
    if (root.value.size() != 1) fail(ErrorKind::shape_mismatch, "backward needs a scalar loss");
    for (Node& n : nodes_) {
      n.grad.resize(0, 0);
      n.touched = false;
    }
    if (!root.requires_grad) return;
    root.grad = Mat::Ones(1, 1);
    root.touched = true;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.touched || !n.requires_grad) continue;
      if (!n.non_differentiable.empty())
        fail(ErrorKind::non_differentiable, "cannot differentiate through " + n.non_differentiable);
      if (n.backward) {
        // Copy: accumulate() may not touch this node, but keep the callee
        // independent of container internals.
        const Mat g = n.grad;
        n.backward(*this, g);
      }
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    Backward backward;
    std::string non_differentiable;
    bool requires_grad = false;
    bool touched = false;
  };

  bool any_requires_grad(std::initializer_list<Var> inputs) const {
    return any_requires_grad(std::span<const Var>(inputs.begin(), inputs.size()));
  }
  bool any_requires_grad(std::span<const Var> inputs) const {
    return std::any_of(inputs.begin(), inputs.end(),
                       [&](Var v) { return nodes_[v.id].requires_grad; });
  }

  Var push(Mat value, bool requires_grad, Backward backward, std::string non_diff) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.backward = std::move(backward);
    n.non_differentiable = std::move(non_diff);
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  std::deque<Node> nodes_;
};

namespace detail {

inline void require_shape(bool ok, const char* what) {
  if (!ok) fail(ErrorKind::shape_mismatch, what);
}

}  // namespace detail

/// x W + b for x (batch x in), W (in x out), b (1 x out).
template <typename Scalar>
Var affine(Tape<Scalar>& t, Var x, Var w, Var b) {
  const auto& xv = t.value(x);
  const auto& wv = t.value(w);
  const auto& bv = t.value(b);
  detail::require_shape(xv.cols() == wv.rows(), "affine: input width does not match weight rows");
  detail::require_shape(bv.rows() == 1 && bv.cols() == wv.cols(), "affine: bias shape");
  Tensor<Scalar> out = xv * wv;
  out.rowwise() += bv.row(0);
  return t.record(std::move(out), {x, w, b}, [x, w, b](Tape<Scalar>& tp, const Tensor<Scalar>& g) {
    if (tp.requires_grad(x)) tp.accumulate(x, g * tp.value(w).transpose());
    if (tp.requires_grad(w)) tp.accumulate(w, tp.value(x).transpose() * g);
    if (tp.requires_grad(b)) tp.accumulate(b, g.colwise().sum());
  });
}

/// max(x, 0); the derivative at 0 is taken as 0.
template <typename Scalar>
Var relu(Tape<Scalar>& t, Var x) {
  Tensor<Scalar> out = t.value(x).cwiseMax(Scalar(0));
  return t.record(std::move(out), {x}, [x](Tape<Scalar>& tp, const Tensor<Scalar>& g) {
    tp.accumulate(x, (tp.value(x).array() > Scalar(0)).select(g, Scalar(0)).matrix());
  });
}

template <typename Scalar>
Var add(Tape<Scalar>& t, Var a, Var b) {
  detail::require_shape(t.value(a).rows() == t.value(b).rows() &&
                            t.value(a).cols() == t.value(b).cols(),
                        "add: shape mismatch");
  Tensor<Scalar> out = t.value(a) + t.value(b);
  return t.record(std::move(out), {a, b}, [a, b](Tape<Scalar>& tp, const Tensor<Scalar>& g) {
    tp.accumulate(a, g);
    tp.accumulate(b, g);
  });
}

template <typename Scalar>
Var scale(Tape<Scalar>& t, Var a, double s) {
  Tensor<Scalar> out = t.value(a) * Scalar(s);
  return t.record(std::move(out), {a}, [a, s](Tape<Scalar>& tp, const Tensor<Scalar>& g) {
    tp.accumulate(a, g * Scalar(s));
  });
}

template <typename Scalar>
Var sum(Tape<Scalar>& t, Var a) {
  Tensor<Scalar> out(1, 1);
  out(0, 0) = t.value(a).sum();
  return t.record(std::move(out), {a}, [a](Tape<Scalar>& tp, const Tensor<Scalar>& g) {
    const auto& v = tp.value(a);
    tp.accumulate(a, Tensor<Scalar>::Constant(v.rows(), v.cols(), g(0, 0)));
  });
}

template <typename Scalar>
Var mean(Tape<Scalar>& t, Var a) {
  const auto n = static_cast<double>(t.value(a).size());
  return scale(t, sum(t, a), 1.0 / n);
}

/// sum_i coeffs[i] * terms[i] for 1x1 terms.
template <typename Scalar>
Var linear_combination(Tape<Scalar>& t, std::vector<Var> terms, std::vector<double> coeffs) {
  detail::require_shape(terms.size() == coeffs.size() && !terms.empty(),
                        "linear_combination: one coefficient per term");
  Tensor<Scalar> out = Tensor<Scalar>::Zero(1, 1);
  for (std::size_t i = 0; i < terms.size(); ++i) {
    detail::require_shape(t.value(terms[i]).size() == 1, "linear_combination: scalar terms only");
    out(0, 0) += Scalar(coeffs[i]) * t.value(terms[i])(0, 0);
  }
  const std::vector<Var> inputs = terms;
  return t.record(std::move(out), std::span<const Var>(inputs),
                  [terms = std::move(terms), coeffs = std::move(coeffs)](Tape<Scalar>& tp, const Tensor<Scalar>& g) {
                    for (std::size_t i = 0; i < terms.size(); ++i)
                      tp.accumulate(terms[i], g * Scalar(coeffs[i]));
                  });
}

/// Row r of the input is emitted `times` times consecutively.
template <typename Scalar>
Var repeat_rows(Tape<Scalar>& t, Var x, int times) {
  const auto& xv = t.value(x);
  Tensor<Scalar> out(xv.rows() * times, xv.cols());
  for (Eigen::Index r = 0; r < xv.rows(); ++r)
    for (int k = 0; k < times; ++k) out.row(r * times + k) = xv.row(r);
  return t.record(std::move(out), {x}, [x, times](Tape<Scalar>& tp, const Tensor<Scalar>& g) {
    const auto rows = tp.value(x).rows();
    Tensor<Scalar> gx = Tensor<Scalar>::Zero(rows, g.cols());
    for (Eigen::Index r = 0; r < rows; ++r)
      for (int k = 0; k < times; ++k) gx.row(r) += g.row(r * times + k);
    tp.accumulate(x, gx);
  });
}

namespace detail {

template <typename Scalar>
Tensor<Scalar> row_softmax(const Tensor<Scalar>& logits) {
  Tensor<Scalar> p(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const Scalar m = logits.row(r).maxCoeff();
    p.row(r) = (logits.row(r).array() - m).exp().matrix();
    p.row(r) /= p.row(r).sum();
  }
  return p;
}

inline void check_labels(std::span<const int> labels, Eigen::Index classes) {
  for (int y : labels)
    if (y < 0 || y >= classes) fail(ErrorKind::label_out_of_range, "label outside [0, n_classes)");
}

}  // namespace detail

/// Mean over rows of -log softmax(logits)[label]; max-subtracted.
template <typename Scalar>
Var softmax_cross_entropy(Tape<Scalar>& t, Var logits, std::span<const int> labels) {
  const auto& lv = t.value(logits);
  detail::require_shape(static_cast<Eigen::Index>(labels.size()) == lv.rows(),
                        "softmax_cross_entropy: one label per row");
  detail::check_labels(labels, lv.cols());
  double loss = 0.0;
  for (Eigen::Index r = 0; r < lv.rows(); ++r) {
    const double m = lv.row(r).maxCoeff();
    const double lse = m + std::log((lv.row(r).template cast<double>().array() - m).exp().sum());
    loss += lse - lv(r, labels[static_cast<std::size_t>(r)]);
  }
  Tensor<Scalar> out(1, 1);
  out(0, 0) = Scalar(loss / static_cast<double>(lv.rows()));
  std::vector<int> y(labels.begin(), labels.end());
  return t.record(std::move(out), {logits},
                  [logits, y = std::move(y)](Tape<Scalar>& tp, const Tensor<Scalar>& g) {
                    Tensor<Scalar> p = detail::row_softmax(tp.value(logits));
                    for (Eigen::Index r = 0; r < p.rows(); ++r) p(r, y[static_cast<std::size_t>(r)]) -= Scalar(1);
                    tp.accumulate(logits, p * (g(0, 0) / Scalar(p.rows())));
                  });
}

/// Per group of `group_size` consecutive rows: -log((1/M) sum_m softmax(l_m)[y]).
/// Output is (groups x 1); `labels` has one entry per group.
template <typename Scalar>
Var ensemble_nll(Tape<Scalar>& t, Var logits, std::span<const int> labels, int group_size) {
  const auto& lv = t.value(logits);
  detail::require_shape(lv.rows() == static_cast<Eigen::Index>(labels.size()) * group_size,
                        "ensemble_nll: rows must equal groups * group_size");
  detail::check_labels(labels, lv.cols());
  const Tensor<Scalar> p = detail::row_softmax(lv);
  Tensor<Scalar> out(static_cast<Eigen::Index>(labels.size()), 1);
  for (std::size_t gi = 0; gi < labels.size(); ++gi) {
    double avg = 0.0;
    for (int m = 0; m < group_size; ++m)
      avg += p(static_cast<Eigen::Index>(gi) * group_size + m, labels[gi]);
    avg /= group_size;
    out(static_cast<Eigen::Index>(gi), 0) = Scalar(-std::log(std::max(avg, 1e-300)));
  }
  std::vector<int> y(labels.begin(), labels.end());
  return t.record(std::move(out), {logits},
                  [logits, y = std::move(y), group_size](Tape<Scalar>& tp, const Tensor<Scalar>& g) {
                    Tensor<Scalar> p = detail::row_softmax(tp.value(logits));
                    Tensor<Scalar> gl(p.rows(), p.cols());
                    for (std::size_t gi = 0; gi < y.size(); ++gi) {
                      const Eigen::Index base = static_cast<Eigen::Index>(gi) * group_size;
                      double avg = 0.0;
                      for (int m = 0; m < group_size; ++m) avg += p(base + m, y[gi]);
                      avg = std::max(avg / group_size, 1e-300);
                      for (int m = 0; m < group_size; ++m) {
                        const Eigen::Index r = base + m;
                        const Scalar py = p(r, y[gi]);
                        // d(-log avg)/d l_r = -(1/avg)(1/M) p_y (onehot - p)
                        const Scalar c = Scalar(-1.0 / (avg * group_size)) * py * g(static_cast<Eigen::Index>(gi), 0);
                        gl.row(r) = -c * p.row(r);
                        gl(r, y[gi]) += c;
                      }
                    }
                    tp.accumulate(logits, gl);
                  });
}

/// Central-difference check of the gradient of a scalar function at x. The
/// error per coordinate is |a - n| / max(|a|, |n|, 1e-12); returns the maximum.
inline double grad_check(const std::function<Var(Tape<double>&, Var)>& f, const Tensor<double>& x,
                         double h) {
  Tape<double> tape;
  const Var xv = tape.parameter(x);
  const Var out = f(tape, xv);
  tape.backward(out);
  const Tensor<double> analytic = tape.grad(xv);

  auto eval = [&](const Tensor<double>& at) {
    Tape<double> tp;
    const Var v = tp.constant(at);
    return tp.value(f(tp, v))(0, 0);
  };
  double worst = 0.0;
  Tensor<double> probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double orig = probe.data()[i];
    probe.data()[i] = orig + h;
    const double up = eval(probe);
    probe.data()[i] = orig - h;
    const double down = eval(probe);
    probe.data()[i] = orig;
    const double numeric = (up - down) / (2 * h);
    const double a = analytic.data()[i];
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-12});
    worst = std::max(worst, std::abs(a - numeric) / denom);
  }
  return worst;
}

}  // namespace sqens
