#pragma once

// Attack detection by thresholding the ensemble MI against clean data.

#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "sqens/attacks.hpp"

namespace sqens {

struct DetectorCalibration {
  double mean = 0;
  double stddev = 0;  // sample standard deviation
  int n = 0;
  int n_members = 0;
};

/// From per-input clean MI values; needs at least two.
DetectorCalibration calibrate(std::span<const double> clean_mi, int n_members);

template <typename Scalar>
DetectorCalibration calibrate(const SQEnsembleModel<Scalar>& m, const Dataset& clean, int n_members,
                              std::uint64_t seed, int threads = 1) {
  if (clean.size() < 2) fail(ErrorKind::insufficient_data, "calibration needs at least two clean inputs");
  const auto r = evaluate(m, clean, n_members, seed, threads);
  return calibrate(r.mi, n_members);
}

struct Detection {
  bool flag = false;
  double mi = 0;
};

/// Flags mi - mean > offset. The two-sided variant (an extension for attacks
/// that lower the MI) flags |mi - mean| > offset.
Detection detect(double mi, const DetectorCalibration& cal, double offset, bool two_sided = false);

template <typename Scalar>
Detection detect(const SQEnsembleModel<Scalar>& m, const Dataset& one, const DetectorCalibration& cal,
                 double offset, std::uint64_t seed, bool two_sided = false) {
  const auto r = evaluate(m, one.head(1), cal.n_members, seed);
  return detect(r.mi[0], cal, offset, two_sided);
}

struct RocPoint {
  double threshold;  // flag when score >= threshold
  double fpr;
  double tpr;
};

struct RocCurve {
  std::vector<RocPoint> points;  // from (0, 0) to (1, 1)
  double auc = 0;
};

/// Sweeps every observed score as a threshold (clean = negatives, attacked =
/// positives); trapezoidal AUC, so tied scores earn half credit. With
/// two_sided the score is |mi - center|.
RocCurve roc(std::span<const double> clean_mi, std::span<const double> attacked_mi, bool two_sided = false,
             double center = 0);

}  // namespace sqens
