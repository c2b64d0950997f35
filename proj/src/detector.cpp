#include "sqens/detector.hpp"

#include <algorithm>
#include <cmath>

#include "sqens/errors.hpp"

namespace sqens {

DetectorCalibration calibrate(std::span<const double> clean_mi, int n_members) {
  if (clean_mi.size() < 2) fail(ErrorKind::insufficient_data, "calibration needs at least two clean inputs");
  DetectorCalibration c;
  c.n = static_cast<int>(clean_mi.size());
  c.n_members = n_members;
  for (double v : clean_mi) c.mean += v;
  c.mean /= c.n;
  double ss = 0;
  for (double v : clean_mi) ss += (v - c.mean) * (v - c.mean);
  c.stddev = std::sqrt(ss / (c.n - 1));
  return c;
}

Detection detect(double mi, const DetectorCalibration& cal, double offset, bool two_sided) {
  const double dev = two_sided ? std::abs(mi - cal.mean) : mi - cal.mean;
  return {dev > offset, mi};
}

RocCurve roc(std::span<const double> clean_mi, std::span<const double> attacked_mi, bool two_sided, double center) {
  if (clean_mi.empty() || attacked_mi.empty()) fail(ErrorKind::insufficient_data, "ROC needs both sets");
  struct Item {
    double score;
    bool positive;
  };
  std::vector<Item> items;
  auto score = [&](double v) { return two_sided ? std::abs(v - center) : v; };
  for (double v : clean_mi) items.push_back({score(v), false});
  for (double v : attacked_mi) items.push_back({score(v), true});
  std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) { return a.score > b.score; });

  const double np = static_cast<double>(attacked_mi.size());
  const double nn = static_cast<double>(clean_mi.size());
  RocCurve c;
  c.points.push_back({INFINITY, 0.0, 0.0});
  double tp = 0, fp = 0;
  for (std::size_t i = 0; i < items.size();) {
    const double thr = items[i].score;
    for (; i < items.size() && items[i].score == thr; ++i) (items[i].positive ? tp : fp) += 1;
    c.points.push_back({thr, fp / nn, tp / np});
  }
  for (std::size_t i = 1; i < c.points.size(); ++i) {
    const auto& a = c.points[i - 1];
    const auto& b = c.points[i];
    c.auc += (b.fpr - a.fpr) * (a.tpr + b.tpr) / 2;
  }
  return c;
}

}  // namespace sqens
