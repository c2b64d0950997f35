#pragma once

// Result emission: AIP rows, CSV tables and a bare-bones SVG scatter.

#include <iosfwd>
#include <string>
#include <vector>

#include "sqens/attacks.hpp"
#include "sqens/detector.hpp"

namespace sqens {

/// One point of the adversarial information plane.
struct AipRow {
  AttackKind attack = AttackKind::fgm;
  int strength_index = 1;  // 1, 2, ... per attack kind, in order of appearance
  double epsilon = 0;
  double accuracy = 0;
  double mean_mi = 0;
  double clean_mi = 0;
};

std::vector<AipRow> aip_rows(const AttackReport& report);

/// Shortest text that reads back to the same double.
std::string format_double(double v);

inline constexpr const char* kAipHeader = "attack,strength_index,epsilon,accuracy,mean_mi,clean_mi";
inline constexpr const char* kRocHeader = "threshold,fpr,tpr";

void write_aip_header(std::ostream& os);
void write_aip_row(std::ostream& os, const AipRow& row);
void write_aip_csv(std::ostream& os, const std::vector<AipRow>& rows);
/// Parses what write_aip_csv emits; throws config errors on schema mismatch.
std::vector<AipRow> read_aip_csv(std::istream& is);

void write_roc_csv(std::ostream& os, const RocCurve& curve);

/// Accuracy (y) against mean MI (x), one polyline per attack kind, points
/// labelled with their strength index; the clean MI is drawn as a dashed line.
std::string aip_svg(const std::vector<AipRow>& rows, const std::string& title = "");

}  // namespace sqens
