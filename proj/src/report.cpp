#include "sqens/report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include "sqens/errors.hpp"

namespace sqens {

std::vector<AipRow> aip_rows(const AttackReport& report) {
  std::map<AttackKind, int> next;
  std::vector<AipRow> rows;
  for (const auto& r : report.rows) {
    AipRow a;
    a.attack = r.config.kind;
    a.strength_index = ++next[a.attack];
    a.epsilon = r.config.epsilon;
    a.accuracy = r.accuracy;
    a.mean_mi = r.mean_mi;
    a.clean_mi = report.clean_mi;
    rows.push_back(a);
  }
  return rows;
}

std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void write_aip_header(std::ostream& os) { os << kAipHeader << '\n'; }

void write_aip_row(std::ostream& os, const AipRow& r) {
  os << to_string(r.attack) << ',' << r.strength_index << ',' << format_double(r.epsilon) << ','
     << format_double(r.accuracy) << ',' << format_double(r.mean_mi) << ',' << format_double(r.clean_mi) << '\n';
}

void write_aip_csv(std::ostream& os, const std::vector<AipRow>& rows) {
  write_aip_header(os);
  for (const auto& r : rows) write_aip_row(os, r);
}

namespace {

double parse_double(const std::string& s) {
  double v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) fail(ErrorKind::config, "bad number '" + s + "' in CSV");
  return v;
}

}  // namespace

std::vector<AipRow> read_aip_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kAipHeader) fail(ErrorKind::config, "unexpected AIP CSV header");
  std::vector<AipRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() != 6) fail(ErrorKind::config, "AIP CSV rows need 6 fields");
    AipRow r;
    r.attack = attack_from_string(f[0]);
    r.strength_index = static_cast<int>(parse_double(f[1]));
    r.epsilon = parse_double(f[2]);
    r.accuracy = parse_double(f[3]);
    r.mean_mi = parse_double(f[4]);
    r.clean_mi = parse_double(f[5]);
    rows.push_back(r);
  }
  return rows;
}

void write_roc_csv(std::ostream& os, const RocCurve& curve) {
  os << kRocHeader << '\n';
  for (const auto& p : curve.points)
    os << (std::isinf(p.threshold) ? std::string("inf") : format_double(p.threshold)) << ','
       << format_double(p.fpr) << ',' << format_double(p.tpr) << '\n';
}

std::string aip_svg(const std::vector<AipRow>& rows, const std::string& title) {
  const double W = 640, H = 480, L = 70, R = 20, T = 40, B = 60;
  double x0 = INFINITY, x1 = -INFINITY;
  for (const auto& r : rows) {
    x0 = std::min({x0, r.mean_mi, r.clean_mi});
    x1 = std::max({x1, r.mean_mi, r.clean_mi});
  }
  if (rows.empty()) x0 = 0, x1 = 1;
  if (!(x1 > x0)) x0 -= 0.5 * std::max(std::abs(x0), 1e-3), x1 += 0.5 * std::max(std::abs(x1), 1e-3);
  const double pad = 0.05 * (x1 - x0);
  x0 -= pad;
  x1 += pad;
  auto px = [&](double v) { return L + (v - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double acc) { return T + (1 - acc) * (H - T - B); };

  std::ostringstream s;
  s.precision(6);
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  if (!title.empty()) s << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\">" << title << "</text>\n";
  s << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
    << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double acc = k / 4.0, mi = x0 + (x1 - x0) * k / 4.0;
    s << "<text x=\"" << L - 8 << "\" y=\"" << py(acc) + 4 << "\" text-anchor=\"end\">" << acc << "</text>\n";
    s << "<text x=\"" << px(mi) << "\" y=\"" << H - B + 18 << "\" text-anchor=\"middle\">" << mi << "</text>\n";
  }
  s << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 15 << "\" text-anchor=\"middle\">mean MI (nats)</text>\n";
  s << "<text x=\"18\" y=\"" << (T + H - B) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
    << (T + H - B) / 2 << ")\">accuracy</text>\n";
  if (!rows.empty())
    s << "<line x1=\"" << px(rows[0].clean_mi) << "\" y1=\"" << T << "\" x2=\"" << px(rows[0].clean_mi) << "\" y2=\""
      << H - B << "\" stroke=\"gray\" stroke-dasharray=\"4 4\"/>\n";

  const char* colors[] = {"#1f77b4", "#d62728"};
  for (AttackKind kind : {AttackKind::fgm, AttackKind::pgd}) {
    const char* c = colors[kind == AttackKind::fgm ? 0 : 1];
    std::string pts;
    for (const auto& r : rows)
      if (r.attack == kind) pts += std::to_string(px(r.mean_mi)) + "," + std::to_string(py(r.accuracy)) + " ";
    if (pts.empty()) continue;
    s << "<polyline fill=\"none\" stroke=\"" << c << "\" points=\"" << pts << "\"/>\n";
    for (const auto& r : rows) {
      if (r.attack != kind) continue;
      s << "<circle cx=\"" << px(r.mean_mi) << "\" cy=\"" << py(r.accuracy) << "\" r=\"4\" fill=\"" << c << "\"/>\n";
      s << "<text x=\"" << px(r.mean_mi) + 6 << "\" y=\"" << py(r.accuracy) - 6 << "\" fill=\"" << c << "\">"
        << r.strength_index << "</text>\n";
    }
    const double ly = T + 16 * (kind == AttackKind::fgm ? 0 : 1);
    s << "<text x=\"" << W - R - 10 << "\" y=\"" << ly + 12 << "\" text-anchor=\"end\" fill=\"" << c << "\">"
      << to_string(kind) << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

}  // namespace sqens
