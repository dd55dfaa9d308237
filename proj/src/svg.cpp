#include "prolix/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "prolix/errors.hpp"

namespace prolix {

namespace {

constexpr double kWidth = 640.0;
constexpr double kHeight = 400.0;
constexpr double kLeft = 64.0;
constexpr double kRight = 616.0;
constexpr double kTop = 48.0;
constexpr double kBottom = 352.0;

const char* kPalette[] = {"#2563eb", "#dc2626", "#059669", "#d97706", "#7c3aed", "#0891b2"};

std::string esc(const std::string& text) {
  std::string out;
  out.reserve(text.size());
  for (char c : text) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string num(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string tick_label(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

struct Range {
  double lo = 0.0, hi = 1.0;

  double place(double v, double a, double b) const {
    const double span = hi - lo;
    if (span <= 0.0) return (a + b) / 2.0;
    return a + (v - lo) / span * (b - a);
  }
};

Range padded(double lo, double hi) {
  if (!(hi > lo)) {
    const double bump = std::max(1.0, std::abs(lo)) * 0.5;
    return {lo - bump, hi + bump};
  }
  const double pad = (hi - lo) * 0.05;
  return {lo - pad, hi + pad};
}

std::vector<double> ticks(const Range& r, int want = 5) {
  const double span = r.hi - r.lo;
  const double raw = span / want;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double mult : {1.0, 2.0, 5.0, 10.0}) {
    if (mag * mult >= raw) {
      step = mag * mult;
      break;
    }
  }
  std::vector<double> out;
  double t = std::ceil(r.lo / step) * step;
  while (t <= r.hi + step * 1e-9) {
    out.push_back(std::abs(t) < step * 1e-9 ? 0.0 : t);
    t += step;
  }
  return out;
}

void open_doc(std::ostringstream& out, const std::string& title) {
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << (int)kWidth << "\" height=\""
      << (int)kHeight << "\" viewBox=\"0 0 " << (int)kWidth << " " << (int)kHeight << "\">\n";
  out << "<rect width=\"" << (int)kWidth << "\" height=\"" << (int)kHeight
      << "\" fill=\"#ffffff\"/>\n";
  out << "<text x=\"" << num(kWidth / 2) << "\" y=\"24\" text-anchor=\"middle\" "
      << "font-family=\"sans-serif\" font-size=\"16\" fill=\"#111827\">" << esc(title)
      << "</text>\n";
}

void axes(std::ostringstream& out, const std::string& x_label, const std::string& y_label,
          const Range& xr, const Range& yr, bool x_ticks) {
  out << "<line x1=\"" << num(kLeft) << "\" y1=\"" << num(kBottom) << "\" x2=\"" << num(kRight)
      << "\" y2=\"" << num(kBottom) << "\" stroke=\"#374151\"/>\n";
  out << "<line x1=\"" << num(kLeft) << "\" y1=\"" << num(kTop) << "\" x2=\"" << num(kLeft)
      << "\" y2=\"" << num(kBottom) << "\" stroke=\"#374151\"/>\n";
  for (double t : ticks(yr)) {
    const double y = yr.place(t, kBottom, kTop);
    out << "<line x1=\"" << num(kLeft - 4) << "\" y1=\"" << num(y) << "\" x2=\"" << num(kRight)
        << "\" y2=\"" << num(y) << "\" stroke=\"#e5e7eb\"/>\n";
    out << "<text x=\"" << num(kLeft - 8) << "\" y=\"" << num(y + 4)
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\" "
        << "fill=\"#374151\">" << tick_label(t) << "</text>\n";
  }
  if (x_ticks) {
    for (double t : ticks(xr)) {
      const double x = xr.place(t, kLeft, kRight);
      out << "<line x1=\"" << num(x) << "\" y1=\"" << num(kBottom) << "\" x2=\"" << num(x)
          << "\" y2=\"" << num(kBottom + 4) << "\" stroke=\"#374151\"/>\n";
      out << "<text x=\"" << num(x) << "\" y=\"" << num(kBottom + 18)
          << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\" "
          << "fill=\"#374151\">" << tick_label(t) << "</text>\n";
    }
  }
  out << "<text x=\"" << num((kLeft + kRight) / 2) << "\" y=\"" << num(kHeight - 8)
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" "
      << "fill=\"#111827\">" << esc(x_label) << "</text>\n";
  out << "<text x=\"16\" y=\"" << num((kTop + kBottom) / 2)
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" "
      << "fill=\"#111827\" transform=\"rotate(-90 16 " << num((kTop + kBottom) / 2) << ")\">"
      << esc(y_label) << "</text>\n";
}

}  // namespace

std::string line_chart_svg(const std::string& title, const std::string& x_label,
                           const std::string& y_label, const std::vector<ChartSeries>& series) {
  for (const auto& s : series) {
    if (s.xs.size() != s.ys.size()) {
      throw DimensionMismatchError("series '" + s.label + "' has " +
                                   std::to_string(s.xs.size()) + " xs but " +
                                   std::to_string(s.ys.size()) + " ys");
    }
  }
  std::vector<double> all_x, all_y;
  for (const auto& s : series) {
    all_x.insert(all_x.end(), s.xs.begin(), s.xs.end());
    all_y.insert(all_y.end(), s.ys.begin(), s.ys.end());
  }
  if (all_x.empty()) throw EmptyInputError("line chart needs at least one point");
  const auto [xlo_it, xhi_it] = std::minmax_element(all_x.begin(), all_x.end());
  const auto [ylo_it, yhi_it] = std::minmax_element(all_y.begin(), all_y.end());
  const double xlo = *xlo_it, xhi = *xhi_it, ylo = *ylo_it, yhi = *yhi_it;

  const Range xr = padded(xlo, xhi);
  const Range yr = padded(ylo, yhi);
  std::ostringstream out;
  open_doc(out, title);
  axes(out, x_label, y_label, xr, yr, true);

  std::size_t color = 0;
  for (const auto& s : series) {
    if (s.xs.empty()) continue;
    const char* stroke = kPalette[color % (sizeof(kPalette) / sizeof(kPalette[0]))];
    out << "<polyline fill=\"none\" stroke=\"" << stroke << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < s.xs.size(); ++i) {
      if (i) out << ' ';
      out << num(xr.place(s.xs[i], kLeft, kRight)) << ',' << num(yr.place(s.ys[i], kBottom, kTop));
    }
    out << "\"/>\n";
    if (!s.label.empty()) {
      const double ly = kTop + 14.0 * static_cast<double>(color);
      out << "<line x1=\"" << num(kRight - 120) << "\" y1=\"" << num(ly) << "\" x2=\""
          << num(kRight - 100) << "\" y2=\"" << num(ly) << "\" stroke=\"" << stroke
          << "\" stroke-width=\"1.5\"/>\n";
      out << "<text x=\"" << num(kRight - 94) << "\" y=\"" << num(ly + 4)
          << "\" font-family=\"sans-serif\" font-size=\"11\" fill=\"#374151\">" << esc(s.label)
          << "</text>\n";
    }
    ++color;
  }
  out << "</svg>\n";
  return out.str();
}

std::string bar_chart_svg(const std::string& title, const std::string& y_label,
                          const std::vector<std::string>& labels,
                          const std::vector<double>& values) {
  if (labels.size() != values.size()) {
    throw DimensionMismatchError("bar chart has " + std::to_string(labels.size()) +
                                 " labels but " + std::to_string(values.size()) + " values");
  }
  if (values.empty()) throw EmptyInputError("bar chart needs at least one bar");

  double lo = 0.0, hi = 0.0;
  for (double v : values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const Range yr = padded(lo, hi);
  std::ostringstream out;
  open_doc(out, title);
  axes(out, "", y_label, Range{0, 1}, yr, false);

  const double n = static_cast<double>(values.size());
  const double slot = (kRight - kLeft) / n;
  const double bar = slot * 0.6;
  const double zero = yr.place(0.0, kBottom, kTop);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double cx = kLeft + slot * (static_cast<double>(i) + 0.5);
    const double vy = yr.place(values[i], kBottom, kTop);
    const double top = std::min(vy, zero);
    const double height = std::abs(zero - vy);
    const char* fill = kPalette[i % (sizeof(kPalette) / sizeof(kPalette[0]))];
    out << "<rect x=\"" << num(cx - bar / 2) << "\" y=\"" << num(top) << "\" width=\"" << num(bar)
        << "\" height=\"" << num(height) << "\" fill=\"" << fill << "\"/>\n";
    out << "<text x=\"" << num(cx) << "\" y=\"" << num(top - 4)
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\" "
        << "fill=\"#374151\">" << tick_label(values[i]) << "</text>\n";
    out << "<text x=\"" << num(cx) << "\" y=\"" << num(kBottom + 18)
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\" "
        << "fill=\"#111827\">" << esc(labels[i]) << "</text>\n";
  }
  out << "</svg>\n";
  return out.str();
}

}  // namespace prolix
