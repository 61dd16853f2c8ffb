#include "selora/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace selora {

namespace {

constexpr double kW = 640.0, kH = 400.0;
constexpr double kLeft = 62.0, kRight = 18.0, kTop = 42.0, kBottom = 58.0;
constexpr double kPlotW = kW - kLeft - kRight;
constexpr double kPlotH = kH - kTop - kBottom;

const char* kPalette[4] = {"#4878cf", "#ee854a", "#6acc65", "#d65f5f"};

std::string f2(double v) {
  // Avoid the two distinct zeros: -0.00 and 0.00 must print alike.
  if (std::fabs(v) < 0.005) v = 0.0;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string esc(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '&')
      out += "&amp;";
    else if (c == '<')
      out += "&lt;";
    else if (c == '>')
      out += "&gt;";
    else
      out += c;
  }
  return out;
}

void need_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw std::invalid_argument(std::string(what) + " must be finite");
}

// Tick spacing of 1, 2 or 5 times a power of ten, aiming for about five
// intervals across the range.
double nice_step(double range) {
  const double raw = range / 5.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  const double unit = raw / mag;
  if (unit <= 1.0) return mag;
  if (unit <= 2.0) return 2.0 * mag;
  if (unit <= 5.0) return 5.0 * mag;
  return 10.0 * mag;
}

struct Axis {
  double lo, hi;
  double step;
  double span() const { return hi - lo; }
};

Axis make_axis(double lo, double hi, bool include_zero) {
  if (include_zero) {
    lo = std::min(lo, 0.0);
    hi = std::max(hi, 0.0);
  }
  if (hi - lo < 1e-12) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double pad = 0.05 * (hi - lo);
  if (lo < 0.0 || !include_zero) lo -= pad;
  if (hi > 0.0 || !include_zero) hi += pad;
  return {lo, hi, nice_step(hi - lo)};
}

std::string header() {
  return "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 640 400\" "
         "font-family=\"sans-serif\">\n";
}

std::string title_text(const std::string& title) {
  return "<text class=\"title\" x=\"" + f2(kW / 2) +
         "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\" fill=\"#333\">" + esc(title) +
         "</text>\n";
}

std::string y_axis_label(const std::string& label) {
  if (label.empty()) return "";
  return "<text class=\"ylabel\" x=\"16\" y=\"" + f2(kTop + kPlotH / 2) +
         "\" text-anchor=\"middle\" font-size=\"12\" fill=\"#333\" transform=\"rotate(-90 16 " +
         f2(kTop + kPlotH / 2) + ")\">" + esc(label) + "</text>\n";
}

std::string line(double x1, double y1, double x2, double y2, const char* cls,
                 const char* color = "#333", const char* width = "1") {
  return std::string("<line class=\"") + cls + "\" x1=\"" + f2(x1) + "\" y1=\"" + f2(y1) +
         "\" x2=\"" + f2(x2) + "\" y2=\"" + f2(y2) + "\" stroke=\"" + color + "\" stroke-width=\"" +
         width + "\"/>\n";
}

// Horizontal grid lines with value labels down the left edge.
std::string y_ticks(const Axis& ax) {
  std::string out;
  const double scale = kPlotH / ax.span();
  const double first = std::ceil(ax.lo / ax.step) * ax.step;
  for (double v = first; v <= ax.hi + 1e-9 * ax.span(); v += ax.step) {
    const double y = kTop + (ax.hi - v) * scale;
    out += line(kLeft, y, kLeft + kPlotW, y, "tick", "#ddd");
    out += "<text class=\"ticklabel\" x=\"" + f2(kLeft - 6) + "\" y=\"" + f2(y + 4) +
           "\" text-anchor=\"end\" font-size=\"11\" fill=\"#555\">" + f2(v) + "</text>\n";
  }
  return out;
}

std::string whisker_v(double cx, double y_lo, double y_hi) {
  std::string out = line(cx, y_lo, cx, y_hi, "whisker", "#222", "1.5");
  out += line(cx - 4, y_lo, cx + 4, y_lo, "whiskercap", "#222", "1.5");
  out += line(cx - 4, y_hi, cx + 4, y_hi, "whiskercap", "#222", "1.5");
  return out;
}

std::string bar_rect(double x, double w, double v, const Axis& ax, const char* color) {
  const double scale = kPlotH / ax.span();
  const double y0 = kTop + (ax.hi - 0.0) * scale;
  const double yv = kTop + (ax.hi - v) * scale;
  const double top = std::min(y0, yv);
  const double h = std::fabs(yv - y0);
  return "<rect class=\"bar\" x=\"" + f2(x) + "\" y=\"" + f2(top) + "\" width=\"" + f2(w) +
         "\" height=\"" + f2(h) + "\" fill=\"" + color + "\"/>\n";
}

std::string x_label(double cx, const std::string& text) {
  return "<text class=\"xlabel\" x=\"" + f2(cx) + "\" y=\"" + f2(kTop + kPlotH + 18) +
         "\" text-anchor=\"middle\" font-size=\"12\" fill=\"#333\">" + esc(text) + "</text>\n";
}

std::string frame(const Axis& ax) {
  const double scale = kPlotH / ax.span();
  const double y0 = kTop + (ax.hi - 0.0) * scale;
  std::string out = line(kLeft, kTop, kLeft, kTop + kPlotH, "axis");
  // The zero baseline doubles as the x axis when it is in view.
  if (y0 >= kTop - 1e-9 && y0 <= kTop + kPlotH + 1e-9)
    out += line(kLeft, y0, kLeft + kPlotW, y0, "axis");
  else
    out += line(kLeft, kTop + kPlotH, kLeft + kPlotW, kTop + kPlotH, "axis");
  return out;
}

}  // namespace

std::string render_bar_chart(const BarChartSpec& spec) {
  if (spec.bars.empty()) throw std::invalid_argument("bar chart needs at least one bar");
  double lo = 0.0, hi = 0.0;
  for (const BarDatum& b : spec.bars) {
    need_finite(b.value, "bar value");
    if (b.has_ci) need_finite(b.ci_half, "ci half-width");
    const double reach = b.has_ci ? std::fabs(b.ci_half) : 0.0;
    lo = std::min(lo, b.value - reach);
    hi = std::max(hi, b.value + reach);
  }
  const Axis ax = make_axis(lo, hi, true);
  const double scale = kPlotH / ax.span();

  std::string out = header();
  out += title_text(spec.title);
  out += y_axis_label(spec.y_label);
  out += y_ticks(ax);
  out += frame(ax);

  const double slot = kPlotW / double(spec.bars.size());
  for (size_t i = 0; i < spec.bars.size(); ++i) {
    const BarDatum& b = spec.bars[i];
    const double cx = kLeft + slot * (double(i) + 0.5);
    const double w = slot * 0.6;
    out += bar_rect(cx - w / 2, w, b.value, ax, kPalette[0]);
    if (b.has_ci)
      out += whisker_v(cx, kTop + (ax.hi - (b.value - b.ci_half)) * scale,
                       kTop + (ax.hi - (b.value + b.ci_half)) * scale);
    out += x_label(cx, b.label);
  }
  out += "</svg>\n";
  return out;
}

std::string render_grouped_bars(const GroupedBarSpec& spec) {
  if (spec.series.empty() || spec.groups.empty())
    throw std::invalid_argument("grouped bars need series and groups");
  if (spec.series.size() > 4) throw std::invalid_argument("at most 4 series");
  double lo = 0.0, hi = 0.0;
  for (const BarGroup& g : spec.groups) {
    if (g.values.size() != spec.series.size())
      throw std::invalid_argument("group '" + g.label + "' must hold one value per series");
    for (double v : g.values) {
      need_finite(v, "bar value");
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  const Axis ax = make_axis(lo, hi, true);

  std::string out = header();
  out += title_text(spec.title);
  out += y_axis_label(spec.y_label);
  out += y_ticks(ax);
  out += frame(ax);

  const size_t s = spec.series.size();
  const double slot = kPlotW / double(spec.groups.size());
  const double bw = slot * 0.8 / double(s);
  for (size_t gi = 0; gi < spec.groups.size(); ++gi) {
    const BarGroup& g = spec.groups[gi];
    const double left = kLeft + slot * double(gi) + slot * 0.1;
    for (size_t si = 0; si < s; ++si)
      out += bar_rect(left + bw * double(si), bw, g.values[si], ax, kPalette[si]);
    out += x_label(kLeft + slot * (double(gi) + 0.5), g.label);
  }
  for (size_t si = 0; si < s; ++si) {
    const double y = kTop + 6 + 16 * double(si);
    out += "<rect class=\"legend\" x=\"" + f2(kW - kRight - 96) + "\" y=\"" + f2(y) +
           "\" width=\"10\" height=\"10\" fill=\"" + kPalette[si] + "\"/>\n";
    out += "<text class=\"legendlabel\" x=\"" + f2(kW - kRight - 82) + "\" y=\"" + f2(y + 9) +
           "\" font-size=\"11\" fill=\"#333\">" + esc(spec.series[si]) + "</text>\n";
  }
  out += "</svg>\n";
  return out;
}

std::string render_scatter(const ScatterSpec& spec) {
  if (spec.points.empty()) throw std::invalid_argument("scatter needs at least one point");
  double xlo = spec.points[0].x, xhi = xlo, ylo = spec.points[0].y, yhi = ylo;
  for (const ScatterPoint& p : spec.points) {
    need_finite(p.x, "x");
    need_finite(p.y, "y");
    const double xr = p.has_x_ci ? std::fabs(p.x_ci_half) : 0.0;
    const double yr = p.has_y_ci ? std::fabs(p.y_ci_half) : 0.0;
    xlo = std::min(xlo, p.x - xr);
    xhi = std::max(xhi, p.x + xr);
    ylo = std::min(ylo, p.y - yr);
    yhi = std::max(yhi, p.y + yr);
  }
  const Axis xax = make_axis(xlo, xhi, false);
  const Axis yax = make_axis(ylo, yhi, false);
  const double xs = kPlotW / xax.span();
  const double ys = kPlotH / yax.span();
  const auto X = [&](double v) { return kLeft + (v - xax.lo) * xs; };
  const auto Y = [&](double v) { return kTop + (yax.hi - v) * ys; };

  std::string out = header();
  out += title_text(spec.title);
  out += y_axis_label(spec.y_label);
  out += y_ticks(yax);
  out += line(kLeft, kTop, kLeft, kTop + kPlotH, "axis");
  out += line(kLeft, kTop + kPlotH, kLeft + kPlotW, kTop + kPlotH, "axis");
  const double first = std::ceil(xax.lo / xax.step) * xax.step;
  for (double v = first; v <= xax.hi + 1e-9 * xax.span(); v += xax.step) {
    out += line(X(v), kTop + kPlotH, X(v), kTop + kPlotH + 4, "xtick");
    out += "<text class=\"xticklabel\" x=\"" + f2(X(v)) + "\" y=\"" + f2(kTop + kPlotH + 18) +
           "\" text-anchor=\"middle\" font-size=\"11\" fill=\"#555\">" + f2(v) + "</text>\n";
  }
  if (!spec.x_label.empty())
    out += "<text class=\"xaxislabel\" x=\"" + f2(kLeft + kPlotW / 2) + "\" y=\"" + f2(kH - 14) +
           "\" text-anchor=\"middle\" font-size=\"12\" fill=\"#333\">" + esc(spec.x_label) +
           "</text>\n";

  for (const ScatterPoint& p : spec.points) {
    if (p.has_x_ci)
      out += line(X(p.x - p.x_ci_half), Y(p.y), X(p.x + p.x_ci_half), Y(p.y), "whisker", "#222",
                  "1.5");
    if (p.has_y_ci)
      out += line(X(p.x), Y(p.y - p.y_ci_half), X(p.x), Y(p.y + p.y_ci_half), "whisker", "#222",
                  "1.5");
    out += "<circle class=\"point\" cx=\"" + f2(X(p.x)) + "\" cy=\"" + f2(Y(p.y)) +
           "\" r=\"4\" fill=\"" + kPalette[0] + "\"/>\n";
    if (!p.label.empty())
      out += "<text class=\"pointlabel\" x=\"" + f2(X(p.x) + 6) + "\" y=\"" + f2(Y(p.y) - 6) +
             "\" font-size=\"11\" fill=\"#333\">" + esc(p.label) + "</text>\n";
  }
  out += "</svg>\n";
  return out;
}

}  // namespace selora
