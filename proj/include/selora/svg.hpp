#pragma once

#include <string>
#include <vector>

namespace selora {

// Deterministic chart rendering: plain geometry, fixed two-decimal
// coordinates, no timestamps, no randomness. The same spec always yields
// the same bytes, and tests read values back out of the coordinates.

// One bar; the whisker spans value +- ci_half when has_ci is set.
struct BarDatum {
  std::string label;
  double value{0.0};
  double ci_half{0.0};
  bool has_ci{false};
};

struct BarChartSpec {
  std::string title;
  std::string y_label;
  std::vector<BarDatum> bars;
};

// Grouped chart: every group draws one bar per series, in series order.
struct BarGroup {
  std::string label;
  std::vector<double> values;
};

struct GroupedBarSpec {
  std::string title;
  std::string y_label;
  std::vector<std::string> series;
  std::vector<BarGroup> groups;
};

struct ScatterPoint {
  std::string label;
  double x{0.0};
  double y{0.0};
  double x_ci_half{0.0};
  double y_ci_half{0.0};
  bool has_x_ci{false};
  bool has_y_ci{false};
};

struct ScatterSpec {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<ScatterPoint> points;
};

// Each renderer returns a complete standalone SVG document. Inputs must be
// finite and non-empty; grouped bars additionally require every group to
// carry one value per series.
std::string render_bar_chart(const BarChartSpec& spec);
std::string render_grouped_bars(const GroupedBarSpec& spec);
std::string render_scatter(const ScatterSpec& spec);

}  // namespace selora
