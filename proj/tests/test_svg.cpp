#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include "selora/svg.hpp"

using namespace selora;

namespace {

// All tags of one class, in document order.
std::vector<std::string> tags_of(const std::string& svg, const std::string& cls) {
  std::vector<std::string> out;
  const std::string needle = "class=\"" + cls + "\"";
  size_t at = 0;
  while ((at = svg.find(needle, at)) != std::string::npos) {
    const size_t open = svg.rfind('<', at);
    const size_t close = svg.find('>', at);
    out.push_back(svg.substr(open, close - open + 1));
    at = close;
  }
  return out;
}

double attr(const std::string& tag, const std::string& name) {
  const std::string needle = name + "=\"";
  const size_t at = tag.find(needle);
  REQUIRE(at != std::string::npos);
  return std::stod(tag.substr(at + needle.size()));
}

BarChartSpec three_bars() {
  BarChartSpec spec;
  spec.title = "speedup";
  spec.y_label = "percent";
  spec.bars = {{"a", 2.0, 0.0, false}, {"b", 1.0, 0.0, false}, {"c", 4.0, 0.0, false}};
  return spec;
}

}  // namespace

TEST_CASE("identical specs render byte-identical documents") {
  const std::string one = render_bar_chart(three_bars());
  const std::string two = render_bar_chart(three_bars());
  CHECK(one == two);
  CHECK(one.rfind("<svg ", 0) == 0);
  CHECK(one.substr(one.size() - 7) == "</svg>\n");

  GroupedBarSpec g;
  g.title = "deltas";
  g.series = {"standard", "aletheia"};
  g.groups = {{"mmlu", {-1.0, -2.0}}, {"math", {0.5, 0.25}}};
  CHECK(render_grouped_bars(g) == render_grouped_bars(g));

  ScatterSpec s;
  s.points = {{"m", 20.0, -1.0, 3.0, 0.5, true, true}};
  CHECK(render_scatter(s) == render_scatter(s));
}

TEST_CASE("bar heights are proportional to their values") {
  const std::string svg = render_bar_chart(three_bars());
  const std::vector<std::string> bars = tags_of(svg, "bar");
  REQUIRE(bars.size() == 3);
  const double h0 = attr(bars[0], "height");
  const double h1 = attr(bars[1], "height");
  const double h2 = attr(bars[2], "height");
  CHECK(h0 / h1 == doctest::Approx(2.0).epsilon(0.02));
  CHECK(h2 / h0 == doctest::Approx(2.0).epsilon(0.02));

  // All three positive, so every bar stands on the same baseline.
  const double base0 = attr(bars[0], "y") + h0;
  CHECK(attr(bars[1], "y") + h1 == doctest::Approx(base0).epsilon(0.001));
  CHECK(attr(bars[2], "y") + h2 == doctest::Approx(base0).epsilon(0.001));
}

TEST_CASE("negative bars hang below the shared baseline") {
  BarChartSpec spec;
  spec.bars = {{"up", 3.0, 0.0, false}, {"down", -2.0, 0.0, false}};
  const std::string svg = render_bar_chart(spec);
  const std::vector<std::string> bars = tags_of(svg, "bar");
  REQUIRE(bars.size() == 2);
  const double base = attr(bars[0], "y") + attr(bars[0], "height");
  CHECK(attr(bars[1], "y") == doctest::Approx(base).epsilon(0.001));
  CHECK(attr(bars[1], "height") / attr(bars[0], "height") ==
        doctest::Approx(2.0 / 3.0).epsilon(0.02));
}

TEST_CASE("whisker span equals twice the interval half-width") {
  BarChartSpec spec;
  spec.bars = {{"a", 10.0, 3.0, true}, {"b", 6.0, 1.0, true}, {"c", 2.0, 0.0, false}};
  const std::string svg = render_bar_chart(spec);
  const std::vector<std::string> bars = tags_of(svg, "bar");
  const std::vector<std::string> whiskers = tags_of(svg, "whisker");
  const std::vector<std::string> caps = tags_of(svg, "whiskercap");
  REQUIRE(bars.size() == 3);
  REQUIRE(whiskers.size() == 2);  // the ci-free bar draws none
  CHECK(caps.size() == 4);

  const double px_per_unit = attr(bars[0], "height") / 10.0;
  const double span0 = std::fabs(attr(whiskers[0], "y2") - attr(whiskers[0], "y1"));
  const double span1 = std::fabs(attr(whiskers[1], "y2") - attr(whiskers[1], "y1"));
  CHECK(span0 == doctest::Approx(2.0 * 3.0 * px_per_unit).epsilon(0.02));
  CHECK(span1 == doctest::Approx(2.0 * 1.0 * px_per_unit).epsilon(0.02));

  // Whiskers sit on their bar's horizontal center.
  const double cx0 = attr(bars[0], "x") + attr(bars[0], "width") / 2.0;
  CHECK(attr(whiskers[0], "x1") == doctest::Approx(cx0).epsilon(0.001));
}

TEST_CASE("labels are escaped for markup") {
  BarChartSpec spec;
  spec.bars = {{"a<b&c", 1.0, 0.0, false}};
  const std::string svg = render_bar_chart(spec);
  CHECK(svg.find("a&lt;b&amp;c") != std::string::npos);
  CHECK(svg.find("a<b") == std::string::npos);
}

TEST_CASE("grouped bars draw one rect per group and series") {
  GroupedBarSpec spec;
  spec.series = {"standard", "aletheia"};
  spec.groups = {{"mmlu", {-1.2, -0.7}}, {"math", {-0.4, 0.1}}, {"code", {0.3, 0.2}}};
  const std::string svg = render_grouped_bars(spec);
  CHECK(tags_of(svg, "bar").size() == 6);
  CHECK(tags_of(svg, "legend").size() == 2);
  CHECK(svg.find(">standard</text>") != std::string::npos);

  GroupedBarSpec bad = spec;
  bad.groups[1].values.pop_back();
  CHECK_THROWS_AS(render_grouped_bars(bad), std::invalid_argument);
}

TEST_CASE("scatter positions follow the linear axis map") {
  ScatterSpec spec;
  spec.points = {{"p1", 10.0, 1.0, 0, 0, false, false},
                 {"p2", 20.0, 2.0, 0, 0, false, false},
                 {"p3", 40.0, 4.0, 0, 0, false, false}};
  const std::string svg = render_scatter(spec);
  const std::vector<std::string> pts = tags_of(svg, "point");
  REQUIRE(pts.size() == 3);
  const double x1 = attr(pts[0], "cx"), x2 = attr(pts[1], "cx"), x3 = attr(pts[2], "cx");
  CHECK((x2 - x1) / (x3 - x1) == doctest::Approx(10.0 / 30.0).epsilon(0.02));
  const double y1 = attr(pts[0], "cy"), y2 = attr(pts[1], "cy"), y3 = attr(pts[2], "cy");
  CHECK((y2 - y1) / (y3 - y1) == doctest::Approx(10.0 / 30.0).epsilon(0.02));

  ScatterSpec with_ci;
  with_ci.points = {{"m", 20.0, -1.0, 3.0, 0.5, true, true}};
  const std::string svg2 = render_scatter(with_ci);
  CHECK(tags_of(svg2, "whisker").size() == 2);  // one horizontal, one vertical
}

TEST_CASE("degenerate and malformed chart inputs are rejected") {
  BarChartSpec empty;
  CHECK_THROWS_AS(render_bar_chart(empty), std::invalid_argument);

  BarChartSpec nan_bar;
  nan_bar.bars = {{"x", std::nan(""), 0.0, false}};
  CHECK_THROWS_AS(render_bar_chart(nan_bar), std::invalid_argument);

  ScatterSpec none;
  CHECK_THROWS_AS(render_scatter(none), std::invalid_argument);

  // A flat all-zero chart still renders with a nonempty axis.
  BarChartSpec flat;
  flat.bars = {{"z", 0.0, 0.0, false}};
  CHECK(render_bar_chart(flat).find("</svg>") != std::string::npos);
}
