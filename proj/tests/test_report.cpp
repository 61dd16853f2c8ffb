#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "selora/report.hpp"
#include "selora/stats.hpp"
#include "selora/trainer.hpp"

using namespace selora;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const char* tag) {
    path = fs::temp_directory_path() / (std::string("selora_report_") + tag);
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
};

RunRecord rec(const std::string& model, const std::string& recipe, uint64_t seed, int steps,
              double train_t, double eval, double mmlu, double math, double code) {
  RunRecord r;
  r.model = model;
  r.recipe = recipe;
  r.seed = seed;
  r.steps = steps;
  r.train_time_s = train_t;
  r.eval_loss = eval;
  r.bench_mmlu = mmlu;
  r.bench_math = math;
  r.bench_code = code;
  r.selected_layers = {0, 1};
  r.trainable_params = 1000;
  return r;
}

// Three seeds of a perfectly regular model: 200s standard, 150s aletheia,
// identical benchmark scores everywhere.
Ledger flat_ledger() {
  Ledger led;
  for (uint64_t seed : {1, 2, 3}) {
    led.push_back(rec("m1", "base", seed, 0, 0.0, 4.16, 0.30, 0.25, 0.20));
    led.push_back(rec("m1", "standard", seed, 200, 200.0, 1.50, 0.28, 0.24, 0.20));
    led.push_back(rec("m1", "aletheia", seed, 200, 150.0, 1.55, 0.29, 0.25, 0.21));
  }
  return led;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

void write_ledger(const Ledger& led, const std::string& path) {
  for (const RunRecord& r : led) ledger_append(path, r);
}

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

std::string g6(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

}  // namespace

TEST_CASE("zero-variance ledger reproduces the exact speedup row") {
  const SpeedupTable table = speedup_table(flat_ledger());
  REQUIRE(table.per_model.size() == 1);
  const SpeedupRow& row = table.per_model[0];
  CHECK(row.model == "m1");
  CHECK(row.n == 3);
  CHECK(row.mean_pct == doctest::Approx(25.0).epsilon(1e-12));
  CHECK(row.sd_pct == doctest::Approx(0.0));
  CHECK(row.ratio == doctest::Approx(200.0 / 150.0).epsilon(1e-12));
  CHECK(row.degenerate);  // zero-variance differences have no t statistic
  CHECK(table.overall.mean_pct == doctest::Approx(25.0).epsilon(1e-12));
  CHECK(table.warnings.empty());

  Ledger equal;
  for (uint64_t seed : {1, 2}) {
    equal.push_back(rec("m1", "standard", seed, 100, 80.0, 1.5, 0, 0, 0));
    equal.push_back(rec("m1", "aletheia", seed, 100, 80.0, 1.5, 0, 0, 0));
  }
  const SpeedupTable zero = speedup_table(equal);
  REQUIRE(zero.per_model.size() == 1);
  CHECK(zero.per_model[0].mean_pct == doctest::Approx(0.0));
  CHECK(zero.per_model[0].degenerate);
}

TEST_CASE("the overall row is the unweighted mean over all pairs") {
  Ledger led = flat_ledger();
  for (uint64_t seed : {1, 2, 3}) {
    led.push_back(rec("m2", "standard", seed, 200, 100.0, 1.4, 0.3, 0.3, 0.3));
    led.push_back(rec("m2", "aletheia", seed, 200, 90.0, 1.4, 0.3, 0.3, 0.3));
  }
  const SpeedupTable table = speedup_table(led);
  REQUIRE(table.per_model.size() == 2);
  CHECK(table.per_model[0].model == "m1");  // ledger order, not alphabetical
  CHECK(table.per_model[1].model == "m2");
  CHECK(table.per_model[1].mean_pct == doctest::Approx(10.0).epsilon(1e-12));
  CHECK(table.overall.n == 6);
  CHECK(table.overall.mean_pct == doctest::Approx((3 * 25.0 + 3 * 10.0) / 6.0).epsilon(1e-12));
}

TEST_CASE("statistics columns match the stats module recomputation") {
  Ledger led;
  const double std_t[3] = {200.0, 210.0, 190.0};
  const double ale_t[3] = {150.0, 140.0, 160.0};
  for (int i = 0; i < 3; ++i) {
    led.push_back(rec("m1", "standard", uint64_t(i + 1), 200, std_t[i], 1.5, 0, 0, 0));
    led.push_back(rec("m1", "aletheia", uint64_t(i + 1), 200, ale_t[i], 1.5, 0, 0, 0));
  }
  const SpeedupTable table = speedup_table(led);
  const SpeedupRow& row = table.per_model.at(0);

  std::vector<double> pcts;
  for (int i = 0; i < 3; ++i) pcts.push_back(measure_speedup(std_t[i], ale_t[i]).percent);
  const SummaryStat st = mean_sd(pcts);
  CHECK(row.mean_pct == st.mean);
  CHECK(row.sd_pct == st.sd);
  CHECK(row.ci_half == st.ci95_high - st.mean);

  const TTestResult tt = paired_t_test({{}, {std_t[0], std_t[1], std_t[2]},
                                        {ale_t[0], ale_t[1], ale_t[2]}});
  CHECK(row.t == tt.t);
  CHECK(row.p == tt.p_two_sided);
  CHECK(row.cohens_d == tt.cohens_d);
  CHECK(!row.degenerate);
  CHECK(row.p < 0.05);  // large, consistent gap
}

TEST_CASE("unpaired and failed records turn into warnings, not numbers") {
  Ledger led = flat_ledger();
  led.push_back(rec("m1", "standard", 9, 200, 180.0, 1.5, 0, 0, 0));  // no aletheia mate
  RunRecord bad_s = rec("m2", "standard", 1, 200, 170.0, 1.5, 0, 0, 0);
  bad_s.status = "failed";
  bad_s.failure_reason = "training diverged";
  led.push_back(bad_s);
  led.push_back(rec("m2", "aletheia", 1, 200, 130.0, 1.5, 0, 0, 0));
  led.push_back(rec("m3", "standard", 1, 200, 100.0, 1.5, 0, 0, 0));
  led.push_back(rec("m3", "aletheia", 1, 150, 80.0, 1.5, 0, 0, 0));  // step mismatch

  const SpeedupTable table = speedup_table(led);
  REQUIRE(table.per_model.size() == 1);  // only m1's three clean pairs survive
  CHECK(table.per_model[0].n == 3);
  REQUIRE(table.warnings.size() == 3);
  CHECK(table.warnings[0].find("m1 seed 9") != std::string::npos);
  CHECK(table.warnings[0].find("unpaired") != std::string::npos);
  CHECK(table.warnings[1].find("failed run excluded") != std::string::npos);
  CHECK(table.warnings[2].find("step mismatch") != std::string::npos);
}

TEST_CASE("forgetting rows recompute the delta arithmetic per benchmark") {
  const Ledger led = flat_ledger();
  std::vector<std::string> warnings;
  const std::vector<ForgettingRow> rows = forgetting_rows(led, &warnings);
  REQUIRE(rows.size() == 3);
  CHECK(warnings.empty());

  const ForgettingRow& mmlu = rows[0];
  CHECK(mmlu.benchmark == "mmlu");
  CHECK(mmlu.n == 3);
  CHECK(mmlu.base_acc == doctest::Approx(0.30).epsilon(1e-12));
  CHECK(mmlu.std_delta_pp == doctest::Approx(100.0 * (0.28 - 0.30)).epsilon(1e-9));
  CHECK(mmlu.ale_delta_pp == doctest::Approx(100.0 * (0.29 - 0.30)).epsilon(1e-9));
  CHECK(mmlu.extra_pp == doctest::Approx(mmlu.ale_delta_pp - mmlu.std_delta_pp).epsilon(1e-9));

  const ForgettingRow& code = rows[2];
  CHECK(code.benchmark == "code");
  CHECK(code.std_delta_pp == doctest::Approx(0.0));
  CHECK(code.ale_delta_pp == doctest::Approx(1.0).epsilon(1e-9));

  Ledger no_base;
  no_base.push_back(rec("m1", "standard", 1, 200, 200.0, 1.5, 0.3, 0.3, 0.3));
  no_base.push_back(rec("m1", "aletheia", 1, 200, 150.0, 1.5, 0.3, 0.3, 0.3));
  warnings.clear();
  CHECK(forgetting_rows(no_base, &warnings).empty());
  REQUIRE(warnings.size() == 1);
  CHECK(warnings[0].find("no base snapshot") != std::string::npos);
}

TEST_CASE("compute-matched rows appear only for complete trios") {
  Ledger led = flat_ledger();
  led.push_back(rec("m1", "aletheia_cm", 1, 250, 190.0, 1.48, 0.29, 0.25, 0.21));
  led.push_back(rec("m1", "aletheia_cm", 2, 250, 195.0, 1.46, 0.29, 0.25, 0.21));
  std::vector<std::string> warnings;
  const std::vector<CmRow> rows = cm_rows(led, &warnings);
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].n == 2);  // seed 3 never ran the cm recipe
  CHECK(rows[0].std_loss == doctest::Approx(1.50).epsilon(1e-12));
  CHECK(rows[0].ale_loss == doctest::Approx(1.55).epsilon(1e-12));
  CHECK(rows[0].cm_loss == doctest::Approx(1.47).epsilon(1e-9));
  CHECK(warnings.empty());
}

TEST_CASE("generate_report writes deterministic artifacts") {
  TempDir work("artifacts");
  const std::string ledger_path = (work.path / "runs.csv").string();
  write_ledger(flat_ledger(), ledger_path);

  ReportSpec spec;
  spec.ledger_path = ledger_path;
  spec.out_dir = (work.path / "rpt").string();
  const ReportOutput out = generate_report(spec);

  for (const char* name : {"summary.md", "speedup.csv", "forgetting.csv", "speedup_bars.svg",
                           "family_bars.svg", "benchmark_deltas.svg", "tradeoff_scatter.svg"}) {
    CAPTURE(name);
    CHECK(fs::exists(fs::path(spec.out_dir) / name));
    CHECK(std::find(out.files.begin(), out.files.end(), name) != out.files.end());
  }
  CHECK(out.warnings.empty());
  const std::string md = slurp(fs::path(spec.out_dir) / "summary.md");
  CHECK(md.find("## Training speedup") != std::string::npos);
  CHECK(md.find("## Warnings") == std::string::npos);
  CHECK(md.find("25.0 ± 0.0") != std::string::npos);

  // Same ledger bytes, second directory: every artifact byte-identical.
  ReportSpec again = spec;
  again.out_dir = (work.path / "rpt2").string();
  generate_report(again);
  for (const char* name : {"summary.md", "speedup_bars.svg", "family_bars.svg",
                           "benchmark_deltas.svg", "tradeoff_scatter.svg", "speedup.csv"}) {
    CAPTURE(name);
    CHECK(slurp(fs::path(spec.out_dir) / name) == slurp(fs::path(again.out_dir) / name));
  }

  // The CSV parses back to exactly what the stats module recomputes.
  const std::string csv = slurp(fs::path(spec.out_dir) / "speedup.csv");
  std::istringstream lines(csv);
  std::string header, row1;
  std::getline(lines, header);
  std::getline(lines, row1);
  CHECK(header.rfind("model,n_pairs,mean_speedup_pct", 0) == 0);
  const SpeedupTable table = speedup_table(ledger_load(ledger_path));
  std::istringstream cells(row1);
  std::string cell;
  std::getline(cells, cell, ',');
  CHECK(cell == "m1");
  std::getline(cells, cell, ',');
  CHECK(cell == "3");
  std::getline(cells, cell, ',');
  CHECK(cell == g6(table.per_model[0].mean_pct));
  std::getline(cells, cell, ',');
  CHECK(cell == g6(table.per_model[0].sd_pct));
}

TEST_CASE("figure whiskers carry the stats module confidence interval") {
  TempDir work("whisker");
  const std::string ledger_path = (work.path / "runs.csv").string();
  Ledger led;
  const double std_t[3] = {200.0, 210.0, 190.0};
  const double ale_t[3] = {150.0, 140.0, 160.0};
  for (int i = 0; i < 3; ++i) {
    led.push_back(rec("m1", "standard", uint64_t(i + 1), 200, std_t[i], 1.5, 0, 0, 0));
    led.push_back(rec("m1", "aletheia", uint64_t(i + 1), 200, ale_t[i], 1.5, 0, 0, 0));
  }
  write_ledger(led, ledger_path);

  ReportSpec spec;
  spec.ledger_path = ledger_path;
  spec.out_dir = (work.path / "rpt").string();
  spec.benchmark_deltas = false;
  spec.tradeoff_scatter = false;
  generate_report(spec);

  const std::string svg = slurp(fs::path(spec.out_dir) / "speedup_bars.svg");
  const std::vector<std::string> bars = tags_of(svg, "bar");
  const std::vector<std::string> whiskers = tags_of(svg, "whisker");
  REQUIRE(bars.size() == 1);
  REQUIRE(whiskers.size() == 1);

  std::vector<double> pcts;
  for (int i = 0; i < 3; ++i) pcts.push_back(measure_speedup(std_t[i], ale_t[i]).percent);
  const SummaryStat st = mean_sd(pcts);
  const double ci_half = st.ci95_high - st.mean;

  const double px_per_unit = attr(bars[0], "height") / st.mean;
  const double span = std::fabs(attr(whiskers[0], "y2") - attr(whiskers[0], "y1"));
  CHECK(span == doctest::Approx(2.0 * ci_half * px_per_unit).epsilon(0.02));
}

TEST_CASE("families pool their models into one bar") {
  TempDir work("family");
  const std::string ledger_path = (work.path / "runs.csv").string();
  Ledger led = flat_ledger();
  for (uint64_t seed : {1, 2, 3}) {
    led.push_back(rec("m2", "standard", seed, 200, 100.0, 1.4, 0.3, 0.3, 0.3));
    led.push_back(rec("m2", "aletheia", seed, 200, 90.0, 1.4, 0.3, 0.3, 0.3));
  }
  write_ledger(led, ledger_path);

  ReportSpec spec;
  spec.ledger_path = ledger_path;
  spec.out_dir = (work.path / "rpt").string();
  spec.family_of = {{"m1", "tier-a"}, {"m2", "tier-a"}};
  spec.benchmark_deltas = false;
  spec.tradeoff_scatter = false;
  generate_report(spec);

  const std::string svg = slurp(fs::path(spec.out_dir) / "family_bars.svg");
  CHECK(tags_of(svg, "bar").size() == 1);
  CHECK(svg.find(">tier-a</text>") != std::string::npos);
  CHECK(tags_of(slurp(fs::path(spec.out_dir) / "speedup_bars.svg"), "bar").size() == 2);
}

TEST_CASE("missing statistics skip figures with a warning") {
  TempDir work("skips");
  const std::string ledger_path = (work.path / "runs.csv").string();
  Ledger led;  // pairs but no base rows: forgetting figures cannot be drawn
  for (uint64_t seed : {1, 2}) {
    led.push_back(rec("m1", "standard", seed, 200, 200.0, 1.5, 0.3, 0.3, 0.3));
    led.push_back(rec("m1", "aletheia", seed, 200, 150.0, 1.5, 0.3, 0.3, 0.3));
  }
  write_ledger(led, ledger_path);

  ReportSpec spec;
  spec.ledger_path = ledger_path;
  spec.out_dir = (work.path / "rpt").string();
  const ReportOutput out = generate_report(spec);
  CHECK(fs::exists(fs::path(spec.out_dir) / "speedup_bars.svg"));
  CHECK(!fs::exists(fs::path(spec.out_dir) / "benchmark_deltas.svg"));
  CHECK(!fs::exists(fs::path(spec.out_dir) / "tradeoff_scatter.svg"));
  bool saw_bench = false, saw_scatter = false;
  for (const std::string& w : out.warnings) {
    saw_bench = saw_bench || w.find("benchmark_deltas skipped") != std::string::npos;
    saw_scatter = saw_scatter || w.find("tradeoff_scatter skipped") != std::string::npos;
  }
  CHECK(saw_bench);
  CHECK(saw_scatter);
  CHECK(slurp(fs::path(spec.out_dir) / "summary.md").find("## Warnings") != std::string::npos);

  ReportSpec missing = spec;
  missing.ledger_path = (work.path / "nope.csv").string();
  CHECK_THROWS_AS(generate_report(missing), std::runtime_error);
}
