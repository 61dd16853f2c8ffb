#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "selora/ledger.hpp"

namespace selora {

struct ReportSpec {
  std::string ledger_path;
  std::string out_dir;
  bool speedup_bars{true};
  bool family_bars{true};
  bool benchmark_deltas{true};
  bool tradeoff_scatter{true};
  // Optional grouping for the family figure: model name to family label.
  // Models not listed form a family of their own.
  std::map<std::string, std::string> family_of;
};

// One matched pair of finished runs from the same (model, seed).
struct SpeedupPair {
  std::string model;
  uint64_t seed{0};
  double std_time_s{0.0};
  double ale_time_s{0.0};
  double percent{0.0};
};

struct PairSet {
  std::vector<SpeedupPair> pairs;
  std::vector<std::string> warnings;  // one line per dropped record
};

// Matches ok standard and aletheia records by (model, seed); anything
// unpaired, failed, or step-mismatched becomes a warning, never a silent
// drop.
PairSet collect_pairs(const Ledger& ledger);

struct SpeedupRow {
  std::string model;  // "overall" on the aggregate row
  int n{0};
  double mean_pct{0.0};
  double sd_pct{0.0};
  double ci_half{0.0};  // 95 percent, zero when n < 2
  double ratio{0.0};    // from mean times
  double t{0.0};
  double p{0.0};
  double cohens_d{0.0};
  bool degenerate{false};  // too few pairs or zero-variance differences
};

struct SpeedupTable {
  std::vector<SpeedupRow> per_model;  // models in ledger order
  SpeedupRow overall;                 // unweighted over every pair
  std::vector<std::string> warnings;
};

SpeedupTable speedup_table(const Ledger& ledger);

struct RenderedTable {
  std::string markdown;
  std::string csv;
};

RenderedTable render_speedup_table(const Ledger& ledger);

// Per model and benchmark: seed-mean base accuracy, both recipes' accuracy
// changes in percentage points, and their gap (positive = aletheia ahead).
struct ForgettingRow {
  std::string model;
  std::string benchmark;
  int n{0};
  double base_acc{0.0};
  double std_delta_pp{0.0};
  double ale_delta_pp{0.0};
  double extra_pp{0.0};
};

std::vector<ForgettingRow> forgetting_rows(const Ledger& ledger,
                                           std::vector<std::string>* warnings);

RenderedTable render_forgetting_table(const Ledger& ledger);

// Seed-mean eval losses for models that ran the compute-matched recipe.
struct CmRow {
  std::string model;
  int n{0};
  double std_loss{0.0};
  double ale_loss{0.0};
  double cm_loss{0.0};
};

std::vector<CmRow> cm_rows(const Ledger& ledger, std::vector<std::string>* warnings);

struct ReportOutput {
  std::vector<std::string> files;  // names written under out_dir
  std::vector<std::string> warnings;
};

// Loads the ledger, writes summary.md plus the CSV tables, and renders the
// toggled figures. A figure whose statistics cannot be computed is skipped
// with a warning. Everything written is a pure function of the ledger
// bytes.
ReportOutput generate_report(const ReportSpec& spec);

}  // namespace selora
