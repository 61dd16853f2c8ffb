#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace selora {

// One experiment cell. Failed runs stay in the ledger with a reason; they
// are excluded from statistics but still counted in totals.
struct RunRecord {
  std::string model;
  std::string recipe;  // standard | aletheia | aletheia_cm | search arm name
  uint64_t seed = 0;
  int steps = 0;
  double probe_time_s = 0.0;
  double train_time_s = 0.0;
  double eval_loss = 0.0;
  double bench_mmlu = 0.0;
  double bench_math = 0.0;
  double bench_code = 0.0;
  std::vector<int> selected_layers;
  int64_t trainable_params = 0;
  std::string status = "ok";  // ok | failed
  std::string failure_reason;
};

using Ledger = std::vector<RunRecord>;

// (model, recipe, seed) identifies a cell; appends with a key already in
// the file are rejected.
std::string record_key(const RunRecord& rec);

// Throws std::invalid_argument when structurally invalid (empty model or
// recipe, unknown status, failed without a reason).
void validate(const RunRecord& rec);

// Durable append to a CSV ledger: creates the file with its header when
// absent, writes one row, flushes before returning. Reals are printed with
// 6 significant digits; selected_layers joins with ';'.
void ledger_append(const std::string& path, const RunRecord& rec);

// Parses a whole ledger back. Malformed input throws std::runtime_error
// naming the path and 1-based line number.
Ledger ledger_load(const std::string& path);

// True when the file already holds a record with this key.
bool ledger_contains(const std::string& path, const RunRecord& rec);

}  // namespace selora
