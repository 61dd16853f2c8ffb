#include "selora/ledger.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace selora {

namespace {

constexpr const char* kHeader =
    "model,recipe,seed,steps,probe_time_s,train_time_s,eval_loss,bench_mmlu,bench_math,"
    "bench_code,selected_layers,trainable_params,status,failure_reason";

std::string format_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

std::string join_layers(const std::vector<int>& layers) {
  std::string out;
  for (size_t i = 0; i < layers.size(); ++i) {
    if (i) out += ';';
    out += std::to_string(layers[i]);
  }
  return out;
}

std::vector<int> split_layers(const std::string& s, const std::string& where) {
  std::vector<int> out;
  if (s.empty()) return out;
  size_t start = 0;
  while (start <= s.size()) {
    const size_t semi = s.find(';', start);
    const std::string part = s.substr(start, semi == std::string::npos ? semi : semi - start);
    try {
      size_t used = 0;
      out.push_back(std::stoi(part, &used));
      if (used != part.size()) throw std::invalid_argument(part);
    } catch (const std::exception&) {
      throw std::runtime_error(where + ": bad selected_layers entry '" + part + "'");
    }
    if (semi == std::string::npos) break;
    start = semi + 1;
  }
  return out;
}

// Splits one CSV line honoring double-quoted fields with "" escapes.
std::vector<std::string> split_csv(const std::string& line, const std::string& where) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      if (!cur.empty()) throw std::runtime_error(where + ": stray quote mid-field");
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (quoted) throw std::runtime_error(where + ": unterminated quoted field");
  fields.push_back(std::move(cur));
  return fields;
}

double parse_real(const std::string& s, const std::string& where, const char* field) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size() || s.empty())
    throw std::runtime_error(where + ": bad " + field + " value '" + s + "'");
  return v;
}

int64_t parse_int(const std::string& s, const std::string& where, const char* field) {
  try {
    size_t used = 0;
    const int64_t v = std::stoll(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error(where + ": bad " + field + " value '" + s + "'");
  }
}

uint64_t parse_uint(const std::string& s, const std::string& where, const char* field) {
  try {
    size_t used = 0;
    const uint64_t v = std::stoull(s, &used);
    if (used != s.size() || s.empty() || s[0] == '-') throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error(where + ": bad " + field + " value '" + s + "'");
  }
}

std::string format_row(const RunRecord& r) {
  std::ostringstream out;
  out << csv_escape(r.model) << ',' << csv_escape(r.recipe) << ',' << r.seed << ',' << r.steps
      << ',' << format_real(r.probe_time_s) << ',' << format_real(r.train_time_s) << ','
      << format_real(r.eval_loss) << ',' << format_real(r.bench_mmlu) << ','
      << format_real(r.bench_math) << ',' << format_real(r.bench_code) << ','
      << join_layers(r.selected_layers) << ',' << r.trainable_params << ','
      << csv_escape(r.status) << ',' << csv_escape(r.failure_reason);
  return out.str();
}

}  // namespace

std::string record_key(const RunRecord& rec) {
  return rec.model + "/" + rec.recipe + "/" + std::to_string(rec.seed);
}

void validate(const RunRecord& rec) {
  if (rec.model.empty()) throw std::invalid_argument("run record: empty model name");
  if (rec.recipe.empty()) throw std::invalid_argument("run record: empty recipe");
  if (rec.status != "ok" && rec.status != "failed")
    throw std::invalid_argument("run record: status must be ok or failed, got '" + rec.status +
                                "'");
  if (rec.status == "failed" && rec.failure_reason.empty())
    throw std::invalid_argument("run record: failed without a failure_reason");
  if (rec.steps < 0) throw std::invalid_argument("run record: negative steps");
  // rows are one line each; multi-line text cannot round-trip
  for (const std::string* s : {&rec.model, &rec.recipe, &rec.failure_reason})
    if (s->find_first_of("\n\r") != std::string::npos)
      throw std::invalid_argument("run record: embedded line break in text field");
}

void ledger_append(const std::string& path, const RunRecord& rec) {
  validate(rec);
  const bool exists = std::filesystem::exists(path);
  if (exists) {
    for (const RunRecord& prior : ledger_load(path))
      if (record_key(prior) == record_key(rec))
        throw std::invalid_argument("ledger_append: duplicate key " + record_key(rec));
  }
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw std::runtime_error("cannot open ledger for append: " + path);
  if (!exists) out << kHeader << '\n';
  out << format_row(rec) << '\n';
  out.flush();
  if (!out) throw std::runtime_error("ledger write failed: " + path);
}

Ledger ledger_load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open ledger: " + path);

  std::string line;
  int lineno = 0;
  auto next_line = [&]() {
    if (!std::getline(in, line)) return false;
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return true;
  };

  if (!next_line()) throw std::runtime_error(path + ":1: missing header row");
  if (line != kHeader)
    throw std::runtime_error(path + ":1: unexpected header '" + line + "'");

  Ledger ledger;
  while (next_line()) {
    if (line.empty()) continue;
    const std::string where = path + ":" + std::to_string(lineno);
    const std::vector<std::string> f = split_csv(line, where);
    if (f.size() != 14)
      throw std::runtime_error(where + ": expected 14 fields, got " + std::to_string(f.size()));
    RunRecord r;
    r.model = f[0];
    r.recipe = f[1];
    r.seed = parse_uint(f[2], where, "seed");
    r.steps = int(parse_int(f[3], where, "steps"));
    r.probe_time_s = parse_real(f[4], where, "probe_time_s");
    r.train_time_s = parse_real(f[5], where, "train_time_s");
    r.eval_loss = parse_real(f[6], where, "eval_loss");
    r.bench_mmlu = parse_real(f[7], where, "bench_mmlu");
    r.bench_math = parse_real(f[8], where, "bench_math");
    r.bench_code = parse_real(f[9], where, "bench_code");
    r.selected_layers = split_layers(f[10], where);
    r.trainable_params = parse_int(f[11], where, "trainable_params");
    r.status = f[12];
    r.failure_reason = f[13];
    try {
      validate(r);
    } catch (const std::invalid_argument& e) {
      throw std::runtime_error(where + ": " + e.what());
    }
    ledger.push_back(std::move(r));
  }
  return ledger;
}

bool ledger_contains(const std::string& path, const RunRecord& rec) {
  if (!std::filesystem::exists(path)) return false;
  for (const RunRecord& prior : ledger_load(path))
    if (record_key(prior) == record_key(rec)) return true;
  return false;
}

}  // namespace selora
