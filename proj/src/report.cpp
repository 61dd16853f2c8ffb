#include "selora/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "selora/eval.hpp"
#include "selora/stats.hpp"
#include "selora/svg.hpp"
#include "selora/trainer.hpp"

namespace selora {

namespace {

const char* kBenches[3] = {"mmlu", "math", "code"};

std::string g6(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string f1(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.1f", v);
  return buf;
}

std::string f3(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

std::string f4(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::string seed_tag(const std::string& model, uint64_t seed) {
  return model + " seed " + std::to_string(seed);
}

double bench_of(const RunRecord& rec, const std::string& name) {
  if (name == "mmlu") return rec.bench_mmlu;
  if (name == "math") return rec.bench_math;
  return rec.bench_code;
}

// Models in first-appearance order, mirroring how the campaign wrote them.
std::vector<std::string> model_order(const Ledger& ledger) {
  std::vector<std::string> order;
  for (const RunRecord& rec : ledger)
    if (std::find(order.begin(), order.end(), rec.model) == order.end())
      order.push_back(rec.model);
  return order;
}

const RunRecord* find_rec(const Ledger& ledger, const std::string& model,
                          const std::string& recipe, uint64_t seed) {
  for (const RunRecord& rec : ledger)
    if (rec.model == model && rec.recipe == recipe && rec.seed == seed) return &rec;
  return nullptr;
}

std::vector<uint64_t> seeds_of(const Ledger& ledger, const std::string& model) {
  std::vector<uint64_t> seeds;
  for (const RunRecord& rec : ledger)
    if (rec.model == model && std::find(seeds.begin(), seeds.end(), rec.seed) == seeds.end())
      seeds.push_back(rec.seed);
  return seeds;
}

// mean_sd needs two values; a single measurement still deserves a row.
SummaryStat summary_or_single(const std::vector<double>& v) {
  if (v.size() >= 2) return mean_sd(v);
  SummaryStat s;
  s.n = int(v.size());
  s.mean = v.empty() ? 0.0 : v[0];
  s.ci95_low = s.ci95_high = s.mean;
  return s;
}

SpeedupRow make_row(const std::string& name, const std::vector<SpeedupPair>& pairs) {
  SpeedupRow row;
  row.model = name;
  row.n = int(pairs.size());
  std::vector<double> pcts, std_t, ale_t;
  std::vector<std::string> labels;
  for (const SpeedupPair& p : pairs) {
    pcts.push_back(p.percent);
    std_t.push_back(p.std_time_s);
    ale_t.push_back(p.ale_time_s);
    labels.push_back(seed_tag(p.model, p.seed));
  }
  const SummaryStat st = summary_or_single(pcts);
  row.mean_pct = st.mean;
  row.sd_pct = st.sd;
  row.ci_half = st.ci95_high - st.mean;

  double std_mean = 0.0, ale_mean = 0.0;
  for (double v : std_t) std_mean += v;
  for (double v : ale_t) ale_mean += v;
  std_mean /= double(pairs.size());
  ale_mean /= double(pairs.size());
  row.ratio = measure_speedup(std_mean, ale_mean).ratio;

  if (pairs.size() >= 2) {
    const TTestResult tt = paired_t_test({labels, std_t, ale_t});
    row.t = tt.t;
    row.p = tt.p_two_sided;
    row.cohens_d = tt.cohens_d;
    row.degenerate = tt.degenerate;
  } else {
    row.degenerate = true;
    row.t = row.p = row.cohens_d = std::nan("");
  }
  return row;
}

std::string p_text(const SpeedupRow& row) {
  return row.degenerate ? "n/a" : f4(row.p);
}

std::string d_text(const SpeedupRow& row) {
  return row.degenerate ? "n/a" : f3(row.cohens_d);
}

void write_file(const std::string& dir, const std::string& name, const std::string& body,
                ReportOutput* out) {
  std::ofstream f(std::filesystem::path(dir) / name, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + name + " under " + dir);
  f << body;
  out->files.push_back(name);
}

}  // namespace

PairSet collect_pairs(const Ledger& ledger) {
  PairSet out;
  for (const std::string& model : model_order(ledger))
    for (uint64_t seed : seeds_of(ledger, model)) {
      const RunRecord* s = find_rec(ledger, model, "standard", seed);
      const RunRecord* a = find_rec(ledger, model, "aletheia", seed);
      if (!s && !a) continue;  // base-only or cm-only cell, nothing to pair
      const std::string tag = seed_tag(model, seed);
      if (!s || !a) {
        out.warnings.push_back(tag + ": unpaired " + std::string(s ? "standard" : "aletheia") +
                               " record excluded");
        continue;
      }
      if (s->status != "ok" || a->status != "ok") {
        out.warnings.push_back(tag + ": failed run excluded (" +
                               (s->status != "ok" ? s->failure_reason : a->failure_reason) + ")");
        continue;
      }
      if (s->steps != a->steps) {
        out.warnings.push_back(tag + ": step mismatch excluded");
        continue;
      }
      SpeedupPair pair;
      pair.model = model;
      pair.seed = seed;
      pair.std_time_s = s->train_time_s;
      pair.ale_time_s = a->train_time_s;
      pair.percent = measure_speedup(s->train_time_s, a->train_time_s).percent;
      out.pairs.push_back(pair);
    }
  return out;
}

SpeedupTable speedup_table(const Ledger& ledger) {
  const PairSet set = collect_pairs(ledger);
  SpeedupTable table;
  table.warnings = set.warnings;

  std::vector<std::string> models;
  for (const SpeedupPair& p : set.pairs)
    if (std::find(models.begin(), models.end(), p.model) == models.end())
      models.push_back(p.model);
  for (const std::string& model : models) {
    std::vector<SpeedupPair> own;
    for (const SpeedupPair& p : set.pairs)
      if (p.model == model) own.push_back(p);
    table.per_model.push_back(make_row(model, own));
  }
  if (!set.pairs.empty()) table.overall = make_row("overall", set.pairs);
  return table;
}

RenderedTable render_speedup_table(const Ledger& ledger) {
  const SpeedupTable table = speedup_table(ledger);
  RenderedTable out;

  out.markdown = "| Model | Pairs | Speedup % | Ratio | p | Cohen's d |\n";
  out.markdown += "|---|---|---|---|---|---|\n";
  std::vector<SpeedupRow> rows = table.per_model;
  if (table.overall.n > 0) rows.push_back(table.overall);
  for (const SpeedupRow& row : rows)
    out.markdown += "| " + row.model + " | " + std::to_string(row.n) + " | " + f1(row.mean_pct) +
                    " ± " + f1(row.sd_pct) + " | " + f3(row.ratio) + " | " + p_text(row) + " | " +
                    d_text(row) + " |\n";

  out.csv = "model,n_pairs,mean_speedup_pct,sd_speedup_pct,ci95_half_pct,ratio,t,p_two_sided,"
            "cohens_d,degenerate\n";
  for (const SpeedupRow& row : rows)
    out.csv += row.model + "," + std::to_string(row.n) + "," + g6(row.mean_pct) + "," +
               g6(row.sd_pct) + "," + g6(row.ci_half) + "," + g6(row.ratio) + "," + g6(row.t) +
               "," + g6(row.p) + "," + g6(row.cohens_d) + "," + (row.degenerate ? "1" : "0") +
               "\n";
  return out;
}

std::vector<ForgettingRow> forgetting_rows(const Ledger& ledger,
                                           std::vector<std::string>* warnings) {
  std::vector<ForgettingRow> rows;
  for (const std::string& model : model_order(ledger)) {
    // Per benchmark, gather one (std delta, ale delta) pair per usable seed.
    std::vector<double> base[3], std_d[3], ale_d[3], extra[3];
    for (uint64_t seed : seeds_of(ledger, model)) {
      const RunRecord* b = find_rec(ledger, model, "base", seed);
      const RunRecord* s = find_rec(ledger, model, "standard", seed);
      const RunRecord* a = find_rec(ledger, model, "aletheia", seed);
      if (!b && !s && !a) continue;
      if (!b || b->status != "ok") {
        if (s || a)
          if (warnings)
            warnings->push_back(seed_tag(model, seed) + ": no base snapshot, forgetting skipped");
        continue;
      }
      if (!s || !a || s->status != "ok" || a->status != "ok") {
        if (warnings)
          warnings->push_back(seed_tag(model, seed) + ": incomplete pair, forgetting skipped");
        continue;
      }
      for (int i = 0; i < 3; ++i) {
        const BenchmarkScore base_score{kBenches[i], bench_of(*b, kBenches[i]), 0};
        const BenchmarkScore std_score{kBenches[i], bench_of(*s, kBenches[i]), 0};
        const BenchmarkScore ale_score{kBenches[i], bench_of(*a, kBenches[i]), 0};
        const ForgettingDelta fd_std = forgetting_delta(base_score, std_score);
        const ForgettingDelta fd_ale = forgetting_delta(base_score, ale_score);
        base[i].push_back(base_score.accuracy);
        std_d[i].push_back(fd_std.delta_pp);
        ale_d[i].push_back(fd_ale.delta_pp);
        extra[i].push_back(extra_forgetting(fd_std, fd_ale));
      }
    }
    for (int i = 0; i < 3; ++i) {
      if (base[i].empty()) continue;
      ForgettingRow row;
      row.model = model;
      row.benchmark = kBenches[i];
      row.n = int(base[i].size());
      row.base_acc = summary_or_single(base[i]).mean;
      row.std_delta_pp = summary_or_single(std_d[i]).mean;
      row.ale_delta_pp = summary_or_single(ale_d[i]).mean;
      row.extra_pp = summary_or_single(extra[i]).mean;
      rows.push_back(row);
    }
  }
  return rows;
}

RenderedTable render_forgetting_table(const Ledger& ledger) {
  std::vector<std::string> warnings;
  const std::vector<ForgettingRow> rows = forgetting_rows(ledger, &warnings);
  RenderedTable out;
  out.markdown = "| Model | Benchmark | Seeds | Base acc | Standard delta pp | Aletheia delta pp "
                 "| Extra pp |\n|---|---|---|---|---|---|---|\n";
  out.csv = "model,benchmark,n_seeds,base_acc,std_delta_pp,ale_delta_pp,extra_pp\n";
  for (const ForgettingRow& row : rows) {
    out.markdown += "| " + row.model + " | " + row.benchmark + " | " + std::to_string(row.n) +
                    " | " + f3(row.base_acc) + " | " + f1(row.std_delta_pp) + " | " +
                    f1(row.ale_delta_pp) + " | " + f1(row.extra_pp) + " |\n";
    out.csv += row.model + "," + row.benchmark + "," + std::to_string(row.n) + "," +
               g6(row.base_acc) + "," + g6(row.std_delta_pp) + "," + g6(row.ale_delta_pp) + "," +
               g6(row.extra_pp) + "\n";
  }
  return out;
}

std::vector<CmRow> cm_rows(const Ledger& ledger, std::vector<std::string>* warnings) {
  std::vector<CmRow> rows;
  for (const std::string& model : model_order(ledger)) {
    std::vector<double> std_l, ale_l, cm_l;
    for (uint64_t seed : seeds_of(ledger, model)) {
      const RunRecord* c = find_rec(ledger, model, "aletheia_cm", seed);
      if (!c) continue;
      const RunRecord* s = find_rec(ledger, model, "standard", seed);
      const RunRecord* a = find_rec(ledger, model, "aletheia", seed);
      if (c->status != "ok" || !s || !a || s->status != "ok" || a->status != "ok") {
        if (warnings)
          warnings->push_back(seed_tag(model, seed) + ": incomplete compute-matched trio skipped");
        continue;
      }
      std_l.push_back(s->eval_loss);
      ale_l.push_back(a->eval_loss);
      cm_l.push_back(c->eval_loss);
    }
    if (std_l.empty()) continue;
    CmRow row;
    row.model = model;
    row.n = int(std_l.size());
    row.std_loss = summary_or_single(std_l).mean;
    row.ale_loss = summary_or_single(ale_l).mean;
    row.cm_loss = summary_or_single(cm_l).mean;
    rows.push_back(row);
  }
  return rows;
}

ReportOutput generate_report(const ReportSpec& spec) {
  const Ledger ledger = ledger_load(spec.ledger_path);
  std::filesystem::create_directories(spec.out_dir);
  ReportOutput out;

  const SpeedupTable table = speedup_table(ledger);
  for (const std::string& w : table.warnings) out.warnings.push_back(w);
  const RenderedTable speedup = render_speedup_table(ledger);
  const RenderedTable forgetting = render_forgetting_table(ledger);
  std::vector<std::string> cm_warn;
  const std::vector<CmRow> cm = cm_rows(ledger, &cm_warn);

  write_file(spec.out_dir, "speedup.csv", speedup.csv, &out);
  write_file(spec.out_dir, "forgetting.csv", forgetting.csv, &out);

  // Figures, each skipped with a warning when its statistics are missing.
  if (spec.speedup_bars) {
    if (table.per_model.empty()) {
      out.warnings.push_back("speedup_bars skipped: no complete pairs");
    } else {
      BarChartSpec chart;
      chart.title = "Per-model training speedup";
      chart.y_label = "speedup %";
      for (const SpeedupRow& row : table.per_model)
        chart.bars.push_back({row.model, row.mean_pct, row.ci_half, row.n >= 2});
      write_file(spec.out_dir, "speedup_bars.svg", render_bar_chart(chart), &out);
    }
  }
  if (spec.family_bars) {
    const PairSet set = collect_pairs(ledger);
    std::vector<std::string> families;
    std::vector<std::vector<SpeedupPair>> grouped;
    for (const SpeedupPair& p : set.pairs) {
      const auto it = spec.family_of.find(p.model);
      const std::string family = it == spec.family_of.end() ? p.model : it->second;
      const auto at = std::find(families.begin(), families.end(), family);
      if (at == families.end()) {
        families.push_back(family);
        grouped.push_back({p});
      } else {
        grouped[size_t(at - families.begin())].push_back(p);
      }
    }
    if (families.empty()) {
      out.warnings.push_back("family_bars skipped: no complete pairs");
    } else {
      BarChartSpec chart;
      chart.title = "Speedup by model family";
      chart.y_label = "speedup %";
      for (size_t i = 0; i < families.size(); ++i) {
        const SpeedupRow row = make_row(families[i], grouped[i]);
        chart.bars.push_back({row.model, row.mean_pct, row.ci_half, row.n >= 2});
      }
      write_file(spec.out_dir, "family_bars.svg", render_bar_chart(chart), &out);
    }
  }
  std::vector<ForgettingRow> fr = forgetting_rows(ledger, nullptr);
  if (spec.benchmark_deltas) {
    if (fr.empty()) {
      out.warnings.push_back("benchmark_deltas skipped: no forgetting data");
    } else {
      GroupedBarSpec chart;
      chart.title = "Benchmark change after fine-tuning";
      chart.y_label = "delta pp";
      chart.series = {"standard", "aletheia"};
      for (const char* bench : kBenches) {
        std::vector<double> sd, ad;
        for (const ForgettingRow& row : fr)
          if (row.benchmark == bench) {
            sd.push_back(row.std_delta_pp);
            ad.push_back(row.ale_delta_pp);
          }
        if (sd.empty()) continue;
        double sm = 0.0, am = 0.0;
        for (double v : sd) sm += v;
        for (double v : ad) am += v;
        chart.groups.push_back({bench, {sm / double(sd.size()), am / double(ad.size())}});
      }
      write_file(spec.out_dir, "benchmark_deltas.svg", render_grouped_bars(chart), &out);
    }
  }
  if (spec.tradeoff_scatter) {
    // One point per model: mean speedup against mean extra forgetting on
    // the knowledge suite, whiskers from the per-seed spreads.
    ScatterSpec chart;
    chart.title = "Speedup against extra forgetting";
    chart.x_label = "speedup %";
    chart.y_label = "extra forgetting pp (mmlu)";
    const PairSet set = collect_pairs(ledger);
    for (const SpeedupRow& row : table.per_model) {
      std::vector<double> extras;
      for (uint64_t seed : seeds_of(ledger, row.model)) {
        const RunRecord* b = find_rec(ledger, row.model, "base", seed);
        const RunRecord* s = find_rec(ledger, row.model, "standard", seed);
        const RunRecord* a = find_rec(ledger, row.model, "aletheia", seed);
        if (!b || !s || !a || b->status != "ok" || s->status != "ok" || a->status != "ok")
          continue;
        const BenchmarkScore base_score{"mmlu", b->bench_mmlu, 0};
        extras.push_back(extra_forgetting(forgetting_delta(base_score, {"mmlu", s->bench_mmlu, 0}),
                                          forgetting_delta(base_score, {"mmlu", a->bench_mmlu, 0})));
      }
      if (extras.empty()) continue;
      const SummaryStat ey = summary_or_single(extras);
      ScatterPoint pt;
      pt.label = row.model;
      pt.x = row.mean_pct;
      pt.y = ey.mean;
      pt.x_ci_half = row.ci_half;
      pt.has_x_ci = row.n >= 2;
      pt.y_ci_half = ey.ci95_high - ey.mean;
      pt.has_y_ci = ey.n >= 2;
      chart.points.push_back(pt);
    }
    if (chart.points.empty())
      out.warnings.push_back("tradeoff_scatter skipped: needs both speedup and forgetting data");
    else
      write_file(spec.out_dir, "tradeoff_scatter.svg", render_scatter(chart), &out);
  }

  std::string md = "# Selective-layer fine-tuning results\n\n";
  md += "## Training speedup\n\n" + speedup.markdown + "\n";
  md += "## Benchmark forgetting\n\n" + forgetting.markdown + "\n";
  if (!cm.empty()) {
    md += "## Compute-matched eval loss\n\n";
    md += "| Model | Seeds | Standard | Aletheia | Aletheia CM |\n|---|---|---|---|---|\n";
    for (const CmRow& row : cm)
      md += "| " + row.model + " | " + std::to_string(row.n) + " | " + f4(row.std_loss) + " | " +
            f4(row.ale_loss) + " | " + f4(row.cm_loss) + " |\n";
    md += "\n";
  }
  for (const std::string& w : cm_warn) out.warnings.push_back(w);
  if (!out.warnings.empty()) {
    md += "## Warnings\n\n";
    for (const std::string& w : out.warnings) md += "- " + w + "\n";
    md += "\n";
  }
  write_file(spec.out_dir, "summary.md", md, &out);
  return out;
}

}  // namespace selora
