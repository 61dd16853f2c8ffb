#include "selora/autoresearch.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "selora/eval.hpp"
#include "selora/probe.hpp"
#include "selora/trainer.hpp"

namespace selora {

namespace {

std::string fmt_g(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

std::string one_line(std::string text) {
  for (char& c : text)
    if (c == '\n' || c == '\r') c = ' ';
  return text.empty() ? "unknown error" : text;
}

// A stage file is JSONL: a header line naming the stage, then one run per
// line. Ablation lines carry their grid coordinates too.
struct StoredRun {
  ArmResult res;
  std::string config;
  double percent{0.0};
  double lr{0.0};
};

std::string run_line(const StoredRun& row, bool with_grid) {
  nlohmann::json j;
  j["arm"] = row.res.arm;
  if (with_grid) {
    j["config"] = row.config;
    j["select_percent"] = row.percent;
    j["lr"] = row.lr;
  }
  j["seed"] = row.res.seed;
  j["steps"] = row.res.steps;
  j["selected_layers"] = row.res.selected_layers;
  j["eval_loss"] = row.res.eval_loss;
  j["probe_time_s"] = row.res.probe_time_s;
  j["train_time_s"] = row.res.train_time_s;
  j["status"] = row.res.status;
  j["failure_reason"] = row.res.failure_reason;
  return j.dump();
}

void save_stage(const std::string& path, const std::string& stage,
                const std::vector<StoredRun>& rows, bool with_grid) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp);
    out << nlohmann::json{{"stage", stage}}.dump() << "\n";
    for (const StoredRun& row : rows) out << run_line(row, with_grid) << "\n";
  }
  // Written whole, then renamed: a crash mid-stage leaves no stage file and
  // the rerun recomputes the stage.
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw std::runtime_error("cannot move " + tmp + " into place");
}

bool load_stage(const std::string& path, const std::string& stage, bool with_grid,
                std::vector<StoredRun>* out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return false;
  std::string line;
  int line_no = 0;
  std::vector<StoredRun> rows;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object())
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": malformed stage line");
    if (line_no == 1) {
      if (j.value("stage", std::string()) != stage)
        throw std::runtime_error(path + ":1: expected a \"" + stage + "\" stage header");
      continue;
    }
    StoredRun row;
    try {
      row.res.arm = j.at("arm").get<std::string>();
      row.res.seed = j.at("seed").get<uint64_t>();
      row.res.steps = j.at("steps").get<int>();
      row.res.selected_layers = j.at("selected_layers").get<std::vector<int>>();
      row.res.eval_loss = j.at("eval_loss").get<double>();
      row.res.probe_time_s = j.at("probe_time_s").get<double>();
      row.res.train_time_s = j.at("train_time_s").get<double>();
      row.res.status = j.at("status").get<std::string>();
      row.res.failure_reason = j.at("failure_reason").get<std::string>();
      if (with_grid) {
        row.config = j.at("config").get<std::string>();
        row.percent = j.at("select_percent").get<double>();
        row.lr = j.at("lr").get<double>();
      }
    } catch (const nlohmann::json::exception&) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": malformed run line");
    }
    rows.push_back(std::move(row));
  }
  *out = std::move(rows);
  return true;
}

std::vector<StoredRun> wrap(const std::vector<ArmResult>& v) {
  std::vector<StoredRun> rows;
  rows.reserve(v.size());
  for (const ArmResult& r : v) rows.push_back({r, "", 0.0, 0.0});
  return rows;
}

std::vector<ArmResult> unwrap(const std::vector<StoredRun>& rows) {
  std::vector<ArmResult> v;
  v.reserve(rows.size());
  for (const StoredRun& row : rows) v.push_back(row.res);
  return v;
}

// Survivors first by eval loss; ties and failures keep their input order,
// which is itself deterministic.
void rank_results(std::vector<ArmResult>* v) {
  std::stable_sort(v->begin(), v->end(), [](const ArmResult& a, const ArmResult& b) {
    if (a.ok() != b.ok()) return a.ok();
    return a.ok() && a.eval_loss < b.eval_loss;
  });
}

int stage_steps(const RecipeArm& arm, int budget) { return arm.steps > 0 ? arm.steps : budget; }

// One training run from a fresh same-seed model. Percent arms pay for a
// probe on their own throwaway model first, mirroring how a recipe would
// run standalone. Divergence and unexpected exceptions both come back as
// failed results.
ArmResult run_arm(const RecipeArm& arm, uint64_t seed, int budget, const AutoResearchSpec& spec,
                  const ModelConfig& base_cfg, const Dataset& data) {
  ArmResult res;
  res.arm = arm.name;
  res.seed = seed;
  res.steps = stage_steps(arm, budget);
  try {
    ModelConfig cfg = base_cfg;
    cfg.seed = seed;

    LoraPlan plan;
    if (arm.select_percent) {
      TransformerModel probe_model(cfg);
      DataStream stream(data, seed, spec.micro_batch);
      std::vector<TokenBatch> batches;
      batches.reserve(size_t(spec.probe_batches));
      for (int i = 0; i < spec.probe_batches; ++i) batches.push_back(stream.batch(i));
      ProbeConfig pc;
      pc.n_batches = spec.probe_batches;
      pc.chunk_size = spec.probe_chunk > 0 ? spec.probe_chunk : cfg.n_layers;
      const auto t0 = std::chrono::steady_clock::now();
      const ProbeReport report = gradient_probe(probe_model, batches, pc);
      const auto t1 = std::chrono::steady_clock::now();
      res.probe_time_s = std::chrono::duration<double>(t1 - t0).count();
      SelectionConfig sel;
      sel.percent = *arm.select_percent;
      plan = build_plan(select_layers(report, sel, cfg.n_layers), arm.attn_rank, arm.mlp_rank,
                        spec.alpha);
    } else {
      plan = build_plan(*arm.layers, arm.attn_rank, arm.mlp_rank, spec.alpha);
    }
    res.selected_layers = plan.selected;

    TransformerModel model(cfg);
    model.inject_lora(plan);
    TrainConfig tc;
    tc.lr_max = arm.lr;
    tc.warmup_steps = std::min(spec.warmup_steps, res.steps - 1);
    tc.total_steps = res.steps;
    tc.grad_accum = spec.grad_accum;
    tc.seed = seed;
    DataStream stream(data, seed, spec.micro_batch);
    const RunResult rr = train(model, stream, tc);
    res.train_time_s = rr.wall_time_s;
    if (!rr.ok()) {
      res.status = "failed";
      res.failure_reason = "training diverged (non-finite loss by step " +
                           std::to_string(rr.step_losses.size()) + ")";
      return res;
    }
    res.eval_loss = eval_loss(model, data.eval_batches(spec.eval_batch));
  } catch (const std::exception& e) {
    res.status = "failed";
    res.failure_reason = one_line(e.what());
  }
  return res;
}

const RecipeArm& find_arm(const AutoResearchSpec& spec, const std::string& name) {
  for (const RecipeArm& arm : spec.arms)
    if (arm.name == name) return arm;
  throw std::runtime_error("leader '" + name +
                           "' is not among the spec arms; was out_dir produced by another spec?");
}

int scaled_rank(int rank, double scale) {
  return std::max(1, int(std::lround(double(rank) * scale)));
}

RecipeArm push_arm(const RecipeArm& leader, const PushVariation& var) {
  RecipeArm arm = leader;
  arm.name = leader.name + var.suffix;
  arm.attn_rank = scaled_rank(leader.attn_rank, var.attn_rank_scale);
  arm.mlp_rank = scaled_rank(leader.mlp_rank, var.mlp_rank_scale);
  arm.lr = leader.lr * var.lr_scale;
  arm.steps = 0;
  return arm;
}

std::string stage_file(const AutoResearchSpec& spec, const char* name) {
  return spec.out_dir + "/" + name;
}

struct GridCell {
  std::string config;
  double percent;
  double lr;
};

std::vector<GridCell> ablation_grid(const AutoResearchSpec& spec, const RecipeArm& leader) {
  std::vector<GridCell> grid;
  for (double pct : spec.ablation_percents)
    for (double scale : spec.ablation_lr_scales)
      grid.push_back({"sel" + fmt_g(pct) + "_x" + fmt_g(scale), pct, leader.lr * scale});
  return grid;
}

// Mean and spread over the surviving seeds of each cell, then the ranking
// the winner is read from: live cells by mean, spread breaking ties, dead
// cells last.
void summarize_cells(std::vector<AblationCell>* cells) {
  for (AblationCell& cell : *cells) {
    double sum = 0.0;
    cell.n_ok = 0;
    for (const ArmResult& r : cell.runs)
      if (r.ok()) {
        sum += r.eval_loss;
        ++cell.n_ok;
      }
    cell.mean_loss = cell.n_ok > 0 ? sum / cell.n_ok : 0.0;
    double ss = 0.0;
    for (const ArmResult& r : cell.runs)
      if (r.ok()) ss += (r.eval_loss - cell.mean_loss) * (r.eval_loss - cell.mean_loss);
    cell.sd_loss = cell.n_ok >= 2 ? std::sqrt(ss / (cell.n_ok - 1)) : 0.0;
  }
  std::stable_sort(cells->begin(), cells->end(), [](const AblationCell& a, const AblationCell& b) {
    if ((a.n_ok > 0) != (b.n_ok > 0)) return a.n_ok > 0;
    if (a.n_ok == 0) return false;
    if (a.mean_loss != b.mean_loss) return a.mean_loss < b.mean_loss;
    return a.sd_loss < b.sd_loss;
  });
}

void check_distinct_names(const std::vector<RecipeArm>& arms) {
  std::set<std::string> seen;
  for (const RecipeArm& arm : arms)
    if (!seen.insert(arm.name).second)
      throw std::invalid_argument("duplicate arm name '" + arm.name + "'");
}

}  // namespace

void validate(const RecipeArm& arm, int n_layers) {
  if (arm.name.empty()) throw std::invalid_argument("arm name must not be empty");
  const std::string tag = "arm '" + arm.name + "': ";
  if (arm.select_percent.has_value() == arm.layers.has_value())
    throw std::invalid_argument(tag + "set exactly one of select_percent or layers");
  if (arm.select_percent) {
    const double p = *arm.select_percent;
    if (!(p > 0.0 && p <= 100.0))
      throw std::invalid_argument(tag + "select_percent must be in (0, 100]");
  } else {
    if (arm.layers->empty()) throw std::invalid_argument(tag + "layer set must not be empty");
    int prev = -1;
    for (int l : *arm.layers) {
      if (l < 0 || l >= n_layers)
        throw std::invalid_argument(tag + "layer " + std::to_string(l) + " outside [0, " +
                                    std::to_string(n_layers) + ")");
      if (l <= prev) throw std::invalid_argument(tag + "layers must be strictly increasing");
      prev = l;
    }
  }
  if (arm.attn_rank < 1 || arm.mlp_rank < 1)
    throw std::invalid_argument(tag + "ranks must be at least 1");
  if (!(arm.lr > 0.0) || !std::isfinite(arm.lr))
    throw std::invalid_argument(tag + "lr must be positive and finite");
  if (arm.steps < 0) throw std::invalid_argument(tag + "steps must not be negative");
}

std::vector<RecipeArm> default_arms() {
  std::vector<RecipeArm> arms;
  for (double pct : {25.0, 50.0, 75.0, 100.0})
    for (double lr : {1e-4, 2e-4}) {
      RecipeArm arm;
      arm.name = "sel" + fmt_g(pct) + "_lr" + fmt_g(lr);
      arm.select_percent = pct;
      arm.lr = lr;
      arms.push_back(std::move(arm));
    }
  return arms;
}

std::vector<PushVariation> default_push_menu() {
  return {{"_attn2x", 2.0, 1.0, 1.0},
          {"_mlp2x", 1.0, 2.0, 1.0},
          {"_lr2x", 1.0, 1.0, 2.0},
          {"_lrhalf", 1.0, 1.0, 0.5}};
}

void validate(const AutoResearchSpec& spec, int n_layers) {
  if (spec.arms.size() != 8)
    throw std::invalid_argument("the quick scan takes exactly 8 arms, got " +
                                std::to_string(spec.arms.size()));
  check_distinct_names(spec.arms);
  for (const RecipeArm& arm : spec.arms) validate(arm, n_layers);
  if (spec.quick_steps < 1 || spec.full_steps < 1)
    throw std::invalid_argument("stage step budgets must be at least 1");
  if (spec.n_full < 1 || spec.n_full > int(spec.arms.size()))
    throw std::invalid_argument("n_full must be in [1, 8]");
  if (spec.n_push < 0 || spec.n_push > int(spec.push_menu.size()))
    throw std::invalid_argument("n_push must be in [0, push_menu size]");
  for (const PushVariation& var : spec.push_menu) {
    if (var.suffix.empty()) throw std::invalid_argument("push suffix must not be empty");
    if (!(var.attn_rank_scale > 0.0) || !(var.mlp_rank_scale > 0.0) || !(var.lr_scale > 0.0))
      throw std::invalid_argument("push scales must be positive");
  }
  if (spec.ablation_seeds.empty()) throw std::invalid_argument("ablation needs at least one seed");
  if (std::set<uint64_t>(spec.ablation_seeds.begin(), spec.ablation_seeds.end()).size() !=
      spec.ablation_seeds.size())
    throw std::invalid_argument("ablation seeds must be distinct");
  for (double p : spec.ablation_percents)
    if (!(p > 0.0 && p <= 100.0))
      throw std::invalid_argument("ablation percents must be in (0, 100]");
  if (std::set<double>(spec.ablation_percents.begin(), spec.ablation_percents.end()).size() !=
      spec.ablation_percents.size())
    throw std::invalid_argument("ablation percents must be distinct");
  for (double s : spec.ablation_lr_scales)
    if (!(s > 0.0) || !std::isfinite(s))
      throw std::invalid_argument("ablation lr scales must be positive and finite");
  if (std::set<double>(spec.ablation_lr_scales.begin(), spec.ablation_lr_scales.end()).size() !=
      spec.ablation_lr_scales.size())
    throw std::invalid_argument("ablation lr scales must be distinct");
  if (spec.ablation_percents.size() * spec.ablation_lr_scales.size() != 12)
    throw std::invalid_argument("the ablation grid must hold 12 configurations");
  if (spec.max_stage < 1 || spec.max_stage > 4)
    throw std::invalid_argument("max_stage must be in [1, 4]");
  if (spec.micro_batch < 1 || spec.grad_accum < 1 || spec.eval_batch < 1 ||
      spec.probe_batches < 1)
    throw std::invalid_argument("batch and probe counts must be at least 1");
  if (spec.probe_chunk < 0) throw std::invalid_argument("probe_chunk must not be negative");
  if (spec.warmup_steps < 0) throw std::invalid_argument("warmup_steps must not be negative");
  if (!(spec.alpha > 0.0)) throw std::invalid_argument("alpha must be positive");
}

AutoResearchReport run_autoresearch(const AutoResearchSpec& spec, const ModelConfig& model_config) {
  validate(model_config);
  validate(spec, model_config.n_layers);
  const Dataset data = Dataset::generate(spec.data, model_config.vocab_size);
  const bool persist = !spec.out_dir.empty();

  AutoResearchReport rep;
  std::vector<StoredRun> rows;

  // Stage 1: every arm at the quick budget, one seed.
  const std::string p1 = persist ? stage_file(spec, "stage1_quick.jsonl") : "";
  if (persist && load_stage(p1, "quick", false, &rows)) {
    rep.quick = unwrap(rows);
    rep.stages_loaded.push_back("quick");
  } else {
    for (const RecipeArm& arm : spec.arms)
      rep.quick.push_back(run_arm(arm, spec.search_seed, spec.quick_steps, spec, model_config, data));
    rank_results(&rep.quick);
    if (persist) save_stage(p1, "quick", wrap(rep.quick), false);
  }
  if (spec.max_stage < 2) {
    rep.summary = "stopped after stage 1 (quick)";
    return rep;
  }

  for (const ArmResult& r : rep.quick)
    if (r.ok() && int(rep.finalists.size()) < spec.n_full) rep.finalists.push_back(r.arm);
  if (rep.finalists.empty()) throw std::runtime_error("every quick-scan arm failed");

  // Stage 2: the finalists at the full budget; the best becomes the leader.
  const std::string p2 = persist ? stage_file(spec, "stage2_full.jsonl") : "";
  if (persist && load_stage(p2, "full", false, &rows)) {
    rep.full = unwrap(rows);
    rep.stages_loaded.push_back("full");
  } else {
    for (const std::string& name : rep.finalists)
      rep.full.push_back(
          run_arm(find_arm(spec, name), spec.search_seed, spec.full_steps, spec, model_config, data));
    rank_results(&rep.full);
    if (persist) save_stage(p2, "full", wrap(rep.full), false);
  }
  for (const ArmResult& r : rep.full)
    if (r.ok()) {
      rep.leader = r.arm;
      break;
    }
  if (rep.leader.empty()) throw std::runtime_error("every full run failed");
  const RecipeArm& leader = find_arm(spec, rep.leader);
  if (spec.max_stage < 3) {
    rep.summary = "stopped after stage 2 (full)";
    return rep;
  }

  // Stage 3: scaled copies of the leader. Exploratory: their results are
  // reported but the grid stays centered on the stage-2 leader.
  const std::string p3 = persist ? stage_file(spec, "stage3_push.jsonl") : "";
  if (persist && load_stage(p3, "push", false, &rows)) {
    rep.push = unwrap(rows);
    rep.stages_loaded.push_back("push");
  } else {
    for (int i = 0; i < spec.n_push; ++i)
      rep.push.push_back(run_arm(push_arm(leader, spec.push_menu[i]), spec.search_seed,
                                 spec.full_steps, spec, model_config, data));
    rank_results(&rep.push);
    if (persist) save_stage(p3, "push", wrap(rep.push), false);
  }
  if (spec.max_stage < 4) {
    rep.summary = "stopped after stage 3 (push)";
    return rep;
  }

  // Stage 4: the factorial grid around the leader, every seed.
  const std::vector<GridCell> grid = ablation_grid(spec, leader);
  const std::string p4 = persist ? stage_file(spec, "stage4_ablation.jsonl") : "";
  std::vector<StoredRun> cell_rows;
  const bool loaded4 = persist && load_stage(p4, "ablation", true, &cell_rows);
  if (loaded4) rep.stages_loaded.push_back("ablation");

  for (const GridCell& gc : grid) {
    AblationCell cell;
    cell.config = gc.config;
    cell.select_percent = gc.percent;
    cell.lr = gc.lr;
    if (loaded4) {
      for (const StoredRun& row : cell_rows)
        if (row.config == gc.config) cell.runs.push_back(row.res);
      if (cell.runs.size() != spec.ablation_seeds.size())
        throw std::runtime_error(p4 + ": config '" + gc.config + "' has " +
                                 std::to_string(cell.runs.size()) + " runs, expected " +
                                 std::to_string(spec.ablation_seeds.size()));
    } else {
      RecipeArm arm = leader;
      arm.name = gc.config;
      arm.select_percent = gc.percent;
      arm.layers.reset();
      arm.lr = gc.lr;
      arm.steps = 0;
      for (uint64_t seed : spec.ablation_seeds) {
        cell_rows.push_back(
            {run_arm(arm, seed, spec.full_steps, spec, model_config, data), gc.config, gc.percent,
             gc.lr});
        cell.runs.push_back(cell_rows.back().res);
      }
    }
    rep.ablation.push_back(std::move(cell));
  }
  if (persist && !loaded4) save_stage(p4, "ablation", cell_rows, true);

  summarize_cells(&rep.ablation);
  const AblationCell& best = rep.ablation.front();
  if (best.n_ok == 0) throw std::runtime_error("every ablation cell failed");
  rep.winner = best.config;
  rep.winner_mean = best.mean_loss;
  rep.winner_sd = best.sd_loss;
  char buf[160];
  std::snprintf(buf, sizeof buf, "winner %s: mean eval loss %.4f ± %.4f", rep.winner.c_str(),
                rep.winner_mean, rep.winner_sd);
  rep.summary = buf;
  return rep;
}

}  // namespace selora
