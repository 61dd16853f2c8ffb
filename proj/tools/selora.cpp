// Command-line front end for the selective-layer fine-tuning library.
//
// Subcommands: probe, train, pair, campaign, autoresearch, report. Every
// artifact lands under the path given with --out; nothing is written
// anywhere else. Exit codes: 0 on success, 1 with a one-line diagnostic on
// a runtime failure, 2 with usage text when the command line itself is bad.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "selora/autoresearch.hpp"
#include "selora/campaign.hpp"
#include "selora/probe.hpp"
#include "selora/report.hpp"
#include "selora/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string one_line(std::string text) {
  for (char& c : text)
    if (c == '\n' || c == '\r') c = ' ';
  return text.empty() ? "unknown error" : text;
}

// Config files are plain JSON. A typoed key would otherwise be a silent
// no-op, so unknown keys are rejected by name.
void reject_unknown(const json& j, std::initializer_list<const char*> allowed,
                    const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : allowed) known = known || it.key() == k;
    if (!known) throw std::runtime_error(where + ": unknown key \"" + it.key() + "\"");
  }
}

selora::ModelSpec model_spec_from(const json& j, const std::string& where) {
  if (!j.is_object()) throw std::runtime_error(where + ": expected an object");
  reject_unknown(j, {"name", "n_layers", "d_model", "n_heads", "d_ff", "vocab_size", "max_seq",
                     "seed"},
                 where);
  selora::ModelSpec ms;
  selora::ModelConfig& c = ms.config;
  c.n_layers = j.value("n_layers", c.n_layers);
  c.d_model = j.value("d_model", c.d_model);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.d_ff = j.value("d_ff", c.d_ff);
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.max_seq = j.value("max_seq", c.max_seq);
  c.seed = j.value("seed", c.seed);
  ms.name = j.value("name", "t" + std::to_string(c.n_layers) + "x" + std::to_string(c.d_model));
  return ms;
}

// What a --config file can override: the model to run (or a grid of models
// for campaigns) and the dataset shape. Everything absent keeps its
// default; with no file at all the defaults are the t12x128 model, the
// desk-scale grid, and the stock dataset.
struct ToolConfig {
  selora::ModelSpec model;
  std::vector<selora::ModelSpec> grid = selora::desk_grid();
  selora::DatasetSpec data;
};

ToolConfig load_tool_config(const std::string& path) {
  ToolConfig tc;
  tc.model.name = "t12x128";
  if (path.empty()) return tc;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open config " + path);
  const json j = json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.is_object())
    throw std::runtime_error(path + ": not a JSON object");
  reject_unknown(j, {"model", "models", "data"}, path);
  if (j.contains("model")) {
    tc.model = model_spec_from(j["model"], path + ": model");
    tc.grid = {tc.model};
  }
  if (j.contains("models")) {
    if (!j["models"].is_array() || j["models"].empty())
      throw std::runtime_error(path + ": models must be a non-empty array");
    tc.grid.clear();
    for (size_t i = 0; i < j["models"].size(); ++i)
      tc.grid.push_back(
          model_spec_from(j["models"][i], path + ": models[" + std::to_string(i) + "]"));
    if (!j.contains("model")) tc.model = tc.grid.front();
  }
  if (j.contains("data")) {
    const json& d = j["data"];
    if (!d.is_object()) throw std::runtime_error(path + ": data: expected an object");
    reject_unknown(d, {"seed", "n_train", "n_eval", "seq_len"}, path + ": data");
    tc.data.seed = d.value("seed", tc.data.seed);
    tc.data.n_train = d.value("n_train", tc.data.n_train);
    tc.data.n_eval = d.value("n_eval", tc.data.n_eval);
    tc.data.seq_len = d.value("seq_len", tc.data.seq_len);
  }
  return tc;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::string fmt(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

void print_record(const selora::RunRecord& rec) {
  std::cout << rec.model << " " << rec.recipe << " seed " << rec.seed;
  if (rec.status == "ok")
    std::cout << ": eval loss " << fmt(rec.eval_loss) << ", train " << fmt(rec.train_time_s)
              << "s, " << rec.trainable_params << " trainable params\n";
  else
    std::cout << ": failed (" << rec.failure_reason << ")\n";
}

// Flag bundles shared by the single-run commands and the campaign. The
// defaults mirror the library's.
struct RecipeFlags {
  double select_percent = 50.0;
  int steps = 200;
  int attn_rank = 16;
  int mlp_rank = 16;
  double alpha = 32.0;
  double lr = 5e-4;
  int warmup = 20;
};

void add_recipe_flags(CLI::App* cmd, RecipeFlags* f) {
  cmd->add_option("--select-percent", f->select_percent,
                  "layer percentage the probe-guided recipe adapts");
  cmd->add_option("--steps", f->steps, "optimizer steps per run");
  cmd->add_option("--rank", f->attn_rank, "adapter rank on attention projections");
  cmd->add_option("--mlp-rank", f->mlp_rank, "adapter rank on MLP projections");
  cmd->add_option("--alpha", f->alpha, "adapter scaling numerator");
  cmd->add_option("--lr", f->lr, "peak learning rate");
  cmd->add_option("--warmup", f->warmup, "linear warmup steps");
}

selora::CampaignSpec campaign_spec(const ToolConfig& tc, const RecipeFlags& f) {
  selora::CampaignSpec spec;
  spec.data = tc.data;
  spec.select_percent = f.select_percent;
  spec.steps_matched = f.steps;
  spec.attn_rank = f.attn_rank;
  spec.mlp_rank = f.mlp_rank;
  spec.alpha = f.alpha;
  spec.lr = f.lr;
  spec.warmup_steps = f.warmup;
  return spec;
}

int cmd_probe(const std::string& config, uint64_t seed, int batches, int chunk, int micro_batch,
              const std::string& out) {
  const ToolConfig tc = load_tool_config(config);
  selora::ModelConfig mc = tc.model.config;
  mc.seed = seed;
  selora::TransformerModel model(mc);
  const selora::Dataset data = selora::Dataset::generate(tc.data, mc.vocab_size);
  const selora::DataStream stream(data, seed, micro_batch);
  std::vector<selora::TokenBatch> probe_batches;
  probe_batches.reserve(size_t(batches));
  for (int i = 0; i < batches; ++i) probe_batches.push_back(stream.batch(i));
  selora::ProbeConfig pc;
  pc.n_batches = batches;
  pc.chunk_size = chunk > 0 ? chunk : mc.n_layers;
  const selora::ProbeReport report = selora::gradient_probe(model, probe_batches, pc);
  write_text(out, report.to_json());
  std::cout << "wrote " << out << " (" << report.layers() << " layers, strongest layer "
            << report.ranking.front() << ")\n";
  return 0;
}

int run_one_cell(const ToolConfig& tc, uint64_t seed, const RecipeFlags& flags,
                 const std::vector<std::string>& recipes, const std::string& out) {
  selora::CampaignSpec spec = campaign_spec(tc, flags);
  spec.models = {tc.model};
  spec.seeds = {seed};
  spec.recipes = recipes;
  fs::create_directories(out);
  spec.ledger_path = (fs::path(out) / "runs.csv").string();
  const selora::Ledger led = selora::run_campaign(spec);

  const selora::RunRecord* std_rec = nullptr;
  const selora::RunRecord* ale_rec = nullptr;
  bool any_failed = false;
  for (const selora::RunRecord& rec : led) {
    print_record(rec);
    if (rec.recipe == "standard") std_rec = &rec;
    if (rec.recipe == "aletheia") ale_rec = &rec;
    any_failed = any_failed || (rec.recipe != "base" && rec.status != "ok");
  }
  if (std_rec && ale_rec && std_rec->status == "ok" && ale_rec->status == "ok") {
    const selora::Speedup sp =
        selora::measure_speedup(std_rec->train_time_s, ale_rec->train_time_s);
    std::cout << "speedup " << fmt(sp.percent) << "% (" << fmt(sp.ratio) << "x)\n";
  }
  std::cout << "ledger: " << spec.ledger_path << "\n";
  if (any_failed) {
    std::cerr << "error: a requested run failed; see the ledger for the reason\n";
    return 1;
  }
  return 0;
}

int cmd_campaign(const ToolConfig& tc, const std::vector<uint64_t>& seeds,
                 const std::vector<std::string>& recipes, const RecipeFlags& flags, int steps_cm,
                 int bench_items, int jobs, const std::string& out) {
  selora::CampaignSpec spec = campaign_spec(tc, flags);
  spec.models = tc.grid;
  spec.seeds = seeds;
  spec.recipes = recipes;
  spec.steps_cm = steps_cm;
  spec.bench_items = bench_items;
  spec.jobs = jobs;
  fs::create_directories(out);
  spec.ledger_path = (fs::path(out) / "runs.csv").string();
  const selora::Ledger led = selora::run_campaign(spec);

  int ok = 0, failed = 0;
  for (const selora::RunRecord& rec : led) (rec.status == "ok" ? ok : failed)++;
  std::cout << led.size() << " records (" << ok << " ok, " << failed << " failed) in "
            << spec.ledger_path << "\n";
  return 0;
}

int cmd_autoresearch(const ToolConfig& tc, uint64_t seed, int quick_steps, int full_steps,
                     int n_full, int n_push, int max_stage, const std::string& out) {
  selora::AutoResearchSpec spec;
  spec.data = tc.data;
  spec.search_seed = seed;
  spec.quick_steps = quick_steps;
  spec.full_steps = full_steps;
  spec.n_full = n_full;
  spec.n_push = n_push;
  spec.max_stage = max_stage;
  fs::create_directories(out);
  spec.out_dir = out;
  const selora::AutoResearchReport rep = selora::run_autoresearch(spec, tc.model.config);

  for (const std::string& stage : rep.stages_loaded)
    std::cout << "resumed " << stage << " from " << out << "\n";
  std::cout << "quick scan:";
  for (const selora::ArmResult& r : rep.quick) std::cout << " " << r.arm;
  std::cout << "\n";
  if (!rep.leader.empty()) std::cout << "leader: " << rep.leader << "\n";
  std::cout << rep.summary << "\n";
  write_text(fs::path(out) / "summary.txt", rep.summary + "\n");
  return 0;
}

int cmd_report(const std::string& ledger, const std::string& out, bool no_speedup_bars,
               bool no_family_bars, bool no_benchmark_deltas, bool no_tradeoff_scatter,
               const std::vector<std::string>& family) {
  selora::ReportSpec spec;
  spec.ledger_path = ledger;
  spec.out_dir = out;
  spec.speedup_bars = !no_speedup_bars;
  spec.family_bars = !no_family_bars;
  spec.benchmark_deltas = !no_benchmark_deltas;
  spec.tradeoff_scatter = !no_tradeoff_scatter;
  for (const std::string& pair : family) {
    const size_t eq = pair.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == pair.size())
      throw std::runtime_error("--family expects model=family, got \"" + pair + "\"");
    spec.family_of[pair.substr(0, eq)] = pair.substr(eq + 1);
  }
  const selora::ReportOutput outp = selora::generate_report(spec);
  for (const std::string& f : outp.files) std::cout << "wrote " << (fs::path(out) / f).string() << "\n";
  for (const std::string& w : outp.warnings) std::cout << "warning: " << w << "\n";
  return 0;
}

}  // namespace

int cli_main(int argc, char** argv) {
  CLI::App app{"selective-layer LoRA fine-tuning: probe, train, compare, report"};
  app.require_subcommand(1);

  std::string config;
  uint64_t seed = 42;

  // probe
  auto* probe = app.add_subcommand("probe", "rank layers by accumulated gradient norm");
  int probe_batches = 5, probe_chunk = 0, probe_micro = 8;
  std::string probe_out = "probe.json";
  probe->add_option("--config", config, "model/data config JSON");
  probe->add_option("--seed", seed, "model and batch-order seed");
  probe->add_option("--batches", probe_batches, "probe batches");
  probe->add_option("--chunk", probe_chunk, "layers probed per pass (0 = whole depth)");
  probe->add_option("--micro-batch", probe_micro, "sequences per probe batch");
  probe->add_option("--out", probe_out, "output JSON file");

  // train
  auto* train = app.add_subcommand("train", "run one adapter-training recipe");
  RecipeFlags train_flags;
  std::string train_recipe = "aletheia", train_out = "train_out";
  train->add_option("--config", config, "model/data config JSON");
  train->add_option("--seed", seed, "run seed");
  train->add_option("--recipe", train_recipe, "standard (all layers) or aletheia (probe-selected)")
      ->check(CLI::IsMember({"standard", "aletheia"}));
  add_recipe_flags(train, &train_flags);
  train->add_option("--out", train_out, "output directory");

  // pair
  auto* pair = app.add_subcommand("pair", "run a matched standard/aletheia pair");
  RecipeFlags pair_flags;
  std::string pair_out = "pair_out";
  pair->add_option("--config", config, "model/data config JSON");
  pair->add_option("--seed", seed, "run seed");
  add_recipe_flags(pair, &pair_flags);
  pair->add_option("--out", pair_out, "output directory");

  // campaign
  auto* campaign = app.add_subcommand("campaign", "run a paired campaign over models and seeds");
  RecipeFlags campaign_flags;
  std::vector<uint64_t> seeds{42, 123, 999};
  std::vector<std::string> recipes{"standard", "aletheia"};
  int steps_cm = 250, bench_items = 200, jobs = 1;
  std::string campaign_out = "campaign_out";
  campaign->add_option("--config", config, "model/data config JSON (models array = grid)");
  campaign->add_option("--seeds", seeds, "comma-separated seeds")->delimiter(',');
  campaign->add_option("--recipes", recipes, "subset of standard,aletheia,aletheia_cm")
      ->delimiter(',');
  add_recipe_flags(campaign, &campaign_flags);
  campaign->add_option("--steps-cm", steps_cm, "compute-matched budget for aletheia_cm");
  campaign->add_option("--bench-items", bench_items, "items per synthetic benchmark suite");
  campaign->add_option("--jobs", jobs, "parallel cells")->envname("SELORA_JOBS");
  campaign->add_option("--out", campaign_out, "output directory");

  // autoresearch
  auto* autoresearch =
      app.add_subcommand("autoresearch", "staged recipe search with a factorial ablation");
  int quick_steps = 150, full_steps = 500, n_full = 2, n_push = 2, max_stage = 4;
  std::string ar_out = "autoresearch_out";
  autoresearch->add_option("--config", config, "model/data config JSON");
  autoresearch->add_option("--seed", seed, "search seed for stages 1 to 3");
  autoresearch->add_option("--quick-steps", quick_steps, "stage-1 budget per arm");
  autoresearch->add_option("--full-steps", full_steps, "stage-2 and later budget");
  autoresearch->add_option("--n-full", n_full, "arms advanced to full runs");
  autoresearch->add_option("--n-push", n_push, "leader variations to push");
  autoresearch->add_option("--max-stage", max_stage, "stop after this stage (1 to 4)");
  autoresearch->add_option("--out", ar_out, "stage files and summary land here");

  // report
  auto* report = app.add_subcommand("report", "render tables and figures from a ledger");
  std::string ledger_path, report_out = "report";
  bool no_speedup_bars = false, no_family_bars = false;
  bool no_benchmark_deltas = false, no_tradeoff_scatter = false;
  std::vector<std::string> family;
  report->add_option("--ledger", ledger_path, "campaign ledger CSV")->required();
  report->add_option("--out", report_out, "output directory");
  report->add_flag("--no-speedup-bars", no_speedup_bars, "skip the per-model speedup figure");
  report->add_flag("--no-family-bars", no_family_bars, "skip the family speedup figure");
  report->add_flag("--no-benchmark-deltas", no_benchmark_deltas, "skip the forgetting figure");
  report->add_flag("--no-tradeoff-scatter", no_tradeoff_scatter, "skip the tradeoff figure");
  report->add_option("--family", family, "model=family grouping, repeatable");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    const auto subs = app.get_subcommands();
    std::cout << (subs.empty() ? app.help() : subs.front()->help());
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    std::cout << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (probe->parsed())
      return cmd_probe(config, seed, probe_batches, probe_chunk, probe_micro, probe_out);
    const ToolConfig tc = load_tool_config(config);
    if (train->parsed()) return run_one_cell(tc, seed, train_flags, {train_recipe}, train_out);
    if (pair->parsed())
      return run_one_cell(tc, seed, pair_flags, {"standard", "aletheia"}, pair_out);
    if (campaign->parsed())
      return cmd_campaign(tc, seeds, recipes, campaign_flags, steps_cm, bench_items, jobs,
                          campaign_out);
    if (autoresearch->parsed())
      return cmd_autoresearch(tc, seed, quick_steps, full_steps, n_full, n_push, max_stage,
                              ar_out);
    if (report->parsed())
      return cmd_report(ledger_path, report_out, no_speedup_bars, no_family_bars,
                        no_benchmark_deltas, no_tradeoff_scatter, family);
  } catch (const std::exception& e) {
    std::cerr << "error: " << one_line(e.what()) << "\n";
    return 1;
  }
  return 0;
}

int main(int argc, char** argv) { return cli_main(argc, argv); }
