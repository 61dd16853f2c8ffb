#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "selora/dataset.hpp"
#include "selora/model.hpp"

namespace selora {

// One candidate recipe in the staged search. A percent arm probes the model
// and selects its own layers; an explicit arm adapts exactly the listed
// layers. Exactly one of the two must be set. steps == 0 means "use the
// stage budget" (quick_steps or full_steps).
struct RecipeArm {
  std::string name;
  std::optional<double> select_percent;
  std::optional<std::vector<int>> layers;
  int attn_rank{16};
  int mlp_rank{16};
  double lr{1e-4};
  int steps{0};
};

void validate(const RecipeArm& arm, int n_layers);

// The stock search space: {25, 50, 75, 100} percent x {1e-4, 2e-4}.
std::vector<RecipeArm> default_arms();

// A scaled copy of the stage-2 leader, run during the push stage. Rank
// scales round to the nearest integer rank, floored at 1.
struct PushVariation {
  std::string suffix;  // appended to the leader's name
  double attn_rank_scale{1.0};
  double mlp_rank_scale{1.0};
  double lr_scale{1.0};
};

// Rank doublings first, then learning-rate nudges.
std::vector<PushVariation> default_push_menu();

struct AutoResearchSpec {
  std::vector<RecipeArm> arms = default_arms();  // exactly 8 at the quick scan
  int quick_steps = 150;
  int full_steps = 500;
  int n_full = 2;  // arms advanced from the quick scan to full runs
  int n_push = 2;  // variations taken from the front of push_menu
  std::vector<PushVariation> push_menu = default_push_menu();
  uint64_t search_seed = 42;  // stages 1 to 3 run single-seed
  std::vector<uint64_t> ablation_seeds{42, 123, 999};
  // The final grid: every percent crossed with every scaled leader lr,
  // 12 configurations in all, each run once per ablation seed.
  std::vector<double> ablation_percents{25.0, 50.0, 75.0, 100.0};
  std::vector<double> ablation_lr_scales{0.5, 1.0, 2.0};
  std::string out_dir;  // stage results land here; empty disables persistence
  int max_stage = 4;    // stop after this stage, the interruption hook
  DatasetSpec data;
  double alpha = 32.0;
  int micro_batch = 8;
  int grad_accum = 1;
  int warmup_steps = 20;
  int probe_batches = 5;
  int probe_chunk = 0;  // 0 probes the whole depth in one pass
  int eval_batch = 16;
};

void validate(const AutoResearchSpec& spec, int n_layers);

// One training run inside the pipeline. The timing fields vary run to run;
// every other field is deterministic in (arm, seed, steps).
struct ArmResult {
  std::string arm;
  uint64_t seed{0};
  int steps{0};
  std::vector<int> selected_layers;
  double eval_loss{0.0};
  double probe_time_s{0.0};
  double train_time_s{0.0};
  std::string status{"ok"};  // ok | failed
  std::string failure_reason;

  bool ok() const { return status == "ok"; }
};

// One cell of the final grid with its per-seed runs. A cell with a single
// surviving seed reports zero spread; a cell with none ranks last.
struct AblationCell {
  std::string config;
  double select_percent{0.0};
  double lr{0.0};
  std::vector<ArmResult> runs;
  int n_ok{0};
  double mean_loss{0.0};
  double sd_loss{0.0};
};

struct AutoResearchReport {
  std::vector<ArmResult> quick;  // ranked, survivors by eval loss, failures last
  std::vector<std::string> finalists;
  std::vector<ArmResult> full;  // ranked
  std::string leader;
  std::vector<ArmResult> push;             // ranked
  std::vector<AblationCell> ablation;      // ranked by (mean, sd)
  std::string winner;                      // best ablation config
  double winner_mean{0.0};
  double winner_sd{0.0};
  std::string summary;                     // "winner <config>: mean eval loss a ± b"
  std::vector<std::string> stages_loaded;  // stages restored from out_dir
};

// The staged recipe search: quick-scan every arm, advance the best n_full
// to full runs, push scaled copies of the stage-2 leader, then grid the
// leader's neighborhood over percents x learning-rate scales x seeds. The
// winner is the grid cell with the lowest mean eval loss, spread breaking
// ties. Failed runs are kept, ranked after survivors, and never abort the
// pipeline; a stage only errors when nothing survives it.
//
// With out_dir set, each completed stage writes one file there and a rerun
// picks up at the first stage whose file is missing, so an interruption at
// any stage boundary costs nothing. Resume with the spec that produced the
// directory: stage files store run outcomes only, and everything else is
// rebuilt from the spec.
AutoResearchReport run_autoresearch(const AutoResearchSpec& spec, const ModelConfig& model_config);

}  // namespace selora
