#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include "selora/autoresearch.hpp"

using namespace selora;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const char* tag) {
    path = fs::temp_directory_path() / (std::string("selora_ar_") + tag);
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
};

ModelConfig tiny5() {
  ModelConfig cfg;
  cfg.n_layers = 5;
  cfg.d_model = 32;
  cfg.n_heads = 4;
  cfg.d_ff = 128;
  cfg.vocab_size = 64;
  cfg.max_seq = 32;
  cfg.seed = 11;
  return cfg;
}

AutoResearchSpec base_spec() {
  AutoResearchSpec spec;
  spec.data.seed = 7;
  spec.data.n_train = 128;
  spec.data.n_eval = 32;
  spec.micro_batch = 4;
  spec.grad_accum = 1;
  spec.probe_batches = 2;
  spec.warmup_steps = 5;
  spec.eval_batch = 16;
  return spec;
}

RecipeArm percent_arm(const std::string& name, double pct, double lr, int rank = 4) {
  RecipeArm arm;
  arm.name = name;
  arm.select_percent = pct;
  arm.lr = lr;
  arm.attn_rank = rank;
  arm.mlp_rank = rank;
  return arm;
}

// One arm that genuinely trains and seven whose learning rate is too small
// to move anything, so the planted arm is strictly best by construction at
// every stage that compares arms.
std::vector<RecipeArm> planted_arms(double lr_good, double lr_dud) {
  std::vector<RecipeArm> arms;
  arms.push_back(percent_arm("planted", 100.0, lr_good));
  const double duds[7] = {20.0, 40.0, 60.0, 20.0, 40.0, 60.0, 40.0};
  for (int i = 0; i < 7; ++i)
    arms.push_back(percent_arm("dud" + std::to_string(i + 1), duds[i], lr_dud));
  return arms;
}

// The planted search: only the x1 learning-rate column of the grid can
// train (the other scales shrink the lr to nothing), and within that column
// the planted arm's 100 percent selection has strictly the most adapted
// layers, so its cell must win.
AutoResearchSpec planted_spec() {
  AutoResearchSpec spec = base_spec();
  spec.arms = planted_arms(2e-3, 1e-9);
  spec.quick_steps = 30;
  spec.full_steps = 50;
  spec.n_full = 2;
  spec.n_push = 2;
  spec.ablation_percents = {20.0, 40.0, 60.0, 100.0};
  spec.ablation_lr_scales = {1e-9, 1.0, 1e-7};
  spec.ablation_seeds = {42, 123, 999};
  return spec;
}

std::string fp_runs(const std::vector<ArmResult>& v) {
  std::ostringstream out;
  for (const ArmResult& r : v) {
    char loss[48];
    std::snprintf(loss, sizeof loss, "%.17g", r.eval_loss);
    out << r.arm << "|" << r.seed << "|" << r.steps << "|";
    for (int l : r.selected_layers) out << l << ";";
    out << "|" << r.status << "|" << r.failure_reason << "|" << loss << "\n";
  }
  return out.str();
}

// Everything deterministic in the report; wall-clock fields excluded.
std::string fp_report(const AutoResearchReport& r) {
  std::ostringstream out;
  out << "quick:\n" << fp_runs(r.quick) << "full:\n" << fp_runs(r.full);
  out << "push:\n" << fp_runs(r.push) << "leader:" << r.leader << "\n";
  for (const AblationCell& cell : r.ablation) {
    char mean[48], sd[48];
    std::snprintf(mean, sizeof mean, "%.17g", cell.mean_loss);
    std::snprintf(sd, sizeof sd, "%.17g", cell.sd_loss);
    out << "cell:" << cell.config << "|" << cell.n_ok << "|" << mean << "|" << sd << "\n";
    out << fp_runs(cell.runs);
  }
  out << "winner:" << r.winner << "\nsummary:" << r.summary << "\n";
  return out.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

}  // namespace

TEST_CASE("default arms cover the stock grid") {
  const std::vector<RecipeArm> arms = default_arms();
  REQUIRE(arms.size() == 8);
  std::set<std::string> names;
  std::set<std::pair<double, double>> cells;
  for (const RecipeArm& arm : arms) {
    names.insert(arm.name);
    REQUIRE(arm.select_percent.has_value());
    cells.insert({*arm.select_percent, arm.lr});
  }
  CHECK(names.size() == 8);
  CHECK(cells.size() == 8);
  for (double pct : {25.0, 50.0, 75.0, 100.0})
    for (double lr : {1e-4, 2e-4}) CHECK(cells.count({pct, lr}) == 1);

  AutoResearchSpec spec;  // stock spec must validate against the default depth
  CHECK_NOTHROW(validate(spec, 12));
  CHECK(default_push_menu().size() == 4);
}

TEST_CASE("validation rejects malformed arms and specs") {
  RecipeArm both = percent_arm("both", 50.0, 1e-4);
  both.layers = std::vector<int>{0};
  CHECK_THROWS_AS(validate(both, 5), std::invalid_argument);

  RecipeArm neither;
  neither.name = "neither";
  CHECK_THROWS_AS(validate(neither, 5), std::invalid_argument);

  CHECK_THROWS_AS(validate(percent_arm("p0", 0.0, 1e-4), 5), std::invalid_argument);
  CHECK_THROWS_AS(validate(percent_arm("p101", 101.0, 1e-4), 5), std::invalid_argument);
  CHECK_THROWS_AS(validate(percent_arm("lr0", 50.0, 0.0), 5), std::invalid_argument);

  RecipeArm bad_layer;
  bad_layer.name = "bad";
  bad_layer.layers = std::vector<int>{0, 5};
  CHECK_THROWS_AS(validate(bad_layer, 5), std::invalid_argument);
  bad_layer.layers = std::vector<int>{2, 1};
  CHECK_THROWS_AS(validate(bad_layer, 5), std::invalid_argument);
  bad_layer.layers = std::vector<int>{1, 3};
  CHECK_NOTHROW(validate(bad_layer, 5));

  AutoResearchSpec spec = base_spec();
  spec.arms.pop_back();
  CHECK_THROWS_AS(validate(spec, 12), std::invalid_argument);

  spec = base_spec();
  spec.arms[1].name = spec.arms[0].name;
  CHECK_THROWS_AS(validate(spec, 12), std::invalid_argument);

  spec = base_spec();
  spec.n_full = 0;
  CHECK_THROWS_AS(validate(spec, 12), std::invalid_argument);

  spec = base_spec();
  spec.n_push = int(spec.push_menu.size()) + 1;
  CHECK_THROWS_AS(validate(spec, 12), std::invalid_argument);

  spec = base_spec();
  spec.ablation_seeds = {42, 42};
  CHECK_THROWS_AS(validate(spec, 12), std::invalid_argument);

  spec = base_spec();
  spec.ablation_percents = {25.0, 50.0};  // 2 x 3 grid, not 12 cells
  CHECK_THROWS_AS(validate(spec, 12), std::invalid_argument);

  spec = base_spec();
  spec.ablation_lr_scales = {0.5, -1.0, 2.0};
  CHECK_THROWS_AS(validate(spec, 12), std::invalid_argument);

  spec = base_spec();
  spec.max_stage = 5;
  CHECK_THROWS_AS(validate(spec, 12), std::invalid_argument);
}

TEST_CASE("planted arm sweeps every stage and wins the ablation") {
  const AutoResearchSpec spec = planted_spec();
  const AutoResearchReport rep = run_autoresearch(spec, tiny5());

  REQUIRE(rep.quick.size() == 8);
  CHECK(rep.quick[0].arm == "planted");
  CHECK(rep.quick[0].ok());
  for (size_t i = 1; i < rep.quick.size(); ++i)
    CHECK(rep.quick[0].eval_loss < rep.quick[i].eval_loss - 0.05);

  REQUIRE(rep.finalists.size() == 2);
  CHECK(rep.finalists[0] == "planted");
  REQUIRE(rep.full.size() == 2);
  CHECK(rep.full[0].arm == "planted");
  CHECK(rep.leader == "planted");

  REQUIRE(rep.push.size() == 2);
  std::set<std::string> push_names;
  for (const ArmResult& r : rep.push) {
    push_names.insert(r.arm);
    CHECK(r.steps == spec.full_steps);
  }
  CHECK(push_names.count("planted_attn2x") == 1);
  CHECK(push_names.count("planted_mlp2x") == 1);

  REQUIRE(rep.ablation.size() == 12);
  int total_runs = 0;
  for (const AblationCell& cell : rep.ablation) {
    CHECK(cell.runs.size() == 3);
    CHECK(cell.n_ok == 3);
    total_runs += int(cell.runs.size());
  }
  CHECK(total_runs == 36);

  CHECK(rep.winner == "sel100_x1");
  for (size_t i = 1; i < rep.ablation.size(); ++i)
    CHECK(rep.winner_mean < rep.ablation[i].mean_loss);

  char expect[160];
  std::snprintf(expect, sizeof expect, "winner %s: mean eval loss %.4f ± %.4f",
                rep.winner.c_str(), rep.winner_mean, rep.winner_sd);
  CHECK(rep.summary == std::string(expect));
  CHECK(rep.stages_loaded.empty());
}

TEST_CASE("selection metadata flows into results") {
  AutoResearchSpec spec = base_spec();
  spec.arms = planted_arms(1e-3, 1e-9);
  spec.arms[0] = percent_arm("planted", 100.0, 1e-3);
  RecipeArm explicit_arm;
  explicit_arm.name = "pin03";
  explicit_arm.layers = std::vector<int>{0, 3};
  explicit_arm.lr = 1e-3;
  explicit_arm.attn_rank = 4;
  explicit_arm.mlp_rank = 4;
  spec.arms[1] = explicit_arm;
  spec.quick_steps = 4;
  spec.max_stage = 1;

  const AutoResearchReport rep = run_autoresearch(spec, tiny5());
  REQUIRE(rep.quick.size() == 8);
  for (const ArmResult& r : rep.quick) {
    if (r.arm == "pin03") {
      CHECK(r.selected_layers == std::vector<int>{0, 3});
    } else if (r.arm == "planted") {
      CHECK(r.selected_layers.size() == 5);
    } else if (r.arm == "dud2") {  // 40 percent of 5 layers selects 2
      CHECK(r.selected_layers.size() == 2);
    }
  }
  CHECK(rep.summary == "stopped after stage 1 (quick)");
  CHECK(rep.winner.empty());
}

TEST_CASE("failed arms are kept, ranked last, and never abort the search") {
  AutoResearchSpec spec = base_spec();
  spec.arms = planted_arms(1e-3, 1e200);  // the dud lr now genuinely diverges
  spec.quick_steps = 6;
  spec.full_steps = 8;
  spec.n_full = 2;
  spec.n_push = 1;
  spec.ablation_percents = {20.0, 40.0, 60.0, 100.0};
  spec.ablation_lr_scales = {0.5, 1.0, 2.0};
  spec.ablation_seeds = {42, 123};

  const AutoResearchReport rep = run_autoresearch(spec, tiny5());
  REQUIRE(rep.quick.size() == 8);
  CHECK(rep.quick[0].arm == "planted");
  CHECK(rep.quick[0].ok());
  for (size_t i = 1; i < rep.quick.size(); ++i) {
    CHECK(rep.quick[i].status == "failed");
    CHECK(rep.quick[i].failure_reason.find("diverged") != std::string::npos);
  }

  // Only one survivor, so the finalist list shrinks below n_full.
  REQUIRE(rep.finalists.size() == 1);
  CHECK(rep.finalists[0] == "planted");
  REQUIRE(rep.full.size() == 1);
  CHECK(rep.leader == "planted");
  REQUIRE(rep.push.size() == 1);

  REQUIRE(rep.ablation.size() == 12);
  for (const AblationCell& cell : rep.ablation) CHECK(cell.n_ok == 2);
  CHECK(!rep.winner.empty());
}

TEST_CASE("a search where nothing survives refuses to pick a winner") {
  AutoResearchSpec spec = base_spec();
  spec.arms = planted_arms(1e200, 1e200);
  spec.quick_steps = 4;
  CHECK_THROWS_AS(run_autoresearch(spec, tiny5()), std::runtime_error);
}

TEST_CASE("stage files resume the pipeline at every boundary") {
  AutoResearchSpec spec = planted_spec();
  spec.quick_steps = 4;
  spec.full_steps = 6;
  spec.ablation_lr_scales = {0.5, 1.0, 2.0};
  spec.ablation_seeds = {42, 123};

  TempDir whole("whole");
  spec.out_dir = whole.str();
  const AutoResearchReport uninterrupted = run_autoresearch(spec, tiny5());

  TempDir staged("staged");
  spec.out_dir = staged.str();
  const char* files[4] = {"stage1_quick.jsonl", "stage2_full.jsonl", "stage3_push.jsonl",
                          "stage4_ablation.jsonl"};

  for (int stop = 1; stop <= 4; ++stop) {
    spec.max_stage = stop;
    const AutoResearchReport rep = run_autoresearch(spec, tiny5());
    REQUIRE(rep.stages_loaded.size() == size_t(stop - 1));
    for (int i = 0; i < 4; ++i)
      CHECK(fs::exists(staged.path / files[i]) == (i < stop));
    if (stop == 4) {
      CHECK(rep.stages_loaded ==
            std::vector<std::string>{"quick", "full", "push"});
      CHECK(fp_report(rep) == fp_report(uninterrupted));
    }
  }

  // A finished directory reruns without touching a single byte.
  std::string before[4], after[4];
  for (int i = 0; i < 4; ++i) before[i] = slurp(staged.path / files[i]);
  spec.max_stage = 4;
  const AutoResearchReport again = run_autoresearch(spec, tiny5());
  CHECK(again.stages_loaded ==
        std::vector<std::string>{"quick", "full", "push", "ablation"});
  CHECK(fp_report(again) == fp_report(uninterrupted));
  for (int i = 0; i < 4; ++i) {
    after[i] = slurp(staged.path / files[i]);
    CHECK(before[i] == after[i]);
  }

  // The stored leader must still exist if the spec changes between runs.
  AutoResearchSpec renamed = spec;
  for (RecipeArm& arm : renamed.arms)
    if (arm.name == "planted") arm.name = "planted2";
  CHECK_THROWS_AS(run_autoresearch(renamed, tiny5()), std::runtime_error);
}
