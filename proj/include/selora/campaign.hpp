#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "selora/dataset.hpp"
#include "selora/ledger.hpp"
#include "selora/model.hpp"
#include "selora/probe.hpp"

namespace selora {

// A named model size; the per-cell seed overrides config.seed at run time.
struct ModelSpec {
  std::string name;
  ModelConfig config;
};

// The three desk-scale stand-in sizes: t8x64, t12x128 (the default config),
// t16x128.
std::vector<ModelSpec> desk_grid();

// Everything a paired campaign needs. A cell is one (model, seed): it runs
// an untrained baseline snapshot, standard (all-layer adapters), and
// aletheia (probe-selected adapters) sequentially on one worker so the
// std/ale wall-clock comparison is fair.
struct CampaignSpec {
  std::vector<ModelSpec> models = desk_grid();
  std::vector<uint64_t> seeds{42, 123, 999};
  std::vector<std::string> recipes{"standard", "aletheia"};
  int steps_matched = 200;
  int steps_cm = 250;  // aletheia_cm budget, must exceed steps_matched
  double select_percent = 50.0;
  int attn_rank = 16;
  int mlp_rank = 16;
  double alpha = 32.0;
  double lr = 5e-4;  // also the fault-injection knob: absurd values diverge
  int warmup_steps = 20;
  int micro_batch = 8;
  int grad_accum = 2;
  int probe_batches = 5;
  int probe_chunk = 0;  // layers probed per pass; 0 means the whole depth
  int eval_batch = 16;
  int bench_items = 200;
  uint64_t bench_seed = 1234;
  DatasetSpec data;
  std::string ledger_path;  // empty disables persistence (tests only)
  int jobs = 1;
};

void validate(const CampaignSpec& spec);

struct PairOutcome {
  RunRecord std_rec;
  RunRecord ale_rec;
};

// Runs one matched pair from identical same-seed models: standard trains
// adapters on every layer, aletheia probes, selects the top layers, and
// trains only those. Both use the same TrainConfig and data order. A third
// "base" record snapshots the untrained model's eval loss and benchmark
// scores for forgetting analysis. Divergence produces a failed record, not
// an exception. Records are appended to spec.ledger_path when it is set.
PairOutcome run_pair(const ModelSpec& model, uint64_t seed, const CampaignSpec& spec);

// Retrains the aletheia plan of an already-recorded pair for steps_cm,
// recorded as recipe "aletheia_cm" with probe_time_s 0 (the plan is reused,
// not re-probed). Throws when the ledger has no aletheia record for this
// (model, seed).
RunRecord run_compute_matched(const ModelSpec& model, uint64_t seed, const CampaignSpec& spec);

// Executes every (model, seed) cell, at most spec.jobs at a time. The
// ledger is append-only and records already present are skipped, so an
// interrupted campaign resumes where it stopped. Cell failures are recorded
// and never abort the rest. Returns the loaded ledger.
Ledger run_campaign(const CampaignSpec& spec);

}  // namespace selora
