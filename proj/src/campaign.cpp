#include "selora/campaign.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <functional>
#include <map>
#include <mutex>
#include <numeric>
#include <set>
#include <stdexcept>
#include <thread>

#include "selora/eval.hpp"
#include "selora/trainer.hpp"

namespace selora {

namespace {

struct BenchSet {
  BenchmarkTask mmlu, math, code;
};

BenchSet make_benches(const CampaignSpec& spec, int vocab) {
  return {make_knowledge_suite(spec.bench_items, spec.bench_seed, vocab),
          make_math_suite(spec.bench_items, spec.bench_seed + 1, vocab),
          make_code_suite(spec.bench_items, spec.bench_seed + 2, vocab)};
}

ModelConfig cell_config(const ModelSpec& ms, uint64_t seed) {
  ModelConfig cfg = ms.config;
  cfg.seed = seed;
  return cfg;
}

TrainConfig cell_train_config(const CampaignSpec& spec, uint64_t seed, int steps) {
  TrainConfig tc;
  tc.lr_max = spec.lr;
  tc.warmup_steps = std::min(spec.warmup_steps, steps - 1);
  tc.total_steps = steps;
  tc.grad_accum = spec.grad_accum;
  tc.seed = seed;
  return tc;
}

std::string one_line(std::string text) {
  for (char& c : text)
    if (c == '\n' || c == '\r') c = ' ';
  return text.empty() ? "unknown error" : text;
}

void fill_metrics(TransformerModel& model, const Dataset& data, const BenchSet& benches,
                  const CampaignSpec& spec, RunRecord& rec) {
  rec.eval_loss = eval_loss(model, data.eval_batches(spec.eval_batch));
  rec.bench_mmlu = score_benchmark(model, benches.mmlu).accuracy;
  rec.bench_math = score_benchmark(model, benches.math).accuracy;
  rec.bench_code = score_benchmark(model, benches.code).accuracy;
}

RunRecord base_skeleton(const ModelSpec& ms, uint64_t seed, const std::string& recipe, int steps) {
  RunRecord rec;
  rec.model = ms.name;
  rec.recipe = recipe;
  rec.seed = seed;
  rec.steps = steps;
  return rec;
}

// Snapshot of the untrained model, the reference point for forgetting.
RunRecord run_base(const ModelSpec& ms, uint64_t seed, const CampaignSpec& spec,
                   const Dataset& data, const BenchSet& benches) {
  RunRecord rec = base_skeleton(ms, seed, "base", 0);
  TransformerModel model(cell_config(ms, seed));
  fill_metrics(model, data, benches, spec, rec);
  return rec;
}

// One fine-tuning run from a fresh same-seed model with the given plan.
RunRecord run_recipe(const ModelSpec& ms, uint64_t seed, const std::string& recipe,
                     const LoraPlan& plan, double probe_time_s, int steps,
                     const CampaignSpec& spec, const Dataset& data, const BenchSet& benches) {
  RunRecord rec = base_skeleton(ms, seed, recipe, steps);
  rec.probe_time_s = probe_time_s;
  rec.selected_layers = plan.selected;

  TransformerModel model(cell_config(ms, seed));
  model.inject_lora(plan);
  rec.trainable_params = model.count_trainable();

  DataStream stream(data, seed, spec.micro_batch);
  const RunResult res = train(model, stream, cell_train_config(spec, seed, steps));
  rec.train_time_s = res.wall_time_s;
  if (!res.ok()) {
    rec.status = "failed";
    rec.failure_reason = "training diverged (non-finite loss by step " +
                         std::to_string(res.step_losses.size()) + ")";
    return rec;
  }
  fill_metrics(model, data, benches, spec, rec);
  return rec;
}

LoraPlan all_layer_plan(const CampaignSpec& spec, int n_layers) {
  std::vector<int> all(static_cast<size_t>(n_layers));
  std::iota(all.begin(), all.end(), 0);
  return build_plan(all, spec.attn_rank, spec.mlp_rank, spec.alpha);
}

ProbeConfig probe_config(const CampaignSpec& spec, int n_layers) {
  ProbeConfig pc;
  pc.n_batches = spec.probe_batches;
  pc.chunk_size = spec.probe_chunk > 0 ? spec.probe_chunk : n_layers;
  return pc;
}

// Probes a fresh same-seed model and returns the aletheia plan with the
// probe wall time.
std::pair<LoraPlan, double> probe_plan(const ModelSpec& ms, uint64_t seed,
                                       const CampaignSpec& spec, const Dataset& data) {
  TransformerModel model(cell_config(ms, seed));
  DataStream stream(data, seed, spec.micro_batch);
  std::vector<TokenBatch> batches;
  batches.reserve(size_t(spec.probe_batches));
  for (int i = 0; i < spec.probe_batches; ++i) batches.push_back(stream.batch(i));

  const auto t0 = std::chrono::steady_clock::now();
  const ProbeReport report = gradient_probe(model, batches, probe_config(spec, ms.config.n_layers));
  const auto t1 = std::chrono::steady_clock::now();

  SelectionConfig sel;
  sel.percent = spec.select_percent;
  const std::vector<int> selected = select_layers(report, sel, ms.config.n_layers);
  return {build_plan(selected, spec.attn_rank, spec.mlp_rank, spec.alpha),
          std::chrono::duration<double>(t1 - t0).count()};
}

using Exists = std::function<bool(const RunRecord&)>;
using Persist = std::function<void(const RunRecord&)>;

// Wraps one sub-run so an unexpected exception becomes a failed record and
// the campaign keeps going.
void guarded(const ModelSpec& ms, uint64_t seed, const std::string& recipe, int steps,
             const Exists& exists, const Persist& persist,
             const std::function<RunRecord()>& body, RunRecord* out) {
  RunRecord probe_key = base_skeleton(ms, seed, recipe, steps);
  if (exists(probe_key)) return;
  RunRecord rec;
  try {
    rec = body();
  } catch (const std::exception& e) {
    rec = probe_key;
    rec.status = "failed";
    rec.failure_reason = one_line(e.what());
  }
  persist(rec);
  if (out) *out = rec;
}

void run_pair_cell(const ModelSpec& ms, uint64_t seed, const CampaignSpec& spec,
                   const Dataset& data, const BenchSet& benches, const Exists& exists,
                   const Persist& persist, PairOutcome* out) {
  guarded(ms, seed, "base", 0, exists, persist,
          [&] { return run_base(ms, seed, spec, data, benches); }, nullptr);

  const bool want_std =
      std::count(spec.recipes.begin(), spec.recipes.end(), "standard") > 0;
  const bool want_ale =
      std::count(spec.recipes.begin(), spec.recipes.end(), "aletheia") > 0;

  if (want_std)
    guarded(ms, seed, "standard", spec.steps_matched, exists, persist,
            [&] {
              return run_recipe(ms, seed, "standard", all_layer_plan(spec, ms.config.n_layers),
                                0.0, spec.steps_matched, spec, data, benches);
            },
            out ? &out->std_rec : nullptr);

  if (want_ale)
    guarded(ms, seed, "aletheia", spec.steps_matched, exists, persist,
            [&] {
              const auto [plan, probe_s] = probe_plan(ms, seed, spec, data);
              return run_recipe(ms, seed, "aletheia", plan, probe_s, spec.steps_matched, spec,
                                data, benches);
            },
            out ? &out->ale_rec : nullptr);
}

// The aletheia plan of a recorded pair, rebuilt from its ledger row.
LoraPlan plan_from_ledger(const std::string& path, const ModelSpec& ms, uint64_t seed,
                          const CampaignSpec& spec) {
  if (path.empty())
    throw std::invalid_argument("run_compute_matched: no ledger to find the matched pair in");
  Ledger ledger;
  try {
    ledger = ledger_load(path);
  } catch (const std::runtime_error&) {
    throw std::invalid_argument("run_compute_matched: missing matched pair for " + ms.name +
                                " seed " + std::to_string(seed));
  }
  for (const RunRecord& r : ledger)
    if (r.model == ms.name && r.recipe == "aletheia" && r.seed == seed) {
      if (r.status != "ok")
        throw std::invalid_argument("run_compute_matched: matched pair for " + ms.name +
                                    " seed " + std::to_string(seed) + " failed");
      return build_plan(r.selected_layers, spec.attn_rank, spec.mlp_rank, spec.alpha);
    }
  throw std::invalid_argument("run_compute_matched: missing matched pair for " + ms.name +
                              " seed " + std::to_string(seed));
}

void run_cm_cell(const ModelSpec& ms, uint64_t seed, const CampaignSpec& spec,
                 const Dataset& data, const BenchSet& benches, const Exists& exists,
                 const Persist& persist, const LoraPlan* known_plan, RunRecord* out) {
  guarded(ms, seed, "aletheia_cm", spec.steps_cm, exists, persist,
          [&] {
            const LoraPlan plan = known_plan
                                      ? *known_plan
                                      : plan_from_ledger(spec.ledger_path, ms, seed, spec);
            return run_recipe(ms, seed, "aletheia_cm", plan, 0.0, spec.steps_cm, spec, data,
                              benches);
          },
          out);
}

}  // namespace

std::vector<ModelSpec> desk_grid() {
  auto make = [](std::string name, int layers, int d_model, int d_ff) {
    ModelSpec ms;
    ms.name = std::move(name);
    ms.config.n_layers = layers;
    ms.config.d_model = d_model;
    ms.config.d_ff = d_ff;
    return ms;
  };
  return {make("t8x64", 8, 64, 256), make("t12x128", 12, 128, 512),
          make("t16x128", 16, 128, 512)};
}

void validate(const CampaignSpec& spec) {
  if (spec.models.empty()) throw std::invalid_argument("campaign: no models");
  std::set<std::string> names;
  for (const ModelSpec& ms : spec.models) {
    validate(ms.config);
    if (ms.name.empty()) throw std::invalid_argument("campaign: unnamed model");
    if (!names.insert(ms.name).second)
      throw std::invalid_argument("campaign: duplicate model name " + ms.name);
  }
  if (spec.seeds.empty()) throw std::invalid_argument("campaign: no seeds");
  if (std::set<uint64_t>(spec.seeds.begin(), spec.seeds.end()).size() != spec.seeds.size())
    throw std::invalid_argument("campaign: seeds must be distinct");
  if (spec.recipes.empty()) throw std::invalid_argument("campaign: no recipes");
  bool has_ale = false, has_cm = false;
  for (const std::string& r : spec.recipes) {
    if (r != "standard" && r != "aletheia" && r != "aletheia_cm")
      throw std::invalid_argument("campaign: unknown recipe " + r);
    has_ale |= r == "aletheia";
    has_cm |= r == "aletheia_cm";
  }
  if (has_cm && !has_ale)
    throw std::invalid_argument("campaign: aletheia_cm needs aletheia in the recipe set");
  if (spec.steps_matched < 1) throw std::invalid_argument("campaign: steps_matched must be >= 1");
  if (has_cm && spec.steps_cm <= spec.steps_matched)
    throw std::invalid_argument("campaign: steps_cm must exceed steps_matched");
  if (!(spec.select_percent > 0.0 && spec.select_percent <= 100.0))
    throw std::invalid_argument("campaign: select_percent outside (0, 100]");
  if (spec.attn_rank < 1 || spec.mlp_rank < 1)
    throw std::invalid_argument("campaign: ranks must be >= 1");
  if (spec.micro_batch < 1 || spec.grad_accum < 1)
    throw std::invalid_argument("campaign: batch shape must be >= 1");
  if (spec.probe_batches < 1) throw std::invalid_argument("campaign: probe_batches must be >= 1");
  if (spec.probe_chunk < 0) throw std::invalid_argument("campaign: probe_chunk must be >= 0");
  if (spec.eval_batch < 1) throw std::invalid_argument("campaign: eval_batch must be >= 1");
  if (spec.bench_items < 1) throw std::invalid_argument("campaign: bench_items must be >= 1");
  if (spec.jobs < 1) throw std::invalid_argument("campaign: jobs must be >= 1");
}

PairOutcome run_pair(const ModelSpec& model, uint64_t seed, const CampaignSpec& spec) {
  validate(spec);
  const Dataset data = Dataset::generate(spec.data, model.config.vocab_size);
  const BenchSet benches = make_benches(spec, model.config.vocab_size);

  Exists exists = [&](const RunRecord& rec) {
    return !spec.ledger_path.empty() && ledger_contains(spec.ledger_path, rec);
  };
  Persist persist = [&](const RunRecord& rec) {
    if (!spec.ledger_path.empty()) ledger_append(spec.ledger_path, rec);
  };

  PairOutcome out;
  run_pair_cell(model, seed, spec, data, benches, exists, persist, &out);
  return out;
}

RunRecord run_compute_matched(const ModelSpec& model, uint64_t seed, const CampaignSpec& spec) {
  validate(spec);
  const Dataset data = Dataset::generate(spec.data, model.config.vocab_size);
  const BenchSet benches = make_benches(spec, model.config.vocab_size);
  const LoraPlan plan = plan_from_ledger(spec.ledger_path, model, seed, spec);

  RunRecord out;
  run_cm_cell(model, seed, spec, data, benches, [](const RunRecord&) { return false; },
              [&](const RunRecord& rec) {
                if (!spec.ledger_path.empty()) ledger_append(spec.ledger_path, rec);
              },
              &plan, &out);
  return out;
}

Ledger run_campaign(const CampaignSpec& spec) {
  validate(spec);
  if (spec.ledger_path.empty())
    throw std::invalid_argument("run_campaign: ledger_path is required");

  // shared read-only inputs, one per distinct vocabulary
  std::map<int, Dataset> data_by_vocab;
  std::map<int, BenchSet> bench_by_vocab;
  for (const ModelSpec& ms : spec.models) {
    const int v = ms.config.vocab_size;
    if (!data_by_vocab.count(v)) {
      data_by_vocab.emplace(v, Dataset::generate(spec.data, v));
      bench_by_vocab.emplace(v, make_benches(spec, v));
    }
  }

  struct Cell {
    const ModelSpec* model;
    uint64_t seed;
  };
  std::vector<Cell> cells;
  for (const ModelSpec& ms : spec.models)
    for (uint64_t seed : spec.seeds) cells.push_back({&ms, seed});

  const bool want_cm =
      std::count(spec.recipes.begin(), spec.recipes.end(), "aletheia_cm") > 0;

  std::mutex ledger_mu;
  Exists exists = [&](const RunRecord& rec) {
    std::lock_guard<std::mutex> lock(ledger_mu);
    return ledger_contains(spec.ledger_path, rec);
  };
  Persist persist = [&](const RunRecord& rec) {
    std::lock_guard<std::mutex> lock(ledger_mu);
    if (!ledger_contains(spec.ledger_path, rec)) ledger_append(spec.ledger_path, rec);
  };

  std::atomic<size_t> next{0};
  auto worker = [&] {
    for (;;) {
      const size_t i = next.fetch_add(1);
      if (i >= cells.size()) return;
      const Cell& cell = cells[i];
      const Dataset& data = data_by_vocab.at(cell.model->config.vocab_size);
      const BenchSet& benches = bench_by_vocab.at(cell.model->config.vocab_size);

      PairOutcome pair;
      run_pair_cell(*cell.model, cell.seed, spec, data, benches, exists, persist, &pair);
      if (want_cm) {
        // reuse the in-memory plan when this worker just produced it
        const bool fresh_ale = pair.ale_rec.status == "ok" && !pair.ale_rec.selected_layers.empty();
        LoraPlan plan;
        if (fresh_ale)
          plan = build_plan(pair.ale_rec.selected_layers, spec.attn_rank, spec.mlp_rank,
                            spec.alpha);
        if (!fresh_ale) {
          try {
            std::lock_guard<std::mutex> lock(ledger_mu);
            plan = plan_from_ledger(spec.ledger_path, *cell.model, cell.seed, spec);
          } catch (const std::exception& e) {
            RunRecord rec = base_skeleton(*cell.model, cell.seed, "aletheia_cm", spec.steps_cm);
            if (!exists(rec)) {
              rec.status = "failed";
              rec.failure_reason = one_line(e.what());
              persist(rec);
            }
            continue;
          }
        }
        run_cm_cell(*cell.model, cell.seed, spec, data, benches, exists, persist, &plan,
                    nullptr);
      }
    }
  };

  const size_t n_workers = std::min(size_t(spec.jobs), cells.size());
  if (n_workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (size_t i = 0; i < n_workers; ++i) threads.emplace_back(worker);
    for (std::thread& t : threads) t.join();
  }
  return ledger_load(spec.ledger_path);
}

}  // namespace selora
