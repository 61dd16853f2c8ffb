#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "selora/dataset.hpp"
#include "selora/model.hpp"

namespace selora {

// Mean masked cross-entropy over a fixed set of batches. The model is read
// only: trainable flags are saved and cleared so no backprop closures are
// recorded, and gradients are never touched. Positions with target -1 are
// excluded; the mean weights every scored position equally across the whole
// set, so unequal batch sizes are handled correctly.
double eval_loss(TransformerModel& model, const std::vector<TokenBatch>& batches);

// A single benchmark question. Multiple-choice items carry `choices` and the
// index of the correct one; generation items carry the reference `target`
// continuation instead.
struct BenchmarkItem {
  std::vector<int32_t> prompt;
  std::vector<std::vector<int32_t>> choices;
  int32_t answer = 0;
  std::vector<int32_t> target;
};

enum class BenchmarkKind { multiple_choice, exact_match };

struct BenchmarkTask {
  std::string name;
  BenchmarkKind kind = BenchmarkKind::multiple_choice;
  std::vector<BenchmarkItem> items;
};

// Throws std::invalid_argument when the task is structurally broken (no
// items, empty prompt, out-of-range answer index, missing choices/target).
void validate_task(const BenchmarkTask& task);

// JSONL persistence: line 1 is a metadata object {"name":..., "kind":...},
// every following line is one item. Round-trips exactly.
void save_task_jsonl(const BenchmarkTask& task, const std::string& path);
BenchmarkTask load_task_jsonl(const std::string& path);

// Synthetic held-out suites drawn from the same token grammar the training
// set uses, so fine-tuning on the grammar can move them in either direction.
// Each generator is deterministic in (n_items, seed, vocab_size).
BenchmarkTask make_knowledge_suite(int n_items, uint64_t seed, int vocab_size = 64);
BenchmarkTask make_math_suite(int n_items, uint64_t seed, int vocab_size = 64);
BenchmarkTask make_code_suite(int n_items, uint64_t seed, int vocab_size = 64);

struct BenchmarkScore {
  std::string task;
  double accuracy = 0.0;
  int n_items = 0;
};

// Multiple choice: each candidate continuation is scored by its summed token
// log-likelihood after the prompt (divided by choice length when
// length_normalized is set); the highest-scoring choice is the prediction,
// with ties going to the lowest index. Exact match: greedy decoding from the
// prompt, one token at a time, compared verbatim against the reference.
// Throws when decoding would run past the model's max_seq.
BenchmarkScore score_benchmark(TransformerModel& model, const BenchmarkTask& task,
                               bool length_normalized = false);

// Accuracy change from base to fine-tuned model on one suite, in percentage
// points (positive = the fine-tuned model improved).
struct ForgettingDelta {
  std::string task;
  double base_acc = 0.0;
  double tuned_acc = 0.0;
  double delta_pp = 0.0;
};

ForgettingDelta forgetting_delta(const BenchmarkScore& base, const BenchmarkScore& tuned);

// Gap between the selective and standard deltas on the same suite:
// selective minus standard, so positive means the selective recipe came out
// ahead (retained more, or forgot less).
double extra_forgetting(const ForgettingDelta& standard, const ForgettingDelta& selective);

// Accuracy gap between two fine-tuned models on the same suite, in
// percentage points (positive = selective scored higher).
double benchmark_delta(const BenchmarkScore& standard, const BenchmarkScore& selective);

}  // namespace selora
