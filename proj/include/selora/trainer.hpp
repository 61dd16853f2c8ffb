#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "selora/dataset.hpp"
#include "selora/model.hpp"

namespace selora {

struct TrainConfig {
  double lr_max{5e-4};
  double beta1{0.9};
  double beta2{0.95};
  double eps{1e-7};
  double weight_decay{0.01};
  int warmup_steps{20};
  int total_steps{200};
  int grad_accum{2};
  uint64_t seed{42};
  Precision precision{Precision::f64};
};

void validate(const TrainConfig& cfg);

/// Linear warmup to lr_max, cosine decay to zero at total_steps.
double cosine_lr(int step, const TrainConfig& cfg);

/// AdamW with decoupled weight decay over a fixed set of trainable
/// parameters. Moments live here; gradients stay in the parameters.
class AdamW {
public:
  explicit AdamW(std::vector<Parameter*> trainable);

  /// Applies one update from the accumulated grads. Returns false (and
  /// changes nothing) when any gradient is non-finite.
  bool step(double lr, const TrainConfig& cfg);

  int64_t steps_taken() const { return t_; }

private:
  struct Slot {
    Parameter* p;
    Tensor m, v;
  };
  std::vector<Slot> slots_;
  int64_t t_{0};
};

struct RunResult {
  double wall_time_s{0.0};
  double final_train_loss{0.0};
  std::vector<double> step_losses;
  std::string status{"ok"};  // ok | diverged

  bool ok() const { return status == "ok"; }
};

/// Runs total_steps optimizer steps of grad_accum micro-batches each,
/// reading stream.batch(step * grad_accum + micro). Wall time covers the
/// loop only; any probe happens (and is timed) outside.
RunResult train(TransformerModel& model, const DataStream& stream, const TrainConfig& cfg);

struct Speedup {
  double percent;
  double ratio;
};

Speedup measure_speedup(double t_std_s, double t_ale_s);
Speedup measure_speedup(const RunResult& std_run, const RunResult& ale_run);

}  // namespace selora
