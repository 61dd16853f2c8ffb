#include "selora/trainer.hpp"

#include <chrono>
#include <cmath>
#include <stdexcept>

namespace selora {

void validate(const TrainConfig& cfg) {
  if (cfg.warmup_steps < 0 || cfg.warmup_steps >= cfg.total_steps)
    throw std::invalid_argument("warmup_steps " + std::to_string(cfg.warmup_steps) +
                                " must lie in [0, total_steps=" +
                                std::to_string(cfg.total_steps) + ")");
  if (cfg.grad_accum < 1) throw std::invalid_argument("grad_accum must be >= 1");
  if (!(cfg.lr_max > 0.0)) throw std::invalid_argument("lr_max must be positive");
}

double cosine_lr(int step, const TrainConfig& cfg) {
  if (step < 0 || step > cfg.total_steps)
    throw std::invalid_argument("step " + std::to_string(step) + " outside [0, " +
                                std::to_string(cfg.total_steps) + "]");
  if (step < cfg.warmup_steps)
    return cfg.lr_max * double(step + 1) / double(cfg.warmup_steps);
  const double progress =
      double(step - cfg.warmup_steps) / double(cfg.total_steps - cfg.warmup_steps);
  return cfg.lr_max * 0.5 * (1.0 + std::cos(M_PI * progress));
}

AdamW::AdamW(std::vector<Parameter*> trainable) {
  slots_.reserve(trainable.size());
  for (Parameter* p : trainable)
    slots_.push_back({p, Tensor::zeros(p->value.shape()), Tensor::zeros(p->value.shape())});
}

bool AdamW::step(double lr, const TrainConfig& cfg) {
  for (const Slot& s : slots_)
    if (!s.p->grad.all_finite()) return false;

  ++t_;
  const double bc1 = 1.0 - std::pow(cfg.beta1, double(t_));
  const double bc2 = 1.0 - std::pow(cfg.beta2, double(t_));
  for (Slot& s : slots_) {
    double* p = s.p->value.data();
    const double* g = s.p->grad.data();
    double* m = s.m.data();
    double* v = s.v.data();
    for (int64_t i = 0; i < s.p->value.numel(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] -= lr * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * p[i]);
    }
  }
  return true;
}

RunResult train(TransformerModel& model, const DataStream& stream, const TrainConfig& cfg) {
  validate(cfg);
  std::vector<Parameter*> trainable;
  for (Parameter* p : model.parameters())
    if (p->trainable) trainable.push_back(p);
  if (trainable.empty())
    throw std::invalid_argument("train: nothing is trainable (adapters not injected?)");

  AdamW opt(trainable);
  RunResult res;
  res.step_losses.reserve(size_t(cfg.total_steps));

  const auto t0 = std::chrono::steady_clock::now();
  for (int step = 0; step < cfg.total_steps; ++step) {
    for (Parameter* p : trainable) p->zero_grad();
    double loss_sum = 0.0;
    for (int micro = 0; micro < cfg.grad_accum; ++micro) {
      const TokenBatch b = stream.batch(int64_t(step) * cfg.grad_accum + micro);
      Graph g(cfg.precision);
      Var loss = model.loss(g, b.inputs, b.targets, b.batch, b.seq);
      loss_sum += loss.value()[0];
      if (!std::isfinite(loss_sum)) break;
      g.backward(scale(loss, 1.0 / double(cfg.grad_accum)));
    }
    const double step_loss = loss_sum / double(cfg.grad_accum);
    res.step_losses.push_back(step_loss);
    if (!std::isfinite(step_loss)) {
      res.status = "diverged";
      break;
    }
    if (!opt.step(cosine_lr(step, cfg), cfg)) {
      res.status = "diverged";
      break;
    }
  }
  for (Parameter* p : trainable) p->zero_grad();
  const auto t1 = std::chrono::steady_clock::now();

  res.wall_time_s = std::chrono::duration<double>(t1 - t0).count();
  if (!res.step_losses.empty()) res.final_train_loss = res.step_losses.back();
  return res;
}

Speedup measure_speedup(double t_std_s, double t_ale_s) {
  if (!(t_std_s > 0.0) || !(t_ale_s > 0.0))
    throw std::invalid_argument("measure_speedup needs positive times");
  return {100.0 * (t_std_s - t_ale_s) / t_std_s, t_std_s / t_ale_s};
}

Speedup measure_speedup(const RunResult& std_run, const RunResult& ale_run) {
  if (!std_run.ok() || !ale_run.ok())
    throw std::invalid_argument("measure_speedup: diverged run has no speedup");
  return measure_speedup(std_run.wall_time_s, ale_run.wall_time_s);
}

}  // namespace selora
