#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "selora/autodiff.hpp"
#include "selora/tensor.hpp"

namespace selora {

struct ModelConfig {
  int n_layers{12};
  int d_model{128};
  int n_heads{4};
  int d_ff{512};
  int vocab_size{64};
  int max_seq{32};
  uint64_t seed{42};
};

/// Throws invalid_argument naming the offending field.
void validate(const ModelConfig& cfg);

/// Which layers get adapters and at what shape. `selected` is kept sorted.
struct LoraPlan {
  std::vector<int> selected;
  int attn_rank{16};
  int mlp_rank{16};
  double alpha{32.0};
};

/// One low-rank pair attached to a projection. Contribution to the host
/// output is (alpha/rank) * (x @ A^T) @ B^T, zero at init because B is zero.
struct LoraAdapter {
  std::string host;  // q, v, o, up, down
  int layer_id{0};
  int rank{0};
  double alpha{0.0};
  Parameter A;  // [rank, d_in]
  Parameter B;  // [d_out, rank]
};

/// Pre-norm causal transformer: RMSNorm, multi-head attention, SiLU MLP,
/// learned positional embedding, untied output head. Base weights start
/// frozen; only injected adapters train.
class TransformerModel {
public:
  explicit TransformerModel(const ModelConfig& cfg);

  TransformerModel(const TransformerModel&) = delete;
  TransformerModel& operator=(const TransformerModel&) = delete;

  const ModelConfig& config() const { return cfg_; }
  int layer_count() const { return cfg_.n_layers; }

  /// Every parameter (base first in construction order, then adapters).
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;

  /// [batch, seq, vocab] logits under a causal mask.
  Var logits(Graph& g, const std::vector<int32_t>& tokens, int64_t batch, int64_t seq);

  /// Mean masked cross-entropy of next-token targets (-1 = unscored).
  Var loss(Graph& g, const std::vector<int32_t>& tokens, const std::vector<int32_t>& targets,
           int64_t batch, int64_t seq);

  /// Attach adapters to q, v, o, up, down of the planned layers. Adapter
  /// weights are drawn from a stream seeded by config.seed, in ascending
  /// layer order, so equal (seed, plan) pairs produce equal adapters.
  void inject_lora(const LoraPlan& plan);

  bool has_adapters() const { return !adapters_.empty(); }
  const LoraPlan& plan() const;
  const std::vector<LoraAdapter>& adapters() const { return adapters_; }

  int64_t count_trainable() const;

  /// Digest of every parameter value, order-sensitive.
  std::string param_hash() const;

  void save(const std::string& path) const;
  static std::unique_ptr<TransformerModel> load(const std::string& path);

private:
  struct Block {
    Parameter attn_norm, wq, wk, wv, wo;
    Parameter mlp_norm, wup, wdown;
  };

  Var project(Graph& g, Var x, Parameter& w, int layer, const char* host);
  LoraAdapter* find_adapter(int layer, const char* host);

  ModelConfig cfg_;
  Parameter tok_emb_, pos_emb_, final_norm_, head_;
  std::vector<Block> blocks_;
  std::vector<LoraAdapter> adapters_;
  bool injected_{false};
  LoraPlan plan_;
};

}  // namespace selora
