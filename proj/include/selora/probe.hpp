#pragma once

#include <string>
#include <vector>

#include "selora/autodiff.hpp"
#include "selora/dataset.hpp"
#include "selora/model.hpp"

namespace selora {

struct ProbeConfig {
  int n_batches{5};
  int chunk_size{8};
};

/// Per-layer accumulated gradient norms with their normalization and the
/// descending-norm ranking (ties resolved toward the lower layer index).
struct ProbeReport {
  std::vector<double> g;
  std::vector<double> normalized;
  std::vector<int> ranking;

  int layers() const { return int(g.size()); }
  std::string to_json() const;
  static ProbeReport from_json(const std::string& text);
};

/// Anything the gradient probe can inspect: tagged parameters plus a loss
/// that is a pure function of them, batch by batch.
class ProbeTarget {
public:
  virtual ~ProbeTarget() = default;
  virtual int layer_count() = 0;
  virtual std::vector<Parameter*> parameters() = 0;
  virtual int batch_count() = 0;
  virtual Var batch_loss(Graph& g, int index) = 0;
};

/// Walks layers in chunks: inside a chunk only those layers' parameters are
/// trainable, and each of the first n_batches batches contributes the L2 norm
/// of the layer's gradient to g. Flags are restored and grads cleared on the
/// way out; parameter values are never touched.
ProbeReport gradient_probe(ProbeTarget& target, const ProbeConfig& cfg);

/// Probe a transformer over the given batches.
ProbeReport gradient_probe(TransformerModel& model, const std::vector<TokenBatch>& batches,
                           const ProbeConfig& cfg);

struct SelectionConfig {
  double percent{50.0};
};

/// Top ceil(percent * L / 100) layers of the ranking, ascending order.
std::vector<int> select_layers(const ProbeReport& report, const SelectionConfig& cfg, int L);

LoraPlan build_plan(const std::vector<int>& selected, int attn_rank, int mlp_rank, double alpha);

/// probe_time / (probe_time + train_time)
double probe_overhead_fraction(double probe_time_s, double train_time_s);

}  // namespace selora
