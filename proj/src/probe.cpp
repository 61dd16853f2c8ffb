#include "selora/probe.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

namespace selora {

namespace {

using ordered_json = nlohmann::ordered_json;

class ModelProbeTarget : public ProbeTarget {
public:
  ModelProbeTarget(TransformerModel& model, const std::vector<TokenBatch>& batches)
      : model_(model), batches_(batches) {}

  int layer_count() override { return model_.layer_count(); }
  std::vector<Parameter*> parameters() override { return model_.parameters(); }
  int batch_count() override { return int(batches_.size()); }
  Var batch_loss(Graph& g, int index) override {
    const TokenBatch& b = batches_[size_t(index)];
    return model_.loss(g, b.inputs, b.targets, b.batch, b.seq);
  }

private:
  TransformerModel& model_;
  const std::vector<TokenBatch>& batches_;
};

}  // namespace

ProbeReport gradient_probe(ProbeTarget& target, const ProbeConfig& cfg) {
  if (cfg.n_batches < 1) throw std::invalid_argument("probe needs n_batches >= 1");
  if (cfg.chunk_size < 1) throw std::invalid_argument("probe needs chunk_size >= 1");
  const int L = target.layer_count();
  if (L <= 0) throw std::invalid_argument("probe target has no layers");
  if (target.batch_count() < cfg.n_batches)
    throw std::invalid_argument("probe needs " + std::to_string(cfg.n_batches) +
                                " batches, target has " + std::to_string(target.batch_count()));

  auto params = target.parameters();
  std::vector<bool> saved_flags(params.size());
  std::vector<std::vector<Parameter*>> by_layer(static_cast<size_t>(L));
  for (size_t i = 0; i < params.size(); ++i) {
    saved_flags[i] = params[i]->trainable;
    params[i]->trainable = false;
    if (params[i]->layer_id) {
      const int tag = *params[i]->layer_id;
      if (tag < 0 || tag >= L)
        throw std::invalid_argument("parameter " + params[i]->name + " tagged with layer " +
                                    std::to_string(tag) + " outside [0, " + std::to_string(L) +
                                    ")");
      by_layer[size_t(tag)].push_back(params[i]);
    }
  }

  ProbeReport rep;
  rep.g.assign(size_t(L), 0.0);
  for (int start = 0; start < L; start += cfg.chunk_size) {
    const int end = std::min(L, start + cfg.chunk_size);
    for (int l = start; l < end; ++l)
      for (Parameter* p : by_layer[size_t(l)]) p->trainable = true;
    for (int b = 0; b < cfg.n_batches; ++b) {
      for (int l = start; l < end; ++l)
        for (Parameter* p : by_layer[size_t(l)]) p->zero_grad();
      Graph g;
      g.backward(target.batch_loss(g, b));
      for (int l = start; l < end; ++l) {
        double sq = 0.0;
        for (Parameter* p : by_layer[size_t(l)])
          for (int64_t i = 0; i < p->grad.numel(); ++i) sq += p->grad[i] * p->grad[i];
        rep.g[size_t(l)] += std::sqrt(sq);
      }
    }
    for (int l = start; l < end; ++l)
      for (Parameter* p : by_layer[size_t(l)]) p->trainable = false;
  }

  for (size_t i = 0; i < params.size(); ++i) params[i]->trainable = saved_flags[i];
  for (Parameter* p : params) p->zero_grad();

  const double total = std::accumulate(rep.g.begin(), rep.g.end(), 0.0);
  rep.normalized.assign(size_t(L), 0.0);
  if (total > 0.0)
    for (int l = 0; l < L; ++l) rep.normalized[size_t(l)] = rep.g[size_t(l)] / total;
  rep.ranking.resize(size_t(L));
  std::iota(rep.ranking.begin(), rep.ranking.end(), 0);
  std::stable_sort(rep.ranking.begin(), rep.ranking.end(),
                   [&](int a, int b) { return rep.g[size_t(a)] > rep.g[size_t(b)]; });
  return rep;
}

ProbeReport gradient_probe(TransformerModel& model, const std::vector<TokenBatch>& batches,
                           const ProbeConfig& cfg) {
  ModelProbeTarget target(model, batches);
  return gradient_probe(target, cfg);
}

std::string ProbeReport::to_json() const {
  ordered_json j;
  j["layers"] = layers();
  j["g"] = g;
  j["normalized"] = normalized;
  j["ranking"] = ranking;
  return j.dump(2) + "\n";
}

ProbeReport ProbeReport::from_json(const std::string& text) {
  ordered_json j = ordered_json::parse(text);
  ProbeReport rep;
  rep.g = j.at("g").get<std::vector<double>>();
  rep.normalized = j.at("normalized").get<std::vector<double>>();
  rep.ranking = j.at("ranking").get<std::vector<int>>();
  const int L = j.at("layers").get<int>();
  if (L != rep.layers() || rep.normalized.size() != rep.g.size() ||
      rep.ranking.size() != rep.g.size())
    throw std::invalid_argument("probe report arrays disagree with layer count " +
                                std::to_string(L));
  return rep;
}

std::vector<int> select_layers(const ProbeReport& report, const SelectionConfig& cfg, int L) {
  if (L <= 0) throw std::invalid_argument("select_layers: no layers");
  if (!(cfg.percent > 0.0 && cfg.percent <= 100.0))
    throw std::invalid_argument("select_layers: percent " + std::to_string(cfg.percent) +
                                " outside (0, 100]");
  if (report.layers() != L)
    throw std::invalid_argument("select_layers: report covers " +
                                std::to_string(report.layers()) + " layers, expected " +
                                std::to_string(L));
  const double exact = cfg.percent * double(L) / 100.0;
  const double snapped = std::round(exact);
  // keep 50% of 24 at 12 rather than letting 11.999999999 ceil astray
  int64_t count = std::abs(exact - snapped) < 1e-9 ? int64_t(snapped)
                                                   : int64_t(std::ceil(exact));
  count = std::max<int64_t>(1, std::min<int64_t>(count, L));
  std::vector<int> selected(report.ranking.begin(), report.ranking.begin() + count);
  std::sort(selected.begin(), selected.end());
  return selected;
}

LoraPlan build_plan(const std::vector<int>& selected, int attn_rank, int mlp_rank, double alpha) {
  if (selected.empty()) throw std::invalid_argument("build_plan: empty layer selection");
  if (attn_rank < 1 || mlp_rank < 1)
    throw std::invalid_argument("build_plan: ranks must be >= 1");
  LoraPlan plan;
  plan.selected = selected;
  std::sort(plan.selected.begin(), plan.selected.end());
  plan.attn_rank = attn_rank;
  plan.mlp_rank = mlp_rank;
  plan.alpha = alpha;
  return plan;
}

double probe_overhead_fraction(double probe_time_s, double train_time_s) {
  if (!(probe_time_s > 0.0) || !(train_time_s > 0.0))
    throw std::invalid_argument("probe_overhead_fraction needs positive times");
  return probe_time_s / (probe_time_s + train_time_s);
}

}  // namespace selora
