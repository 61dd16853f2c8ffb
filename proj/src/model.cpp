#include "selora/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "selora/rng.hpp"
#include "sha256.hpp"

namespace selora {

namespace {

using ordered_json = nlohmann::ordered_json;

constexpr char kMagic[8] = {'S', 'L', 'R', 'C', 'K', 'P', 'T', '1'};
constexpr uint64_t kAdapterStream = 0x6c6f7261;  // distinct from any data/init stream

Tensor gaussian_tensor(Shape shape, Rng& rng, double stddev) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.gaussian(0.0, stddev);
  return t;
}

const char* kAdapterHosts[5] = {"q", "v", "o", "up", "down"};

}  // namespace

void validate(const ModelConfig& cfg) {
  if (cfg.n_layers < 2)
    throw std::invalid_argument("ModelConfig.n_layers must be >= 2, got " +
                                std::to_string(cfg.n_layers));
  if (cfg.vocab_size < 8)
    throw std::invalid_argument("ModelConfig.vocab_size must be >= 8, got " +
                                std::to_string(cfg.vocab_size));
  if (cfg.d_model <= 0 || cfg.n_heads <= 0 || cfg.d_ff <= 0 || cfg.max_seq <= 0)
    throw std::invalid_argument("ModelConfig dimensions must be positive");
  if (cfg.d_model % cfg.n_heads != 0)
    throw std::invalid_argument("ModelConfig.d_model " + std::to_string(cfg.d_model) +
                                " not divisible by n_heads " + std::to_string(cfg.n_heads));
}

TransformerModel::TransformerModel(const ModelConfig& cfg) : cfg_(cfg) {
  validate(cfg);
  Rng rng(cfg.seed);
  const int64_t D = cfg.d_model, F = cfg.d_ff, V = cfg.vocab_size;
  const double proj_std = 1.0 / std::sqrt(double(D));

  tok_emb_ = Parameter("tok_emb", gaussian_tensor({V, D}, rng, 0.02));
  pos_emb_ = Parameter("pos_emb", gaussian_tensor({cfg.max_seq, D}, rng, 0.02));

  blocks_.reserve(size_t(cfg.n_layers));
  for (int l = 0; l < cfg.n_layers; ++l) {
    std::string prefix = "layer" + std::to_string(l) + ".";
    Block b;
    b.attn_norm = Parameter(prefix + "attn_norm", Tensor::full({D}, 1.0), l);
    b.wq = Parameter(prefix + "q", gaussian_tensor({D, D}, rng, proj_std), l);
    b.wk = Parameter(prefix + "k", gaussian_tensor({D, D}, rng, proj_std), l);
    b.wv = Parameter(prefix + "v", gaussian_tensor({D, D}, rng, proj_std), l);
    b.wo = Parameter(prefix + "o", gaussian_tensor({D, D}, rng, proj_std), l);
    b.mlp_norm = Parameter(prefix + "mlp_norm", Tensor::full({D}, 1.0), l);
    b.wup = Parameter(prefix + "up", gaussian_tensor({D, F}, rng, proj_std), l);
    b.wdown = Parameter(prefix + "down", gaussian_tensor({F, D}, rng, proj_std), l);
    blocks_.push_back(std::move(b));
  }

  final_norm_ = Parameter("final_norm", Tensor::full({D}, 1.0));
  // small head init keeps untrained logits near uniform
  head_ = Parameter("head", gaussian_tensor({D, V}, rng, 0.02));
}

std::vector<Parameter*> TransformerModel::parameters() {
  std::vector<Parameter*> out;
  out.reserve(4 + blocks_.size() * 8 + adapters_.size() * 2);
  out.push_back(&tok_emb_);
  out.push_back(&pos_emb_);
  for (Block& b : blocks_) {
    out.push_back(&b.attn_norm);
    out.push_back(&b.wq);
    out.push_back(&b.wk);
    out.push_back(&b.wv);
    out.push_back(&b.wo);
    out.push_back(&b.mlp_norm);
    out.push_back(&b.wup);
    out.push_back(&b.wdown);
  }
  out.push_back(&final_norm_);
  out.push_back(&head_);
  for (LoraAdapter& a : adapters_) {
    out.push_back(&a.A);
    out.push_back(&a.B);
  }
  return out;
}

std::vector<const Parameter*> TransformerModel::parameters() const {
  auto mut = const_cast<TransformerModel*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

LoraAdapter* TransformerModel::find_adapter(int layer, const char* host) {
  for (LoraAdapter& a : adapters_)
    if (a.layer_id == layer && a.host == host) return &a;
  return nullptr;
}

Var TransformerModel::project(Graph& g, Var x, Parameter& w, int layer, const char* host) {
  Var y = matmul(x, g.param(w));
  if (LoraAdapter* a = find_adapter(layer, host)) {
    Var low = matmul(x, transpose_last2(g.param(a->A)));
    Var up = matmul(low, transpose_last2(g.param(a->B)));
    y = add(y, scale(up, a->alpha / double(a->rank)));
  }
  return y;
}

Var TransformerModel::logits(Graph& g, const std::vector<int32_t>& tokens, int64_t batch,
                             int64_t seq) {
  if (seq <= 0 || seq > cfg_.max_seq)
    throw std::invalid_argument("sequence length " + std::to_string(seq) +
                                " outside [1, max_seq=" + std::to_string(cfg_.max_seq) + "]");
  const int H = cfg_.n_heads;
  const double inv_sqrt_hd = 1.0 / std::sqrt(double(cfg_.d_model / H));

  Var h = add(embed(g.param(tok_emb_), tokens, batch, seq),
              rows_prefix(g.param(pos_emb_), seq));

  for (int l = 0; l < cfg_.n_layers; ++l) {
    Block& blk = blocks_[size_t(l)];

    Var a = rmsnorm(h, g.param(blk.attn_norm));
    Var q = split_heads(project(g, a, blk.wq, l, "q"), H);
    Var k = split_heads(matmul(a, g.param(blk.wk)), H);
    Var v = split_heads(project(g, a, blk.wv, l, "v"), H);
    Var scores = scale(matmul(q, transpose_last2(k)), inv_sqrt_hd);
    Var ctx = merge_heads(matmul(causal_softmax(scores), v));
    h = add(h, project(g, ctx, blk.wo, l, "o"));

    Var m = rmsnorm(h, g.param(blk.mlp_norm));
    Var u = silu(project(g, m, blk.wup, l, "up"));
    h = add(h, project(g, u, blk.wdown, l, "down"));
  }

  Var fin = rmsnorm(h, g.param(final_norm_));
  return matmul(fin, g.param(head_));
}

Var TransformerModel::loss(Graph& g, const std::vector<int32_t>& tokens,
                           const std::vector<int32_t>& targets, int64_t batch, int64_t seq) {
  return cross_entropy(logits(g, tokens, batch, seq), targets, -1);
}

void TransformerModel::inject_lora(const LoraPlan& plan) {
  if (injected_) throw std::logic_error("inject_lora: model already has adapters");
  if (plan.selected.empty()) throw std::invalid_argument("inject_lora: empty layer selection");
  if (plan.attn_rank < 1 || plan.mlp_rank < 1)
    throw std::invalid_argument("inject_lora: ranks must be >= 1");

  std::vector<int> layers = plan.selected;
  std::sort(layers.begin(), layers.end());
  for (size_t i = 0; i < layers.size(); ++i) {
    if (layers[i] < 0 || layers[i] >= cfg_.n_layers)
      throw std::invalid_argument("inject_lora: layer " + std::to_string(layers[i]) +
                                  " outside [0, " + std::to_string(cfg_.n_layers) + ")");
    if (i > 0 && layers[i] == layers[i - 1])
      throw std::invalid_argument("inject_lora: duplicate layer " + std::to_string(layers[i]));
  }

  Rng rng = Rng(cfg_.seed).fork(kAdapterStream);
  const int64_t D = cfg_.d_model, F = cfg_.d_ff;
  adapters_.reserve(layers.size() * 5);
  for (int l : layers) {
    for (const char* host : kAdapterHosts) {
      const bool mlp = std::strcmp(host, "up") == 0 || std::strcmp(host, "down") == 0;
      const int64_t d_in = std::strcmp(host, "down") == 0 ? F : D;
      const int64_t d_out = std::strcmp(host, "up") == 0 ? F : D;
      const int rank = mlp ? plan.mlp_rank : plan.attn_rank;
      LoraAdapter a;
      a.host = host;
      a.layer_id = l;
      a.rank = rank;
      a.alpha = plan.alpha;
      std::string prefix = "layer" + std::to_string(l) + "." + host;
      a.A = Parameter(prefix + ".lora_A", gaussian_tensor({rank, d_in}, rng, 0.02), l);
      a.B = Parameter(prefix + ".lora_B", Tensor::zeros({d_out, rank}), l);
      a.A.trainable = true;
      a.B.trainable = true;
      adapters_.push_back(std::move(a));
    }
  }
  injected_ = true;
  plan_ = plan;
  plan_.selected = std::move(layers);
}

const LoraPlan& TransformerModel::plan() const {
  if (!injected_) throw std::logic_error("plan(): no adapters injected");
  return plan_;
}

int64_t TransformerModel::count_trainable() const {
  int64_t n = 0;
  for (const Parameter* p : parameters())
    if (p->trainable) n += p->numel();
  return n;
}

std::string TransformerModel::param_hash() const {
  std::vector<const double*> bufs;
  std::vector<size_t> lens;
  for (const Parameter* p : parameters()) {
    bufs.push_back(p->value.data());
    lens.push_back(size_t(p->value.numel()));
  }
  return sha256_doubles(bufs, lens);
}

void TransformerModel::save(const std::string& path) const {
  ordered_json header;
  header["format"] = "SLRCKPT1";
  header["config"] = {{"n_layers", cfg_.n_layers}, {"d_model", cfg_.d_model},
                      {"n_heads", cfg_.n_heads},   {"d_ff", cfg_.d_ff},
                      {"vocab_size", cfg_.vocab_size}, {"max_seq", cfg_.max_seq},
                      {"seed", cfg_.seed}};
  if (injected_) {
    header["plan"] = {{"selected", plan_.selected},
                      {"attn_rank", plan_.attn_rank},
                      {"mlp_rank", plan_.mlp_rank},
                      {"alpha", plan_.alpha}};
  } else {
    header["plan"] = nullptr;
  }
  auto params = parameters();
  ordered_json plist = ordered_json::array();
  for (const Parameter* p : params)
    plist.push_back({{"name", p->name}, {"shape", p->value.shape()}});
  header["params"] = std::move(plist);
  const std::string htext = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  out.write(kMagic, sizeof(kMagic));
  const uint32_t hlen = uint32_t(htext.size());
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(htext.data(), std::streamsize(htext.size()));
  for (const Parameter* p : params)
    out.write(reinterpret_cast<const char*>(p->value.data()),
              std::streamsize(p->value.numel() * int64_t(sizeof(double))));
  if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

std::unique_ptr<TransformerModel> TransformerModel::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("not a checkpoint file: " + path);
  uint32_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  std::string htext(hlen, '\0');
  in.read(htext.data(), std::streamsize(hlen));
  if (!in) throw std::runtime_error("truncated checkpoint header: " + path);
  ordered_json header = ordered_json::parse(htext);

  ModelConfig cfg;
  const auto& jc = header.at("config");
  cfg.n_layers = jc.at("n_layers").get<int>();
  cfg.d_model = jc.at("d_model").get<int>();
  cfg.n_heads = jc.at("n_heads").get<int>();
  cfg.d_ff = jc.at("d_ff").get<int>();
  cfg.vocab_size = jc.at("vocab_size").get<int>();
  cfg.max_seq = jc.at("max_seq").get<int>();
  cfg.seed = jc.at("seed").get<uint64_t>();

  auto model = std::make_unique<TransformerModel>(cfg);
  if (!header.at("plan").is_null()) {
    const auto& jp = header.at("plan");
    LoraPlan plan;
    plan.selected = jp.at("selected").get<std::vector<int>>();
    plan.attn_rank = jp.at("attn_rank").get<int>();
    plan.mlp_rank = jp.at("mlp_rank").get<int>();
    plan.alpha = jp.at("alpha").get<double>();
    model->inject_lora(plan);
  }

  auto params = model->parameters();
  const auto& plist = header.at("params");
  if (plist.size() != params.size())
    throw std::runtime_error("checkpoint lists " + std::to_string(plist.size()) +
                             " params, model has " + std::to_string(params.size()));
  for (size_t i = 0; i < params.size(); ++i) {
    const auto& entry = plist.at(i);
    if (entry.at("name").get<std::string>() != params[i]->name)
      throw std::runtime_error("checkpoint param order mismatch at " + params[i]->name);
    if (entry.at("shape").get<Shape>() != params[i]->value.shape())
      throw std::runtime_error("checkpoint shape mismatch for " + params[i]->name);
    in.read(reinterpret_cast<char*>(params[i]->value.data()),
            std::streamsize(params[i]->value.numel() * int64_t(sizeof(double))));
    if (!in) throw std::runtime_error("truncated checkpoint data at " + params[i]->name);
  }
  return model;
}

}  // namespace selora
