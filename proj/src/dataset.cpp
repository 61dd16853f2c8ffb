#include "selora/dataset.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

#include "selora/rng.hpp"

namespace selora {

namespace {

constexpr uint64_t kOrderStream = 0xda7a57;

std::vector<int32_t> make_sequence(int32_t tag, const std::vector<int32_t>& payload,
                                   int vocab_size, int seq_len) {
  std::vector<int32_t> raw;
  raw.reserve(size_t(seq_len) + 1);
  raw.push_back(kBos);
  raw.push_back(tag);
  raw.insert(raw.end(), payload.begin(), payload.end());
  raw.push_back(kSep);
  std::vector<int32_t> resp = grammar_response(tag, payload, vocab_size);
  raw.insert(raw.end(), resp.begin(), resp.end());
  while (raw.size() < size_t(seq_len) + 1) raw.push_back(kPad);
  return raw;
}

}  // namespace

std::vector<int32_t> grammar_response(int32_t tag, const std::vector<int32_t>& payload,
                                      int vocab_size) {
  const int32_t alphabet = vocab_size - kPayloadBase;
  std::vector<int32_t> ans;
  switch (tag) {
    case kTagCopy:
      ans = payload;
      break;
    case kTagReverse:
      ans.assign(payload.rbegin(), payload.rend());
      break;
    case kTagSum: {
      int64_t s = 0;
      for (int32_t p : payload) s += p - kPayloadBase;
      ans.push_back(kPayloadBase + int32_t(s % alphabet));
      break;
    }
    default:
      throw std::invalid_argument("unknown task tag " + std::to_string(tag));
  }
  ans.push_back(kEos);
  while (ans.size() < size_t(kResponseLen)) ans.push_back(kPad);
  return ans;
}

Dataset Dataset::generate(const DatasetSpec& spec, int vocab_size) {
  if (spec.task_grammar_id != "cra-v1")
    throw std::invalid_argument("unknown task grammar: " + spec.task_grammar_id);
  if (spec.seq_len < kMinSeqLen)
    throw std::invalid_argument("seq_len " + std::to_string(spec.seq_len) +
                                " below template minimum " + std::to_string(kMinSeqLen));
  if (vocab_size < kPayloadBase + 4)
    throw std::invalid_argument("vocab_size " + std::to_string(vocab_size) +
                                " leaves no payload alphabet (need >= " +
                                std::to_string(kPayloadBase + 4) + ")");
  if (spec.n_train < 1) throw std::invalid_argument("n_train must be >= 1");
  if (spec.n_eval < 0) throw std::invalid_argument("n_eval must be >= 0");

  Dataset d;
  d.spec_ = spec;
  d.vocab_ = vocab_size;
  const int32_t alphabet = vocab_size - kPayloadBase;
  Rng rng(spec.seed);

  auto draw = [&](int64_t i) {
    const int32_t tag = int32_t(kTagCopy + i % 3);
    std::vector<int32_t> payload(kPayloadLen);
    for (auto& p : payload) p = kPayloadBase + int32_t(rng.uniform_int(alphabet));
    return make_sequence(tag, payload, vocab_size, spec.seq_len);
  };

  std::set<std::vector<int32_t>> train_keys;
  d.train_.reserve(size_t(spec.n_train));
  for (int64_t i = 0; i < spec.n_train; ++i) {
    d.train_.push_back(draw(i));
    train_keys.insert(d.train_.back());
  }
  std::set<std::vector<int32_t>> eval_keys;
  d.eval_.reserve(size_t(spec.n_eval));
  for (int64_t i = 0; i < spec.n_eval; ++i) {
    for (;;) {
      std::vector<int32_t> cand = draw(i);
      if (train_keys.count(cand) || eval_keys.count(cand)) continue;
      eval_keys.insert(cand);
      d.eval_.push_back(std::move(cand));
      break;
    }
  }
  return d;
}

TokenBatch make_batch(const std::vector<const std::vector<int32_t>*>& rows) {
  if (rows.empty()) throw std::invalid_argument("make_batch: no rows");
  const int64_t raw_len = int64_t(rows[0]->size());
  if (raw_len < 2) throw std::invalid_argument("make_batch: sequences too short");
  TokenBatch b;
  b.batch = int64_t(rows.size());
  b.seq = raw_len - 1;
  b.inputs.reserve(size_t(b.batch * b.seq));
  b.targets.reserve(size_t(b.batch * b.seq));
  for (const auto* row : rows) {
    if (int64_t(row->size()) != raw_len)
      throw std::invalid_argument("make_batch: ragged sequence lengths");
    for (int64_t t = 0; t < b.seq; ++t) {
      b.inputs.push_back((*row)[size_t(t)]);
      const bool scored = t >= kPromptLen - 1 && t < kPromptLen - 1 + kResponseLen;
      b.targets.push_back(scored ? (*row)[size_t(t + 1)] : -1);
    }
  }
  return b;
}

std::vector<TokenBatch> Dataset::eval_batches(int64_t batch) const {
  if (batch < 1) throw std::invalid_argument("eval_batches: batch must be >= 1");
  std::vector<TokenBatch> out;
  for (size_t start = 0; start < eval_.size(); start += size_t(batch)) {
    std::vector<const std::vector<int32_t>*> rows;
    for (size_t i = start; i < std::min(eval_.size(), start + size_t(batch)); ++i)
      rows.push_back(&eval_[i]);
    out.push_back(make_batch(rows));
  }
  return out;
}

DataStream::DataStream(const Dataset& data, uint64_t order_seed, int64_t micro_batch)
    : data_(&data), micro_batch_(micro_batch) {
  if (micro_batch < 1) throw std::invalid_argument("micro_batch must be >= 1");
  if (data.train_size() == 0) throw std::invalid_argument("empty training split");
  order_.resize(size_t(data.train_size()));
  for (size_t i = 0; i < order_.size(); ++i) order_[i] = int64_t(i);
  Rng rng = Rng(order_seed).fork(kOrderStream);
  for (size_t i = order_.size(); i > 1; --i)
    std::swap(order_[i - 1], order_[size_t(rng.uniform_int(int64_t(i)))]);
}

TokenBatch DataStream::batch(int64_t index) const {
  if (index < 0) throw std::invalid_argument("negative batch index");
  const int64_t n = int64_t(order_.size());
  std::vector<const std::vector<int32_t>*> rows;
  rows.reserve(size_t(micro_batch_));
  for (int64_t r = 0; r < micro_batch_; ++r) {
    const int64_t pos = (index * micro_batch_ + r) % n;
    rows.push_back(&data_->train_sequences()[size_t(order_[size_t(pos)])]);
  }
  return make_batch(rows);
}

}  // namespace selora
