#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace selora {

/// Fixed token ids of the instruction grammar. Payload symbols start at
/// kPayloadBase; everything below is structural.
enum GrammarToken : int32_t {
  kPad = 0,
  kBos = 1,
  kSep = 2,
  kEos = 3,
  kTagCopy = 4,
  kTagReverse = 5,
  kTagSum = 6,
};
constexpr int32_t kPayloadBase = 16;
constexpr int kPayloadLen = 10;
constexpr int kPromptLen = 13;    // BOS TAG payload*10 SEP
constexpr int kResponseLen = 12;  // answer tokens, EOS, PAD fill
constexpr int kMinSeqLen = kPromptLen + kResponseLen - 1;  // model input length

struct DatasetSpec {
  uint64_t seed{7};
  int n_train{2048};
  int n_eval{256};
  int seq_len{kMinSeqLen};
  std::string task_grammar_id{"cra-v1"};
};

/// A micro-batch ready for the model: inputs and shifted targets, both
/// [batch * seq], targets -1 where unscored. Every sequence scores exactly
/// kResponseLen positions, so micro-batch loss means are size-independent.
struct TokenBatch {
  int64_t batch{0};
  int64_t seq{0};
  std::vector<int32_t> inputs;
  std::vector<int32_t> targets;
};

/// Deterministic synthetic instruction set over three tasks: copy the
/// payload, reverse it, or emit the sum of its symbols mod the alphabet.
class Dataset {
public:
  static Dataset generate(const DatasetSpec& spec, int vocab_size);

  const DatasetSpec& spec() const { return spec_; }
  int vocab_size() const { return vocab_; }
  int64_t train_size() const { return int64_t(train_.size()); }
  int64_t eval_size() const { return int64_t(eval_.size()); }

  /// Raw (seq_len + 1)-token training/eval sequences.
  const std::vector<std::vector<int32_t>>& train_sequences() const { return train_; }
  const std::vector<std::vector<int32_t>>& eval_sequences() const { return eval_; }

  /// The whole eval set as batches of at most `batch` rows.
  std::vector<TokenBatch> eval_batches(int64_t batch) const;

private:
  DatasetSpec spec_;
  int vocab_{0};
  std::vector<std::vector<int32_t>> train_, eval_;
};

/// Answer block (kResponseLen tokens: answer, EOS, PAD fill) for a prompt.
std::vector<int32_t> grammar_response(int32_t tag, const std::vector<int32_t>& payload,
                                      int vocab_size);

/// Inputs/targets view of raw sequences (next-token shift, prompt masked).
TokenBatch make_batch(const std::vector<const std::vector<int32_t>*>& rows);

/// Deterministic cycling micro-batch stream over a dataset's training split.
/// batch(i) is a pure function of (dataset, order_seed, i): both probe and
/// trainer can read the same stream without advancing shared state.
class DataStream {
public:
  DataStream(const Dataset& data, uint64_t order_seed, int64_t micro_batch);

  TokenBatch batch(int64_t index) const;
  int64_t micro_batch() const { return micro_batch_; }

private:
  const Dataset* data_;
  int64_t micro_batch_;
  std::vector<int64_t> order_;
};

}  // namespace selora
