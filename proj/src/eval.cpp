#include "selora/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <stdexcept>
#include <utility>

#include <json.hpp>

#include "selora/rng.hpp"

namespace selora {

namespace {

using ordered_json = nlohmann::ordered_json;

// Freezes every parameter for the guard's lifetime so evaluation records no
// backprop closures and cannot touch gradients.
class FrozenGuard {
 public:
  explicit FrozenGuard(TransformerModel& model) : params_(model.parameters()) {
    saved_.reserve(params_.size());
    for (Parameter* p : params_) {
      saved_.push_back(p->trainable);
      p->trainable = false;
    }
  }
  ~FrozenGuard() {
    for (size_t i = 0; i < params_.size(); ++i) params_[i]->trainable = saved_[i];
  }
  FrozenGuard(const FrozenGuard&) = delete;
  FrozenGuard& operator=(const FrozenGuard&) = delete;

 private:
  std::vector<Parameter*> params_;
  std::vector<bool> saved_;
};

int64_t live_targets(const TokenBatch& b) {
  return std::count_if(b.targets.begin(), b.targets.end(), [](int32_t t) { return t >= 0; });
}

// log softmax(row)[token] for one position of a [.., vocab] logits buffer.
double log_prob_at(const double* row, int64_t vocab, int32_t token) {
  double m = row[0];
  for (int64_t v = 1; v < vocab; ++v) m = std::max(m, row[v]);
  double sum = 0.0;
  for (int64_t v = 0; v < vocab; ++v) sum += std::exp(row[v] - m);
  return row[token] - (m + std::log(sum));
}

int32_t argmax_row(const double* row, int64_t vocab) {
  int32_t best = 0;
  for (int64_t v = 1; v < vocab; ++v)
    if (row[v] > row[best]) best = int32_t(v);
  return best;
}

constexpr size_t kScoreRows = 64;  // rows per forward when scoring benchmarks

struct ChoiceRow {
  size_t item;
  size_t choice;
};

void score_choice_rows(TransformerModel& model, const BenchmarkTask& task,
                       const std::vector<ChoiceRow>& rows, std::vector<std::vector<double>>& scores,
                       bool length_normalized) {
  if (rows.empty()) return;
  const int64_t vocab = model.config().vocab_size;
  // all rows in a flush share one sequence length by construction
  const auto& first_item = task.items[rows[0].item];
  const int64_t seq =
      int64_t(first_item.prompt.size() + first_item.choices[rows[0].choice].size()) - 1;

  std::vector<int32_t> inputs;
  inputs.reserve(rows.size() * size_t(seq));
  for (const ChoiceRow& r : rows) {
    const auto& it = task.items[r.item];
    inputs.insert(inputs.end(), it.prompt.begin(), it.prompt.end());
    const auto& ch = it.choices[r.choice];
    inputs.insert(inputs.end(), ch.begin(), ch.end() - 1);
  }

  Graph g;
  Var logits = model.logits(g, inputs, int64_t(rows.size()), seq);
  const Tensor& out = logits.value();

  for (size_t r = 0; r < rows.size(); ++r) {
    const auto& it = task.items[rows[r].item];
    const auto& ch = it.choices[rows[r].choice];
    const int64_t prompt_len = int64_t(it.prompt.size());
    double total = 0.0;
    for (size_t j = 0; j < ch.size(); ++j) {
      const int64_t t = prompt_len - 1 + int64_t(j);
      const double* row = out.data() + (int64_t(r) * seq + t) * vocab;
      total += log_prob_at(row, vocab, ch[j]);
    }
    if (length_normalized) total /= double(ch.size());
    scores[rows[r].item][rows[r].choice] = total;
  }
}

double score_multiple_choice(TransformerModel& model, const BenchmarkTask& task,
                             bool length_normalized) {
  const int64_t max_seq = model.config().max_seq;
  std::vector<std::vector<double>> scores(task.items.size());
  for (size_t i = 0; i < task.items.size(); ++i)
    scores[i].assign(task.items[i].choices.size(), 0.0);

  // bucket rows by sequence length so each forward is rectangular
  std::map<int64_t, std::vector<ChoiceRow>> buckets;
  for (size_t i = 0; i < task.items.size(); ++i) {
    const auto& it = task.items[i];
    for (size_t c = 0; c < it.choices.size(); ++c) {
      const int64_t seq = int64_t(it.prompt.size() + it.choices[c].size()) - 1;
      if (seq > max_seq)
        throw std::runtime_error("score_benchmark: choice sequence length " +
                                 std::to_string(seq) + " exceeds max_seq=" +
                                 std::to_string(max_seq));
      buckets[seq].push_back({i, c});
    }
  }
  for (auto& [seq, rows] : buckets) {
    for (size_t start = 0; start < rows.size(); start += kScoreRows) {
      std::vector<ChoiceRow> flush(rows.begin() + int64_t(start),
                                   rows.begin() + int64_t(std::min(rows.size(), start + kScoreRows)));
      score_choice_rows(model, task, flush, scores, length_normalized);
    }
  }

  int64_t correct = 0;
  for (size_t i = 0; i < task.items.size(); ++i) {
    size_t best = 0;
    for (size_t c = 1; c < scores[i].size(); ++c)
      if (scores[i][c] > scores[i][best]) best = c;
    if (int32_t(best) == task.items[i].answer) ++correct;
  }
  return double(correct) / double(task.items.size());
}

double score_exact_match(TransformerModel& model, const BenchmarkTask& task) {
  const int64_t vocab = model.config().vocab_size;
  const int64_t max_seq = model.config().max_seq;

  // bucket by (prompt length, target length) so a flush decodes in lockstep
  std::map<std::pair<int64_t, int64_t>, std::vector<size_t>> buckets;
  for (size_t i = 0; i < task.items.size(); ++i) {
    const auto& it = task.items[i];
    const int64_t full = int64_t(it.prompt.size() + it.target.size());
    if (full > max_seq)
      throw std::runtime_error("score_benchmark: decoding to length " + std::to_string(full) +
                               " exceeds max_seq=" + std::to_string(max_seq));
    buckets[{int64_t(it.prompt.size()), int64_t(it.target.size())}].push_back(i);
  }

  int64_t correct = 0;
  for (const auto& [key, item_ids] : buckets) {
    const auto [prompt_len, target_len] = key;
    for (size_t start = 0; start < item_ids.size(); start += kScoreRows) {
      const size_t stop = std::min(item_ids.size(), start + kScoreRows);
      const int64_t n = int64_t(stop - start);

      std::vector<int32_t> decoded(size_t(n) * size_t(prompt_len + target_len));
      for (int64_t r = 0; r < n; ++r) {
        const auto& prompt = task.items[item_ids[start + size_t(r)]].prompt;
        std::copy(prompt.begin(), prompt.end(),
                  decoded.begin() + r * (prompt_len + target_len));
      }

      for (int64_t step = 0; step < target_len; ++step) {
        const int64_t cur = prompt_len + step;
        std::vector<int32_t> inputs(size_t(n) * size_t(cur));
        for (int64_t r = 0; r < n; ++r)
          std::copy_n(decoded.begin() + r * (prompt_len + target_len), cur,
                      inputs.begin() + r * cur);
        Graph g;
        Var logits = model.logits(g, inputs, n, cur);
        const Tensor& out = logits.value();
        for (int64_t r = 0; r < n; ++r) {
          const double* row = out.data() + (r * cur + cur - 1) * vocab;
          decoded[size_t(r * (prompt_len + target_len) + cur)] = argmax_row(row, vocab);
        }
      }

      for (int64_t r = 0; r < n; ++r) {
        const auto& target = task.items[item_ids[start + size_t(r)]].target;
        correct += std::equal(target.begin(), target.end(),
                              decoded.begin() + r * (prompt_len + target_len) + prompt_len);
      }
    }
  }
  return double(correct) / double(task.items.size());
}

std::vector<int32_t> random_payload(Rng& rng, int32_t alphabet) {
  std::vector<int32_t> p(kPayloadLen);
  for (auto& s : p) s = kPayloadBase + int32_t(rng.uniform_int(alphabet));
  return p;
}

std::vector<int32_t> grammar_prompt(int32_t tag, const std::vector<int32_t>& payload) {
  std::vector<int32_t> prompt;
  prompt.reserve(size_t(kPromptLen));
  prompt.push_back(kBos);
  prompt.push_back(tag);
  prompt.insert(prompt.end(), payload.begin(), payload.end());
  prompt.push_back(kSep);
  return prompt;
}

// Places the correct choice at a random slot and fills the rest from
// distractors, returning the answer index.
int32_t arrange_choices(Rng& rng, std::vector<int32_t> correct,
                        std::vector<std::vector<int32_t>> distractors, BenchmarkItem& item) {
  const int32_t answer = int32_t(rng.uniform_int(int64_t(distractors.size()) + 1));
  item.choices.clear();
  size_t d = 0;
  for (int32_t slot = 0; slot < int32_t(distractors.size()) + 1; ++slot) {
    if (slot == answer)
      item.choices.push_back(correct);
    else
      item.choices.push_back(std::move(distractors[d++]));
  }
  return answer;
}

ordered_json tokens_json(const std::vector<int32_t>& toks) {
  return ordered_json(toks);
}

std::vector<int32_t> tokens_from_json(const ordered_json& j, const char* field) {
  if (!j.is_array()) throw std::runtime_error(std::string("benchmark item field '") + field +
                                              "' is not an array");
  std::vector<int32_t> out;
  out.reserve(j.size());
  for (const auto& v : j) out.push_back(v.get<int32_t>());
  return out;
}

}  // namespace

double eval_loss(TransformerModel& model, const std::vector<TokenBatch>& batches) {
  if (batches.empty()) throw std::invalid_argument("eval_loss: empty evaluation set");
  FrozenGuard frozen(model);
  double total_nll = 0.0;
  int64_t total_live = 0;
  for (const TokenBatch& b : batches) {
    const int64_t live = live_targets(b);
    if (live == 0) continue;
    Graph g;
    Var l = model.loss(g, b.inputs, b.targets, b.batch, b.seq);
    total_nll += l.value()[0] * double(live);
    total_live += live;
  }
  if (total_live == 0) throw std::invalid_argument("eval_loss: no scored positions in set");
  return total_nll / double(total_live);
}

void validate_task(const BenchmarkTask& task) {
  if (task.items.empty())
    throw std::invalid_argument("benchmark '" + task.name + "' has no items");
  for (size_t i = 0; i < task.items.size(); ++i) {
    const BenchmarkItem& it = task.items[i];
    const std::string where = "benchmark '" + task.name + "' item " + std::to_string(i);
    if (it.prompt.empty()) throw std::invalid_argument(where + ": empty prompt");
    if (task.kind == BenchmarkKind::multiple_choice) {
      if (it.choices.empty()) throw std::invalid_argument(where + ": no choices");
      for (const auto& c : it.choices)
        if (c.empty()) throw std::invalid_argument(where + ": empty choice");
      if (it.answer < 0 || it.answer >= int32_t(it.choices.size()))
        throw std::invalid_argument(where + ": answer index " + std::to_string(it.answer) +
                                    " out of range");
    } else {
      if (it.target.empty()) throw std::invalid_argument(where + ": empty target");
    }
  }
}

BenchmarkScore score_benchmark(TransformerModel& model, const BenchmarkTask& task,
                               bool length_normalized) {
  validate_task(task);
  FrozenGuard frozen(model);
  BenchmarkScore score;
  score.task = task.name;
  score.n_items = int(task.items.size());
  score.accuracy = task.kind == BenchmarkKind::multiple_choice
                       ? score_multiple_choice(model, task, length_normalized)
                       : score_exact_match(model, task);
  return score;
}

void save_task_jsonl(const BenchmarkTask& task, const std::string& path) {
  validate_task(task);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  ordered_json meta;
  meta["name"] = task.name;
  meta["kind"] = task.kind == BenchmarkKind::multiple_choice ? "multiple_choice"
                                                             : "exact_match_generation";
  out << meta.dump() << '\n';
  for (const BenchmarkItem& it : task.items) {
    ordered_json j;
    j["prompt"] = tokens_json(it.prompt);
    if (task.kind == BenchmarkKind::multiple_choice) {
      ordered_json choices = ordered_json::array();
      for (const auto& c : it.choices) choices.push_back(tokens_json(c));
      j["choices"] = std::move(choices);
      j["answer"] = it.answer;
    } else {
      j["target"] = tokens_json(it.target);
    }
    out << j.dump() << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

BenchmarkTask load_task_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path);
  std::string line;
  int lineno = 0;
  auto next_json = [&](ordered_json& j) {
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      try {
        j = ordered_json::parse(line);
      } catch (const std::exception& e) {
        throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " + e.what());
      }
      return true;
    }
    return false;
  };

  ordered_json meta;
  if (!next_json(meta)) throw std::runtime_error(path + ": missing metadata line");
  BenchmarkTask task;
  task.name = meta.at("name").get<std::string>();
  const std::string kind = meta.at("kind").get<std::string>();
  if (kind == "multiple_choice")
    task.kind = BenchmarkKind::multiple_choice;
  else if (kind == "exact_match_generation")
    task.kind = BenchmarkKind::exact_match;
  else
    throw std::runtime_error(path + ": unknown benchmark kind '" + kind + "'");

  ordered_json j;
  while (next_json(j)) {
    BenchmarkItem it;
    it.prompt = tokens_from_json(j.at("prompt"), "prompt");
    if (task.kind == BenchmarkKind::multiple_choice) {
      for (const auto& c : j.at("choices")) it.choices.push_back(tokens_from_json(c, "choices"));
      it.answer = j.at("answer").get<int32_t>();
    } else {
      it.target = tokens_from_json(j.at("target"), "target");
    }
    task.items.push_back(std::move(it));
  }
  validate_task(task);
  return task;
}

BenchmarkTask make_knowledge_suite(int n_items, uint64_t seed, int vocab_size) {
  if (n_items < 1) throw std::invalid_argument("suite needs at least one item");
  const int32_t alphabet = vocab_size - kPayloadBase;
  if (alphabet < 2) throw std::invalid_argument("vocab too small for distractors");
  BenchmarkTask task;
  task.name = "mmlu";
  task.kind = BenchmarkKind::multiple_choice;
  Rng rng = Rng(seed).fork(0xbe9c01);
  for (int i = 0; i < n_items; ++i) {
    BenchmarkItem item;
    const auto payload = random_payload(rng, alphabet);
    item.prompt = grammar_prompt(kTagCopy, payload);
    std::vector<int32_t> correct = grammar_response(kTagCopy, payload, vocab_size);

    // distractors corrupt one or two payload positions of the true copy
    std::vector<std::vector<int32_t>> distractors;
    while (distractors.size() < 3) {
      std::vector<int32_t> d = correct;
      const int n_mut = 1 + int(rng.uniform_int(2));
      for (int m = 0; m < n_mut; ++m) {
        const size_t pos = size_t(rng.uniform_int(kPayloadLen));
        int32_t sym;
        do {
          sym = kPayloadBase + int32_t(rng.uniform_int(alphabet));
        } while (sym == d[pos]);
        d[pos] = sym;
      }
      if (d != correct && std::find(distractors.begin(), distractors.end(), d) == distractors.end())
        distractors.push_back(std::move(d));
    }
    item.answer = arrange_choices(rng, std::move(correct), std::move(distractors), item);
    task.items.push_back(std::move(item));
  }
  validate_task(task);
  return task;
}

BenchmarkTask make_math_suite(int n_items, uint64_t seed, int vocab_size) {
  if (n_items < 1) throw std::invalid_argument("suite needs at least one item");
  const int32_t alphabet = vocab_size - kPayloadBase;
  if (alphabet < 4) throw std::invalid_argument("vocab too small for 4 distinct answers");
  BenchmarkTask task;
  task.name = "math";
  task.kind = BenchmarkKind::multiple_choice;
  Rng rng = Rng(seed).fork(0xbe9c02);
  for (int i = 0; i < n_items; ++i) {
    BenchmarkItem item;
    const auto payload = random_payload(rng, alphabet);
    item.prompt = grammar_prompt(kTagSum, payload);
    std::vector<int32_t> correct = grammar_response(kTagSum, payload, vocab_size);
    const int32_t true_sym = correct[0];

    // distractors swap in a different answer symbol, response shape intact
    std::vector<std::vector<int32_t>> distractors;
    while (distractors.size() < 3) {
      const int32_t sym = kPayloadBase + int32_t(rng.uniform_int(alphabet));
      if (sym == true_sym) continue;
      std::vector<int32_t> d = correct;
      d[0] = sym;
      if (std::find(distractors.begin(), distractors.end(), d) == distractors.end())
        distractors.push_back(std::move(d));
    }
    item.answer = arrange_choices(rng, std::move(correct), std::move(distractors), item);
    task.items.push_back(std::move(item));
  }
  validate_task(task);
  return task;
}

BenchmarkTask make_code_suite(int n_items, uint64_t seed, int vocab_size) {
  if (n_items < 1) throw std::invalid_argument("suite needs at least one item");
  const int32_t alphabet = vocab_size - kPayloadBase;
  BenchmarkTask task;
  task.name = "code";
  task.kind = BenchmarkKind::exact_match;
  Rng rng = Rng(seed).fork(0xbe9c03);
  for (int i = 0; i < n_items; ++i) {
    BenchmarkItem item;
    const auto payload = random_payload(rng, alphabet);
    item.prompt = grammar_prompt(kTagReverse, payload);
    item.target = grammar_response(kTagReverse, payload, vocab_size);
    task.items.push_back(std::move(item));
  }
  validate_task(task);
  return task;
}

ForgettingDelta forgetting_delta(const BenchmarkScore& base, const BenchmarkScore& tuned) {
  if (base.task != tuned.task)
    throw std::invalid_argument("forgetting_delta: task mismatch: '" + base.task + "' vs '" +
                                tuned.task + "'");
  ForgettingDelta d;
  d.task = base.task;
  d.base_acc = base.accuracy;
  d.tuned_acc = tuned.accuracy;
  d.delta_pp = 100.0 * (tuned.accuracy - base.accuracy);
  return d;
}

double extra_forgetting(const ForgettingDelta& standard, const ForgettingDelta& selective) {
  if (standard.task != selective.task)
    throw std::invalid_argument("extra_forgetting: task mismatch: '" + standard.task + "' vs '" +
                                selective.task + "'");
  return selective.delta_pp - standard.delta_pp;
}

double benchmark_delta(const BenchmarkScore& standard, const BenchmarkScore& selective) {
  if (standard.task != selective.task)
    throw std::invalid_argument("benchmark_delta: task mismatch: '" + standard.task + "' vs '" +
                                selective.task + "'");
  return 100.0 * (selective.accuracy - standard.accuracy);
}

}  // namespace selora
