#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "selora/ledger.hpp"

using namespace selora;
namespace fs = std::filesystem;

namespace {

struct TempLedger {
  fs::path path;
  explicit TempLedger(const char* tag) {
    path = fs::temp_directory_path() / (std::string("selora_ledger_") + tag + ".csv");
    fs::remove(path);
  }
  ~TempLedger() { fs::remove(path); }
  std::string str() const { return path.string(); }
};

RunRecord sample_record() {
  RunRecord r;
  r.model = "t12x128";
  r.recipe = "aletheia";
  r.seed = 42;
  r.steps = 200;
  r.probe_time_s = 1.2345678;
  r.train_time_s = 93.9123456;
  r.eval_loss = 0.34441234;
  r.bench_mmlu = 0.255;
  r.bench_math = 0.31;
  r.bench_code = 0.125;
  r.selected_layers = {0, 3, 5, 7, 9, 11};
  r.trainable_params = 491520;
  return r;
}

std::string sixg(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

}  // namespace

TEST_CASE("append then load round-trips every field") {
  TempLedger tmp("roundtrip");
  RunRecord a = sample_record();

  RunRecord b = sample_record();
  b.recipe = "standard";
  b.selected_layers = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11};
  b.trainable_params = 983040;

  RunRecord failed = sample_record();
  failed.seed = 123;
  failed.status = "failed";
  failed.failure_reason = "diverged at step 17, loss=inf (lr \"too hot\")";
  failed.selected_layers = {};

  ledger_append(tmp.str(), a);
  ledger_append(tmp.str(), b);
  ledger_append(tmp.str(), failed);

  const Ledger back = ledger_load(tmp.str());
  REQUIRE(back.size() == 3);
  for (size_t i = 0; i < 3; ++i) {
    const RunRecord& orig = i == 0 ? a : i == 1 ? b : failed;
    const RunRecord& got = back[i];
    CHECK(got.model == orig.model);
    CHECK(got.recipe == orig.recipe);
    CHECK(got.seed == orig.seed);
    CHECK(got.steps == orig.steps);
    CHECK(got.selected_layers == orig.selected_layers);
    CHECK(got.trainable_params == orig.trainable_params);
    CHECK(got.status == orig.status);
    CHECK(got.failure_reason == orig.failure_reason);
    // reals survive at 6 significant digits, stable under re-rounding
    CHECK(sixg(got.probe_time_s) == sixg(orig.probe_time_s));
    CHECK(sixg(got.train_time_s) == sixg(orig.train_time_s));
    CHECK(sixg(got.eval_loss) == sixg(orig.eval_loss));
    CHECK(sixg(got.bench_mmlu) == sixg(orig.bench_mmlu));
  }
}

TEST_CASE("ledger file is UTF-8 with LF endings and the fixed header") {
  TempLedger tmp("format");
  RunRecord r = sample_record();
  r.failure_reason = "";
  ledger_append(tmp.str(), r);

  std::ifstream in(tmp.path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  CHECK(bytes.find('\r') == std::string::npos);
  CHECK(bytes.rfind("model,recipe,seed,steps,probe_time_s,train_time_s,eval_loss,bench_mmlu,"
                    "bench_math,bench_code,selected_layers,trainable_params,status,"
                    "failure_reason\n",
                    0) == 0);

  RunRecord utf = sample_record();
  utf.seed = 7;
  utf.failure_reason = "";
  utf.model = "t12x128";
  utf.recipe = "résumé";  // non-ASCII survives byte-for-byte
  ledger_append(tmp.str(), utf);
  const Ledger back = ledger_load(tmp.str());
  CHECK(back.back().recipe == utf.recipe);
}

TEST_CASE("duplicate (model, recipe, seed) keys are rejected") {
  TempLedger tmp("dupes");
  RunRecord r = sample_record();
  ledger_append(tmp.str(), r);

  CHECK(ledger_contains(tmp.str(), r));
  CHECK_THROWS_WITH_AS(ledger_append(tmp.str(), r), doctest::Contains("duplicate key"),
                       std::invalid_argument);

  RunRecord other_seed = r;
  other_seed.seed = 123;
  CHECK_FALSE(ledger_contains(tmp.str(), other_seed));
  CHECK_NOTHROW(ledger_append(tmp.str(), other_seed));

  RunRecord other_recipe = r;
  other_recipe.recipe = "standard";
  CHECK_NOTHROW(ledger_append(tmp.str(), other_recipe));
  CHECK(ledger_load(tmp.str()).size() == 3);
}

TEST_CASE("a ledger with many rows including failures loads completely") {
  TempLedger tmp("many");
  for (int i = 0; i < 81; ++i) {
    RunRecord r = sample_record();
    r.seed = uint64_t(i);
    if (i % 10 == 9) {
      r.status = "failed";
      r.failure_reason = "non-finite loss at step " + std::to_string(i);
    }
    ledger_append(tmp.str(), r);
  }
  const Ledger back = ledger_load(tmp.str());
  CHECK(back.size() == 81);
  int failed = 0;
  for (const RunRecord& r : back) failed += r.status == "failed";
  CHECK(failed == 8);
}

TEST_CASE("malformed ledgers fail with the offending line number") {
  TempLedger tmp("malformed");

  SUBCASE("missing file") {
    CHECK_THROWS_AS(ledger_load(tmp.str()), std::runtime_error);
  }
  SUBCASE("wrong header") {
    std::ofstream(tmp.path) << "model,recipe\n";
    CHECK_THROWS_WITH_AS(ledger_load(tmp.str()), doctest::Contains(":1:"), std::runtime_error);
  }
  SUBCASE("short row") {
    ledger_append(tmp.str(), sample_record());
    std::ofstream(tmp.path, std::ios::app) << "only,three,fields\n";
    CHECK_THROWS_WITH_AS(ledger_load(tmp.str()), doctest::Contains(":3:"), std::runtime_error);
  }
  SUBCASE("bad number") {
    ledger_append(tmp.str(), sample_record());
    std::ofstream(tmp.path, std::ios::app)
        << "m,r,notanumber,200,1,2,3,0.1,0.2,0.3,0;1,100,ok,\n";
    CHECK_THROWS_WITH_AS(ledger_load(tmp.str()),
                         doctest::Contains("bad seed value"), std::runtime_error);
  }
  SUBCASE("bad layer list") {
    ledger_append(tmp.str(), sample_record());
    std::ofstream(tmp.path, std::ios::app)
        << "m,r,1,200,1,2,3,0.1,0.2,0.3,0;x;2,100,ok,\n";
    CHECK_THROWS_WITH_AS(ledger_load(tmp.str()),
                         doctest::Contains("selected_layers"), std::runtime_error);
  }
  SUBCASE("unterminated quote") {
    ledger_append(tmp.str(), sample_record());
    std::ofstream(tmp.path, std::ios::app)
        << "m,r,1,200,1,2,3,0.1,0.2,0.3,,100,ok,\"broken\n";
    CHECK_THROWS_WITH_AS(ledger_load(tmp.str()),
                         doctest::Contains("unterminated"), std::runtime_error);
  }
}

TEST_CASE("record validation rejects structural nonsense") {
  RunRecord r = sample_record();
  r.model = "";
  CHECK_THROWS_AS(validate(r), std::invalid_argument);

  r = sample_record();
  r.status = "exploded";
  CHECK_THROWS_AS(validate(r), std::invalid_argument);

  r = sample_record();
  r.status = "failed";  // no reason given
  CHECK_THROWS_AS(validate(r), std::invalid_argument);

  r = sample_record();
  r.failure_reason = "line one\nline two";
  CHECK_THROWS_AS(validate(r), std::invalid_argument);

  r = sample_record();
  r.steps = -5;
  CHECK_THROWS_AS(validate(r), std::invalid_argument);

  CHECK_NOTHROW(validate(sample_record()));
}
