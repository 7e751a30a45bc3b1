// Copyright 2026 The adgen Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

#include "adgen/io.hpp"
#include "doctest.h"

using namespace adgen;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("adgen_test_io_" + tag + "_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string Slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST_CASE("config text: comments, blanks and trimming") {
  const ConfigMap m = ParseConfigText("# header\n\n  seed = 7  \nschedule=4,8,16 # widths\n");
  CHECK(m.size() == 2);
  CHECK(m.at("seed") == "7");
  CHECK(m.at("schedule") == "4,8,16");
}

TEST_CASE("config text: malformed lines and repeated keys throw") {
  CHECK_THROWS_AS(ParseConfigText("seed 7\n"), std::invalid_argument);
  CHECK_THROWS_AS(ParseConfigText(" = 3\n"), std::invalid_argument);
  CHECK_THROWS_AS(ParseConfigText("seed = 1\nseed = 2\n"), std::invalid_argument);
}

TEST_CASE("ApplyConfig sets module fields") {
  RunConfig c;
  ApplyConfig(ParseConfigText("seed = 11\nn_items = 64\nsid_vocab = 8,4\nquantizer_mode = mr\n"
                              "beta = 2.5\nlr = 0.01\nshared_kv = off\nttl = 30\n"
                              "bench_schedules = 4,8; 16\nquantize_modes = fixed, mgmr\n"
                              "fixed_vocab = 6,6\nfault_nan_step = 3\nout = somewhere\n"),
              c);
  CHECK(c.seed == 11);
  CHECK(c.sim.catalog.items == 64);
  CHECK(c.sim.sid_vocab == std::vector<int>{8, 4});
  CHECK(c.sim.quantizer_mode == QuantizerMode::kMultiResolution);
  CHECK(c.sim.loss.beta == 2.5);
  CHECK(c.sim.adam.lr == 0.01);
  CHECK_FALSE(c.sim.serving.shared_kv);
  CHECK(c.sim.serving.ttl_seconds == 30.0);
  CHECK(c.bench_schedules == std::vector<std::string>{"4,8", "16"});
  CHECK(c.quantize_modes == std::vector<std::string>{"fixed", "mgmr"});
  CHECK(c.fixed_vocab == std::vector<int>{6, 6});
  CHECK(c.sim.fault_nan_step == 3);
  CHECK(c.CatalogPath() == fs::path("somewhere") / "catalog.jsonl");
}

TEST_CASE("ApplyConfig rejects unknown keys and bad values") {
  RunConfig c;
  CHECK_THROWS_AS(ApplyConfig({{"no_such_key", "1"}}, c), std::invalid_argument);
  CHECK_THROWS_AS(ApplyConfig({{"seed", "-1"}}, c), std::invalid_argument);
  CHECK_THROWS_AS(ApplyConfig({{"seed", "12abc"}}, c), std::invalid_argument);
  CHECK_THROWS_AS(ApplyConfig({{"lr", "fast"}}, c), std::invalid_argument);
  CHECK_THROWS_AS(ApplyConfig({{"precut", "maybe"}}, c), std::invalid_argument);
  CHECK_THROWS_AS(ApplyConfig({{"quantizer_mode", "best"}}, c), std::invalid_argument);
  CHECK_THROWS_AS(ApplyConfig({{"schedule", "4,x"}}, c), std::invalid_argument);
}

TEST_CASE("ConfigKeys lists every key in sorted order") {
  const auto keys = ConfigKeys();
  CHECK(std::is_sorted(keys.begin(), keys.end()));
  for (const char* k : {"seed", "out", "schedule", "tabs_boost", "q_threshold", "ttl", "shared_kv",
                        "precut", "ecpm_rerank", "beta", "delta", "lambda_e", "lambda_mtp", "w0",
                        "z_max", "fixed_vocab"}) {
    CHECK(std::find(keys.begin(), keys.end(), k) != keys.end());
  }
}

TEST_CASE("list parsers") {
  CHECK(ParseIntList(" 1, 2 ,3") == std::vector<int>{1, 2, 3});
  CHECK_THROWS_AS(ParseIntList(""), std::invalid_argument);
  CHECK(ParseStringList("a; b;;c") == std::vector<std::string>{"a", "b", "c"});
  CHECK_THROWS_AS(ParseStringList(" ; "), std::invalid_argument);
}

TEST_CASE("catalog, users and interactions round-trip exactly") {
  TempDir dir("records");
  CatalogConfig cc;
  cc.items = 40;
  cc.dim = 5;
  cc.duplication = {2, 0.5};
  cc.seed = 3;
  const Catalog catalog = GenerateCatalog(cc);
  WriteCatalog(dir.path / "c.jsonl", catalog);
  const Catalog back = ReadCatalog(dir.path / "c.jsonl");
  REQUIRE(back.size() == catalog.size());
  for (std::size_t i = 0; i < catalog.size(); ++i) {
    CHECK(back[i].id == catalog[i].id);
    CHECK(back[i].embedding == catalog[i].embedding);
    CHECK(back[i].latent_value == catalog[i].latent_value);
    CHECK(back[i].non_semantic.account_id == catalog[i].non_semantic.account_id);
    CHECK(back[i].non_semantic.conversion_type == catalog[i].non_semantic.conversion_type);
  }

  const auto users = GenerateUsers(4, catalog, 9);
  WriteUsers(dir.path / "u.jsonl", users);
  const auto users_back = ReadUsers(dir.path / "u.jsonl");
  REQUIRE(users_back.size() == users.size());
  for (std::size_t i = 0; i < users.size(); ++i) {
    CHECK(users_back[i].id == users[i].id);
    CHECK(users_back[i].interest == users[i].interest);
    CHECK(users_back[i].value_tier == users[i].value_tier);
    CHECK(users_back[i].activity_rate == users[i].activity_rate);
  }

  const std::vector<Interaction> log = {{1, 2, 0.1 + 0.2, 4, 1.0 / 3.0}, {3, 0, 7.5, 1, 0.0}};
  WriteInteractions(dir.path / "sub" / "i.jsonl", log);
  const auto log_back = ReadInteractions(dir.path / "sub" / "i.jsonl");
  REQUIRE(log_back.size() == 2);
  CHECK(log_back[0].time == 0.1 + 0.2);
  CHECK(log_back[0].ecpm == 1.0 / 3.0);
  CHECK(log_back[0].behavior == 4);
  CHECK(log_back[1].user == 3);
}

TEST_CASE("malformed record files fail with the line number") {
  TempDir dir("bad");
  {
    std::ofstream f(dir.path / "i.jsonl");
    f << "{\"user\":1,\"item\":2,\"time\":0,\"behavior\":1,\"ecpm\":0}\n{not json\n";
  }
  try {
    ReadInteractions(dir.path / "i.jsonl");
    FAIL("expected an exception");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find(":2:") != std::string::npos);
  }
  CHECK_THROWS_AS(ReadCatalog(dir.path / "missing.jsonl"), std::invalid_argument);
}

TEST_CASE("quantizer artifact round-trips") {
  TempDir dir("quantizer");
  CatalogConfig cc;
  cc.items = 60;
  cc.dim = 4;
  cc.seed = 1;
  const Catalog catalog = GenerateCatalog(cc);
  for (QuantizerMode mode : {QuantizerMode::kFixed, QuantizerMode::kMultiResolution, QuantizerMode::kMgmr}) {
    const std::vector<int> sizes = {6, 4, 3};
    const QuantizerModel q = FitQuantizer(catalog, sizes, mode, 5).model;
    SaveQuantizer(dir.path / "q.json", q);
    const QuantizerModel back = LoadQuantizer(dir.path / "q.json");
    CHECK(back == q);
    for (const Item& item : catalog) CHECK(EncodeItem(back, item) == EncodeItem(q, item));
  }
}

TEST_CASE("checkpoint round-trips parameters, optimizer state and buckets") {
  TempDir dir("checkpoint");
  ModelConfig mc;
  mc.feature_dim = 3;
  mc.hidden = 4;
  mc.ffn_hidden = 6;
  mc.layers = 2;
  mc.trunk_layers = 1;
  mc.level_vocab_sizes = {5, 3};
  mc.ecpm_buckets = 3;
  mc.seed = 77;
  Checkpoint ck;
  ck.model = DecoderModel::Init(mc);
  std::mt19937_64 rng(2);
  ck.model.ForEachParam([&](const std::string&, const Matrix& p) {
    ck.optimizer.m.push_back(RandomUniform(p.rows(), p.cols(), 1.0, rng));
    ck.optimizer.v.push_back(RandomUniform(p.rows(), p.cols(), 1.0, rng));
  });
  ck.optimizer.step = 42;
  const double values[] = {0.1, 0.7, 1.3, 2.9, 3.3, 4.0};
  ck.buckets = FitEcpmBuckets(values, 3);
  ck.loss.beta = 1.7;
  ck.loss.lambda_mtp = 0.05;
  SaveCheckpoint(dir.path / "ck.json", ck);
  const Checkpoint back = LoadCheckpoint(dir.path / "ck.json");
  CHECK(back.model == ck.model);
  CHECK(back.optimizer == ck.optimizer);
  CHECK(back.buckets.boundaries == ck.buckets.boundaries);
  CHECK(back.buckets.representatives == ck.buckets.representatives);
  CHECK(back.loss.beta == 1.7);
  CHECK(back.loss.lambda_mtp == 0.05);
  // Saving the loaded checkpoint reproduces the same bytes.
  SaveCheckpoint(dir.path / "ck2.json", back);
  CHECK(Slurp(dir.path / "ck.json") == Slurp(dir.path / "ck2.json"));
}

TEST_CASE("loss CSV numbers rows from the first step") {
  std::ostringstream out;
  LossBreakdown b;
  b.total = 1.5;
  WriteLossCsv(out, {b, b}, 10);
  const std::string s = out.str();
  CHECK(s.rfind("step,total,sid,ecpm,mtp,rspo,vsl_terms,rl_terms\n", 0) == 0);
  CHECK(s.find("\n10,1.5,") != std::string::npos);
  CHECK(s.find("\n11,1.5,") != std::string::npos);
}
