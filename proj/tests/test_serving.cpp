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


#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <set>
#include <stdexcept>
#include <thread>

#include "adgen/serving.hpp"
#include "doctest.h"

using adgen::BeamSchedule;
using adgen::BeamSearchOptions;
using adgen::DecoderModel;
using adgen::Expansion;
using adgen::Hypothesis;
using adgen::Matrix;
using adgen::ModelConfig;

namespace {

ModelConfig Config(std::uint64_t seed, std::vector<int> vocab, int layers = 3, int trunk = 2) {
  ModelConfig c;
  c.feature_dim = 4;
  c.hidden = 6;
  c.ffn_hidden = 8;
  c.layers = layers;
  c.trunk_layers = trunk;
  c.level_vocab_sizes = std::move(vocab);
  c.ecpm_buckets = 3;
  c.seed = seed;
  return c;
}

Matrix Context(const DecoderModel& m, std::uint64_t seed, std::size_t rows = 2) {
  std::mt19937_64 rng(seed);
  return adgen::ContextProcess(m, adgen::RandomUniform(rows, m.config.feature_dim, 1.0, rng));
}

double LogSoftmaxAt(const Matrix& logits, std::size_t idx) {
  double mx = logits(0, 0);
  for (double v : logits.data()) mx = std::max(mx, v);
  double s = 0.0;
  for (double v : logits.data()) s += std::exp(v - mx);
  return logits(0, idx) - mx - std::log(s);
}

// Teacher-forced per-level log-probs from the differentiable path.
std::vector<std::vector<double>> LevelLogProbsOracle(const DecoderModel& m, const Matrix& X,
                                                     const std::vector<int>& tokens) {
  adgen::Tape t(false);
  adgen::ForwardTrace tr = adgen::Forward(t, m, t.Constant(X), tokens);
  std::vector<std::vector<double>> out;
  for (const auto& logits : tr.head_logits) {
    std::vector<double> row;
    for (std::size_t v = 0; v < logits.value().cols(); ++v) row.push_back(LogSoftmaxAt(logits.value(), v));
    out.push_back(row);
  }
  return out;
}

double SequenceScore(const DecoderModel& m, const Matrix& X, const std::vector<int>& tokens) {
  auto lp = LevelLogProbsOracle(m, X, tokens);
  double s = 0.0;
  for (std::size_t t = 0; t < tokens.size(); ++t) s += lp[t][static_cast<std::size_t>(tokens[t])];
  return s;
}

void Enumerate(const std::vector<int>& vocab, std::vector<int>& cur,
               std::vector<std::vector<int>>& out) {
  if (cur.size() == vocab.size()) {
    out.push_back(cur);
    return;
  }
  for (int v = 0; v < vocab[cur.size()]; ++v) {
    cur.push_back(v);
    Enumerate(vocab, cur, out);
    cur.pop_back();
  }
}

BeamSchedule Schedule(std::vector<int> widths) {
  return adgen::ResolveDbw(widths, widths.size());
}

}  // namespace

TEST_CASE("top-k pre-cut: worked example and full width") {
  Matrix lp{{-0.1, -2.0, -3.0}, {-0.2, -0.3, -5.0}};
  const std::vector<double> beams = {0.0, -1.0};
  const auto pre = adgen::TopKPreCut(beams, lp, 2);
  const auto ex = adgen::TopKExhaustive(beams, lp, 2);
  REQUIRE(pre.size() == 2);
  CHECK(pre[0] == Expansion{0, 0, -0.1});
  CHECK(pre[1] == Expansion{1, 0, -1.2});
  CHECK(pre == ex);

  const auto all = adgen::TopKPreCut(beams, lp, 6);
  REQUIRE(all.size() == 6);
  CHECK(std::is_sorted(all.begin(), all.end(), adgen::ExpansionBefore));
  CHECK(adgen::TopKPreCut(beams, lp, 100).size() == 6);  // clamped to b*V
}

TEST_CASE("top-k pre-cut equals exhaustive expansion on random instances with ties") {
  std::mt19937_64 rng(7);
  int mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t b = 1 + rng() % 8;
    const std::size_t V = 1 + rng() % 32;
    const std::size_t k = 1 + rng() % (b * V);
    std::vector<double> beams(b);
    Matrix lp(b, V);
    // Coarse grid values force frequent score ties.
    for (double& s : beams) s = -static_cast<double>(rng() % 4) * 0.5;
    for (double& x : lp.data()) x = -static_cast<double>(rng() % 6) * 0.25;
    if (adgen::TopKPreCut(beams, lp, k) != adgen::TopKExhaustive(beams, lp, k)) ++mismatches;
  }
  CHECK(mismatches == 0);
}

TEST_CASE("exhaustive top-k breaks ties by beam then token") {
  Matrix lp{{-1.0, -1.0}, {-1.0, -1.0}};
  const std::vector<double> beams = {0.0, 0.0};
  const auto out = adgen::TopKExhaustive(beams, lp, 3);
  CHECK(out[0] == Expansion{0, 0, -1.0});
  CHECK(out[1] == Expansion{0, 1, -1.0});
  CHECK(out[2] == Expansion{1, 0, -1.0});
  CHECK_THROWS_AS(adgen::TopKExhaustive(std::vector<double>{0.0}, lp, 1), std::invalid_argument);
}

TEST_CASE("dynamic beam width schedules") {
  const auto production = adgen::ResolveDbw("128,256,512", 3);
  CHECK(production.widths == std::vector<int>{128, 256, 512});
  CHECK(production.base_width == 512);
  CHECK(adgen::ResolveDbw("4,8,16", 3).widths == std::vector<int>{4, 8, 16});
  CHECK(adgen::ResolveDbw("512", 3).widths == std::vector<int>{512, 512, 512});
  CHECK_THROWS_AS(adgen::ResolveDbw("4,0,16", 3), std::invalid_argument);
  CHECK_THROWS_AS(adgen::ResolveDbw("-1", 3), std::invalid_argument);
  CHECK_THROWS_AS(adgen::ResolveDbw("4,8", 3), std::invalid_argument);
  CHECK_THROWS_AS(adgen::ResolveDbw("4,x,8", 3), std::invalid_argument);
}

TEST_CASE("traffic-aware beam scaling") {
  adgen::TrafficSignal peak{200.0, 100.0, 1.0};
  adgen::TrafficSignal off{50.0, 100.0, 1.0};
  adgen::TrafficSignal no_slack{50.0, 100.0, 0.0};
  CHECK(adgen::TabsAdjust(peak, 512) == 512);
  CHECK(adgen::TabsAdjust({100.0, 100.0, 1.0}, 512) == 512);  // threshold itself is peak
  CHECK(adgen::TabsAdjust(off, 512) == 819);
  CHECK(adgen::TabsAdjust(no_slack, 512) == 512);
  CHECK(adgen::TabsAdjust(off, 16) == 26);  // 25.6 rounds up
  CHECK(adgen::TabsAdjust({0.0, 1.0, 0.5}, 5) == 7);  // 6.5 rounds half up

  const auto scaled = adgen::ScaleSchedule(adgen::ResolveDbw("128,256,512", 3), 819);
  CHECK(scaled.widths == std::vector<int>{205, 410, 819});
  CHECK(scaled.base_width == 819);
}

TEST_CASE("greedy search equals the chained per-level argmax") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    DecoderModel m = DecoderModel::Init(Config(seed, {5, 4, 6}));
    Matrix X = Context(m, seed + 100);
    const auto res = adgen::BeamSearch(m, X, Schedule({1, 1, 1}), {});
    REQUIRE(res.size() == 1);
    std::vector<int> chain(3, 0);
    for (std::size_t t = 0; t < 3; ++t) {
      const auto lp = LevelLogProbsOracle(m, X, chain)[t];
      chain[t] = static_cast<int>(std::max_element(lp.begin(), lp.end()) - lp.begin());
    }
    CHECK(res[0].tokens == chain);
    CHECK(res[0].score == doctest::Approx(SequenceScore(m, X, chain)).epsilon(1e-12));
  }
}

TEST_CASE("full-width search equals brute-force enumeration") {
  for (const std::vector<int>& vocab : {std::vector<int>{3, 3}, std::vector<int>{3, 3, 2}}) {
    std::vector<std::vector<int>> all;
    std::vector<int> cur;
    Enumerate(vocab, cur, all);
    std::vector<int> widths;
    int reach = 1;
    for (int v : vocab) widths.push_back(reach *= v);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      DecoderModel m = DecoderModel::Init(Config(seed, vocab));
      Matrix X = Context(m, seed);
      std::vector<std::pair<double, std::vector<int>>> oracle;
      for (const auto& s : all) oracle.emplace_back(SequenceScore(m, X, s), s);
      std::stable_sort(oracle.begin(), oracle.end(),
                       [](const auto& a, const auto& b) { return a.first > b.first; });
      const auto res = adgen::BeamSearch(m, X, Schedule(widths), {});
      REQUIRE(res.size() == all.size());
      for (std::size_t i = 0; i < res.size(); ++i) {
        CHECK(res[i].tokens == oracle[i].second);
        CHECK(res[i].score == doctest::Approx(oracle[i].first).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("beam search output is invariant to shared_kv and precut") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    const int layers = 1 + static_cast<int>(rng() % 3);
    const int trunk = static_cast<int>(rng() % static_cast<unsigned>(layers));
    DecoderModel m = DecoderModel::Init(Config(rng(), {4, 5, 3}, layers, trunk));
    Matrix X = Context(m, rng(), 1 + rng() % 3);
    const BeamSchedule s = Schedule({2 + static_cast<int>(rng() % 3), 6, 9});
    std::vector<std::vector<Hypothesis>> outs;
    for (bool shared : {true, false}) {
      for (bool precut : {true, false}) {
        BeamSearchOptions o;
        o.shared_kv = shared;
        o.precut = precut;
        outs.push_back(adgen::BeamSearch(m, X, s, o));
      }
    }
    for (std::size_t i = 1; i < outs.size(); ++i) {
      REQUIRE(outs[i].size() == outs[0].size());
      for (std::size_t j = 0; j < outs[0].size(); ++j) {
        CHECK(outs[i][j].tokens == outs[0][j].tokens);
        CHECK(outs[i][j].score == outs[0][j].score);
      }
    }
  }
}

TEST_CASE("shared KV: one build per request, footprint independent of width") {
  DecoderModel m = DecoderModel::Init(Config(11, {8, 8, 8}));
  Matrix X = Context(m, 5);
  adgen::SearchStats narrow, wide, per_beam;
  adgen::BeamSearch(m, X, Schedule({1, 1, 1}), {}, &narrow);
  adgen::BeamSearch(m, X, Schedule({8, 64, 64}), {}, &wide);
  CHECK(narrow.kv_builds == 1);
  CHECK(wide.kv_builds == 1);
  CHECK(narrow.kv_peak_bytes == wide.kv_peak_bytes);
  CHECK(wide.kv_peak_bytes == adgen::BuildCrossKv(m, X).bytes());

  BeamSearchOptions o;
  o.shared_kv = false;
  adgen::BeamSearch(m, X, Schedule({8, 64, 64}), o, &per_beam);
  CHECK(per_beam.kv_builds == 1 + 1 + 8 + 64);
  CHECK(per_beam.kv_peak_bytes == 64 * wide.kv_peak_bytes);
}

TEST_CASE("layer-call count matches T*K + sum_t (L-K)*n_t") {
  for (int K : {0, 1, 2}) {
    DecoderModel m = DecoderModel::Init(Config(4, {4, 6, 5}, 3, K));
    Matrix X = Context(m, 9);
    adgen::SearchStats st;
    BeamSearchOptions o;
    o.trunk_layers = K;
    adgen::BeamSearch(m, X, Schedule({3, 10, 7}), o, &st);
    REQUIRE(st.hypotheses_per_level == std::vector<std::size_t>{1, 3, 10});
    CHECK(st.layer_calls.trunk == static_cast<std::uint64_t>(3 * K));
    CHECK(st.layer_calls.head == static_cast<std::uint64_t>((3 - K) * (1 + 3 + 10)));
  }
}

TEST_CASE("wider schedules never lower the best score") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 40; ++trial) {
    DecoderModel m = DecoderModel::Init(Config(rng(), {4, 4, 4}));
    Matrix X = Context(m, rng());
    std::vector<int> w(3), w2(3);
    for (int t = 0; t < 3; ++t) {
      w[static_cast<std::size_t>(t)] = 1 + static_cast<int>(rng() % 4);
      w2[static_cast<std::size_t>(t)] = w[static_cast<std::size_t>(t)] + static_cast<int>(rng() % 8);
    }
    const double narrow = adgen::BeamSearch(m, X, Schedule(w), {})[0].score;
    const double wide = adgen::BeamSearch(m, X, Schedule(w2), {})[0].score;
    CHECK(wide >= narrow);
  }
}

TEST_CASE("beam search preconditions and result contract") {
  DecoderModel m = DecoderModel::Init(Config(2, {3, 3}));
  CHECK_THROWS_AS(adgen::BeamSearch(m, Matrix(0, 6), Schedule({2, 2}), {}), std::invalid_argument);
  CHECK_THROWS_AS(adgen::BeamSearch(m, Context(m, 1), Schedule({2, 2, 2}), {}),
                  std::invalid_argument);
  // Widths beyond what is reachable are clamped.
  const auto res = adgen::BeamSearch(m, Context(m, 1), Schedule({50, 50}), {});
  CHECK(res.size() == 9);
  std::set<std::vector<int>> distinct;
  for (std::size_t i = 0; i < res.size(); ++i) {
    distinct.insert(res[i].tokens);
    CHECK(std::isfinite(res[i].score));
    if (i > 0) CHECK(res[i - 1].score >= res[i].score);
  }
  CHECK(distinct.size() == res.size());
}

TEST_CASE("eCPM re-rank uses expected bucket value times generation probability") {
  DecoderModel m = DecoderModel::Init(Config(8, {3, 3}));
  Matrix X = Context(m, 2);
  adgen::EcpmBuckets buckets;
  buckets.boundaries = {1.0, 2.0};
  buckets.representatives = {0.5, 1.5, 2.5};
  buckets.requested_buckets = 3;
  BeamSearchOptions o;
  o.ecpm_buckets = &buckets;
  auto res = adgen::BeamSearch(m, X, Schedule({3, 9}), o);
  const auto plain = adgen::BeamSearch(m, X, Schedule({3, 9}), {});
  for (std::size_t i = 0; i < res.size(); ++i) {
    CHECK(res[i].tokens == plain[i].tokens);  // extra step never changes the search
    // Oracle: eCPM logits from the differentiable path.
    adgen::Tape t(false);
    auto tr = adgen::Forward(t, m, t.Constant(X), res[i].tokens);
    double expected = 0.0;
    for (std::size_t k = 0; k < 3; ++k) {
      expected += std::exp(LogSoftmaxAt(tr.ecpm_logits.value(), k)) * buckets.representatives[k];
    }
    CHECK(res[i].expected_ecpm == doctest::Approx(expected).epsilon(1e-12));
  }
  adgen::RerankByEcpm(res);
  for (std::size_t i = 1; i < res.size(); ++i) {
    CHECK(res[i - 1].expected_ecpm * std::exp(res[i - 1].score) >=
          res[i].expected_ecpm * std::exp(res[i].score));
  }
}

TEST_CASE("result cache honours the ttl") {
  adgen::ResultCache cache(60.0);
  const adgen::CacheKey key{7, 1};
  cache.Put(key, {{1, {}, 0.5}}, 100.0);
  CHECK(cache.Get(key, 130.0).has_value());
  CHECK_FALSE(cache.Get(key, 160.0).has_value());  // exactly ttl old
  CHECK_FALSE(cache.Get(key, 161.0).has_value());
  CHECK_FALSE(cache.Get({7, 2}, 130.0).has_value());  // new pool version
  CHECK_FALSE(cache.Get({8, 1}, 130.0).has_value());
  CHECK(cache.EvictExpired(161.0) == 1);
  CHECK(cache.size() == 0);
  CHECK_THROWS_AS(adgen::ResultCache(-1.0), std::invalid_argument);
}

TEST_CASE("cache hit rate on a replayed stream equals the counting oracle") {
  std::mt19937_64 rng(5);
  std::exponential_distribution<double> gap(1.0 / 40.0);
  for (int trial = 0; trial < 20; ++trial) {
    adgen::ResultCache cache(60.0);
    double now = 0.0;
    double last_fill = -1e18;
    int hits = 0, oracle = 0;
    for (int i = 0; i < 500; ++i) {
      now += gap(rng);
      // Counting oracle: a hit iff the entry was filled less than ttl ago.
      const bool expect = now - last_fill < 60.0;
      if (expect) ++oracle; else last_fill = now;
      if (cache.Get({1, 0}, now)) {
        ++hits;
      } else {
        cache.Put({1, 0}, {}, now);
      }
    }
    CHECK(hits == oracle);
  }
}

namespace {

struct ServingFixture {
  adgen::SidIndex index;
  adgen::SnapshotStore store;
  DecoderModel model = DecoderModel::Init(Config(13, {3, 3, 2}));

  ServingFixture() {
    auto snap = std::make_shared<adgen::Snapshot>();
    snap->version = 1;
    snap->model = model;
    snap->buckets.representatives = {1.0, 2.0, 3.0};
    snap->buckets.boundaries = {1.5, 2.5};
    store.Publish(snap);
    // Map half the SID space, two items on one SID.
    adgen::ItemId id = 0;
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b)
        if ((a + b) % 2 == 0) index.Upsert(id++, adgen::UaSid{{a, b, 0}});
    index.Upsert(id++, adgen::UaSid{{0, 0, 0}});
  }

  adgen::ServeRequest Request(adgen::UserId user, double now) {
    std::mt19937_64 rng(user);
    return {user, adgen::RandomUniform(2, 4, 1.0, rng), now, {0.0, 1.0, 0.0}};
  }
};

}  // namespace

TEST_CASE("serve: cache hit, cold miss, truncation and skipped SIDs") {
  ServingFixture f;
  adgen::ServingConfig cfg;
  cfg.schedule = adgen::ResolveDbw("3,9,4", 3);
  adgen::Server server(f.store, f.index, cfg);

  const auto first = server.Serve(f.Request(1, 0.0));
  CHECK_FALSE(first.cache_hit);
  CHECK(server.counters().model_invocations == 1);
  CHECK(first.snapshot_version == 1);
  CHECK(first.items.size() <= 4);
  for (const auto& it : first.items) CHECK(f.index.SidOf(it.item) == it.sid);
  // Every returned SID is generated and indexed, in generation order.
  std::size_t g = 0;
  for (const auto& it : first.items) {
    while (g < first.generated.size() && first.generated[g].tokens != it.sid.tokens) ++g;
    CHECK(g < first.generated.size());
  }

  const auto second = server.Serve(f.Request(1, 30.0));
  CHECK(second.cache_hit);
  CHECK(second.items == first.items);
  CHECK(server.counters().model_invocations == 1);

  CHECK_FALSE(server.Serve(f.Request(1, 61.0)).cache_hit);
  CHECK(server.counters().model_invocations == 2);

  f.index.Upsert(100, adgen::UaSid{{2, 2, 1}});  // pool version bump
  CHECK_FALSE(server.Serve(f.Request(1, 62.0)).cache_hit);
  CHECK(server.counters().cache_hits == 1);
}

TEST_CASE("serve: TABS widens the schedule off-peak") {
  ServingFixture f;
  adgen::ServingConfig cfg;
  cfg.schedule = adgen::ResolveDbw("2,4,5", 3);
  cfg.use_cache = false;
  adgen::Server server(f.store, f.index, cfg);
  auto req = f.Request(3, 0.0);
  req.traffic = {10.0, 5.0, 1.0};
  CHECK(server.Serve(req).active_width == 5);
  req.traffic = {1.0, 5.0, 1.0};
  const auto off = server.Serve(req);
  CHECK(off.active_width == 8);
  CHECK(off.stats.hypotheses_per_level == std::vector<std::size_t>{1, 3, 6});
}

TEST_CASE("serve: concurrent readers only see whole snapshots") {
  ServingFixture f;
  adgen::ServingConfig cfg;
  cfg.schedule = adgen::ResolveDbw("3,9,6", 3);
  cfg.use_cache = false;

  // Reference outputs for each snapshot version served alone.
  std::vector<std::shared_ptr<const adgen::Snapshot>> snaps;
  for (std::uint64_t v = 1; v <= 4; ++v) {
    auto s = std::make_shared<adgen::Snapshot>();
    s->version = v;
    s->model = DecoderModel::Init(Config(100 + v, {3, 3, 2}));
    snaps.push_back(s);
  }
  std::vector<std::vector<adgen::ServedItem>> expected;
  for (const auto& s : snaps) {
    adgen::SnapshotStore solo;
    solo.Publish(s);
    adgen::Server server(solo, f.index, cfg);
    expected.push_back(server.Serve(f.Request(9, 0.0)).items);
  }

  f.store.Publish(snaps[0]);
  adgen::Server server(f.store, f.index, cfg);
  std::atomic<int> bad{0};
  std::vector<std::thread> readers;
  for (int r = 0; r < 3; ++r) {
    readers.emplace_back([&] {
      for (int i = 0; i < 30; ++i) {
        const auto resp = server.Serve(f.Request(9, 0.0));
        if (resp.snapshot_version < 1 || resp.snapshot_version > 4 ||
            resp.items != expected[resp.snapshot_version - 1]) {
          ++bad;
        }
      }
    });
  }
  for (std::size_t v = 1; v < snaps.size(); ++v) f.store.Publish(snaps[v]);
  for (auto& t : readers) t.join();
  CHECK(bad == 0);
  CHECK(server.counters().requests == 90);
}
