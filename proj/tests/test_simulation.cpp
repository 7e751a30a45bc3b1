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
#include <map>
#include <random>
#include <set>
#include <stdexcept>

#include "adgen/simulation.hpp"
#include "doctest.h"

using namespace adgen;

namespace {

SimConfig SmallSim(std::uint64_t seed) {
  SimConfig c;
  c.seed = seed;
  c.catalog.items = 120;
  c.catalog.dim = 6;
  c.catalog.clusters = 6;
  c.users = 6;
  c.sid_vocab = {6, 4, 4};
  c.model.hidden = 8;
  c.model.ffn_hidden = 12;
  c.model.layers = 2;
  c.model.trunk_layers = 1;
  c.model.ecpm_buckets = 4;
  c.schedule = "2,4,6";
  c.updates_per_tick = 3;
  c.vsl_batch = 4;
  c.rl_fraction = 0.3;
  return c;
}

}  // namespace

TEST_CASE("catalog generation") {
  CatalogConfig cfg;
  cfg.items = 0;
  CHECK(GenerateCatalog(cfg).empty());

  cfg.items = 400;
  cfg.seed = 5;
  cfg.duplication = {4, 0.25};
  const Catalog a = GenerateCatalog(cfg);
  const Catalog b = GenerateCatalog(cfg);
  REQUIRE(a.size() == 400);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].id == i);
    CHECK(a[i].embedding == b[i].embedding);
    CHECK(a[i].latent_value == b[i].latent_value);
    CHECK(a[i].non_semantic.account_id == b[i].non_semantic.account_id);
    CHECK_NOTHROW(ValidateItem(a[i], cfg.dim));
  }

  // Counting oracle: group items by embedding.
  std::map<std::vector<double>, std::vector<ItemId>> groups;
  for (const Item& it : a) groups[it.embedding].push_back(it.id);
  std::size_t in_groups = 0, groups_of_four = 0;
  for (const auto& [e, ids] : groups) {
    if (ids.size() < 2) continue;
    in_groups += ids.size();
    groups_of_four += ids.size() == 4 ? 1 : 0;
    std::set<std::int64_t> accounts;
    for (ItemId id : ids) accounts.insert(a[id].non_semantic.account_id);
    CHECK(accounts.size() == ids.size());  // duplicates differ in non-semantic fields
  }
  CHECK(in_groups == 100);
  CHECK(groups_of_four == 25);
  CHECK(CountDuplicatedItems(a) == 100);

  cfg.duplication = {1, 0.5};
  CHECK(CountDuplicatedItems(GenerateCatalog(cfg)) == 0);
  cfg.duplication = {4, 1.5};
  CHECK_THROWS_AS(GenerateCatalog(cfg), std::invalid_argument);
}

TEST_CASE("users and features") {
  CatalogConfig cfg;
  cfg.items = 50;
  const Catalog catalog = GenerateCatalog(cfg);
  const auto users = GenerateUsers(10, catalog, 3);
  REQUIRE(users.size() == 10);
  for (const auto& u : users) {
    CHECK_NOTHROW(ValidateUser(u));
    const Matrix f = UserFeatures(u);
    CHECK(f.rows() == 2);
    CHECK(f(1, 0) == u.value_tier);
    CHECK(f(0, 2) == u.interest[2]);
  }
  SyntheticUser bad = users[0];
  bad.activity_rate = 0.0;
  CHECK_THROWS_AS(ValidateUser(bad), std::invalid_argument);
  CHECK_THROWS_AS(GenerateUsers(1, Catalog{}, 0), std::invalid_argument);
}

TEST_CASE("reward stub: monotone in latent value, deterministic, non-degenerate") {
  CatalogConfig cfg;
  cfg.items = 300;
  const Catalog catalog = GenerateCatalog(cfg);
  const auto users = GenerateUsers(5, catalog, 1);
  const RewardModelStub stub = RewardModelStub::Create(cfg.dim, 9);
  const RewardModelStub again = RewardModelStub::Create(cfg.dim, 9);
  for (const auto& u : users) {
    double sum = 0.0, sum_sq = 0.0;
    for (const Item& it : catalog) {
      const double s = stub.Score(u, it);
      CHECK(s >= 0.0);
      CHECK(s == again.Score(u, it));
      Item zero = it, doubled = it;
      zero.latent_value = 0.0;
      doubled.latent_value = 2.0 * it.latent_value + 0.1;
      CHECK(stub.Score(u, doubled) > stub.Score(u, it));
      if (it.latent_value > 0.0) CHECK(stub.Score(u, it) > stub.Score(u, zero));
      sum += s;
      sum_sq += s * s;
    }
    const double n = static_cast<double>(catalog.size());
    CHECK(sum_sq / n - (sum / n) * (sum / n) > 1e-3);
  }
}

TEST_CASE("feedback: engagement grows with alignment") {
  SyntheticUser u;
  u.interest = {1.0, 1.0, 1.0, 1.0};
  Item aligned, opposed;
  aligned.embedding = {1.0, 1.0, 1.0, 1.0};
  opposed.embedding = {-1.0, -1.0, -1.0, -1.0};
  std::mt19937_64 rng(2);
  FeedbackModel fm;
  int clicks_aligned = 0, clicks_opposed = 0, purchases = 0;
  for (int i = 0; i < 4000; ++i) {
    const int a = SampleEngagement(fm, u, aligned, rng);
    const int o = SampleEngagement(fm, u, opposed, rng);
    CHECK((a == 1 || a == 2 || a == 4));
    clicks_aligned += a >= 2;
    clicks_opposed += o >= 2;
    purchases += a == 4;
  }
  // sigmoid(2 * 2 - 0.5) = 0.971, sigmoid(-4.5) = 0.011.
  CHECK(clicks_aligned / 4000.0 == doctest::Approx(0.9707).epsilon(0.03));
  CHECK(clicks_opposed / 4000.0 == doctest::Approx(0.0110).epsilon(0.5));
  CHECK(purchases > 0);
}

TEST_CASE("served-list NDCG") {
  const std::vector<double> ideal = {3.0, 2.0, 1.0, 0.5};
  CHECK(ServedListNdcg(std::vector<double>{3.0, 2.0}, ideal, 2) == doctest::Approx(1.0));
  CHECK(ServedListNdcg({}, ideal, 2) == 0.0);
  const double partial = ServedListNdcg(std::vector<double>{2.0}, ideal, 2);
  const double oracle = (std::exp2(2.0) - 1.0) /
                        ((std::exp2(3.0) - 1.0) + (std::exp2(2.0) - 1.0) / std::log2(3.0));
  CHECK(partial == doctest::Approx(oracle).epsilon(1e-12));
}

TEST_CASE("RL log construction") {
  SimConfig c = SmallSim(4);
  c.Finalize();
  const SimWorld world = SimWorld::Build(c);
  auto snap = std::make_shared<Snapshot>();
  snap->version = 3;
  snap->model = DecoderModel::Init(c.model);
  snap->buckets = world.buckets;
  std::mt19937_64 rng(1);

  SnapshotStore store;
  store.Publish(snap);
  ServingConfig scfg = c.serving;
  scfg.use_cache = false;
  Server server(store, world.index, scfg);

  for (const SyntheticUser& user : world.users) {
    ExploreConfig explore;
    explore.relaxed = c.serving.schedule;
    explore.epsilon = 0.0;
    const CandidateList list =
        BuildRlLog(*snap, snap.get(), user, world.reward, world.index, world.catalog, explore, rng);
    CHECK_NOTHROW(list.Validate());
    REQUIRE(list.ref_logp.has_value());
    CHECK(*list.ref_logp == list.policy_logp);
    std::set<UaSid> cands(list.candidates.begin(), list.candidates.end());
    const ServeResponse resp = server.Serve({user.id, UserFeatures(user), 0.0, {1e9, 1.0, 0.0}});
    for (const ServedItem& it : resp.items) CHECK(cands.count(it.sid) == 1);
    for (std::size_t i = 0; i < list.size(); ++i) {
      double best = 0.0;
      for (ItemId id : world.index.Lookup(list.candidates[i])) {
        best = std::max(best, world.reward.Score(user, world.catalog[id]));
      }
      CHECK(list.rewards[i] == best);
    }

    explore.epsilon = 1.0;
    Snapshot other = *snap;
    other.version = 4;
    const CandidateList random =
        BuildRlLog(other, snap.get(), user, world.reward, world.index, world.catalog, explore, rng);
    CHECK_FALSE(random.ref_logp.has_value());
    for (const UaSid& s : random.candidates) CHECK_FALSE(world.index.Lookup(s).empty());
    CHECK(std::set<UaSid>(random.candidates.begin(), random.candidates.end()).size() ==
          random.size());
    CHECK(std::is_sorted(random.rewards.begin(), random.rewards.end(), std::greater<>()));
  }
}

TEST_CASE("trainer: first Adam step matches the closed form") {
  SimConfig c = SmallSim(2);
  c.Finalize();
  DecoderModel model = DecoderModel::Init(c.model);
  std::mt19937_64 rng(3);
  VslSample s{RandomUniform(2, c.catalog.dim, 1.0, rng), {1, 2, 3}, 0.7, 2.0, 1.0};
  EcpmBuckets buckets = FitEcpmBuckets(std::vector<double>{0.1, 0.5, 0.9, 1.3}, 4);

  AdamConfig adam;
  adam.lr = 1e-2;
  adam.clip_norm = 0.0;
  Trainer trainer(model, c.loss, adam);

  Tape tape(true);
  Var loss = UnifiedLoss(tape, model, std::span<const VslSample>(&s, 1), {}, buckets, c.loss);
  tape.Backward(loss);
  const LossBreakdown bd = trainer.Step(std::span<const VslSample>(&s, 1), {}, buckets);
  CHECK(bd.total == doctest::Approx(loss.scalar()).epsilon(1e-12));
  CHECK(trainer.state().step == 1);

  // With bias correction the first update is -lr * g / (|g| + eps).
  double worst = 0.0;
  std::vector<const Matrix*> before;
  model.ForEachParam([&](const std::string&, const Matrix& p) { before.push_back(&p); });
  std::size_t i = 0;
  trainer.model().ForEachParam([&](const std::string&, const Matrix& after) {
    const Matrix* g = tape.GradOf(*before[i]);
    for (std::size_t k = 0; k < after.size(); ++k) {
      const double gk = g ? g->data()[k] : 0.0;
      const double expect = before[i]->data()[k] - adam.lr * gk / (std::abs(gk) + adam.eps);
      worst = std::max(worst, std::abs(after.data()[k] - expect));
    }
    ++i;
  });
  CHECK(worst < 1e-12);
}

TEST_CASE("trainer: lr 0 is a no-op, repeated batches reduce the loss") {
  SimConfig c = SmallSim(6);
  c.Finalize();
  const DecoderModel model = DecoderModel::Init(c.model);
  std::mt19937_64 rng(8);
  std::vector<VslSample> batch;
  for (int i = 0; i < 4; ++i) {
    batch.push_back({RandomUniform(2, c.catalog.dim, 1.0, rng),
                     {static_cast<int>(rng() % 6), static_cast<int>(rng() % 4), static_cast<int>(rng() % 4)},
                     0.5,
                     1.0,
                     2.0});
  }
  EcpmBuckets buckets = FitEcpmBuckets(std::vector<double>{0.1, 0.5, 0.9, 1.3}, 4);
  AdamConfig frozen;
  frozen.lr = 0.0;
  Trainer still(model, c.loss, frozen);
  for (int i = 0; i < 5; ++i) still.Step(batch, {}, buckets);
  CHECK(still.model() == model);

  Trainer t(model, c.loss, AdamConfig{});
  const double first = t.Step(batch, {}, buckets).total;
  double last = first;
  for (int i = 0; i < 200; ++i) last = t.Step(batch, {}, buckets).total;
  CHECK(last < 0.5 * first);

  CHECK(t.Step({}, {}, buckets).vsl_terms == 0);  // empty batch: no update
}

TEST_CASE("trainer: divergence guard keeps the last good parameters") {
  SimConfig c = SmallSim(1);
  c.Finalize();
  const DecoderModel model = DecoderModel::Init(c.model);
  Trainer t(model, c.loss, AdamConfig{});
  VslSample s{Matrix(2, c.catalog.dim, std::nan("")), {0, 0, 0}, 0.1, 1.0, 1.0};
  EcpmBuckets buckets = FitEcpmBuckets(std::vector<double>{0.1, 0.5}, 2);
  try {
    t.Step(std::span<const VslSample>(&s, 1), {}, buckets);
    FAIL("expected DivergenceError");
  } catch (const DivergenceError& e) {
    CHECK(e.step() == 1);
    REQUIRE(e.last_good());
    CHECK(*e.last_good() == model);
  }
  CHECK(t.model() == model);
  CHECK(t.state().step == 0);
}

TEST_CASE("online loop: boundaries, determinism and snapshots") {
  SimConfig c = SmallSim(11);
  const RunReport empty = RunOnlineLoop(0, c);
  CHECK(empty.ticks.empty());
  CHECK(empty.loss_curve.empty());
  CHECK(empty.baseline_ndcg == empty.final_ndcg);

  c.keep_request_log = true;
  std::vector<std::uint64_t> published;
  const RunReport a = RunOnlineLoop(12, c, [&](const Snapshot& s) { published.push_back(s.version); });
  const RunReport b = RunOnlineLoop(12, c);
  CHECK(a.loss_curve == b.loss_curve);
  CHECK(a.final_ndcg == b.final_ndcg);
  CHECK(a.requests == b.requests);
  CHECK(a.cache_hits == b.cache_hits);
  CHECK(a.layer_calls == b.layer_calls);
  CHECK(a.request_log.size() == b.request_log.size());
  CHECK(a.train_steps == a.loss_curve.size());
  CHECK(published == a.published_versions);
  CHECK(published.size() == 13);

  // Every request names one published snapshot; versions never go backwards.
  std::set<std::uint64_t> versions(published.begin(), published.end());
  std::uint64_t prev = 0;
  for (const RequestRecord& r : a.request_log) {
    if (r.cache_hit) continue;
    CHECK(versions.count(r.snapshot_version) == 1);
    CHECK(r.snapshot_version >= prev);
    prev = r.snapshot_version;
  }
  std::size_t hits = 0;
  for (const TickRecord& t : a.ticks) hits += t.cache_hits;
  CHECK(hits == a.cache_hits);
}

TEST_CASE("online loop: TABS follows the two-phase traffic profile") {
  SimConfig c = SmallSim(2);
  c.traffic_period = 4;
  c.peak_multiplier = 20.0;  // far above the threshold
  c.offpeak_multiplier = 0.05;
  c.q_threshold = 1.0;
  const RunReport r = RunOnlineLoop(8, c);
  for (const TickRecord& t : r.ticks) {
    const bool peak = t.tick % 4 < 2;
    CHECK(t.active_width == (peak ? 6 : 10));  // 6 * 1.6 = 9.6 -> 10
    CHECK((t.qps >= c.q_threshold) == peak);
  }
}

TEST_CASE("online loop: lr 0 publishes identical snapshots") {
  SimConfig c = SmallSim(3);
  c.adam.lr = 0.0;
  std::vector<DecoderModel> models;
  RunOnlineLoop(5, c, [&](const Snapshot& s) { models.push_back(s.model); });
  REQUIRE(models.size() == 6);
  for (const auto& m : models) CHECK(m == models[0]);
}

TEST_CASE("online loop: divergence guard aborts with a diagnostic") {
  SimConfig c = SmallSim(5);
  c.fault_nan_step = 4;
  try {
    RunOnlineLoop(10, c);
    FAIL("expected DivergenceError");
  } catch (const DivergenceError& e) {
    CHECK(e.step() == 4);
    CHECK(e.last_good());
  }
}

TEST_CASE("config validation") {
  SimConfig c = SmallSim(0);
  c.rl_fraction = 1.5;
  CHECK_THROWS_AS(c.Finalize(), std::invalid_argument);
  c = SmallSim(0);
  c.schedule = "0";
  CHECK_THROWS_AS(c.Finalize(), std::invalid_argument);
  c = SmallSim(0);
  c.users = 0;
  CHECK_THROWS_AS(c.Finalize(), std::invalid_argument);
}
