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


#include "adgen/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <map>
#include <numeric>
#include <set>

namespace adgen {

namespace {

double ScaledDot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s / std::sqrt(static_cast<double>(a.size()));
}

double Softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
double Sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

std::uint64_t DeriveSeed(std::uint64_t seed, std::uint64_t stream) {
  return SplitMix64(seed ^ SplitMix64(stream));
}

// ---------------------------------------------------------------------------

Catalog GenerateCatalog(const CatalogConfig& config) {
  if (config.dim == 0) throw std::invalid_argument("GenerateCatalog: dim must be positive");
  if (config.clusters < 1) throw std::invalid_argument("GenerateCatalog: need a cluster");
  if (config.duplication.factor < 1 || config.duplication.fraction < 0.0 ||
      config.duplication.fraction > 1.0) {
    throw std::invalid_argument("GenerateCatalog: bad duplication profile");
  }
  Catalog catalog;
  if (config.items == 0) return catalog;

  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::exponential_distribution<double> value(2.0);
  Matrix centers(static_cast<std::size_t>(config.clusters), config.dim);
  for (double& x : centers.data()) x = normal(rng);

  auto draw = [&]() {
    const std::size_t c = rng() % centers.rows();
    std::vector<double> e(config.dim);
    for (std::size_t j = 0; j < config.dim; ++j) {
      e[j] = centers(c, j) + config.cluster_spread * normal(rng);
    }
    return e;
  };

  const auto factor = static_cast<std::size_t>(config.duplication.factor);
  std::size_t dup_items = 0;
  if (factor >= 2) {
    const auto target = static_cast<std::size_t>(
        std::floor(config.duplication.fraction * static_cast<double>(config.items) + 1e-9));
    dup_items = (target / factor) * factor;
  }
  std::vector<std::vector<double>> embeddings;
  embeddings.reserve(config.items);
  for (std::size_t g = 0; g < dup_items / factor; ++g) {
    const std::vector<double> e = draw();
    for (std::size_t r = 0; r < factor; ++r) embeddings.push_back(e);
  }
  while (embeddings.size() < config.items) embeddings.push_back(draw());
  std::shuffle(embeddings.begin(), embeddings.end(), rng);

  catalog.reserve(config.items);
  for (std::size_t i = 0; i < config.items; ++i) {
    Item item;
    item.id = i;
    item.embedding = std::move(embeddings[i]);
    item.non_semantic.account_id = static_cast<std::int64_t>(1000 + i);
    item.non_semantic.conversion_type = static_cast<ConversionType>(rng() % kConversionTypeCount);
    item.latent_value = value(rng);
    catalog.push_back(std::move(item));
  }
  return catalog;
}

std::size_t CountDuplicatedItems(const Catalog& catalog) {
  std::map<std::vector<double>, std::size_t> counts;
  for (const Item& item : catalog) ++counts[item.embedding];
  std::size_t n = 0;
  for (const auto& [e, c] : counts) {
    if (c >= 2) n += c;
  }
  return n;
}

std::vector<SyntheticUser> GenerateUsers(std::size_t n_users, const Catalog& catalog,
                                         std::uint64_t seed) {
  if (n_users > 0 && catalog.empty()) throw std::invalid_argument("GenerateUsers: empty catalog");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 0.3);
  std::uniform_real_distribution<double> rate(0.05, 0.15);
  std::vector<SyntheticUser> users;
  for (std::size_t u = 0; u < n_users; ++u) {
    SyntheticUser user;
    user.id = u;
    user.interest = catalog[rng() % catalog.size()].embedding;
    for (double& x : user.interest) x += normal(rng);
    user.value_tier = 1.0 + static_cast<double>(rng() % 3);
    user.activity_rate = rate(rng);
    users.push_back(std::move(user));
  }
  return users;
}

void ValidateUser(const SyntheticUser& user) {
  for (double x : user.interest) {
    if (!std::isfinite(x)) throw std::invalid_argument("SyntheticUser: non-finite interest");
  }
  if (!(user.value_tier > 0.0) || !std::isfinite(user.value_tier)) {
    throw std::invalid_argument("SyntheticUser: value_tier must be positive");
  }
  if (!(user.activity_rate > 0.0) || !std::isfinite(user.activity_rate)) {
    throw std::invalid_argument("SyntheticUser: activity_rate must be positive");
  }
}

Matrix UserFeatures(const SyntheticUser& user) {
  Matrix f(2, user.interest.size());
  std::copy(user.interest.begin(), user.interest.end(), f.row(0).begin());
  f(1, 0) = user.value_tier;
  return f;
}

RewardModelStub RewardModelStub::Create(std::size_t dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 0.1);
  RewardModelStub stub;
  stub.projection = Matrix(dim, dim);
  for (std::size_t i = 0; i < dim; ++i) {
    for (std::size_t j = 0; j < dim; ++j) stub.projection(i, j) = (i == j ? 1.0 : 0.0) + noise(rng);
  }
  return stub;
}

double RewardModelStub::Score(const SyntheticUser& user, const Item& item) const {
  const std::size_t d = item.embedding.size();
  if (user.interest.size() != d || projection.rows() != d || projection.cols() != d) {
    throw std::invalid_argument("RewardModelStub: dimension mismatch");
  }
  std::vector<double> pe(d, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) pe[i] += projection(i, j) * item.embedding[j];
  }
  return Softplus(ScaledDot(user.interest, pe) + bias) * (base + item.latent_value);
}

int SampleEngagement(const FeedbackModel& model, const SyntheticUser& user, const Item& item,
                     std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double logit = model.scale * ScaledDot(user.interest, item.embedding) + model.bias;
  if (u(rng) >= Sigmoid(logit)) return 1;
  if (u(rng) >= Sigmoid(logit - model.purchase_offset)) return 2;
  return 4;
}

// ---------------------------------------------------------------------------

CandidateList BuildRlLog(const Snapshot& snapshot, const Snapshot* reference,
                         const SyntheticUser& user, const RewardModelStub& reward,
                         const SidIndex& index, const Catalog& catalog,
                         const ExploreConfig& config, std::mt19937_64& rng) {
  const Matrix X = ContextProcess(snapshot.model, UserFeatures(user));
  std::vector<Hypothesis> beams = BeamSearch(snapshot.model, X, config.relaxed, {});
  if (config.max_candidates > 0 && beams.size() > config.max_candidates) {
    beams.resize(config.max_candidates);
  }
  std::vector<UaSid> sids;
  for (Hypothesis& h : beams) sids.push_back(UaSid{std::move(h.tokens)});

  if (config.epsilon > 0.0) {
    std::vector<UaSid> pool = index.Sids();
    std::shuffle(pool.begin(), pool.end(), rng);
    std::set<UaSid> used(sids.begin(), sids.end());
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::size_t next = 0;
    std::vector<UaSid> mixed;
    for (const UaSid& sid : sids) {
      if (u(rng) >= config.epsilon) {
        mixed.push_back(sid);
        continue;
      }
      while (next < pool.size() && used.count(pool[next])) ++next;
      if (next == pool.size()) continue;  // nothing left to draw: drop the slot
      used.insert(pool[next]);
      mixed.push_back(pool[next++]);
    }
    sids = std::move(mixed);
  }
  if (sids.empty()) throw std::invalid_argument("BuildRlLog: no candidates");

  std::vector<std::vector<int>> seqs;
  for (const UaSid& s : sids) seqs.push_back(s.tokens);
  CandidateList list;
  list.policy_logp = ScoreSequences(snapshot.model, X, seqs);
  for (const UaSid& s : sids) {
    double best = 0.0;
    for (ItemId id : index.Lookup(s)) {
      if (id >= catalog.size()) throw std::invalid_argument("BuildRlLog: item not in catalog");
      best = std::max(best, reward.Score(user, catalog[id]));
    }
    list.rewards.push_back(best);
  }
  list.candidates = std::move(sids);
  if (reference != nullptr && reference->version == snapshot.version) {
    list.ref_logp = list.policy_logp;
  }
  list.SortByReward();
  return list;
}

// ---------------------------------------------------------------------------

Trainer::Trainer(DecoderModel model, LossConfig loss, AdamConfig adam)
    : model_(std::move(model)), loss_(loss), adam_(adam) {
  loss_.Validate();
  if (!(adam_.lr >= 0.0) || !(adam_.beta1 >= 0.0 && adam_.beta1 < 1.0) ||
      !(adam_.beta2 >= 0.0 && adam_.beta2 < 1.0) || !(adam_.eps > 0.0) || adam_.clip_norm < 0.0) {
    throw std::invalid_argument("Trainer: bad Adam configuration");
  }
  model_.ForEachParam([this](const std::string&, const Matrix& p) {
    state_.m.emplace_back(p.rows(), p.cols());
    state_.v.emplace_back(p.rows(), p.cols());
  });
}

void Trainer::set_state(AdamState state) {
  std::size_t i = 0;
  bool ok = state.m.size() == state_.m.size() && state.v.size() == state_.v.size();
  model_.ForEachParam([&](const std::string&, const Matrix& p) {
    if (!ok) return;
    ok = state.m[i].rows() == p.rows() && state.m[i].cols() == p.cols() &&
         state.v[i].rows() == p.rows() && state.v[i].cols() == p.cols();
    ++i;
  });
  if (!ok) throw std::invalid_argument("Trainer: optimizer state does not match the model");
  state_ = std::move(state);
}

LossBreakdown Trainer::Step(std::span<const VslSample> vsl, std::span<const RlSample> rl,
                            const EcpmBuckets& buckets) {
  LossBreakdown bd;
  Tape tape(true);
  Var loss = UnifiedLoss(tape, model_, vsl, rl, buckets, loss_, &bd);
  if (bd.vsl_terms + bd.rl_terms == 0) return bd;
  auto diverged = [&](const std::string& what) {
    return DivergenceError("training diverged at step " + std::to_string(state_.step + 1) + ": " +
                               what,
                           state_.step + 1, std::make_shared<const DecoderModel>(model_));
  };
  if (!std::isfinite(bd.total)) throw diverged("non-finite loss");
  tape.Backward(loss);

  std::vector<Matrix> grads;
  double norm_sq = 0.0;
  model_.ForEachParam([&](const std::string&, const Matrix& p) {
    const Matrix* g = tape.GradOf(p);
    grads.push_back(g ? *g : Matrix(p.rows(), p.cols()));
    for (double x : grads.back().data()) norm_sq += x * x;
  });
  if (!std::isfinite(norm_sq)) throw diverged("non-finite gradient");
  const double norm = std::sqrt(norm_sq);
  const double clip = adam_.clip_norm > 0.0 && norm > adam_.clip_norm ? adam_.clip_norm / norm : 1.0;

  ++state_.step;
  const double t = static_cast<double>(state_.step);
  const double c1 = 1.0 - std::pow(adam_.beta1, t);
  const double c2 = 1.0 - std::pow(adam_.beta2, t);
  std::size_t i = 0;
  model_.ForEachParam([&](const std::string&, Matrix& p) {
    auto m = state_.m[i].data();
    auto v = state_.v[i].data();
    const auto g = grads[i].data();
    auto w = p.data();
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double gk = g[k] * clip;
      m[k] = adam_.beta1 * m[k] + (1.0 - adam_.beta1) * gk;
      v[k] = adam_.beta2 * v[k] + (1.0 - adam_.beta2) * gk * gk;
      w[k] -= adam_.lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + adam_.eps);
    }
    ++i;
  });
  return bd;
}

// ---------------------------------------------------------------------------

void SimConfig::Finalize() {
  if (sid_vocab.empty()) throw std::invalid_argument("SimConfig: empty sid_vocab");
  catalog.seed = DeriveSeed(seed, 1);
  model.feature_dim = catalog.dim;
  model.level_vocab_sizes = sid_vocab;
  model.seed = DeriveSeed(seed, 2);
  model.Validate();
  loss.Validate();
  serving.schedule = ResolveDbw(schedule, sid_vocab.size());
  if (users == 0) throw std::invalid_argument("SimConfig: need at least one user");
  if (!(tick_seconds > 0.0)) throw std::invalid_argument("SimConfig: tick_seconds must be positive");
  if (traffic_period == 0 || peak_fraction < 0.0 || peak_fraction > 1.0) {
    throw std::invalid_argument("SimConfig: bad traffic profile");
  }
  if (!(peak_multiplier > 0.0) || !(offpeak_multiplier > 0.0)) {
    throw std::invalid_argument("SimConfig: traffic multipliers must be positive");
  }
  if (rl_fraction < 0.0 || rl_fraction > 1.0 || explore_epsilon < 0.0 || explore_epsilon > 1.0) {
    throw std::invalid_argument("SimConfig: probabilities must lie in [0, 1]");
  }
  if (relaxed_factor < 1) throw std::invalid_argument("SimConfig: relaxed_factor must be >= 1");
  if (capacity_slack < 0.0 || capacity_slack > 1.0) {
    throw std::invalid_argument("SimConfig: capacity_slack must lie in [0, 1]");
  }
  if (replay_capacity == 0 || reference_interval == 0) {
    throw std::invalid_argument("SimConfig: replay_capacity and reference_interval must be positive");
  }
}

double ServedListNdcg(std::span<const double> served_rewards,
                      std::span<const double> ideal_rewards_desc, std::size_t list_length) {
  if (served_rewards.empty() || list_length == 0) return 0.0;
  const std::size_t n_ideal = std::min(list_length, ideal_rewards_desc.size());
  const double z = Dcg(ideal_rewards_desc.subspan(0, n_ideal));
  if (z <= 0.0) return 0.0;
  const std::size_t n = std::min(list_length, served_rewards.size());
  return Dcg(served_rewards.subspan(0, n)) / z;
}

SimWorld SimWorld::Build(const SimConfig& config) {
  SimWorld w;
  w.catalog = GenerateCatalog(config.catalog);
  if (w.catalog.empty()) throw std::invalid_argument("SimWorld: empty catalog");
  w.users = GenerateUsers(config.users, w.catalog, DeriveSeed(config.seed, 3));
  w.reward = RewardModelStub::Create(config.catalog.dim, DeriveSeed(config.seed, 4));
  w.quantizer = FitQuantizer(w.catalog, config.sid_vocab, config.quantizer_mode,
                             DeriveSeed(config.seed, 5))
                    .model;
  for (const Item& item : w.catalog) w.index.Upsert(item.id, EncodeItem(w.quantizer, item));

  std::vector<double> all;
  for (const SyntheticUser& u : w.users) {
    std::vector<double> r;
    for (const Item& item : w.catalog) r.push_back(w.reward.Score(u, item));
    all.insert(all.end(), r.begin(), r.end());
    std::sort(r.begin(), r.end(), std::greater<>());
    w.ideal_rewards.push_back(std::move(r));
  }
  w.buckets = FitEcpmBuckets(all, config.model.ecpm_buckets);
  return w;
}

namespace {

std::vector<double> ServedRewards(const SimWorld& world, const SyntheticUser& user,
                                  const std::vector<ServedItem>& items) {
  std::vector<double> r;
  for (const ServedItem& it : items) r.push_back(world.reward.Score(user, world.catalog[it.item]));
  return r;
}

}  // namespace

double EvaluateNdcg(const SimWorld& world, const Snapshot& snapshot, const SimConfig& config) {
  SnapshotStore store;
  store.Publish(std::make_shared<const Snapshot>(snapshot));
  ServingConfig cfg = config.serving;
  cfg.use_cache = false;
  Server server(store, world.index, cfg);
  const auto list_length = static_cast<std::size_t>(cfg.schedule.widths.back());
  double total = 0.0;
  for (std::size_t u = 0; u < world.users.size(); ++u) {
    const SyntheticUser& user = world.users[u];
    ServeRequest req{user.id, UserFeatures(user), 0.0,
                     {std::numeric_limits<double>::infinity(), config.q_threshold, 0.0}};
    const ServeResponse resp = server.Serve(req);
    total += ServedListNdcg(ServedRewards(world, user, resp.items), world.ideal_rewards[u],
                            list_length);
  }
  return total / static_cast<double>(world.users.size());
}

RunReport RunOnlineLoop(std::size_t ticks, const SimConfig& input,
                        const std::function<void(const Snapshot&)>& on_publish) {
  SimConfig config = input;
  config.Finalize();
  const SimWorld world = SimWorld::Build(config);
  std::mt19937_64 rng(DeriveSeed(config.seed, 6));
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  RunReport report;
  {
    std::vector<std::pair<ItemId, UaSid>> assignments;
    for (const Item& item : world.catalog) assignments.emplace_back(item.id, *world.index.SidOf(item.id));
    report.sid_metrics = ComputeSidMetrics(assignments, config.sid_vocab);
  }

  Trainer trainer(DecoderModel::Init(config.model), config.loss, config.adam);
  SnapshotStore store;
  std::uint64_t version = 1;
  auto publish = [&]() {
    auto snap = std::make_shared<Snapshot>();
    snap->version = version;
    snap->model = trainer.model();
    snap->buckets = world.buckets;
    std::shared_ptr<const Snapshot> published = std::move(snap);
    store.Publish(published);
    report.published_versions.push_back(version);
    if (on_publish) on_publish(*published);
    return published;
  };
  std::shared_ptr<const Snapshot> reference = publish();
  report.baseline_ndcg = EvaluateNdcg(world, *reference, config);

  Server server(store, world.index, config.serving);
  const auto list_length = static_cast<std::size_t>(config.serving.schedule.widths.back());
  ExploreConfig explore;
  explore.relaxed = ScaleSchedule(config.serving.schedule,
                                  config.serving.schedule.base_width * config.relaxed_factor);
  explore.epsilon = config.explore_epsilon;

  std::vector<Matrix> features;
  for (const SyntheticUser& u : world.users) features.push_back(UserFeatures(u));
  std::deque<VslSample> vsl_buffer;
  std::deque<RlSample> rl_buffer;

  for (std::size_t tick = 0; tick < ticks; ++tick) {
    TickRecord rec;
    rec.tick = tick;
    const double t0 = static_cast<double>(tick) * config.tick_seconds;
    rec.time = t0;
    const bool peak = static_cast<double>(tick % config.traffic_period) <
                      config.peak_fraction * static_cast<double>(config.traffic_period);
    const double mult = peak ? config.peak_multiplier : config.offpeak_multiplier;

    // Poisson arrivals per user inside [t0, t0 + tick).
    std::vector<std::pair<double, std::size_t>> arrivals;
    for (std::size_t u = 0; u < world.users.size(); ++u) {
      std::exponential_distribution<double> gap(world.users[u].activity_rate * mult);
      for (double t = t0 + gap(rng); t < t0 + config.tick_seconds; t += gap(rng)) {
        arrivals.emplace_back(t, u);
      }
    }
    std::sort(arrivals.begin(), arrivals.end());
    rec.requests = arrivals.size();
    rec.qps = static_cast<double>(arrivals.size()) / config.tick_seconds;
    const TrafficSignal signal{rec.qps, config.q_threshold, config.capacity_slack};
    rec.active_width = TabsAdjust(signal, config.serving.schedule.base_width, config.serving.tabs_boost);

    double ndcg_sum = 0.0;
    double latency_sum = 0.0;
    for (const auto& [time, u] : arrivals) {
      const SyntheticUser& user = world.users[u];
      const ServeResponse resp = server.Serve({user.id, features[u], time, signal});
      rec.cache_hits += resp.cache_hit ? 1 : 0;
      rec.model_invocations += resp.cache_hit ? 0 : 1;
      rec.layer_calls += resp.stats.layer_calls.total();
      latency_sum += resp.virtual_latency;
      const std::vector<double> rewards = ServedRewards(world, user, resp.items);
      ndcg_sum += ServedListNdcg(rewards, world.ideal_rewards[u], list_length);

      for (std::size_t i = 0; i < resp.items.size(); ++i) {
        const int depth = SampleEngagement(config.feedback, user, world.catalog[resp.items[i].item], rng);
        if (depth < 2) continue;
        vsl_buffer.push_back({features[u], resp.items[i].sid.tokens, rewards[i], user.value_tier,
                              static_cast<double>(depth)});
        if (vsl_buffer.size() > config.replay_capacity) vsl_buffer.pop_front();
        ++rec.vsl_logs;
      }
      if (unit(rng) < config.rl_fraction) {
        const std::shared_ptr<const Snapshot> snap = store.Current();
        rl_buffer.push_back({features[u],
                             BuildRlLog(*snap, reference.get(), user, world.reward, world.index,
                                        world.catalog, explore, rng),
                             user.value_tier, 1.0});
        if (rl_buffer.size() > config.replay_capacity) rl_buffer.pop_front();
        ++rec.rl_logs;
      }
      if (config.keep_request_log) {
        RequestRecord r{user.id, time, resp.snapshot_version, resp.cache_hit, resp.active_width,
                        resp.virtual_latency, resp.stats.layer_calls.total(), {}};
        for (const ServedItem& it : resp.items) r.items.emplace_back(it.item, it.score);
        report.request_log.push_back(std::move(r));
      }
    }
    if (!arrivals.empty()) {
      rec.served_ndcg = ndcg_sum / static_cast<double>(arrivals.size());
      rec.mean_latency = latency_sum / static_cast<double>(arrivals.size());
    }

    std::size_t updates = 0;
    for (std::size_t k = 0; k < config.updates_per_tick; ++k) {
      if (vsl_buffer.empty() && rl_buffer.empty()) break;
      std::vector<VslSample> vsl;
      std::vector<RlSample> rl;
      for (std::size_t b = 0; b < config.vsl_batch && !vsl_buffer.empty(); ++b) {
        vsl.push_back(vsl_buffer[rng() % vsl_buffer.size()]);
      }
      for (std::size_t b = 0; b < config.rl_batch && !rl_buffer.empty(); ++b) {
        rl.push_back(rl_buffer[rng() % rl_buffer.size()]);
      }
      if (config.fault_nan_step >= 0 &&
          trainer.state().step + 1 == static_cast<std::uint64_t>(config.fault_nan_step)) {
        Matrix poisoned(2, config.catalog.dim, std::numeric_limits<double>::quiet_NaN());
        if (!vsl.empty()) vsl[0].features = poisoned;
        if (!rl.empty()) rl[0].features = poisoned;
      }
      const LossBreakdown bd = trainer.Step(vsl, rl, world.buckets);
      report.loss_curve.push_back(bd.total);
      rec.loss.total += bd.total;
      rec.loss.sid += bd.sid;
      rec.loss.ecpm += bd.ecpm;
      rec.loss.mtp += bd.mtp;
      rec.loss.rspo += bd.rspo;
      rec.loss.vsl_terms += bd.vsl_terms;
      rec.loss.rl_terms += bd.rl_terms;
      ++updates;
    }
    if (updates > 0) {
      const double n = static_cast<double>(updates);
      rec.loss.total /= n;
      rec.loss.sid /= n;
      rec.loss.ecpm /= n;
      rec.loss.mtp /= n;
      rec.loss.rspo /= n;
    }

    ++version;
    std::shared_ptr<const Snapshot> published = publish();
    if ((version - 1) % config.reference_interval == 0) reference = published;
    rec.snapshot_version = version;

    report.requests += rec.requests;
    report.cache_hits += rec.cache_hits;
    report.layer_calls += rec.layer_calls;
    report.ticks.push_back(rec);
  }
  report.train_steps = trainer.state().step;
  report.final_ndcg = EvaluateNdcg(world, *store.Current(), config);
  return report;
}

}  // namespace adgen
