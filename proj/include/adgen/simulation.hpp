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


// Closed-loop simulation: synthetic catalog and users, a fixed reward scorer,
// a logistic feedback model, RL-log construction with exploration, an Adam
// trainer over the unified objective and the online serve/learn/publish loop.

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "adgen/losses.hpp"
#include "adgen/model.hpp"
#include "adgen/serving.hpp"
#include "adgen/tokenizer.hpp"

namespace adgen {

// Independent seed for a numbered random stream of a run.
std::uint64_t DeriveSeed(std::uint64_t seed, std::uint64_t stream);

// ---------------------------------------------------------------------------
// Catalog and users.

// `fraction` of the items live in groups of `factor` items that share one
// embedding but carry distinct non-semantic fields.
struct DuplicationProfile {
  int factor = 1;
  double fraction = 0.0;
};

struct CatalogConfig {
  std::size_t items = 500;
  std::size_t dim = 8;
  int clusters = 16;
  double cluster_spread = 0.35;
  DuplicationProfile duplication;
  std::uint64_t seed = 0;
};

// Item ids are 0..n-1 in order. Deterministic per config.
Catalog GenerateCatalog(const CatalogConfig& config);

// Number of items whose embedding is shared with at least one other item.
std::size_t CountDuplicatedItems(const Catalog& catalog);

struct SyntheticUser {
  UserId id = 0;
  std::vector<double> interest;
  double value_tier = 1.0;     // becomes w_user
  double activity_rate = 0.1;  // requests per virtual second
};

std::vector<SyntheticUser> GenerateUsers(std::size_t n_users, const Catalog& catalog,
                                         std::uint64_t seed);
void ValidateUser(const SyntheticUser& user);

// Request features: row 0 is the interest vector, row 1 carries the value
// tier in its first slot.
Matrix UserFeatures(const SyntheticUser& user);

// ---------------------------------------------------------------------------
// Reward scorer: softplus(<u, P e> + bias) * (base + latent_value).

struct RewardModelStub {
  Matrix projection;  // dim x dim
  double bias = 0.0;
  double base = 0.5;

  static RewardModelStub Create(std::size_t dim, std::uint64_t seed);
  double Score(const SyntheticUser& user, const Item& item) const;
};

// Feedback: click with probability sigmoid(scale * <u, e> + bias), purchase
// after a click with sigmoid(scale * <u, e> + bias - purchase_offset).
struct FeedbackModel {
  double scale = 2.0;
  double bias = -0.5;
  double purchase_offset = 1.5;
};

// Behavior depth: 1 impression, 2 click, 4 purchase.
int SampleEngagement(const FeedbackModel& model, const SyntheticUser& user, const Item& item,
                     std::mt19937_64& rng);

// ---------------------------------------------------------------------------
// RL logs.

struct ExploreConfig {
  BeamSchedule relaxed;
  double epsilon = 0.1;
  std::size_t max_candidates = 0;  // 0 keeps every generated candidate
};

// Relaxed beam search plus epsilon-random indexed SIDs, scored by the reward
// stub (best item of each SID, 0 for SIDs with no items) and sorted by reward.
// Reference log-probs are recorded when `reference` is the generating snapshot.
CandidateList BuildRlLog(const Snapshot& snapshot, const Snapshot* reference,
                         const SyntheticUser& user, const RewardModelStub& reward,
                         const SidIndex& index, const Catalog& catalog,
                         const ExploreConfig& config, std::mt19937_64& rng);

// ---------------------------------------------------------------------------
// Training.

struct AdamConfig {
  double lr = 3e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 5.0;  // global gradient-norm clip; 0 disables
};

struct AdamState {
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  std::uint64_t step = 0;

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, std::uint64_t step,
                  std::shared_ptr<const DecoderModel> last_good)
      : std::runtime_error(what), step_(step), last_good_(std::move(last_good)) {}
  std::uint64_t step() const { return step_; }
  const std::shared_ptr<const DecoderModel>& last_good() const { return last_good_; }

 private:
  std::uint64_t step_;
  std::shared_ptr<const DecoderModel> last_good_;
};

class Trainer {
 public:
  Trainer(DecoderModel model, LossConfig loss, AdamConfig adam);

  // One Adam update on the unified loss of the batch. Throws DivergenceError
  // (parameters untouched) when the loss or a gradient is non-finite.
  LossBreakdown Step(std::span<const VslSample> vsl, std::span<const RlSample> rl,
                     const EcpmBuckets& buckets);

  const DecoderModel& model() const { return model_; }
  const AdamState& state() const { return state_; }
  void set_state(AdamState state);
  const LossConfig& loss_config() const { return loss_; }
  const AdamConfig& adam_config() const { return adam_; }

 private:
  DecoderModel model_;
  LossConfig loss_;
  AdamConfig adam_;
  AdamState state_;
};

// ---------------------------------------------------------------------------
// Online loop.

struct SimConfig {
  std::uint64_t seed = 0;
  CatalogConfig catalog;
  std::size_t users = 20;
  QuantizerMode quantizer_mode = QuantizerMode::kMgmr;
  std::vector<int> sid_vocab = {16, 8, 8};
  ModelConfig model;  // feature_dim and level sizes are filled from the above
  LossConfig loss;
  AdamConfig adam;
  std::size_t vsl_batch = 8;
  std::size_t rl_batch = 1;
  std::size_t updates_per_tick = 10;
  std::size_t replay_capacity = 4000;
  double tick_seconds = 10.0;
  std::string schedule = "4,8,16";
  ServingConfig serving;  // schedule is resolved from `schedule`
  double q_threshold = 2.0;
  double capacity_slack = 1.0;
  double peak_multiplier = 2.0;
  double offpeak_multiplier = 0.5;
  std::size_t traffic_period = 10;  // ticks per peak/off-peak cycle
  double peak_fraction = 0.5;
  double rl_fraction = 0.1;
  double explore_epsilon = 0.1;
  int relaxed_factor = 2;
  std::size_t reference_interval = 10;  // publications between reference refreshes
  FeedbackModel feedback;
  long long fault_nan_step = -1;  // test hook: poison the batch at this step
  bool keep_request_log = false;

  // Fills derived fields and validates.
  void Finalize();
};

struct RequestRecord {
  UserId user = 0;
  double time = 0.0;
  std::uint64_t snapshot_version = 0;
  bool cache_hit = false;
  int active_width = 0;
  double virtual_latency = 0.0;
  std::uint64_t layer_calls = 0;
  std::vector<std::pair<ItemId, double>> items;
};

struct TickRecord {
  std::size_t tick = 0;
  double time = 0.0;
  std::size_t requests = 0;
  std::size_t cache_hits = 0;
  std::size_t model_invocations = 0;
  double qps = 0.0;
  int active_width = 0;
  double served_ndcg = 0.0;  // mean over this tick's requests
  double mean_latency = 0.0;
  std::uint64_t layer_calls = 0;
  std::size_t vsl_logs = 0;
  std::size_t rl_logs = 0;
  LossBreakdown loss;  // mean over this tick's updates
  std::uint64_t snapshot_version = 0;
};

struct RunReport {
  std::vector<TickRecord> ticks;
  std::vector<double> loss_curve;  // one entry per optimizer step
  double baseline_ndcg = 0.0;      // offline evaluation before training
  double final_ndcg = 0.0;         // and after the last publication
  std::size_t requests = 0;
  std::size_t cache_hits = 0;
  std::uint64_t layer_calls = 0;
  std::uint64_t train_steps = 0;
  std::vector<std::uint64_t> published_versions;
  std::vector<RequestRecord> request_log;
  SidMetrics sid_metrics;

  double cache_hit_rate() const {
    return requests == 0 ? 0.0 : static_cast<double>(cache_hits) / static_cast<double>(requests);
  }
};

// Reward-scored NDCG of a served list: DCG of the list over the ideal DCG of
// the user's best `list_length` catalog items. Empty lists score 0.
double ServedListNdcg(std::span<const double> served_rewards,
                      std::span<const double> ideal_rewards_desc, std::size_t list_length);

// World state shared by the loop and offline evaluation.
struct SimWorld {
  Catalog catalog;
  std::vector<SyntheticUser> users;
  RewardModelStub reward;
  QuantizerModel quantizer;
  SidIndex index;
  EcpmBuckets buckets;
  std::vector<std::vector<double>> ideal_rewards;  // per user, descending

  static SimWorld Build(const SimConfig& config);
};

// Mean served-list NDCG over all users with a fresh search (no cache, base
// schedule, peak traffic).
double EvaluateNdcg(const SimWorld& world, const Snapshot& snapshot, const SimConfig& config);

// Runs `ticks` ticks. Snapshots published to the server are also appended to
// `on_publish` when given (for atomicity checks).
RunReport RunOnlineLoop(std::size_t ticks, const SimConfig& config,
                        const std::function<void(const Snapshot&)>& on_publish = {});

}  // namespace adgen
