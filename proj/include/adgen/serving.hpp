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


// Beam-search serving: TopK pre-cut expansion, per-level beam schedules,
// traffic-aware beam scaling, the shared cross-attention KV cache, a TTL
// result cache and the request path tying them to the SID index.

#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "adgen/losses.hpp"
#include "adgen/model.hpp"
#include "adgen/tokenizer.hpp"

namespace adgen {

// ---------------------------------------------------------------------------
// Top-k expansion of b beams over a V-token level.

struct Expansion {
  std::size_t beam = 0;
  int token = 0;
  double score = 0.0;  // beam score + token log-prob

  friend bool operator==(const Expansion&, const Expansion&) = default;
};

// Strict order used everywhere: score descending, then beam index, then token.
bool ExpansionBefore(const Expansion& a, const Expansion& b);

// Global top-k over all b*V expansions; k is clamped to b*V.
std::vector<Expansion> TopKExhaustive(std::span<const double> beam_scores,
                                      const Matrix& level_logprobs, std::size_t k);
// Per-beam top-k, then a global top-k over the b*k survivors. Same result as
// TopKExhaustive, set and order.
std::vector<Expansion> TopKPreCut(std::span<const double> beam_scores, const Matrix& level_logprobs,
                                  std::size_t k);

// ---------------------------------------------------------------------------
// Beam schedules.

struct BeamSchedule {
  std::vector<int> widths;  // b_1..b_T
  int base_width = 0;       // B_base, the width TABS scales

  std::size_t levels() const { return widths.size(); }
};

// "512" expands to T copies; "4,8,16" passes through (must have T entries).
BeamSchedule ResolveDbw(std::span<const int> widths, std::size_t levels);
BeamSchedule ResolveDbw(const std::string& text, std::size_t levels);

struct TrafficSignal {
  double qps = 0.0;
  double q_threshold = 1.0;
  double capacity_slack = 0.0;  // in [0, 1]
};

inline constexpr double kDefaultTabsBoost = 0.6;

// Below the threshold: round-half-up of B_base * (1 + boost * slack).
// At or above it: B_base.
int TabsAdjust(const TrafficSignal& signal, int base_width, double boost = kDefaultTabsBoost);

// Scales every width by B_t / B_base (round half up, at least 1).
BeamSchedule ScaleSchedule(const BeamSchedule& schedule, int active_width);

// ---------------------------------------------------------------------------
// Beam search.

struct BeamSearchOptions {
  bool shared_kv = true;
  bool precut = true;
  // Overrides the model's trunk depth (0 = vanilla decoding).
  std::optional<int> trunk_layers;
  // When set, every result also gets the expected eCPM from the extra step.
  const EcpmBuckets* ecpm_buckets = nullptr;
};

struct SearchStats {
  LayerCallCounter layer_calls;
  std::uint64_t kv_builds = 0;
  std::uint64_t kv_peak_bytes = 0;  // live cross-attention KV memory, peak
  std::vector<std::size_t> hypotheses_per_level;  // n_t entering level t
  std::uint64_t topk_candidates = 0;  // expansions entering the global top-k
};

struct Hypothesis {
  std::vector<int> tokens;
  double score = 0.0;          // cumulative log-prob
  double expected_ecpm = 0.0;  // only with BeamSearchOptions::ecpm_buckets
};

// Returns the top min(b_T, reachable) sequences by log-prob, best first.
std::vector<Hypothesis> BeamSearch(const DecoderModel& model, const Matrix& context,
                                   const BeamSchedule& schedule, const BeamSearchOptions& options,
                                   SearchStats* stats = nullptr);

// Reorders by expected eCPM times generation probability (stable).
void RerankByEcpm(std::vector<Hypothesis>& hypotheses);

// ---------------------------------------------------------------------------
// TTL result cache keyed by (user, candidate-pool version). Time is injected.

struct ServedItem {
  ItemId item = 0;
  UaSid sid;
  double score = 0.0;

  friend bool operator==(const ServedItem&, const ServedItem&) = default;
};

struct CacheKey {
  UserId user = 0;
  std::uint64_t pool_version = 0;
  friend bool operator==(const CacheKey&, const CacheKey&) = default;
};

struct CacheKeyHash {
  std::size_t operator()(const CacheKey& k) const noexcept;
};

class ResultCache {
 public:
  explicit ResultCache(double ttl_seconds);

  // Hit iff now - inserted_at < ttl. Hits do not refresh the entry.
  std::optional<std::vector<ServedItem>> Get(const CacheKey& key, double now) const;
  void Put(const CacheKey& key, std::vector<ServedItem> value, double now);
  std::size_t EvictExpired(double now);
  std::size_t size() const;
  double ttl() const { return ttl_; }

 private:
  struct Entry {
    std::vector<ServedItem> value;
    double inserted_at = 0.0;
  };
  double ttl_;
  mutable std::shared_mutex mu_;
  std::unordered_map<CacheKey, Entry, CacheKeyHash> entries_;
};

// ---------------------------------------------------------------------------
// Model snapshots and the request path.

struct Snapshot {
  std::uint64_t version = 0;
  DecoderModel model;
  EcpmBuckets buckets;
};

// Copy-on-publish holder: readers take a shared_ptr to an immutable snapshot.
class SnapshotStore {
 public:
  void Publish(std::shared_ptr<const Snapshot> snapshot);
  std::shared_ptr<const Snapshot> Current() const;

 private:
  mutable std::mutex mu_;
  std::shared_ptr<const Snapshot> current_;
};

struct ServingConfig {
  BeamSchedule schedule;
  double tabs_boost = kDefaultTabsBoost;
  bool shared_kv = true;
  bool precut = true;
  bool ecpm_rerank = false;
  bool use_cache = true;
  double ttl_seconds = 60.0;
};

struct ServeRequest {
  UserId user = 0;
  Matrix features;
  double now = 0.0;
  TrafficSignal traffic;
};

struct ServeResponse {
  std::vector<ServedItem> items;
  std::vector<Hypothesis> generated;  // empty on cache hits
  bool cache_hit = false;
  std::uint64_t snapshot_version = 0;
  std::uint64_t pool_version = 0;
  int active_width = 0;
  SearchStats stats;
  double virtual_latency = 0.0;
};

struct ServerCounters {
  std::atomic<std::uint64_t> requests{0};
  std::atomic<std::uint64_t> cache_hits{0};
  std::atomic<std::uint64_t> model_invocations{0};
  std::atomic<std::uint64_t> layer_calls{0};
  std::atomic<std::uint64_t> kv_builds{0};
};

// Virtual cost model: one unit per decoder-layer call, kKvBuildCost per KV
// build, kCacheHitCost for a cache hit.
inline constexpr double kKvBuildCost = 2.0;
inline constexpr double kCacheHitCost = 0.1;

class Server {
 public:
  Server(const SnapshotStore& store, const SidIndex& index, ServingConfig config);

  // cache -> TABS -> beam search -> optional eCPM re-rank -> index lookup
  // -> truncate to b_T -> cache. SIDs without items are skipped.
  ServeResponse Serve(const ServeRequest& request);

  const ServerCounters& counters() const { return counters_; }
  const ServingConfig& config() const { return config_; }
  ResultCache& cache() { return cache_; }

 private:
  const SnapshotStore& store_;
  const SidIndex& index_;
  ServingConfig config_;
  ResultCache cache_;
  ServerCounters counters_;
};

}  // namespace adgen
