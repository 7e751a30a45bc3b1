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

// Semantic-ID tokenization: balanced residual k-means codebooks, the hashed
// non-semantic final level, SID quality metrics and the realtime SID <-> item
// index.

#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <shared_mutex>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "adgen/tensor.hpp"

namespace adgen {

using ItemId = std::uint64_t;
using UserId = std::uint64_t;

enum class ConversionType : std::uint8_t {
  kClick = 0,
  kInstall = 1,
  kLead = 2,
  kPurchase = 3,
};
inline constexpr int kConversionTypeCount = 4;

struct NonSemanticFeatures {
  std::int64_t account_id = 0;
  ConversionType conversion_type = ConversionType::kClick;
};

struct Item {
  ItemId id = 0;
  std::vector<double> embedding;
  NonSemanticFeatures non_semantic;
  // Simulation-only ground truth; never shown to the model.
  double latent_value = 0.0;
};

using Catalog = std::vector<Item>;

// Throws std::invalid_argument when the embedding is non-finite, has the wrong
// dimension, or latent_value is negative.
void ValidateItem(const Item& item, std::size_t dim);

// Hierarchical token sequence; level t token lies in [0, level_vocab_sizes[t]).
struct UaSid {
  std::vector<int> tokens;

  std::size_t depth() const { return tokens.size(); }
  std::string ToString() const;
  friend auto operator<=>(const UaSid&, const UaSid&) = default;
  friend bool operator==(const UaSid&, const UaSid&) = default;
};

struct UaSidHash {
  std::size_t operator()(const UaSid& sid) const noexcept;
};

// Throws when depth or any token is out of range for `level_vocab_sizes`.
void ValidateSid(const UaSid& sid, std::span<const int> level_vocab_sizes);

struct KMeansResult {
  Matrix centroids;              // k x d
  std::vector<int> assignments;  // one cluster index per point
  double sse = 0.0;
};

// Balanced k-means: every cluster ends with floor(N/k) or ceil(N/k) points and
// every centroid is the mean of its points. Deterministic for a given seed.
KMeansResult BalancedKMeans(const Matrix& points, int k, int max_iters, std::uint64_t seed);

// Index of the nearest row of `centroids` (squared Euclidean, lowest index on
// ties).
int NearestCentroid(const Matrix& centroids, std::span<const double> point);

enum class QuantizerMode {
  kFixed,            // plain residual k-means, any level sizes
  kMultiResolution,  // residual k-means, non-increasing level sizes
  kMgmr,             // multi-resolution semantic levels + hashed final level
};

std::string ToString(QuantizerMode mode);
QuantizerMode ParseQuantizerMode(const std::string& text);

struct QuantizerModel {
  QuantizerMode mode = QuantizerMode::kMgmr;
  std::size_t dim = 0;
  std::vector<int> level_vocab_sizes;  // all T levels, including a hashed one
  std::vector<Matrix> level_codebooks;  // one per semantic level
  int hash_vocab_size = 0;              // 0 unless the last level is hashed
  std::uint64_t hash_salt = 0;

  std::size_t depth() const { return level_vocab_sizes.size(); }
  std::size_t semantic_levels() const { return level_codebooks.size(); }
  bool hashed_last_level() const { return hash_vocab_size > 0; }

  friend bool operator==(const QuantizerModel&, const QuantizerModel&) = default;
};

// Per-item record of the residual chain built while fitting.
struct QuantizerTrace {
  std::vector<std::vector<int>> selected;   // [level][item] fitted cluster
  Matrix final_residuals;                   // items x d
  std::vector<double> mean_sq_residual;     // [0] = before any level, then per level
};

struct QuantizerFit {
  QuantizerModel model;
  QuantizerTrace trace;
};

struct QuantizerOptions {
  int max_iters = 25;
  std::uint64_t hash_salt = 0x5eed5a17ULL;
};

QuantizerFit FitQuantizer(std::span<const Item> items, std::span<const int> level_vocab_sizes,
                          QuantizerMode mode, std::uint64_t seed,
                          const QuantizerOptions& options = {});

UaSid EncodeItem(const QuantizerModel& model, const Item& item);

// Residual left after the semantic levels chosen by EncodeItem.
std::vector<double> EncodeResidual(const QuantizerModel& model, const Item& item);

// 64-bit SplitMix-style mix of every non-semantic field with `salt`, reduced
// modulo vocab_size. Stable across processes and platforms.
int HashFinalLevel(const NonSemanticFeatures& features, int vocab_size, std::uint64_t salt);

std::uint64_t SplitMix64(std::uint64_t x);

struct SidMetrics {
  std::size_t items = 0;
  std::size_t sids = 0;
  std::size_t one_on_one_sids = 0;
  double codebook_space = 0.0;
  double cpr = 0.0;       // items / sids
  double col = 0.0;       // 1 - one_on_one / sids
  double util = 0.0;      // items / codebook space
  double sid_util = 0.0;  // distinct sids / codebook space
};

SidMetrics ComputeSidMetrics(const std::vector<std::pair<ItemId, UaSid>>& assignments,
                             std::span<const int> level_vocab_sizes);

// Bidirectional SID <-> item index. Readers share a lock; writers are
// serialized. version() increases on every mutation and serves as the
// candidate-pool version for result caching.
class SidIndex {
 public:
  SidIndex() = default;
  SidIndex(const SidIndex& other);
  SidIndex& operator=(const SidIndex& other);

  void Upsert(ItemId item, const UaSid& sid);
  bool Erase(ItemId item);

  // Items mapped to `sid` in ascending id order; empty for unseen SIDs.
  std::vector<ItemId> Lookup(const UaSid& sid) const;
  std::optional<UaSid> SidOf(ItemId item) const;
  std::vector<UaSid> Sids() const;

  std::size_t item_count() const;
  std::size_t sid_count() const;
  std::uint64_t version() const;

  // Every item appears in forward[backward[item]] and nowhere else.
  bool CheckConsistency() const;

 private:
  mutable std::shared_mutex mu_;
  std::map<UaSid, std::set<ItemId>> forward_;
  std::unordered_map<ItemId, UaSid> backward_;
  std::uint64_t version_ = 0;
};

// Stand-in for Swing co-occurrence: weight(a, b) is the number of distinct
// users that interacted with both a and b.
class CooccurrenceCounter {
 public:
  static CooccurrenceCounter Build(std::span<const std::pair<UserId, ItemId>> log);

  int Weight(ItemId a, ItemId b) const;
  std::size_t pair_count() const { return weights_.size(); }

 private:
  std::map<std::pair<ItemId, ItemId>, int> weights_;
};

}  // namespace adgen
