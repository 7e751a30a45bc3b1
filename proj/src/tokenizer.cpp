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

#include "adgen/tokenizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <mutex>
#include <numeric>
#include <random>
#include <stdexcept>

namespace adgen {

void ValidateItem(const Item& item, std::size_t dim) {
  if (item.embedding.size() != dim) {
    throw std::invalid_argument("item " + std::to_string(item.id) + ": embedding dimension " +
                                std::to_string(item.embedding.size()) + " != " +
                                std::to_string(dim));
  }
  for (double v : item.embedding) {
    if (!std::isfinite(v)) {
      throw std::invalid_argument("item " + std::to_string(item.id) + ": non-finite embedding");
    }
  }
  if (!(item.latent_value >= 0.0) || !std::isfinite(item.latent_value)) {
    throw std::invalid_argument("item " + std::to_string(item.id) + ": invalid latent_value");
  }
}

std::string UaSid::ToString() const {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i > 0) out += '-';
    out += std::to_string(tokens[i]);
  }
  return out;
}

std::size_t UaSidHash::operator()(const UaSid& sid) const noexcept {
  std::uint64_t h = 0x84222325cbf29ce4ULL;
  for (int t : sid.tokens) h = SplitMix64(h ^ static_cast<std::uint64_t>(t));
  return static_cast<std::size_t>(h);
}

void ValidateSid(const UaSid& sid, std::span<const int> level_vocab_sizes) {
  if (sid.tokens.size() != level_vocab_sizes.size()) {
    throw std::invalid_argument("SID depth " + std::to_string(sid.tokens.size()) +
                                " != " + std::to_string(level_vocab_sizes.size()));
  }
  for (std::size_t t = 0; t < sid.tokens.size(); ++t) {
    if (sid.tokens[t] < 0 || sid.tokens[t] >= level_vocab_sizes[t]) {
      throw std::invalid_argument("SID token out of range at level " + std::to_string(t));
    }
  }
}

namespace {

double SquaredDistance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double diff = a[i] - b[i];
    s += diff * diff;
  }
  return s;
}

Matrix DistanceTable(const Matrix& points, const Matrix& centroids) {
  Matrix dist(points.rows(), centroids.rows());
  for (std::size_t i = 0; i < points.rows(); ++i) {
    for (std::size_t c = 0; c < centroids.rows(); ++c) {
      dist(i, c) = SquaredDistance(points.row(i), centroids.row(c));
    }
  }
  return dist;
}

Matrix KMeansPlusPlusInit(const Matrix& points, int k, std::mt19937_64& rng) {
  const std::size_t n = points.rows();
  Matrix centroids(static_cast<std::size_t>(k), points.cols());
  std::vector<double> min_dist(n, std::numeric_limits<double>::infinity());
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::size_t chosen = pick(rng);
  for (int c = 0; c < k; ++c) {
    std::copy(points.row(chosen).begin(), points.row(chosen).end(),
              centroids.row(static_cast<std::size_t>(c)).begin());
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      min_dist[i] = std::min(min_dist[i],
                             SquaredDistance(points.row(i), centroids.row(static_cast<std::size_t>(c))));
      total += min_dist[i];
    }
    if (c + 1 == k) break;
    if (total <= 0.0) {
      chosen = pick(rng);
      continue;
    }
    std::uniform_real_distribution<double> u(0.0, total);
    double target = u(rng);
    chosen = n - 1;
    for (std::size_t i = 0; i < n; ++i) {
      target -= min_dist[i];
      if (target <= 0.0 && min_dist[i] > 0.0) {
        chosen = i;
        break;
      }
    }
  }
  return centroids;
}

// Capacity-constrained greedy assignment: points with the largest gap between
// their best and second-best centroid choose first; each goes to its nearest
// cluster that still has room. Exactly N % k clusters receive ceil(N/k).
std::vector<int> BalancedAssign(const Matrix& dist) {
  const std::size_t n = dist.rows();
  const std::size_t k = dist.cols();
  const std::size_t base = n / k;
  const std::size_t n_large = n % k;

  std::vector<double> gap(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    double second = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) {
      const double d = dist(i, c);
      if (d < best) {
        second = best;
        best = d;
      } else if (d < second) {
        second = d;
      }
    }
    gap[i] = k > 1 ? second - best : 0.0;
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return gap[a] > gap[b]; });

  std::vector<std::size_t> sizes(k, 0);
  std::size_t large_used = 0;
  std::vector<int> assign(n, -1);
  for (std::size_t i : order) {
    int best_c = -1;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) {
      const bool full = sizes[c] == base + 1 || (sizes[c] == base && large_used == n_large);
      if (full) continue;
      if (dist(i, c) < best_d) {
        best_d = dist(i, c);
        best_c = static_cast<int>(c);
      }
    }
    if (best_c < 0) {
      // Only reachable if every remaining distance is infinite.
      for (std::size_t c = 0; c < k && best_c < 0; ++c) {
        const bool full = sizes[c] == base + 1 || (sizes[c] == base && large_used == n_large);
        if (!full) best_c = static_cast<int>(c);
      }
    }
    assign[i] = best_c;
    if (++sizes[static_cast<std::size_t>(best_c)] == base + 1) ++large_used;
  }
  return assign;
}

Matrix ClusterMeans(const Matrix& points, const std::vector<int>& assign, std::size_t k) {
  Matrix centroids(k, points.cols());
  std::vector<std::size_t> counts(k, 0);
  for (std::size_t i = 0; i < points.rows(); ++i) {
    auto c = static_cast<std::size_t>(assign[i]);
    ++counts[c];
    auto dst = centroids.row(c);
    auto src = points.row(i);
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
  }
  for (std::size_t c = 0; c < k; ++c) {
    if (counts[c] == 0) continue;
    for (double& v : centroids.row(c)) v /= static_cast<double>(counts[c]);
  }
  return centroids;
}

double TotalSse(const Matrix& points, const Matrix& centroids, const std::vector<int>& assign) {
  double sse = 0.0;
  for (std::size_t i = 0; i < points.rows(); ++i) {
    sse += SquaredDistance(points.row(i), centroids.row(static_cast<std::size_t>(assign[i])));
  }
  return sse;
}

// Size-preserving local search on the exact SSE (cluster means move with
// every change): pairwise swaps, plus moves from a large cluster into a small
// one. Uses per-cluster sums, since SSE_c = sum |x|^2 - |S_c|^2 / n_c and the
// first term is invariant under swaps. Returns true if anything moved.
bool ImproveAssignment(const Matrix& points, std::vector<int>& assign, std::size_t k) {
  const std::size_t n = assign.size();
  const std::size_t d = points.cols();
  const std::size_t base = n / k;
  std::vector<std::size_t> sizes(k, 0);
  Matrix sums(k, d);
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = static_cast<std::size_t>(assign[i]);
    ++sizes[c];
    auto dst = sums.row(c);
    auto src = points.row(i);
    for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
  }
  auto sq_norm_over = [](std::span<const double> s, double count) {
    if (count <= 0.0) return 0.0;
    double acc = 0.0;
    for (double v : s) acc += v * v;
    return acc / count;
  };
  std::vector<double> shifted_a(d), shifted_b(d);
  // Gain of replacing cluster sums (a, b) by (a + delta, b - delta) with the
  // new populations na, nb.
  auto gain = [&](std::size_t a, std::size_t b, std::span<const double> add_a,
                  std::span<const double> sub_a, double na, double nb) {
    for (std::size_t j = 0; j < d; ++j) {
      const double delta = add_a[j] - (sub_a.empty() ? 0.0 : sub_a[j]);
      shifted_a[j] = sums(a, j) + delta;
      shifted_b[j] = sums(b, j) - delta;
    }
    return sq_norm_over(shifted_a, na) + sq_norm_over(shifted_b, nb) -
           sq_norm_over(sums.row(a), static_cast<double>(sizes[a])) -
           sq_norm_over(sums.row(b), static_cast<double>(sizes[b]));
  };
  auto apply = [&](std::size_t a, std::size_t b, std::span<const double> add_a,
                   std::span<const double> sub_a) {
    for (std::size_t j = 0; j < d; ++j) {
      const double delta = add_a[j] - (sub_a.empty() ? 0.0 : sub_a[j]);
      sums(a, j) += delta;
      sums(b, j) -= delta;
    }
  };

  constexpr double kMinGain = 1e-12;
  bool moved = false;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const auto ai = static_cast<std::size_t>(assign[i]);
      const auto aj = static_cast<std::size_t>(assign[j]);
      if (ai == aj) continue;
      // Cluster ai receives x_j and loses x_i.
      const double g = gain(ai, aj, points.row(j), points.row(i),
                            static_cast<double>(sizes[ai]), static_cast<double>(sizes[aj]));
      if (g > kMinGain) {
        apply(ai, aj, points.row(j), points.row(i));
        std::swap(assign[i], assign[j]);
        moved = true;
      }
    }
  }
  if (n % k != 0) {
    const std::span<const double> none;
    for (std::size_t i = 0; i < n; ++i) {
      const auto from = static_cast<std::size_t>(assign[i]);
      if (sizes[from] != base + 1) continue;
      for (std::size_t c = 0; c < k; ++c) {
        if (sizes[c] != base) continue;
        // Cluster c receives x_i; cluster `from` loses it.
        const double g = gain(c, from, points.row(i), none, static_cast<double>(sizes[c] + 1),
                              static_cast<double>(sizes[from] - 1));
        if (g <= kMinGain) continue;
        apply(c, from, points.row(i), none);
        assign[i] = static_cast<int>(c);
        --sizes[from];
        ++sizes[c];
        moved = true;
        break;
      }
    }
  }
  return moved;
}

}  // namespace

int NearestCentroid(const Matrix& centroids, std::span<const double> point) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centroids.rows(); ++c) {
    const double d = SquaredDistance(point, centroids.row(c));
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  return best;
}

KMeansResult BalancedKMeans(const Matrix& points, int k, int max_iters, std::uint64_t seed) {
  if (points.rows() == 0) throw std::invalid_argument("BalancedKMeans: empty input");
  if (k <= 0) throw std::invalid_argument("BalancedKMeans: k must be positive");
  if (static_cast<std::size_t>(k) > points.rows()) {
    throw std::invalid_argument("BalancedKMeans: k exceeds the number of points");
  }
  if (!points.AllFinite()) throw std::invalid_argument("BalancedKMeans: non-finite points");

  constexpr int kRestarts = 8;
  constexpr int kMaxLocalPasses = 50;
  const auto kk = static_cast<std::size_t>(k);
  KMeansResult best;
  best.sse = std::numeric_limits<double>::infinity();
  for (int restart = 0; restart < kRestarts; ++restart) {
    std::mt19937_64 rng(SplitMix64(seed + static_cast<std::uint64_t>(restart)));
    Matrix centroids = KMeansPlusPlusInit(points, k, rng);
    std::vector<int> assign = BalancedAssign(DistanceTable(points, centroids));
    for (int it = 0; it < max_iters; ++it) {
      centroids = ClusterMeans(points, assign, kk);
      std::vector<int> next = BalancedAssign(DistanceTable(points, centroids));
      if (next == assign) break;
      assign = std::move(next);
    }
    for (int pass = 0; pass < kMaxLocalPasses; ++pass) {
      if (!ImproveAssignment(points, assign, kk)) break;
    }
    centroids = ClusterMeans(points, assign, kk);
    const double sse = TotalSse(points, centroids, assign);
    if (sse < best.sse) {
      best.centroids = std::move(centroids);
      best.assignments = std::move(assign);
      best.sse = sse;
    }
  }
  return best;
}

std::string ToString(QuantizerMode mode) {
  switch (mode) {
    case QuantizerMode::kFixed:
      return "fixed";
    case QuantizerMode::kMultiResolution:
      return "mr";
    case QuantizerMode::kMgmr:
      return "mgmr";
  }
  return "unknown";
}

QuantizerMode ParseQuantizerMode(const std::string& text) {
  if (text == "fixed") return QuantizerMode::kFixed;
  if (text == "mr" || text == "MR") return QuantizerMode::kMultiResolution;
  if (text == "mgmr" || text == "MGMR") return QuantizerMode::kMgmr;
  throw std::invalid_argument("unknown quantizer mode: " + text);
}

QuantizerFit FitQuantizer(std::span<const Item> items, std::span<const int> level_vocab_sizes,
                          QuantizerMode mode, std::uint64_t seed,
                          const QuantizerOptions& options) {
  if (items.empty()) throw std::invalid_argument("FitQuantizer: empty catalog");
  if (level_vocab_sizes.empty()) throw std::invalid_argument("FitQuantizer: no levels");
  for (int s : level_vocab_sizes) {
    if (s <= 0) throw std::invalid_argument("FitQuantizer: level sizes must be positive");
  }
  const std::size_t semantic =
      mode == QuantizerMode::kMgmr ? level_vocab_sizes.size() - 1 : level_vocab_sizes.size();
  if (mode != QuantizerMode::kFixed) {
    // The hashed level of MGMR is not part of the resolution hierarchy.
    for (std::size_t t = 1; t < semantic; ++t) {
      if (level_vocab_sizes[t] > level_vocab_sizes[t - 1]) {
        throw std::invalid_argument("FitQuantizer: multi-resolution sizes must be non-increasing");
      }
    }
  }
  if (mode == QuantizerMode::kMgmr && level_vocab_sizes.size() < 2) {
    throw std::invalid_argument("FitQuantizer: MGMR needs a semantic level and a hashed level");
  }

  const std::size_t dim = items.front().embedding.size();
  Matrix residual(items.size(), dim);
  for (std::size_t i = 0; i < items.size(); ++i) {
    ValidateItem(items[i], dim);
    std::copy(items[i].embedding.begin(), items[i].embedding.end(), residual.row(i).begin());
  }
  auto mean_sq = [&residual]() {
    double s = 0.0;
    for (double v : residual.data()) s += v * v;
    return s / static_cast<double>(residual.rows());
  };

  QuantizerFit fit;
  QuantizerModel& model = fit.model;
  model.mode = mode;
  model.dim = dim;
  model.level_vocab_sizes.assign(level_vocab_sizes.begin(), level_vocab_sizes.end());
  model.hash_salt = options.hash_salt;

  fit.trace.mean_sq_residual.push_back(mean_sq());
  for (std::size_t t = 0; t < semantic; ++t) {
    KMeansResult km = BalancedKMeans(residual, level_vocab_sizes[t], options.max_iters,
                                     SplitMix64(seed ^ (0x9e37ULL * (t + 1))));
    for (std::size_t i = 0; i < residual.rows(); ++i) {
      auto c = km.centroids.row(static_cast<std::size_t>(km.assignments[i]));
      auto r = residual.row(i);
      for (std::size_t j = 0; j < dim; ++j) r[j] -= c[j];
    }
    fit.trace.selected.push_back(std::move(km.assignments));
    fit.trace.mean_sq_residual.push_back(mean_sq());
    model.level_codebooks.push_back(std::move(km.centroids));
  }
  if (mode == QuantizerMode::kMgmr) model.hash_vocab_size = level_vocab_sizes.back();
  fit.trace.final_residuals = std::move(residual);
  return fit;
}

namespace {

std::vector<int> SemanticTokens(const QuantizerModel& model, std::span<const double> embedding,
                                std::vector<double>& residual) {
  residual.assign(embedding.begin(), embedding.end());
  std::vector<int> tokens;
  tokens.reserve(model.depth());
  for (const Matrix& codebook : model.level_codebooks) {
    const int c = NearestCentroid(codebook, residual);
    auto centroid = codebook.row(static_cast<std::size_t>(c));
    for (std::size_t j = 0; j < residual.size(); ++j) residual[j] -= centroid[j];
    tokens.push_back(c);
  }
  return tokens;
}

}  // namespace

UaSid EncodeItem(const QuantizerModel& model, const Item& item) {
  ValidateItem(item, model.dim);
  std::vector<double> residual;
  UaSid sid{SemanticTokens(model, item.embedding, residual)};
  if (model.hashed_last_level()) {
    sid.tokens.push_back(HashFinalLevel(item.non_semantic, model.hash_vocab_size, model.hash_salt));
  }
  return sid;
}

std::vector<double> EncodeResidual(const QuantizerModel& model, const Item& item) {
  ValidateItem(item, model.dim);
  std::vector<double> residual;
  SemanticTokens(model, item.embedding, residual);
  return residual;
}

std::uint64_t SplitMix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

int HashFinalLevel(const NonSemanticFeatures& features, int vocab_size, std::uint64_t salt) {
  if (vocab_size <= 1) return 0;
  std::uint64_t h = SplitMix64(salt);
  h = SplitMix64(h ^ static_cast<std::uint64_t>(features.account_id));
  h = SplitMix64(h ^ static_cast<std::uint64_t>(features.conversion_type));
  return static_cast<int>(h % static_cast<std::uint64_t>(vocab_size));
}

SidMetrics ComputeSidMetrics(const std::vector<std::pair<ItemId, UaSid>>& assignments,
                             std::span<const int> level_vocab_sizes) {
  if (assignments.empty()) throw std::invalid_argument("ComputeSidMetrics: empty assignment map");
  std::unordered_map<UaSid, std::size_t, UaSidHash> counts;
  for (const auto& [item, sid] : assignments) ++counts[sid];
  SidMetrics m;
  m.items = assignments.size();
  m.sids = counts.size();
  for (const auto& [sid, n] : counts) {
    if (n == 1) ++m.one_on_one_sids;
  }
  m.codebook_space = 1.0;
  for (int s : level_vocab_sizes) m.codebook_space *= static_cast<double>(s);
  const auto items = static_cast<double>(m.items);
  const auto sids = static_cast<double>(m.sids);
  m.cpr = items / sids;
  m.col = 1.0 - static_cast<double>(m.one_on_one_sids) / sids;
  m.util = items / m.codebook_space;
  m.sid_util = sids / m.codebook_space;
  return m;
}

SidIndex::SidIndex(const SidIndex& other) {
  std::shared_lock lock(other.mu_);
  forward_ = other.forward_;
  backward_ = other.backward_;
  version_ = other.version_;
}

SidIndex& SidIndex::operator=(const SidIndex& other) {
  if (this == &other) return *this;
  std::unique_lock lock(mu_, std::defer_lock);
  std::shared_lock other_lock(other.mu_, std::defer_lock);
  std::lock(lock, other_lock);
  forward_ = other.forward_;
  backward_ = other.backward_;
  version_ = other.version_;
  return *this;
}

void SidIndex::Upsert(ItemId item, const UaSid& sid) {
  std::unique_lock lock(mu_);
  if (auto it = backward_.find(item); it != backward_.end()) {
    if (it->second == sid) return;
    auto fwd = forward_.find(it->second);
    fwd->second.erase(item);
    if (fwd->second.empty()) forward_.erase(fwd);
    it->second = sid;
  } else {
    backward_.emplace(item, sid);
  }
  forward_[sid].insert(item);
  ++version_;
}

bool SidIndex::Erase(ItemId item) {
  std::unique_lock lock(mu_);
  auto it = backward_.find(item);
  if (it == backward_.end()) return false;
  auto fwd = forward_.find(it->second);
  fwd->second.erase(item);
  if (fwd->second.empty()) forward_.erase(fwd);
  backward_.erase(it);
  ++version_;
  return true;
}

std::vector<ItemId> SidIndex::Lookup(const UaSid& sid) const {
  std::shared_lock lock(mu_);
  auto it = forward_.find(sid);
  if (it == forward_.end()) return {};
  return {it->second.begin(), it->second.end()};
}

std::optional<UaSid> SidIndex::SidOf(ItemId item) const {
  std::shared_lock lock(mu_);
  auto it = backward_.find(item);
  if (it == backward_.end()) return std::nullopt;
  return it->second;
}

std::vector<UaSid> SidIndex::Sids() const {
  std::shared_lock lock(mu_);
  std::vector<UaSid> out;
  out.reserve(forward_.size());
  for (const auto& [sid, items] : forward_) out.push_back(sid);
  return out;
}

std::size_t SidIndex::item_count() const {
  std::shared_lock lock(mu_);
  return backward_.size();
}

std::size_t SidIndex::sid_count() const {
  std::shared_lock lock(mu_);
  return forward_.size();
}

std::uint64_t SidIndex::version() const {
  std::shared_lock lock(mu_);
  return version_;
}

bool SidIndex::CheckConsistency() const {
  std::shared_lock lock(mu_);
  std::size_t forward_total = 0;
  for (const auto& [sid, items] : forward_) {
    if (items.empty()) return false;
    forward_total += items.size();
    for (ItemId item : items) {
      auto it = backward_.find(item);
      if (it == backward_.end() || it->second != sid) return false;
    }
  }
  return forward_total == backward_.size();
}

CooccurrenceCounter CooccurrenceCounter::Build(std::span<const std::pair<UserId, ItemId>> log) {
  std::map<UserId, std::set<ItemId>> per_user;
  for (const auto& [user, item] : log) per_user[user].insert(item);
  CooccurrenceCounter counter;
  for (const auto& [user, items] : per_user) {
    for (auto a = items.begin(); a != items.end(); ++a) {
      for (auto b = std::next(a); b != items.end(); ++b) ++counter.weights_[{*a, *b}];
    }
  }
  return counter;
}

int CooccurrenceCounter::Weight(ItemId a, ItemId b) const {
  if (a == b) return 0;
  auto it = weights_.find({std::min(a, b), std::max(a, b)});
  return it == weights_.end() ? 0 : it->second;
}

}  // namespace adgen
