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


#include "adgen/serving.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace adgen {

bool ExpansionBefore(const Expansion& a, const Expansion& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.beam != b.beam) return a.beam < b.beam;
  return a.token < b.token;
}

namespace {

void CheckExpansionInputs(std::span<const double> beam_scores, const Matrix& logprobs) {
  if (logprobs.rows() != beam_scores.size()) {
    throw std::invalid_argument("top-k: one log-prob row per beam required");
  }
}

void KeepTopK(std::vector<Expansion>& all, std::size_t k) {
  k = std::min(k, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(),
                    ExpansionBefore);
  all.resize(k);
}

}  // namespace

std::vector<Expansion> TopKExhaustive(std::span<const double> beam_scores,
                                      const Matrix& level_logprobs, std::size_t k) {
  CheckExpansionInputs(beam_scores, level_logprobs);
  std::vector<Expansion> all;
  all.reserve(level_logprobs.size());
  for (std::size_t b = 0; b < level_logprobs.rows(); ++b) {
    for (std::size_t v = 0; v < level_logprobs.cols(); ++v) {
      all.push_back({b, static_cast<int>(v), beam_scores[b] + level_logprobs(b, v)});
    }
  }
  KeepTopK(all, k);
  return all;
}

std::vector<Expansion> TopKPreCut(std::span<const double> beam_scores, const Matrix& level_logprobs,
                                  std::size_t k) {
  CheckExpansionInputs(beam_scores, level_logprobs);
  k = std::min(k, level_logprobs.size());
  std::vector<Expansion> survivors;
  survivors.reserve(level_logprobs.rows() * std::min(k, level_logprobs.cols()));
  std::vector<Expansion> row;
  for (std::size_t b = 0; b < level_logprobs.rows(); ++b) {
    row.clear();
    for (std::size_t v = 0; v < level_logprobs.cols(); ++v) {
      row.push_back({b, static_cast<int>(v), beam_scores[b] + level_logprobs(b, v)});
    }
    KeepTopK(row, k);
    survivors.insert(survivors.end(), row.begin(), row.end());
  }
  KeepTopK(survivors, k);
  return survivors;
}

BeamSchedule ResolveDbw(std::span<const int> widths, std::size_t levels) {
  if (levels == 0) throw std::invalid_argument("ResolveDbw: zero levels");
  if (widths.empty()) throw std::invalid_argument("ResolveDbw: empty schedule");
  BeamSchedule s;
  if (widths.size() == 1) {
    s.widths.assign(levels, widths[0]);
  } else if (widths.size() == levels) {
    s.widths.assign(widths.begin(), widths.end());
  } else {
    throw std::invalid_argument("ResolveDbw: schedule length must be 1 or T");
  }
  for (int w : s.widths) {
    if (w <= 0) throw std::invalid_argument("ResolveDbw: non-positive width");
  }
  s.base_width = s.widths.back();
  return s;
}

BeamSchedule ResolveDbw(const std::string& text, std::size_t levels) {
  std::vector<int> widths;
  std::stringstream in(text);
  std::string part;
  while (std::getline(in, part, ',')) {
    std::size_t used = 0;
    int w = 0;
    try {
      w = std::stoi(part, &used);
    } catch (const std::exception&) {
      throw std::invalid_argument("ResolveDbw: bad width '" + part + "'");
    }
    while (used < part.size() && std::isspace(static_cast<unsigned char>(part[used]))) ++used;
    if (used != part.size()) throw std::invalid_argument("ResolveDbw: bad width '" + part + "'");
    widths.push_back(w);
  }
  return ResolveDbw(widths, levels);
}

int TabsAdjust(const TrafficSignal& signal, int base_width, double boost) {
  if (signal.qps >= signal.q_threshold) return base_width;
  const double slack = std::clamp(signal.capacity_slack, 0.0, 1.0);
  const double scaled = static_cast<double>(base_width) * (1.0 + boost * slack);
  return std::max(1, static_cast<int>(std::floor(scaled + 0.5)));
}

BeamSchedule ScaleSchedule(const BeamSchedule& schedule, int active_width) {
  if (schedule.base_width <= 0) throw std::invalid_argument("ScaleSchedule: no base width");
  if (active_width == schedule.base_width) return schedule;
  BeamSchedule out = schedule;
  const double ratio = static_cast<double>(active_width) / schedule.base_width;
  for (int& w : out.widths) {
    w = std::max(1, static_cast<int>(std::floor(w * ratio + 0.5)));
  }
  out.base_width = active_width;
  return out;
}

namespace {

struct LiveHypothesis {
  std::vector<int> tokens;
  double score = 0.0;
  SelfKvCache cache;
};

}  // namespace

std::vector<Hypothesis> BeamSearch(const DecoderModel& model, const Matrix& context,
                                   const BeamSchedule& schedule, const BeamSearchOptions& options,
                                   SearchStats* stats) {
  const std::size_t T = model.config.levels();
  if (schedule.levels() != T) throw std::invalid_argument("BeamSearch: schedule length != T");
  if (context.rows() == 0) throw std::invalid_argument("BeamSearch: empty context");
  const int K = options.trunk_layers.value_or(model.config.trunk_layers);
  if (K < 0 || K >= model.config.layers) throw std::invalid_argument("BeamSearch: bad trunk depth");
  const bool with_ecpm = options.ecpm_buckets != nullptr;

  SearchStats local;
  SearchStats& st = stats ? *stats : local;
  st = SearchStats{};

  const CrossKv shared = BuildCrossKv(model, context);
  st.kv_builds = 1;
  const std::uint64_t kv_bytes = shared.bytes();
  st.kv_peak_bytes = kv_bytes;

  const Matrix trunk = TrunkStates(model, shared, K, with_ecpm ? T + 1 : T, &st.layer_calls);

  // One step of the head for every live hypothesis at `level`.
  auto step = [&](std::vector<LiveHypothesis>& beams, std::size_t level) {
    Matrix states(beams.size(), model.config.hidden);
    if (!options.shared_kv) {
      // Per-beam caches live side by side for the whole step.
      st.kv_peak_bytes = std::max<std::uint64_t>(st.kv_peak_bytes, kv_bytes * beams.size());
    }
    for (std::size_t b = 0; b < beams.size(); ++b) {
      LiveHypothesis& h = beams[b];
      const int prev = level == 0 ? -1 : h.tokens.back();
      Matrix row = InjectPrevious(model, SliceRows(trunk, level, 1), static_cast<int>(level), prev, K);
      Matrix out;
      if (options.shared_kv) {
        out = DecodeHeadStep(model, std::move(row), shared, h.cache, K, &st.layer_calls);
      } else {
        const CrossKv own = BuildCrossKv(model, context);
        ++st.kv_builds;
        out = DecodeHeadStep(model, std::move(row), own, h.cache, K, &st.layer_calls);
      }
      std::copy(out.row(0).begin(), out.row(0).end(), states.row(b).begin());
    }
    return states;
  };

  std::vector<LiveHypothesis> beams(1);
  beams[0].cache = EmptySelfCache(model, K);
  std::size_t reachable = 1;
  for (std::size_t t = 0; t < T; ++t) {
    st.hypotheses_per_level.push_back(beams.size());
    const Matrix states = step(beams, t);
    const Matrix logprobs = LevelLogProbs(model, states, static_cast<int>(t));
    std::vector<double> scores(beams.size());
    for (std::size_t b = 0; b < beams.size(); ++b) scores[b] = beams[b].score;

    const auto vocab = static_cast<std::size_t>(model.config.level_vocab_sizes[t]);
    reachable = std::min(reachable * vocab, std::numeric_limits<std::size_t>::max() / 2);
    const std::size_t width =
        std::min(static_cast<std::size_t>(schedule.widths[t]), reachable);
    st.topk_candidates += options.precut ? beams.size() * std::min(width, vocab) : beams.size() * vocab;
    const std::vector<Expansion> kept = options.precut ? TopKPreCut(scores, logprobs, width)
                                                       : TopKExhaustive(scores, logprobs, width);
    std::vector<LiveHypothesis> next;
    next.reserve(kept.size());
    for (const Expansion& e : kept) {
      LiveHypothesis h;
      h.tokens = beams[e.beam].tokens;
      h.tokens.push_back(e.token);
      h.score = e.score;
      h.cache = beams[e.beam].cache;
      next.push_back(std::move(h));
    }
    beams = std::move(next);
  }

  std::vector<Hypothesis> result(beams.size());
  for (std::size_t b = 0; b < beams.size(); ++b) {
    result[b].tokens = beams[b].tokens;
    result[b].score = beams[b].score;
  }
  if (with_ecpm) {
    const Matrix states = step(beams, T);
    const EcpmBuckets& buckets = *options.ecpm_buckets;
    if (buckets.representatives.empty()) throw std::invalid_argument("BeamSearch: empty buckets");
    for (std::size_t b = 0; b < beams.size(); ++b) {
      const Matrix lp = EcpmLogProbs(model, SliceRows(states, b, 1));
      double expected = 0.0;
      for (std::size_t k = 0; k < lp.cols(); ++k) {
        // Classes past the fitted buckets map onto the last representative.
        const std::size_t r = std::min(k, buckets.representatives.size() - 1);
        expected += std::exp(lp(0, k)) * buckets.representatives[r];
      }
      result[b].expected_ecpm = expected;
    }
  }
  return result;
}

void RerankByEcpm(std::vector<Hypothesis>& hypotheses) {
  std::stable_sort(hypotheses.begin(), hypotheses.end(),
                   [](const Hypothesis& a, const Hypothesis& b) {
                     return a.expected_ecpm * std::exp(a.score) >
                            b.expected_ecpm * std::exp(b.score);
                   });
}

// ---------------------------------------------------------------------------

std::size_t CacheKeyHash::operator()(const CacheKey& k) const noexcept {
  return static_cast<std::size_t>(SplitMix64(k.user ^ SplitMix64(k.pool_version)));
}

ResultCache::ResultCache(double ttl_seconds) : ttl_(ttl_seconds) {
  if (!(ttl_seconds >= 0.0)) throw std::invalid_argument("ResultCache: negative ttl");
}

std::optional<std::vector<ServedItem>> ResultCache::Get(const CacheKey& key, double now) const {
  std::shared_lock lock(mu_);
  auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  if (!(now - it->second.inserted_at < ttl_)) return std::nullopt;
  return it->second.value;
}

void ResultCache::Put(const CacheKey& key, std::vector<ServedItem> value, double now) {
  std::unique_lock lock(mu_);
  entries_[key] = Entry{std::move(value), now};
}

std::size_t ResultCache::EvictExpired(double now) {
  std::unique_lock lock(mu_);
  return std::erase_if(entries_, [&](const auto& kv) { return !(now - kv.second.inserted_at < ttl_); });
}

std::size_t ResultCache::size() const {
  std::shared_lock lock(mu_);
  return entries_.size();
}

void SnapshotStore::Publish(std::shared_ptr<const Snapshot> snapshot) {
  if (!snapshot) throw std::invalid_argument("SnapshotStore: null snapshot");
  std::lock_guard lock(mu_);
  current_ = std::move(snapshot);
}

std::shared_ptr<const Snapshot> SnapshotStore::Current() const {
  std::lock_guard lock(mu_);
  return current_;
}

// ---------------------------------------------------------------------------

Server::Server(const SnapshotStore& store, const SidIndex& index, ServingConfig config)
    : store_(store), index_(index), config_(std::move(config)), cache_(config_.ttl_seconds) {
  if (config_.schedule.widths.empty()) throw std::invalid_argument("Server: empty schedule");
}

ServeResponse Server::Serve(const ServeRequest& request) {
  counters_.requests.fetch_add(1, std::memory_order_relaxed);
  ServeResponse response;
  response.pool_version = index_.version();
  const CacheKey key{request.user, response.pool_version};
  if (config_.use_cache) {
    if (auto hit = cache_.Get(key, request.now)) {
      counters_.cache_hits.fetch_add(1, std::memory_order_relaxed);
      response.items = std::move(*hit);
      response.cache_hit = true;
      response.virtual_latency = kCacheHitCost;
      return response;
    }
  }

  const std::shared_ptr<const Snapshot> snap = store_.Current();
  if (!snap) throw std::invalid_argument("Server: no snapshot published");
  response.snapshot_version = snap->version;
  response.active_width = TabsAdjust(request.traffic, config_.schedule.base_width, config_.tabs_boost);
  const BeamSchedule schedule = ScaleSchedule(config_.schedule, response.active_width);

  BeamSearchOptions options;
  options.shared_kv = config_.shared_kv;
  options.precut = config_.precut;
  if (config_.ecpm_rerank) options.ecpm_buckets = &snap->buckets;
  const Matrix context = ContextProcess(snap->model, request.features);
  response.generated = BeamSearch(snap->model, context, schedule, options, &response.stats);
  if (config_.ecpm_rerank) RerankByEcpm(response.generated);
  counters_.model_invocations.fetch_add(1, std::memory_order_relaxed);
  counters_.layer_calls.fetch_add(response.stats.layer_calls.total(), std::memory_order_relaxed);
  counters_.kv_builds.fetch_add(response.stats.kv_builds, std::memory_order_relaxed);

  const auto limit = static_cast<std::size_t>(schedule.widths.back());
  for (const Hypothesis& h : response.generated) {
    if (response.items.size() >= limit) break;
    UaSid sid{h.tokens};
    for (ItemId item : index_.Lookup(sid)) {
      if (response.items.size() >= limit) break;
      response.items.push_back({item, sid, h.score});
    }
  }
  response.virtual_latency = static_cast<double>(response.stats.layer_calls.total()) +
                             kKvBuildCost * static_cast<double>(response.stats.kv_builds);
  if (config_.use_cache) cache_.Put(key, response.items, request.now);
  return response;
}

}  // namespace adgen
