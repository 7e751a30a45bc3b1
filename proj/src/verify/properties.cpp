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


#include "adgen/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <sstream>

#include "adgen/gradcheck.hpp"
#include "adgen/losses.hpp"
#include "adgen/model.hpp"
#include "adgen/serving.hpp"
#include "adgen/simulation.hpp"
#include "adgen/tokenizer.hpp"

namespace adgen::verify {

namespace {

using Clock = std::chrono::steady_clock;

class Timer {
 public:
  double seconds() const { return std::chrono::duration<double>(Clock::now() - start_).count(); }

 private:
  Clock::time_point start_ = Clock::now();
};

CheckResult Finish(std::string name, bool pass, const std::string& detail, const Timer& timer) {
  return {std::move(name), pass, detail, timer.seconds()};
}

double Discount(std::size_t pos) { return std::log2(1.0 + static_cast<double>(pos)); }

// Random candidate list: 2..8 candidates, rewards in [0, 3], Dirichlet
// sequence probabilities, optional reference.
CandidateList RandomList(std::mt19937_64& rng, bool with_ref) {
  std::uniform_int_distribution<int> size(2, 8);
  std::uniform_real_distribution<double> reward(0.0, 3.0);
  std::gamma_distribution<double> gamma(1.0, 1.0);
  const int n = size(rng);
  auto dirichlet_log = [&]() {
    std::vector<double> g(static_cast<std::size_t>(n));
    double s = 0.0;
    for (double& v : g) s += (v = gamma(rng) + 1e-12);
    for (double& v : g) v = std::log(v / s);
    return g;
  };
  CandidateList l;
  for (int i = 0; i < n; ++i) l.rewards.push_back(reward(rng));
  l.policy_logp = dirichlet_log();
  if (with_ref) l.ref_logp = dirichlet_log();
  l.SortByReward();
  return l;
}

// Lambda weights from their definition, independent of the library.
std::vector<std::vector<double>> OracleWeights(const CandidateList& l) {
  const std::size_t n = l.size();
  std::vector<double> sorted = l.rewards;
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  double z = 0.0;
  for (std::size_t r = 0; r < n; ++r) z += (std::pow(2.0, sorted[r]) - 1.0) / Discount(r + 1);
  std::vector<std::vector<double>> m(n, std::vector<double>(n, 0.0));
  if (z <= 0.0) return m;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const std::size_t gap = i > j ? i - j : j - i;
      const double gi = (std::pow(2.0, l.rewards[i]) - 1.0) / z;
      const double gj = (std::pow(2.0, l.rewards[j]) - 1.0) / z;
      m[i][j] = std::abs(1.0 / Discount(gap) - 1.0 / Discount(gap + 1)) * std::abs(gi - gj);
    }
  }
  return m;
}

struct RspoSweep {
  std::size_t bound_violations = 0;
  std::size_t chain_violations = 0;
  std::size_t mass_violations = 0;
  std::size_t lists = 0;
};

RspoSweep SweepRspo(std::size_t lists, std::uint64_t seed, Fault fault) {
  std::mt19937_64 rng(seed);
  const double betas[] = {0.1, 0.5, 1.0, 2.0, 5.0};
  RspoSweep s;
  for (std::size_t trial = 0; trial < lists; ++trial) {
    const bool with_ref = trial % 2 == 1;
    CandidateList l = RandomList(rng, with_ref);
    LossConfig c;
    c.beta = betas[trial % 5];
    c.delta = trial % 4 == 3 ? 0.3 : 1e9;
    std::vector<double> terms = RspoTerms(l, l.policy_logp, c);
    if (fault == Fault::kRspo) {
      for (double& t : terms) t *= 0.25;
    }
    const auto m = OracleWeights(l);
    double indicator = 0.0, rspo = 0.0;
    for (std::size_t i = 0; i < l.size(); ++i) {
      const int gate = RefGate(l, i, c.delta);
      auto g = [&](std::size_t k) {
        return c.beta * (l.policy_logp[k] - (gate ? (*l.ref_logp)[k] : 0.0));
      };
      double mass = 0.0, ind_i = 0.0, log_i = 0.0;
      for (std::size_t j = 0; j < l.size(); ++j) {
        if (!(l.rewards[j] < l.rewards[i])) continue;
        mass += m[i][j];
        ind_i += m[i][j] * (g(i) < g(j) ? 1.0 : 0.0);
        log_i += m[i][j] * std::log2(1.0 + std::exp(g(j) - g(i)));
      }
      if (!(mass < 1.0)) ++s.mass_violations;
      if (ind_i > log_i + 1e-9 || log_i > terms[i] + 1e-9) ++s.chain_violations;
      indicator += ind_i;
      rspo += terms[i];
    }
    if (indicator > rspo + 1e-9) ++s.bound_violations;
    ++s.lists;
  }
  return s;
}

ModelConfig RandomModelConfig(std::mt19937_64& rng, int min_layers, int max_layers,
                              bool trunk_at_least_one) {
  ModelConfig c;
  c.feature_dim = 2 + rng() % 3;
  c.hidden = 2 + rng() % 5;
  c.ffn_hidden = 2 + rng() % 5;
  c.layers = min_layers + static_cast<int>(rng() % static_cast<unsigned>(max_layers - min_layers + 1));
  const int lo = trunk_at_least_one ? 1 : 0;
  c.trunk_layers = lo + static_cast<int>(rng() % static_cast<unsigned>(c.layers - lo));
  const int T = 1 + static_cast<int>(rng() % 3);
  c.level_vocab_sizes.clear();
  for (int l = 0; l < T; ++l) c.level_vocab_sizes.push_back(2 + static_cast<int>(rng() % 4));
  c.ecpm_buckets = 1 + static_cast<int>(rng() % 4);
  c.seed = rng();
  return c;
}

std::vector<int> RandomTokens(const ModelConfig& c, std::mt19937_64& rng) {
  std::vector<int> t;
  for (int v : c.level_vocab_sizes) t.push_back(static_cast<int>(rng() % static_cast<unsigned>(v)));
  return t;
}

double LogSoftmaxAt(const Matrix& logits, std::size_t idx) {
  double mx = logits(0, 0);
  for (double v : logits.data()) mx = std::max(mx, v);
  double s = 0.0;
  for (double v : logits.data()) s += std::exp(v - mx);
  return logits(0, idx) - mx - std::log(s);
}

// Teacher-forced sequence log-prob from the differentiable path.
double OracleSequenceScore(const DecoderModel& m, const Matrix& X, const std::vector<int>& tokens) {
  Tape t(false);
  ForwardTrace tr = Forward(t, m, t.Constant(X), tokens);
  double s = 0.0;
  for (std::size_t l = 0; l < tokens.size(); ++l) {
    s += LogSoftmaxAt(tr.head_logits[l].value(), static_cast<std::size_t>(tokens[l]));
  }
  return s;
}

Matrix RandomContext(const DecoderModel& m, std::mt19937_64& rng) {
  return ContextProcess(m, RandomUniform(1 + rng() % 3, m.config.feature_dim, 1.0, rng));
}

BeamSchedule Widths(std::vector<int> w) { return ResolveDbw(w, w.size()); }

std::string Fmt(double x) {
  std::ostringstream os;
  os.precision(4);
  os << x;
  return os.str();
}

}  // namespace

Fault ParseFault(const std::string& text) {
  if (text.empty() || text == "none") return Fault::kNone;
  if (text == "rspo") return Fault::kRspo;
  if (text == "gradient") return Fault::kGradient;
  if (text == "topk") return Fault::kTopk;
  throw std::invalid_argument("unknown fault '" + text + "' (none, rspo, gradient, topk)");
}

std::string FormatResult(const CheckResult& r) {
  std::ostringstream os;
  os << (r.pass ? "PASS " : "FAIL ") << r.name << ": " << r.detail << " (";
  os.precision(3);
  os << std::fixed << r.seconds << " s)";
  return os.str();
}

CheckResult CheckRspoBound(std::size_t lists, std::uint64_t seed, Fault fault) {
  Timer timer;
  const RspoSweep s = SweepRspo(lists, seed, fault);
  const double secs = timer.seconds();
  const bool pass = s.bound_violations == 0 && secs < 5.0;
  return Finish("rspo-bound", pass,
                std::to_string(s.lists) + " lists, " + std::to_string(s.bound_violations) +
                    " violations of L_RSPO >= sum M_ij [g_i < g_j]",
                timer);
}

CheckResult CheckRspoChain(std::size_t lists, std::uint64_t seed, Fault fault) {
  Timer timer;
  const RspoSweep s = SweepRspo(lists, seed, fault);
  const bool pass = s.chain_violations == 0 && s.mass_violations == 0;
  return Finish("rspo-chain", pass,
                std::to_string(s.lists) + " lists, " + std::to_string(s.chain_violations) +
                    " chain violations, " + std::to_string(s.mass_violations) +
                    " lower-set weight sums >= 1",
                timer);
}

CheckResult CheckGradients(std::size_t configs, std::uint64_t seed, Fault fault) {
  Timer timer;
  std::mt19937_64 rng(seed);
  std::map<std::string, double> worst;
  std::string worst_where;
  GradCheckOptions options;
  options.floor = 1e-5;
  double overall = 0.0;
  for (std::size_t trial = 0; trial < configs; ++trial) {
    ModelConfig c = RandomModelConfig(rng, 2, 3, true);
    // LayerNorm over two features is nearly singular; keep d >= 4 here.
    c.hidden += 2;
    DecoderModel m = DecoderModel::Init(c);
    const Matrix feats = RandomUniform(1 + rng() % 3, c.feature_dim, 1.0, rng);
    const std::vector<int> toks = RandomTokens(c, rng);
    const int ecpm_token = static_cast<int>(rng() % static_cast<unsigned>(c.ecpm_buckets));
    const double values[] = {0.1, 0.4, 0.9, 1.6, 2.5, 3.1};
    const EcpmBuckets buckets = FitEcpmBuckets(values, c.ecpm_buckets);
    LossConfig lc;
    lc.delta = 1e9;  // keep the reference gate away from its switching point
    lc.lambda_mtp = 0.4;

    // A small RL list over distinct random candidates. The alignment weight
    // is piecewise constant in the policy ranking, so lists whose sequence
    // log-probs sit within 1e-3 of each other are redrawn.
    CandidateList list;
    std::uniform_real_distribution<double> reward(0.0, 3.0);
    for (int attempt = 0; attempt < 20; ++attempt) {
      list = CandidateList{};
      std::set<std::vector<int>> seen;
      for (int k = 0; k < 3; ++k) {
        std::vector<int> y = RandomTokens(c, rng);
        if (seen.insert(y).second) list.candidates.push_back(UaSid{y});
      }
      const Matrix X = ContextProcess(m, feats);
      std::vector<double> lp;
      for (const UaSid& y : list.candidates) lp.push_back(OracleSequenceScore(m, X, y.tokens));
      bool separated = true;
      for (std::size_t a = 0; a < lp.size(); ++a) {
        for (std::size_t b = a + 1; b < lp.size(); ++b) {
          separated = separated && std::abs(lp[a] - lp[b]) > 1e-3;
        }
      }
      if (separated) break;
    }
    for (std::size_t k = 0; k < list.candidates.size(); ++k) {
      list.rewards.push_back(reward(rng));
      list.policy_logp.push_back(-1.0 - static_cast<double>(k));
    }
    list.ref_logp = std::vector<double>(list.candidates.size(), -2.0);
    list.SortByReward();

    Matrix anchor = RandomUniform(1, 4, 1.0, rng);
    std::vector<Matrix> pos = {RandomUniform(1, 4, 1.0, rng)};
    std::vector<Matrix> neg = {RandomUniform(1, 4, 1.0, rng), RandomUniform(1, 4, 1.0, rng)};

    std::vector<std::pair<std::string, Matrix*>> params;
    m.ForEachParam([&params](const std::string& n, Matrix& p) { params.emplace_back(n, &p); });
    auto trace = [&](Tape& t) { return Forward(t, m, ContextProcess(t, m, feats), toks); };
    auto corrupt = [fault](Var x) {
      if (fault != Fault::kGradient) return x;
      return ad::Custom(std::span<const Var>(&x, 1), x.value(),
                        [](const Matrix& g) {
                          Matrix s = g;
                          for (double& v : s.data()) v *= 1.5;
                          return std::vector<Matrix>{s};
                        });
    };

    std::vector<std::pair<std::string, ScalarBuilder>> builders = {
        {"network",
         [&](Tape& t) {
           ForwardTrace tr = trace(t);
           std::vector<Var> parts;
           for (std::size_t l = 0; l < toks.size(); ++l) {
             const auto tok = static_cast<std::size_t>(toks[l]);
             parts.push_back(ad::Pick(ad::LogSoftmaxRows(tr.head_logits[l]), 0, tok));
             parts.push_back(ad::Pick(ad::LogSoftmaxRows(tr.trunk_logits[l]), 0, tok));
           }
           parts.push_back(ad::Pick(ad::LogSoftmaxRows(tr.ecpm_logits), 0, 0));
           return corrupt(ad::Sum(parts));
         }},
        {"sid", [&](Tape& t) { return corrupt(SidLoss(trace(t), toks)); }},
        {"ecpm", [&](Tape& t) { return corrupt(EcpmLoss(trace(t), ecpm_token)); }},
        {"mtp", [&](Tape& t) { return corrupt(MtpLoss(trace(t), toks)); }},
        {"vsl", [&](Tape& t) { return corrupt(VslLoss(trace(t), toks, ecpm_token, 1.7, lc)); }},
        {"rspo",
         [&](Tape& t) {
           Var x = ContextProcess(t, m, feats);
           std::vector<Var> logp;
           for (const UaSid& y : list.candidates) {
             logp.push_back(SequenceLogProb(Forward(t, m, x, y.tokens), y.tokens));
           }
           return corrupt(RspoLoss(logp, list, lc));
         }},
        {"unified",
         [&](Tape& t) {
           std::vector<VslSample> vsl = {{feats, toks, 1.3, 1.5, 2.0}};
           std::vector<RlSample> rl = {{feats, list, 1.0, 1.0}};
           return corrupt(UnifiedLoss(t, m, vsl, rl, buckets, lc));
         }},
    };
    for (auto& [name, build] : builders) {
      if (name == "rspo" || name == "unified") {
        if (list.size() < 2) continue;
      }
      const GradCheckResult r = adgen::CheckGradients(build, params, options);
      worst[name] = std::max(worst[name], r.max_rel_error);
      if (r.max_rel_error > overall) {
        overall = r.max_rel_error;
        worst_where = name + " " + r.worst;
      }
    }
    std::vector<std::pair<std::string, Matrix*>> nce_params = {{"anchor", &anchor}};
    for (auto& p : pos) nce_params.emplace_back("positive", &p);
    for (auto& n : neg) nce_params.emplace_back("negative", &n);
    const GradCheckResult r = adgen::CheckGradients(
        [&](Tape& t) {
          std::vector<Var> p, n;
          for (auto& x : pos) p.push_back(t.Param(x));
          for (auto& x : neg) n.push_back(t.Param(x));
          return corrupt(InfoNce(t.Param(anchor), p, n, 0.5));
        },
        nce_params, options);
    worst["info_nce"] = std::max(worst["info_nce"], r.max_rel_error);
    if (r.max_rel_error > overall) {
      overall = r.max_rel_error;
      worst_where = "info_nce " + r.worst;
    }
  }
  const double secs = timer.seconds();
  const bool pass = overall < 1e-4 && secs < 60.0;
  std::string detail = std::to_string(configs) + " configs, max rel error " + Fmt(overall);
  if (!pass && !worst_where.empty()) detail += " at " + worst_where;
  return Finish("gradients", pass, detail, timer);
}

CheckResult CheckTopkExactness(std::size_t instances, std::uint64_t seed, Fault fault) {
  Timer timer;
  std::mt19937_64 rng(seed);
  std::size_t mismatches = 0;
  for (std::size_t trial = 0; trial < instances; ++trial) {
    const std::size_t b = 1 + rng() % 8;
    const std::size_t V = 1 + rng() % 32;
    const std::size_t k = 1 + rng() % (b * V);
    std::vector<double> beams(b);
    Matrix lp(b, V);
    // Half the instances sit on a coarse grid to exercise tie-breaking.
    const bool grid = trial % 2 == 0;
    std::uniform_real_distribution<double> u(-5.0, 0.0);
    for (double& s : beams) s = grid ? -0.5 * static_cast<double>(rng() % 4) : u(rng);
    for (double& x : lp.data()) x = grid ? -0.25 * static_cast<double>(rng() % 6) : u(rng);
    std::vector<Expansion> got;
    if (fault == Fault::kTopk) {
      // Broken pre-cut: per-beam cut at k/2.
      std::vector<Expansion> merged;
      for (std::size_t r = 0; r < b; ++r) {
        Matrix row(1, V);
        for (std::size_t v = 0; v < V; ++v) row(0, v) = lp(r, v);
        auto part = TopKExhaustive(std::vector<double>{beams[r]}, row, std::max<std::size_t>(1, k / 2));
        for (auto& e : part) merged.push_back({r, e.token, e.score});
      }
      std::sort(merged.begin(), merged.end(), ExpansionBefore);
      merged.resize(std::min(k, merged.size()));
      got = merged;
    } else {
      got = TopKPreCut(beams, lp, k);
    }
    // Oracle: full enumeration sorted by (score desc, beam, token).
    std::vector<Expansion> all;
    for (std::size_t r = 0; r < b; ++r) {
      for (std::size_t v = 0; v < V; ++v) all.push_back({r, static_cast<int>(v), beams[r] + lp(r, v)});
    }
    std::sort(all.begin(), all.end(), [](const Expansion& a, const Expansion& c) {
      if (a.score != c.score) return a.score > c.score;
      if (a.beam != c.beam) return a.beam < c.beam;
      return a.token < c.token;
    });
    all.resize(k);
    if (got != all) ++mismatches;
  }
  const double secs = timer.seconds();
  return Finish("topk-precut", mismatches == 0 && secs < 5.0,
                std::to_string(instances) + " instances, " + std::to_string(mismatches) +
                    " mismatches against exhaustive expansion",
                timer);
}

CheckResult CheckBeamInvariance(std::size_t models, std::uint64_t seed) {
  Timer timer;
  std::mt19937_64 rng(seed);
  std::size_t mismatches = 0, bad_builds = 0;
  for (std::size_t trial = 0; trial < models; ++trial) {
    ModelConfig c = RandomModelConfig(rng, 1, 3, false);
    c.level_vocab_sizes = {2 + static_cast<int>(rng() % 5), 2 + static_cast<int>(rng() % 5),
                           2 + static_cast<int>(rng() % 5)};
    const DecoderModel m = DecoderModel::Init(c);
    const Matrix X = RandomContext(m, rng);
    std::vector<int> w;
    for (int t = 0; t < 3; ++t) w.push_back(1 + static_cast<int>(rng() % 12));
    const BeamSchedule s = Widths(w);
    std::vector<std::vector<Hypothesis>> outs;
    for (bool shared : {true, false}) {
      for (bool precut : {true, false}) {
        BeamSearchOptions o;
        o.shared_kv = shared;
        o.precut = precut;
        SearchStats st;
        outs.push_back(BeamSearch(m, X, s, o, &st));
        if (shared && st.kv_builds != 1) ++bad_builds;
      }
    }
    for (std::size_t i = 1; i < outs.size(); ++i) {
      bool same = outs[i].size() == outs[0].size();
      for (std::size_t j = 0; same && j < outs[0].size(); ++j) {
        same = outs[i][j].tokens == outs[0][j].tokens && outs[i][j].score == outs[0][j].score;
      }
      if (!same) ++mismatches;
    }
  }
  // Build counter is 1 for any width.
  {
    ModelConfig c;
    c.level_vocab_sizes = {8, 8, 8};
    const DecoderModel m = DecoderModel::Init(c);
    const Matrix X = RandomContext(m, rng);
    for (int width : {1, 4, 64, 512}) {
      SearchStats st;
      BeamSearch(m, X, Widths({width, width, width}), {}, &st);
      if (st.kv_builds != 1) ++bad_builds;
    }
  }
  return Finish("beam-kv-invariance", mismatches == 0 && bad_builds == 0,
                std::to_string(models) + " models x 4 flag combinations, " +
                    std::to_string(mismatches) + " mismatches, " + std::to_string(bad_builds) +
                    " requests with more than one shared KV build",
                timer);
}

CheckResult CheckLazyAr(std::size_t models, std::uint64_t seed) {
  Timer timer;
  std::mt19937_64 rng(seed);
  std::size_t logit_mismatch = 0, count_mismatch = 0;
  for (std::size_t trial = 0; trial < models; ++trial) {
    ModelConfig c = RandomModelConfig(rng, 1, 4, false);
    const DecoderModel m = DecoderModel::Init(c);
    const Matrix feats = RandomUniform(1 + rng() % 3, c.feature_dim, 1.0, rng);
    const std::vector<int> toks = RandomTokens(c, rng);
    Tape t(false);
    Var x = ContextProcess(t, m, feats);
    const ForwardTrace vanilla = VanillaArForward(t, m, x, toks);
    const ForwardTrace lazy = LazyArForward(t, m, x, toks, 0);
    for (std::size_t l = 0; l < toks.size(); ++l) {
      if (!(vanilla.head_logits[l].value() == lazy.head_logits[l].value())) ++logit_mismatch;
    }
    if (!(vanilla.ecpm_logits.value() == lazy.ecpm_logits.value())) ++logit_mismatch;

    // Layer calls against T*K + sum_t (L-K) n_t.
    const std::size_t T = c.levels();
    std::vector<int> w;
    for (std::size_t l = 0; l < T; ++l) w.push_back(1 + static_cast<int>(rng() % 6));
    SearchStats st;
    BeamSearch(m, x.value(), Widths(w), {}, &st);
    std::uint64_t n_sum = 0;
    for (std::size_t n : st.hypotheses_per_level) n_sum += n;
    const auto K = static_cast<std::uint64_t>(c.trunk_layers);
    const auto L = static_cast<std::uint64_t>(c.layers);
    if (st.layer_calls.trunk != T * K || st.layer_calls.head != (L - K) * n_sum) ++count_mismatch;
  }

  // Production depth: L = 9 with a 6-layer trunk, b_t = 512.
  ModelConfig big;
  big.feature_dim = 4;
  big.hidden = 4;
  big.ffn_hidden = 4;
  big.layers = 9;
  big.trunk_layers = 6;
  big.level_vocab_sizes = {512, 16, 8};
  big.ecpm_buckets = 2;
  const DecoderModel m = DecoderModel::Init(big);
  const Matrix X = RandomContext(m, rng);
  SearchStats lazy, vanilla;
  BeamSearch(m, X, Widths({512, 512, 512}), {}, &lazy);
  BeamSearchOptions o;
  o.trunk_layers = 0;
  BeamSearch(m, X, Widths({512, 512, 512}), o, &vanilla);
  const double ratio =
      static_cast<double>(vanilla.layer_calls.total()) / static_cast<double>(lazy.layer_calls.total());
  const bool formula = lazy.layer_calls.total() == 3 * 6 + (9 - 6) * (1 + 512 + 512);
  const bool pass = logit_mismatch == 0 && count_mismatch == 0 && formula && ratio > 2.8;
  return Finish("lazyar", pass,
                std::to_string(models) + " models: " + std::to_string(logit_mismatch) +
                    " K=0 logit mismatches, " + std::to_string(count_mismatch) +
                    " call-count mismatches; L=9 K=6 b=512 vanilla/LazyAR calls " +
                    std::to_string(vanilla.layer_calls.total()) + "/" +
                    std::to_string(lazy.layer_calls.total()) + " = " + Fmt(ratio),
                timer);
}

CheckResult CheckQuantizer(std::size_t fittings, std::size_t fixture_seeds, std::uint64_t seed) {
  Timer timer;
  std::mt19937_64 rng(seed);
  std::size_t size_violations = 0;
  for (std::size_t trial = 0; trial < fittings; ++trial) {
    const std::size_t n = 2 + rng() % 79;
    const std::size_t d = 1 + rng() % 4;
    const int k = 1 + static_cast<int>(rng() % std::min<std::size_t>(n, 10));
    const Matrix pts = RandomUniform(n, d, 1.0, rng);
    const KMeansResult r = BalancedKMeans(pts, k, 20, rng());
    std::vector<std::size_t> sizes(static_cast<std::size_t>(k), 0);
    for (int a : r.assignments) ++sizes[static_cast<std::size_t>(a)];
    const auto [lo, hi] = std::minmax_element(sizes.begin(), sizes.end());
    if (*hi - *lo > 1) ++size_violations;
  }

  std::size_t metric_mismatches = 0;
  for (std::size_t trial = 0; trial < fittings; ++trial) {
    const std::vector<int> vocab = {1 + static_cast<int>(rng() % 4), 1 + static_cast<int>(rng() % 4)};
    const std::size_t items = 1 + rng() % 30;
    std::vector<std::pair<ItemId, UaSid>> map;
    std::map<std::vector<int>, std::size_t> counts;
    for (std::size_t i = 0; i < items; ++i) {
      std::vector<int> tok = {static_cast<int>(rng() % static_cast<unsigned>(vocab[0])),
                              static_cast<int>(rng() % static_cast<unsigned>(vocab[1]))};
      ++counts[tok];
      map.emplace_back(i, UaSid{tok});
    }
    std::size_t singles = 0;
    for (const auto& [tok, c] : counts) singles += c == 1 ? 1 : 0;
    const double space = static_cast<double>(vocab[0] * vocab[1]);
    const double sids = static_cast<double>(counts.size());
    const SidMetrics got = ComputeSidMetrics(map, vocab);
    auto near = [](double a, double b) { return std::abs(a - b) <= 1e-12; };
    if (got.sids != counts.size() || got.one_on_one_sids != singles ||
        !near(got.cpr, static_cast<double>(items) / sids) ||
        !near(got.col, 1.0 - static_cast<double>(singles) / sids) ||
        !near(got.util, static_cast<double>(items) / space) || !near(got.sid_util, sids / space)) {
      ++metric_mismatches;
    }
  }

  // Duplication fixture: half the catalog in groups of 4 identical
  // embeddings. Equal codebook space (1728): fixed 12x12x12 against
  // multi-resolution 24x12x6.
  std::size_t ordered = 0;
  std::string cols;
  for (std::size_t s = 0; s < fixture_seeds; ++s) {
    CatalogConfig cc;
    cc.items = 500;
    cc.dim = 8;
    cc.seed = seed + s;
    cc.duplication = {4, 0.5};
    const Catalog cat = GenerateCatalog(cc);
    auto col = [&](std::vector<int> sizes, QuantizerMode mode) {
      const QuantizerModel q = FitQuantizer(cat, sizes, mode, cc.seed).model;
      std::vector<std::pair<ItemId, UaSid>> a;
      for (const Item& it : cat) a.emplace_back(it.id, EncodeItem(q, it));
      return ComputeSidMetrics(a, sizes).col;
    };
    const double fixed = col({12, 12, 12}, QuantizerMode::kFixed);
    const double mr = col({24, 12, 6}, QuantizerMode::kMultiResolution);
    const double mgmr = col({24, 12, 6}, QuantizerMode::kMgmr);
    ordered += (mgmr < mr && mr < fixed) ? 1 : 0;
    if (s == 0) cols = "Col fixed/MR/MGMR " + Fmt(fixed) + "/" + Fmt(mr) + "/" + Fmt(mgmr);
  }
  const bool pass = size_violations == 0 && metric_mismatches == 0 && ordered == fixture_seeds;
  return Finish("quantizer", pass,
                std::to_string(fittings) + " k-means fits with " + std::to_string(size_violations) +
                    " size violations; " + std::to_string(metric_mismatches) +
                    " metric mismatches; Col(MGMR) < Col(MR) < Col(fixed) on " +
                    std::to_string(ordered) + "/" + std::to_string(fixture_seeds) +
                    " fixtures (" + cols + ")",
                timer);
}

CheckResult CheckExhaustiveSandwich(std::size_t models, std::uint64_t seed) {
  Timer timer;
  std::mt19937_64 rng(seed);
  const std::vector<int> vocab = {3, 3, 2};
  std::vector<std::vector<int>> all;
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b)
      for (int c = 0; c < 2; ++c) all.push_back({a, b, c});
  std::size_t mismatches = 0, greedy_mismatch = 0;
  for (std::size_t trial = 0; trial < models; ++trial) {
    ModelConfig c = RandomModelConfig(rng, 1, 3, false);
    c.level_vocab_sizes = vocab;
    const DecoderModel m = DecoderModel::Init(c);
    const Matrix X = RandomContext(m, rng);
    std::vector<std::pair<double, std::vector<int>>> oracle;
    for (const auto& s : all) oracle.emplace_back(OracleSequenceScore(m, X, s), s);
    std::stable_sort(oracle.begin(), oracle.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    const auto res = BeamSearch(m, X, Widths({3, 9, 18}), {});
    bool same = res.size() == oracle.size();
    for (std::size_t i = 0; same && i < res.size(); ++i) {
      same = res[i].tokens == oracle[i].second &&
             std::abs(res[i].score - oracle[i].first) <= 1e-12 * std::max(1.0, std::abs(oracle[i].first));
    }
    if (!same) ++mismatches;
    // Width 1: the chained per-level argmax.
    std::vector<int> chain(3, 0);
    for (std::size_t l = 0; l < 3; ++l) {
      Tape t(false);
      const ForwardTrace tr = Forward(t, m, t.Constant(X), chain);
      const Matrix& lg = tr.head_logits[l].value();
      chain[l] = static_cast<int>(std::max_element(lg.data().begin(), lg.data().end()) - lg.data().begin());
    }
    if (BeamSearch(m, X, Widths({1, 1, 1}), {})[0].tokens != chain) ++greedy_mismatch;
  }
  return Finish("exhaustive-sandwich", mismatches == 0 && greedy_mismatch == 0,
                std::to_string(models) + " models on vocab (3,3,2): " + std::to_string(mismatches) +
                    " full-width mismatches vs 18-sequence brute force, " +
                    std::to_string(greedy_mismatch) + " greedy mismatches",
                timer);
}

CheckResult CheckEcpmBuckets(std::size_t sets, std::uint64_t seed) {
  Timer timer;
  std::mt19937_64 rng(seed);
  std::lognormal_distribution<double> value(0.0, 1.0);
  std::size_t violations = 0;
  for (std::size_t trial = 0; trial < sets; ++trial) {
    const int buckets = 2 + static_cast<int>(rng() % 15);
    const std::size_t n = static_cast<std::size_t>(buckets) + rng() % 485;
    std::vector<double> v(n);
    for (double& x : v) x = value(rng);
    const EcpmBuckets b = FitEcpmBuckets(v, buckets);
    std::vector<std::size_t> counts(static_cast<std::size_t>(b.bucket_count()), 0);
    for (double x : v) ++counts[static_cast<std::size_t>(DiscretizeEcpm(b, x))];
    const auto [lo, hi] = std::minmax_element(counts.begin(), counts.end());
    if (b.bucket_count() != buckets || *hi - *lo > 1) ++violations;
  }
  return Finish("ecpm-buckets", violations == 0,
                std::to_string(sets) + " value sets, " + std::to_string(violations) +
                    " with bucket counts differing by more than 1",
                timer);
}

CheckResult CheckTabsAndCache(std::size_t streams, std::uint64_t seed) {
  Timer timer;
  std::mt19937_64 rng(seed);
  // Two-phase profile: 10 qps at peak, 2 qps off-peak, threshold 5.
  const int base = 512;
  std::size_t tabs_errors = 0;
  int peak_width = 0, off_width = 0;
  for (int tick = 0; tick < 40; ++tick) {
    const bool peak = (tick / 5) % 2 == 0;
    std::poisson_distribution<int> arrivals(peak ? 100.0 : 20.0);
    const double qps = arrivals(rng) / 10.0;
    const int b = TabsAdjust({qps, 5.0, 1.0}, base);
    (peak ? peak_width : off_width) = b;
    if (b != (peak ? base : static_cast<int>(std::lround(base * 1.6)))) ++tabs_errors;
  }

  // TTL cache through the serving path against a counting oracle.
  ModelConfig c;
  c.level_vocab_sizes = {4, 4};
  c.feature_dim = 3;
  SnapshotStore store;
  auto snap = std::make_shared<Snapshot>();
  snap->model = DecoderModel::Init(c);
  store.Publish(snap);
  SidIndex index;
  index.Upsert(0, UaSid{{0, 0}});
  ServingConfig cfg;
  cfg.schedule = ResolveDbw("2,4", 2);
  cfg.ttl_seconds = 60.0;
  std::size_t hit_mismatch = 0, requests = 0, hits = 0;
  for (std::size_t s = 0; s < streams; ++s) {
    Server server(store, index, cfg);
    std::exponential_distribution<double> gap(1.0 / 45.0);
    std::vector<double> now(4, 0.0), filled(4, -1e300);
    std::size_t oracle = 0, got = 0;
    for (int i = 0; i < 200; ++i) {
      const std::size_t u = rng() % 4;
      now[u] += gap(rng);
      const bool expect = now[u] - filled[u] < 60.0;
      if (expect) ++oracle; else filled[u] = now[u];
      std::mt19937_64 frng(u);
      const ServeResponse r =
          server.Serve({u, RandomUniform(1, 3, 1.0, frng), now[u], {0.0, 1.0, 0.0}});
      got += r.cache_hit ? 1 : 0;
    }
    hit_mismatch += oracle != got ? 1 : 0;
    requests += 200;
    hits += got;
  }
  const bool pass = tabs_errors == 0 && hit_mismatch == 0;
  return Finish("tabs-cache", pass,
                "B_t peak/off-peak " + std::to_string(peak_width) + "/" + std::to_string(off_width) +
                    " (" + std::to_string(tabs_errors) + " tick errors); " +
                    std::to_string(streams) + " replayed streams, hit rate " +
                    Fmt(static_cast<double>(hits) / static_cast<double>(std::max<std::size_t>(1, requests))) +
                    ", " + std::to_string(hit_mismatch) + " streams off the counting oracle",
                timer);
}

CheckResult CheckLearningSanity(std::size_t seeds, std::size_t ticks, std::size_t required) {
  Timer timer;
  std::size_t improved = 0;
  std::ostringstream per_seed;
  for (std::size_t s = 0; s < seeds; ++s) {
    SimConfig c;
    c.seed = s;
    const RunReport r = RunOnlineLoop(ticks, c);
    improved += r.final_ndcg > r.baseline_ndcg ? 1 : 0;
    per_seed << (s ? ", " : "") << Fmt(r.baseline_ndcg) << "->" << Fmt(r.final_ndcg);
  }
  const double secs = timer.seconds();
  return Finish("learning-sanity", improved >= required && secs < 600.0,
                std::to_string(improved) + "/" + std::to_string(seeds) +
                    " seeds improve served NDCG after " + std::to_string(ticks * 10) +
                    " steps (" + per_seed.str() + ")",
                timer);
}

std::vector<CheckResult> RunSuite(const SuiteOptions& o) {
  const bool f = o.full;
  std::vector<CheckResult> out;
  out.push_back(CheckRspoBound(f ? 1000 : 200, o.seed + 1, o.fault));
  out.push_back(CheckRspoChain(f ? 1000 : 200, o.seed + 1, o.fault));
  out.push_back(CheckGradients(f ? 20 : 3, o.seed + 3, o.fault));
  out.push_back(CheckTopkExactness(f ? 1000 : 200, o.seed + 4, o.fault));
  out.push_back(CheckBeamInvariance(f ? 200 : 20, o.seed + 5));
  out.push_back(CheckLazyAr(f ? 50 : 10, o.seed + 6));
  out.push_back(CheckQuantizer(f ? 100 : 20, f ? 3 : 1, o.seed + 7));
  out.push_back(CheckExhaustiveSandwich(f ? 100 : 20, o.seed + 8));
  out.push_back(CheckEcpmBuckets(f ? 100 : 20, o.seed + 9));
  out.push_back(CheckTabsAndCache(f ? 20 : 5, o.seed + 10));
  if (o.learning) out.push_back(CheckLearningSanity(5, 200, 4));
  return out;
}

}  // namespace adgen::verify
