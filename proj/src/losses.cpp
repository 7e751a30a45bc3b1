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


#include "adgen/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace adgen {

namespace {

constexpr double kLn2 = 0.69314718055994530942;

double Softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double Sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

// ---------------------------------------------------------------------------

EcpmBuckets FitEcpmBuckets(std::span<const double> values, int n_buckets) {
  if (n_buckets < 1) throw std::invalid_argument("FitEcpmBuckets: n_buckets must be >= 1");
  if (values.empty()) throw std::invalid_argument("FitEcpmBuckets: no values");
  std::vector<double> sorted(values.begin(), values.end());
  for (double v : sorted) {
    if (!std::isfinite(v)) throw std::invalid_argument("FitEcpmBuckets: non-finite value");
  }
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  EcpmBuckets b;
  b.requested_buckets = n_buckets;
  for (int q = 1; q < n_buckets; ++q) {
    const std::size_t pos = static_cast<std::size_t>(q) * n / static_cast<std::size_t>(n_buckets);
    if (pos == 0 || pos >= n) continue;
    const double cut = 0.5 * (sorted[pos - 1] + sorted[pos]);
    if (!b.boundaries.empty() && cut <= b.boundaries.back()) continue;
    if (cut <= sorted.front()) continue;  // would leave the first bucket empty
    b.boundaries.push_back(cut);
  }
  // Representative value per bucket: midpoint of the fitted values it holds.
  const std::size_t nb = b.boundaries.size() + 1;
  std::vector<double> lo(nb, std::numeric_limits<double>::infinity());
  std::vector<double> hi(nb, -std::numeric_limits<double>::infinity());
  for (double v : sorted) {
    const auto k = static_cast<std::size_t>(DiscretizeEcpm(b, v));
    lo[k] = std::min(lo[k], v);
    hi[k] = std::max(hi[k], v);
  }
  for (std::size_t k = 0; k < nb; ++k) {
    b.representatives.push_back(std::isfinite(lo[k]) ? 0.5 * (lo[k] + hi[k]) : 0.0);
  }
  return b;
}

int DiscretizeEcpm(const EcpmBuckets& buckets, double value) {
  const auto it = std::upper_bound(buckets.boundaries.begin(), buckets.boundaries.end(), value);
  return static_cast<int>(it - buckets.boundaries.begin());
}

// ---------------------------------------------------------------------------

void LossConfig::Validate() const {
  if (!(beta > 0.0)) throw std::invalid_argument("LossConfig: beta must be positive");
  if (!(delta > 0.0)) throw std::invalid_argument("LossConfig: delta must be positive");
  if (w0 < 0.0 || z_max < 0.0 || lambda_e < 0.0 || lambda_mtp < 0.0) {
    throw std::invalid_argument("LossConfig: weights must be non-negative");
  }
}

namespace {

Var CrossEntropySum(const std::vector<Var>& logits, std::span<const int> targets,
                    const char* what) {
  if (logits.size() != targets.size()) {
    throw std::invalid_argument(std::string(what) + ": target count does not match levels");
  }
  std::vector<Var> picks;
  std::vector<double> weights;
  for (std::size_t t = 0; t < logits.size(); ++t) {
    const Matrix& l = logits[t].value();
    if (targets[t] < 0 || static_cast<std::size_t>(targets[t]) >= l.cols()) {
      throw std::invalid_argument(std::string(what) + ": target out of range");
    }
    picks.push_back(ad::Pick(ad::LogSoftmaxRows(logits[t]), 0, static_cast<std::size_t>(targets[t])));
    weights.push_back(-1.0);
  }
  return ad::WeightedSum(picks, weights);
}

}  // namespace

Var SidLoss(const ForwardTrace& trace, std::span<const int> targets) {
  return CrossEntropySum(trace.head_logits, targets, "SidLoss");
}

Var EcpmLoss(const ForwardTrace& trace, int ecpm_token) {
  const int t[] = {ecpm_token};
  return CrossEntropySum({trace.ecpm_logits}, t, "EcpmLoss");
}

Var MtpLoss(const ForwardTrace& trace, std::span<const int> targets) {
  if (trace.trunk_logits.empty()) throw std::invalid_argument("MtpLoss: trace has no trunk logits");
  return CrossEntropySum(trace.trunk_logits, targets, "MtpLoss");
}

Var VslLoss(const ForwardTrace& trace, std::span<const int> targets, int ecpm_token,
            double weight, const LossConfig& config) {
  std::vector<Var> parts = {SidLoss(trace, targets)};
  std::vector<double> w = {weight};
  if (config.lambda_e != 0.0) {
    parts.push_back(EcpmLoss(trace, ecpm_token));
    w.push_back(weight * config.lambda_e);
  }
  if (config.lambda_mtp != 0.0 && !trace.trunk_logits.empty()) {
    parts.push_back(MtpLoss(trace, targets));
    w.push_back(weight * config.lambda_mtp);
  }
  return ad::WeightedSum(parts, w);
}

Var SequenceLogProb(const ForwardTrace& trace, std::span<const int> targets) {
  return ad::Scale(SidLoss(trace, targets), -1.0);
}

// ---------------------------------------------------------------------------

double DiscountAt(std::size_t position) { return std::log2(1.0 + static_cast<double>(position)); }

double Dcg(std::span<const double> ranked_rewards) {
  double s = 0.0;
  for (std::size_t r = 0; r < ranked_rewards.size(); ++r) {
    s += (std::exp2(ranked_rewards[r]) - 1.0) / DiscountAt(r + 1);
  }
  return s;
}

double IdealDcg(std::span<const double> rewards) {
  std::vector<double> sorted(rewards.begin(), rewards.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  return Dcg(sorted);
}

double Ndcg(std::span<const double> ranked_rewards) {
  if (ranked_rewards.empty()) throw std::invalid_argument("Ndcg: empty list");
  const double z = IdealDcg(ranked_rewards);
  if (z <= 0.0) return 1.0;
  return Dcg(ranked_rewards) / z;
}

double NdcgCost(std::span<const double> rewards, std::span<const std::size_t> ranking) {
  if (rewards.empty() || ranking.size() != rewards.size()) {
    throw std::invalid_argument("NdcgCost: ranking must be a permutation of the list");
  }
  const double z = IdealDcg(rewards);
  if (z <= 0.0) return 0.0;
  std::vector<double> ranked;
  for (std::size_t idx : ranking) {
    if (idx >= rewards.size()) throw std::invalid_argument("NdcgCost: ranking index out of range");
    ranked.push_back(rewards[idx]);
  }
  double gain_sum = 0.0;
  for (double v : rewards) gain_sum += (std::exp2(v) - 1.0) / z;
  return gain_sum - Dcg(ranked) / z;
}

std::vector<double> Gains(std::span<const double> rewards) {
  const double z = IdealDcg(rewards);
  std::vector<double> g(rewards.size(), 0.0);
  if (z <= 0.0) return g;
  for (std::size_t i = 0; i < rewards.size(); ++i) g[i] = (std::exp2(rewards[i]) - 1.0) / z;
  return g;
}

double LambdaWeight(std::size_t i, std::size_t j, std::span<const double> gains) {
  if (i == j) throw std::invalid_argument("LambdaWeight: i == j");
  const std::size_t gap = i > j ? i - j : j - i;
  return std::abs(1.0 / DiscountAt(gap) - 1.0 / DiscountAt(gap + 1)) *
         std::abs(gains[i] - gains[j]);
}

// ---------------------------------------------------------------------------

void CandidateList::Validate() const {
  const std::size_t n = rewards.size();
  if (n == 0) throw std::invalid_argument("CandidateList: empty");
  if (policy_logp.size() != n || (!candidates.empty() && candidates.size() != n) ||
      (ref_logp && ref_logp->size() != n)) {
    throw std::invalid_argument("CandidateList: field lengths differ");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!(rewards[i] >= 0.0) || !std::isfinite(rewards[i])) {
      throw std::invalid_argument("CandidateList: rewards must be finite and non-negative");
    }
    if (i > 0 && rewards[i] > rewards[i - 1]) {
      throw std::invalid_argument("CandidateList: rewards must be sorted descending");
    }
    if (!std::isfinite(policy_logp[i]) || (ref_logp && !std::isfinite((*ref_logp)[i]))) {
      throw std::invalid_argument("CandidateList: log-probs must be finite");
    }
  }
}

void CandidateList::SortByReward() {
  std::vector<std::size_t> order(rewards.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [this](std::size_t a, std::size_t b) { return rewards[a] > rewards[b]; });
  auto permute = [&order](auto& v) {
    auto copy = v;
    for (std::size_t i = 0; i < order.size(); ++i) v[i] = copy[order[i]];
  };
  if (!candidates.empty()) permute(candidates);
  permute(rewards);
  permute(policy_logp);
  if (ref_logp) permute(*ref_logp);
}

std::vector<std::size_t> LowerSet(const CandidateList& list, std::size_t i) {
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < list.size(); ++j) {
    if (list.rewards[j] < list.rewards[i]) out.push_back(j);
  }
  return out;
}

int RefGate(const CandidateList& list, std::size_t i, double delta,
            std::span<const double> policy_logp) {
  if (!list.ref_logp) return 0;
  if (policy_logp.empty()) policy_logp = list.policy_logp;
  std::vector<std::size_t> members = LowerSet(list, i);
  members.push_back(i);
  double s = 0.0;
  for (std::size_t t : members) s += std::abs(policy_logp[t] - (*list.ref_logp)[t]);
  return s / static_cast<double>(members.size()) < delta ? 1 : 0;
}

namespace {

struct RspoPiece {
  double value = 0.0;
  std::vector<double> grad;  // d l_i / d log p_k for every k
};

RspoPiece RspoTerm(const CandidateList& list, std::span<const double> logp,
                   std::span<const double> gains, std::size_t i, const LossConfig& config) {
  const std::size_t n = list.size();
  RspoPiece piece;
  piece.grad.assign(n, 0.0);
  const std::vector<std::size_t> lower = LowerSet(list, i);
  if (lower.empty()) return piece;
  const int gate = RefGate(list, i, config.delta, logp);
  auto g = [&](std::size_t k) {
    return config.beta * (logp[k] - (gate ? (*list.ref_logp)[k] : 0.0));
  };
  const double gi = g(i);
  std::vector<double> a;  // ln M_ij + g_j - g_i
  std::vector<std::size_t> js;
  for (std::size_t j : lower) {
    const double m = LambdaWeight(i, j, gains);
    if (m <= 0.0) continue;
    a.push_back(std::log(m) + g(j) - gi);
    js.push_back(j);
  }
  if (a.empty()) return piece;  // all M_ij = 0: -log2 sigma(+inf) = 0
  const double mx = *std::max_element(a.begin(), a.end());
  double s = 0.0;
  for (double v : a) s += std::exp(v - mx);
  const double log_sum = mx + std::log(s);
  piece.value = Softplus(log_sum) / kLn2;
  // d l / d a_j = softmax(a)_j * sigmoid(log_sum) / ln 2, and a_j moves with
  // +beta in log p_j and -beta in log p_i.
  const double outer = Sigmoid(log_sum) / kLn2;
  for (std::size_t q = 0; q < a.size(); ++q) {
    const double d = std::exp(a[q] - log_sum) * outer * config.beta;
    piece.grad[js[q]] += d;
    piece.grad[i] -= d;
  }
  return piece;
}

}  // namespace

std::vector<double> RspoTerms(const CandidateList& list, std::span<const double> policy_logp,
                              const LossConfig& config) {
  if (policy_logp.size() != list.size()) {
    throw std::invalid_argument("RspoTerms: policy log-prob count mismatch");
  }
  const std::vector<double> gains = Gains(list.rewards);
  std::vector<double> out;
  for (std::size_t i = 0; i < list.size(); ++i) {
    out.push_back(RspoTerm(list, policy_logp, gains, i, config).value);
  }
  return out;
}

double RspoLoss(const CandidateList& list, const LossConfig& config) {
  const auto terms = RspoTerms(list, list.policy_logp, config);
  return std::accumulate(terms.begin(), terms.end(), 0.0);
}

std::vector<Var> RspoTerms(std::span<const Var> policy_logp, const CandidateList& list,
                           const LossConfig& config) {
  if (policy_logp.size() != list.size()) {
    throw std::invalid_argument("RspoTerms: policy log-prob count mismatch");
  }
  std::vector<double> logp;
  for (const Var& v : policy_logp) logp.push_back(v.scalar());
  const std::vector<double> gains = Gains(list.rewards);
  std::vector<Var> out;
  for (std::size_t i = 0; i < list.size(); ++i) {
    RspoPiece piece = RspoTerm(list, logp, gains, i, config);
    out.push_back(ad::Custom(policy_logp, Matrix(1, 1, piece.value),
                             [grad = std::move(piece.grad)](const Matrix& g) {
                               std::vector<Matrix> grads;
                               for (double d : grad) grads.emplace_back(1, 1, d * g(0, 0));
                               return grads;
                             }));
  }
  return out;
}

Var RspoLoss(std::span<const Var> policy_logp, const CandidateList& list,
             const LossConfig& config) {
  return ad::Sum(RspoTerms(policy_logp, list, config));
}

double AlignmentScore(const CandidateList& list, std::size_t i,
                      std::span<const double> policy_logp) {
  const std::size_t n = list.size();
  if (i >= n) throw std::invalid_argument("AlignmentScore: index out of range");
  if (n == 1) return 0.0;
  if (policy_logp.empty()) policy_logp = list.policy_logp;
  auto rank_of = [&](std::span<const double> key) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&key](std::size_t a, std::size_t b) { return key[a] > key[b]; });
    return static_cast<double>(std::find(order.begin(), order.end(), i) - order.begin()) + 1.0;
  };
  const double rp = rank_of(policy_logp);
  const double rv = rank_of(list.rewards);
  return std::abs(rp - rv) / static_cast<double>(n - 1);
}

UnifiedWeights ComputeUnifiedWeights(double alignment, double reward, const LossConfig& config) {
  if (reward < 0.0) throw std::invalid_argument("ComputeUnifiedWeights: reward must be >= 0");
  UnifiedWeights w;
  w.vsl = config.w0 * std::exp(alignment * std::log1p(reward));
  w.rl = config.w0 * config.z_max * (1.0 - alignment);
  return w;
}

// ---------------------------------------------------------------------------

Var UnifiedLoss(Tape& tape, const DecoderModel& model, std::span<const VslSample> vsl,
                std::span<const RlSample> rl, const EcpmBuckets& buckets,
                const LossConfig& config, LossBreakdown* breakdown) {
  LossBreakdown local;
  LossBreakdown& bd = breakdown ? *breakdown : local;
  bd = LossBreakdown{};
  std::vector<Var> terms;
  std::vector<double> weights;

  auto track = [&](const ForwardTrace& trace, std::span<const int> target, int token) {
    bd.sid += SidLoss(trace, target).scalar();
    if (config.lambda_e != 0.0) bd.ecpm += EcpmLoss(trace, token).scalar();
    if (config.lambda_mtp != 0.0 && !trace.trunk_logits.empty()) {
      bd.mtp += MtpLoss(trace, target).scalar();
    }
  };

  for (const VslSample& s : vsl) {
    Var x = ContextProcess(tape, model, s.features);
    ForwardTrace trace = Forward(tape, model, x, s.target);
    const int token = DiscretizeEcpm(buckets, s.ecpm_value);
    terms.push_back(VslLoss(trace, s.target, token, s.w_user * s.w_behavior, config));
    weights.push_back(ComputeUnifiedWeights(0.0, s.ecpm_value, config).vsl);
    track(trace, s.target, token);
    ++bd.vsl_terms;
  }

  for (const RlSample& s : rl) {
    s.list.Validate();
    if (s.list.candidates.size() != s.list.size()) {
      throw std::invalid_argument("UnifiedLoss: RL list without candidate SIDs");
    }
    Var x = ContextProcess(tape, model, s.features);
    std::vector<ForwardTrace> traces;
    std::vector<Var> logp;
    std::vector<double> logp_values;
    for (const UaSid& y : s.list.candidates) {
      traces.push_back(Forward(tape, model, x, y.tokens));
      logp.push_back(SequenceLogProb(traces.back(), y.tokens));
      logp_values.push_back(logp.back().scalar());
    }
    std::vector<Var> rspo = RspoTerms(logp, s.list, config);
    for (std::size_t i = 0; i < s.list.size(); ++i) {
      const UaSid& y = s.list.candidates[i];
      const double a = AlignmentScore(s.list, i, logp_values);
      const UnifiedWeights w = ComputeUnifiedWeights(a, s.list.rewards[i], config);
      const int token = DiscretizeEcpm(buckets, s.list.rewards[i]);
      terms.push_back(VslLoss(traces[i], y.tokens, token, s.w_user * s.w_behavior, config));
      weights.push_back(w.vsl);
      terms.push_back(rspo[i]);
      weights.push_back(w.rl);
      track(traces[i], y.tokens, token);
      bd.rspo += rspo[i].scalar();
      ++bd.rl_terms;
    }
  }

  const std::size_t count = bd.vsl_terms + bd.rl_terms;
  if (count == 0) return tape.Constant(Matrix(1, 1));
  for (double& w : weights) w /= static_cast<double>(count);
  Var total = ad::WeightedSum(terms, weights);
  bd.total = total.scalar();
  return total;
}

// ---------------------------------------------------------------------------

namespace {

void CheckInfoNceArgs(std::size_t positives, std::size_t negatives, double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("InfoNce: tau must be positive");
  if (positives == 0) throw std::invalid_argument("InfoNce: no positives");
  if (negatives == 0) throw std::invalid_argument("InfoNce: no negatives");
}

double LogSumExp(std::span<const double> v) {
  const double mx = *std::max_element(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

}  // namespace

double InfoNce(std::span<const double> anchor, const std::vector<std::vector<double>>& positives,
               const std::vector<std::vector<double>>& negatives, double tau) {
  CheckInfoNceArgs(positives.size(), negatives.size(), tau);
  std::vector<double> pos, all;
  for (const auto& p : positives) {
    pos.push_back(Dot(anchor, p) / tau);
    all.push_back(pos.back());
  }
  for (const auto& q : negatives) all.push_back(Dot(anchor, q) / tau);
  return LogSumExp(all) - LogSumExp(pos);
}

Var InfoNce(Var anchor, std::span<const Var> positives, std::span<const Var> negatives,
            double tau) {
  CheckInfoNceArgs(positives.size(), negatives.size(), tau);
  std::vector<Var> inputs = {anchor};
  inputs.insert(inputs.end(), positives.begin(), positives.end());
  inputs.insert(inputs.end(), negatives.begin(), negatives.end());
  const std::size_t np = positives.size();
  const std::size_t n = inputs.size() - 1;
  std::vector<double> s(n);
  for (std::size_t k = 0; k < n; ++k) {
    s[k] = Dot(anchor.value().row(0), inputs[k + 1].value().row(0)) / tau;
  }
  const double lse_pos = LogSumExp(std::span<const double>(s).first(np));
  const double lse_all = LogSumExp(s);
  // dL/ds_k = softmax_all(k) - [k in P] softmax_P(k)
  std::vector<double> ds(n);
  for (std::size_t k = 0; k < n; ++k) {
    ds[k] = std::exp(s[k] - lse_all) - (k < np ? std::exp(s[k] - lse_pos) : 0.0);
  }
  return ad::Custom(inputs, Matrix(1, 1, lse_all - lse_pos),
                    [inputs, ds, tau](const Matrix& g) {
                      const Matrix& z = inputs[0].value();
                      std::vector<Matrix> grads(inputs.size(), Matrix(1, z.cols()));
                      for (std::size_t k = 0; k < ds.size(); ++k) {
                        const Matrix& zk = inputs[k + 1].value();
                        const double c = g(0, 0) * ds[k] / tau;
                        for (std::size_t j = 0; j < z.cols(); ++j) {
                          grads[0](0, j) += c * zk(0, j);
                          grads[k + 1](0, j) += c * z(0, j);
                        }
                      }
                      return grads;
                    });
}

}  // namespace adgen
