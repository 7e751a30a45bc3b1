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


// Training objectives: value-weighted next-token losses (SID, eCPM token,
// MTP), NDCG utilities, lambda weights, the reference-gated list-wise
// preference loss (RSPO), the unified VSL + RSPO objective and InfoNCE.
//
// Log conventions: the outer sigmoid wrapper of RSPO uses log2; every other
// log (log-probabilities, the inner log-sum) is natural.

#pragma once

#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "adgen/autodiff.hpp"
#include "adgen/model.hpp"
#include "adgen/tokenizer.hpp"

namespace adgen {

// ---------------------------------------------------------------------------
// eCPM buckets

struct EcpmBuckets {
  std::vector<double> boundaries;       // strictly increasing, n_buckets - 1 entries
  std::vector<double> representatives;  // per bucket: midpoint of its fitted range
  int requested_buckets = 1;

  int bucket_count() const { return static_cast<int>(boundaries.size()) + 1; }
};

// Equiprobable buckets: the cut for quantile q/n sits midway between the
// order statistics on either side of position floor(q*N/n). Duplicate cuts
// collapse, so bucket_count() may be smaller than requested.
EcpmBuckets FitEcpmBuckets(std::span<const double> values, int n_buckets);

// Index of the left-closed bucket containing `value`, clamped to the range.
int DiscretizeEcpm(const EcpmBuckets& buckets, double value);

// ---------------------------------------------------------------------------
// Next-token losses on a forward trace.

struct LossConfig {
  double beta = 1.0;        // preference strength
  double delta = 0.5;       // reference gate threshold
  double w0 = 1.0;          // base weight
  double z_max = 1.0;       // RL weight cap
  double lambda_e = 0.5;    // eCPM-token loss weight
  double lambda_mtp = 0.3;  // MTP auxiliary weight

  void Validate() const;
};

// -sum_t log p(s_t | s_<t, X) over the head logits.
Var SidLoss(const ForwardTrace& trace, std::span<const int> targets);
// -log p(v | y, X) on the extra eCPM step.
Var EcpmLoss(const ForwardTrace& trace, int ecpm_token);
// Cross-entropy of the trunk logits against the same targets.
Var MtpLoss(const ForwardTrace& trace, std::span<const int> targets);
// weight * (L_SID + lambda_e * L_eCPM + lambda_mtp * L_MTP). The MTP term is
// skipped when lambda_mtp == 0 or the trace has no trunk logits.
Var VslLoss(const ForwardTrace& trace, std::span<const int> targets, int ecpm_token,
            double weight, const LossConfig& config);

// Sequence log-probability sum_t log p(s_t | ...) from the head logits.
Var SequenceLogProb(const ForwardTrace& trace, std::span<const int> targets);

// ---------------------------------------------------------------------------
// Ranking utilities. Rewards are given in ranked order; rank position r is
// 1-based and D_r = log2(1 + r).

double DiscountAt(std::size_t position);
double Dcg(std::span<const double> ranked_rewards);
// Ideal DCG Z: the DCG of the rewards sorted descending.
double IdealDcg(std::span<const double> rewards);
// DCG / Z; 1 when Z == 0.
double Ndcg(std::span<const double> ranked_rewards);
// sum_i G_i - NDCG for the list `rewards` shown in the order `ranking`
// (ranking[r] = index of the item at position r + 1); 0 when Z == 0.
double NdcgCost(std::span<const double> rewards, std::span<const std::size_t> ranking);
// G_i = (2^{v_i} - 1) / Z, all zero when Z == 0.
std::vector<double> Gains(std::span<const double> rewards);
// M_ij = |1/D_|i-j| - 1/D_|i-j|+1| * |G_i - G_j| for 0-based list indices
// i != j (positions i + 1 and j + 1).
double LambdaWeight(std::size_t i, std::size_t j, std::span<const double> gains);

// ---------------------------------------------------------------------------
// Candidate lists and RSPO.

struct CandidateList {
  std::vector<UaSid> candidates;
  std::vector<double> rewards;      // non-increasing
  std::vector<double> policy_logp;  // log p_theta(y_i | X) when the list was built
  std::optional<std::vector<double>> ref_logp;

  std::size_t size() const { return rewards.size(); }
  void Validate() const;
  // Stable reorder by reward descending (ties keep the original order).
  void SortByReward();
};

// E_i: indices j with v_j < v_i.
std::vector<std::size_t> LowerSet(const CandidateList& list, std::size_t i);

// C_i: 1 iff reference log-probs exist and the mean |log p_theta - log p_ref|
// over E_i and y_i is strictly below delta. `policy_logp` defaults to the
// list's stored values.
int RefGate(const CandidateList& list, std::size_t i, double delta,
            std::span<const double> policy_logp = {});

// Per-candidate terms l_i = -log2 sigma(-ln sum_{j in E_i} M_ij exp(g_j - g_i))
// with g_k = beta (log p_k - C_i log ref_k).
std::vector<double> RspoTerms(const CandidateList& list, std::span<const double> policy_logp,
                              const LossConfig& config);
// sum_i l_i over the list's stored policy log-probs.
double RspoLoss(const CandidateList& list, const LossConfig& config);
// Differentiable per-candidate terms; `policy_logp` are 1 x 1 nodes. The gate
// is evaluated on their current values and is not differentiated.
std::vector<Var> RspoTerms(std::span<const Var> policy_logp, const CandidateList& list,
                           const LossConfig& config);
Var RspoLoss(std::span<const Var> policy_logp, const CandidateList& list,
             const LossConfig& config);

// A_i = |r_p - r_v| / (n - 1) with 1-based ranks under descending
// `policy_logp` and descending reward, ties broken by index; 0 for n == 1.
double AlignmentScore(const CandidateList& list, std::size_t i,
                      std::span<const double> policy_logp = {});

struct UnifiedWeights {
  double vsl = 0.0;
  double rl = 0.0;
};
// w_vsl = w0 * (1 + v)^A, w_rl = w0 * z_max * (1 - A).
UnifiedWeights ComputeUnifiedWeights(double alignment, double reward, const LossConfig& config);

// ---------------------------------------------------------------------------
// Unified objective over a mixed batch.

enum class SampleSource { kVslLog, kRlLog };

struct VslSample {
  Matrix features;  // S x feature_dim
  std::vector<int> target;
  double ecpm_value = 0.0;
  double w_user = 1.0;
  double w_behavior = 1.0;
};

struct RlSample {
  Matrix features;
  CandidateList list;
  double w_user = 1.0;
  double w_behavior = 1.0;
};

struct LossBreakdown {
  double total = 0.0;
  double sid = 0.0;   // summed unweighted component values
  double ecpm = 0.0;
  double mtp = 0.0;
  double rspo = 0.0;
  std::size_t vsl_terms = 0;
  std::size_t rl_terms = 0;
};

// Mean over batch terms of w_VSL * L_VSL + w_RL * L_RSPO. Each VSL-log sample
// is one term with A = 0 (so w_VSL = w0, no RL part). Each candidate i of an
// RL list is one term: L_VSL on y_i and the RSPO term l_i, weighted by the
// unified weights from the current alignment score.
Var UnifiedLoss(Tape& tape, const DecoderModel& model, std::span<const VslSample> vsl,
                std::span<const RlSample> rl, const EcpmBuckets& buckets,
                const LossConfig& config, LossBreakdown* breakdown = nullptr);

// ---------------------------------------------------------------------------

// -ln( sum_{p} exp(z.z_p / tau) / sum_{k in P u N} exp(z.z_k / tau) ).
double InfoNce(std::span<const double> anchor, const std::vector<std::vector<double>>& positives,
               const std::vector<std::vector<double>>& negatives, double tau);
// Differentiable form on 1 x d rows.
Var InfoNce(Var anchor, std::span<const Var> positives, std::span<const Var> negatives,
            double tau);

}  // namespace adgen
