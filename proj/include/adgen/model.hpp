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

// Encoder-decoder generator over semantic-ID levels.
//
// A linear context processor maps request features to context states X. The
// decoder runs one step per SID level plus one extra step for the eCPM token.
// Every decoder layer is pre-LN: cross-attention to X, causal self-attention
// over decoder positions, then a GELU feed-forward block.
//
// With trunk_layers K >= 1 the first K layers run on position embeddings
// alone (the token-independent trunk) and the previous-level token enters
// through the gated fuse at layer K. K == 0 injects the token additively at
// the input, which is exactly the vanilla autoregressive decoder.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "adgen/autodiff.hpp"
#include "adgen/tensor.hpp"

namespace adgen {

struct ModelConfig {
  std::size_t feature_dim = 16;
  std::size_t hidden = 16;
  std::size_t ffn_hidden = 32;
  int layers = 3;
  int trunk_layers = 2;
  std::vector<int> level_vocab_sizes = {16, 8, 8};
  int ecpm_buckets = 8;
  std::uint64_t seed = 0;

  std::size_t levels() const { return level_vocab_sizes.size(); }
  // Decoder positions: one per level plus the eCPM step.
  std::size_t positions() const { return level_vocab_sizes.size() + 1; }
  void Validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct DecoderLayerParams {
  Matrix ln_cross_gamma, ln_cross_beta;
  Matrix cross_q, cross_k, cross_v, cross_o;
  Matrix ln_self_gamma, ln_self_beta;
  Matrix self_q, self_k, self_v, self_o;
  Matrix ln_ffn_gamma, ln_ffn_beta;
  Matrix ffn_w1, ffn_b1, ffn_w2, ffn_b2;

  friend bool operator==(const DecoderLayerParams&, const DecoderLayerParams&) = default;
};

struct DecoderModel {
  ModelConfig config;
  Matrix context_w;  // feature_dim x d
  Matrix context_b;  // 1 x d
  Matrix bos;        // 1 x d
  Matrix positions;  // (T + 1) x d
  std::vector<Matrix> token_embeddings;  // level t: V_t x d
  std::vector<DecoderLayerParams> layers;
  Matrix fuse_gate;  // W_g, d x d
  Matrix fuse_out;   // W_f, 2d x d
  std::vector<Matrix> classifiers;  // level t: d x V_t
  Matrix ecpm_classifier;           // d x n_buckets

  // Centered uniform init with half-width 1/sqrt(fan_in); deterministic in
  // config.seed.
  static DecoderModel Init(const ModelConfig& config);

  // Visits every trainable tensor with a stable name, in a fixed order.
  template <class Fn>
  void ForEachParam(Fn&& fn);
  template <class Fn>
  void ForEachParam(Fn&& fn) const;

  std::size_t ParameterCount() const;
  bool AllFinite() const;

  friend bool operator==(const DecoderModel&, const DecoderModel&) = default;
};

// Decoder-layer applications, counted per (position, hypothesis) row.
struct LayerCallCounter {
  std::uint64_t trunk = 0;
  std::uint64_t head = 0;
  std::uint64_t total() const { return trunk + head; }
};

// Differentiable forward outputs for one teacher-forced sequence.
struct ForwardTrace {
  std::vector<Var> head_logits;   // level t: 1 x V_t, from h^(L)_t
  std::vector<Var> trunk_logits;  // level t: 1 x V_t, from m^(K)_t
  Var ecpm_logits;                // 1 x n_buckets, extra step after level T
  Var trunk_states;               // (T + 1) x d
  Var head_states;                // (T + 1) x d
};

// X = features * W_c + b_c.
Var ContextProcess(Tape& tape, const DecoderModel& model, const Matrix& features);
Matrix ContextProcess(const DecoderModel& model, const Matrix& features);

// Fuse(m, s) = W_f [m (.) (W_g s); s], in row-vector form.
Var Fuse(Var m, Var s_prev, Var gate_w, Var out_w);

// One pre-LN decoder layer over all rows of `h` with causal self-attention.
Var DecoderLayer(Tape& tape, const DecoderLayerParams& p, Var h, Var context);

// Vanilla autoregression: h^(0)_t = s_{t-1} + p_t through all L layers.
ForwardTrace VanillaArForward(Tape& tape, const DecoderModel& model, Var context,
                              std::span<const int> tokens, LayerCallCounter* counter = nullptr);

// Late-inject autoregression with `trunk_layers` token-independent layers.
ForwardTrace LazyArForward(Tape& tape, const DecoderModel& model, Var context,
                           std::span<const int> tokens, int trunk_layers,
                           LayerCallCounter* counter = nullptr);

// LazyAR with the model's configured trunk depth.
ForwardTrace Forward(Tape& tape, const DecoderModel& model, Var context,
                     std::span<const int> tokens, LayerCallCounter* counter = nullptr);

// eCPM classifier applied to the final state of the extra step.
Var EcpmHead(Tape& tape, const DecoderModel& model, Var final_state);

// Sequence log-probabilities of several complete SIDs sharing one context,
// computed as one beam batch: the trunk runs once per level, the head once
// per (level, sequence). Counts T*K + T*(L-K)*B layer calls.
std::vector<double> ScoreSequences(const DecoderModel& model, const Matrix& context,
                                   std::span<const std::vector<int>> sequences,
                                   LayerCallCounter* counter = nullptr);

// ---------------------------------------------------------------------------
// Incremental (inference) decoding. Every routine below uses the same row
// kernels as the differentiable path and reproduces its values bit for bit.

// Cross-attention keys/values over X for every layer.
struct CrossKv {
  std::vector<Matrix> keys;
  std::vector<Matrix> values;
  std::size_t bytes() const;
};
CrossKv BuildCrossKv(const DecoderModel& model, const Matrix& context);

// Self-attention keys/values of one hypothesis for layers [K, L).
struct SelfKvCache {
  std::vector<Matrix> keys;    // per head layer, one row per decoded position
  std::vector<Matrix> values;
  std::size_t length = 0;
};
SelfKvCache EmptySelfCache(const DecoderModel& model, int trunk_layers);

// Trunk states m^(K)_t for the first `n_positions` positions (at most T + 1);
// one shared computation per request. Row t does not depend on rows > t.
Matrix TrunkStates(const DecoderModel& model, const CrossKv& kv, int trunk_layers,
                   std::size_t n_positions, LayerCallCounter* counter = nullptr);

// h^(K)_t for one hypothesis: Fuse(m^(K)_t, s_{t-1}) for K >= 1, or
// s_{t-1} + p_t for K == 0. `prev_token` < 0 selects BOS.
Matrix InjectPrevious(const DecoderModel& model, const Matrix& trunk_row, int level,
                      int prev_token, int trunk_layers);

// Runs the head layers [K, L) on one position, appending to `cache`.
Matrix DecodeHeadStep(const DecoderModel& model, Matrix row, const CrossKv& kv,
                      SelfKvCache& cache, int trunk_layers, LayerCallCounter* counter = nullptr);

// Log-probabilities over level `level`'s vocabulary from a final state row.
Matrix LevelLogProbs(const DecoderModel& model, const Matrix& state, int level);
Matrix EcpmLogProbs(const DecoderModel& model, const Matrix& state);

// ---------------------------------------------------------------------------

template <class Fn>
void DecoderModel::ForEachParam(Fn&& fn) {
  fn("context_w", context_w);
  fn("context_b", context_b);
  fn("bos", bos);
  fn("positions", positions);
  for (std::size_t t = 0; t < token_embeddings.size(); ++t) {
    fn("token_embedding." + std::to_string(t), token_embeddings[t]);
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    DecoderLayerParams& L = layers[l];
    fn(p + "ln_cross_gamma", L.ln_cross_gamma);
    fn(p + "ln_cross_beta", L.ln_cross_beta);
    fn(p + "cross_q", L.cross_q);
    fn(p + "cross_k", L.cross_k);
    fn(p + "cross_v", L.cross_v);
    fn(p + "cross_o", L.cross_o);
    fn(p + "ln_self_gamma", L.ln_self_gamma);
    fn(p + "ln_self_beta", L.ln_self_beta);
    fn(p + "self_q", L.self_q);
    fn(p + "self_k", L.self_k);
    fn(p + "self_v", L.self_v);
    fn(p + "self_o", L.self_o);
    fn(p + "ln_ffn_gamma", L.ln_ffn_gamma);
    fn(p + "ln_ffn_beta", L.ln_ffn_beta);
    fn(p + "ffn_w1", L.ffn_w1);
    fn(p + "ffn_b1", L.ffn_b1);
    fn(p + "ffn_w2", L.ffn_w2);
    fn(p + "ffn_b2", L.ffn_b2);
  }
  fn("fuse_gate", fuse_gate);
  fn("fuse_out", fuse_out);
  for (std::size_t t = 0; t < classifiers.size(); ++t) {
    fn("classifier." + std::to_string(t), classifiers[t]);
  }
  fn("ecpm_classifier", ecpm_classifier);
}

template <class Fn>
void DecoderModel::ForEachParam(Fn&& fn) const {
  const_cast<DecoderModel*>(this)->ForEachParam(
      [&fn](const std::string& name, Matrix& m) { fn(name, static_cast<const Matrix&>(m)); });
}

}  // namespace adgen
