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

#include "adgen/model.hpp"

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

namespace adgen {

void ModelConfig::Validate() const {
  if (feature_dim == 0 || hidden == 0 || ffn_hidden == 0) {
    throw std::invalid_argument("ModelConfig: dimensions must be positive");
  }
  if (layers < 1) throw std::invalid_argument("ModelConfig: need at least one layer");
  if (trunk_layers < 0 || trunk_layers >= layers) {
    throw std::invalid_argument("ModelConfig: trunk_layers must satisfy 0 <= K < L");
  }
  if (level_vocab_sizes.empty()) throw std::invalid_argument("ModelConfig: no SID levels");
  for (int v : level_vocab_sizes) {
    if (v < 1) throw std::invalid_argument("ModelConfig: level vocab sizes must be positive");
  }
  if (ecpm_buckets < 1) throw std::invalid_argument("ModelConfig: ecpm_buckets must be >= 1");
}

namespace {

double InitScale(std::size_t fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); }

Matrix Ones(std::size_t cols) { return Matrix(1, cols, 1.0); }

}  // namespace

DecoderModel DecoderModel::Init(const ModelConfig& config) {
  config.Validate();
  std::mt19937_64 rng(config.seed);
  const std::size_t d = config.hidden;
  const std::size_t f = config.ffn_hidden;
  DecoderModel m;
  m.config = config;
  m.context_w = RandomUniform(config.feature_dim, d, InitScale(config.feature_dim), rng);
  m.context_b = Matrix(1, d);
  m.bos = RandomUniform(1, d, InitScale(d), rng);
  m.positions = RandomUniform(config.positions(), d, InitScale(d), rng);
  for (int v : config.level_vocab_sizes) {
    m.token_embeddings.push_back(RandomUniform(static_cast<std::size_t>(v), d, InitScale(d), rng));
  }
  for (int l = 0; l < config.layers; ++l) {
    DecoderLayerParams p;
    p.ln_cross_gamma = Ones(d);
    p.ln_cross_beta = Matrix(1, d);
    p.cross_q = RandomUniform(d, d, InitScale(d), rng);
    p.cross_k = RandomUniform(d, d, InitScale(d), rng);
    p.cross_v = RandomUniform(d, d, InitScale(d), rng);
    p.cross_o = RandomUniform(d, d, InitScale(d), rng);
    p.ln_self_gamma = Ones(d);
    p.ln_self_beta = Matrix(1, d);
    p.self_q = RandomUniform(d, d, InitScale(d), rng);
    p.self_k = RandomUniform(d, d, InitScale(d), rng);
    p.self_v = RandomUniform(d, d, InitScale(d), rng);
    p.self_o = RandomUniform(d, d, InitScale(d), rng);
    p.ln_ffn_gamma = Ones(d);
    p.ln_ffn_beta = Matrix(1, d);
    p.ffn_w1 = RandomUniform(d, f, InitScale(d), rng);
    p.ffn_b1 = Matrix(1, f);
    p.ffn_w2 = RandomUniform(f, d, InitScale(f), rng);
    p.ffn_b2 = Matrix(1, d);
    m.layers.push_back(std::move(p));
  }
  m.fuse_gate = RandomUniform(d, d, InitScale(d), rng);
  m.fuse_out = RandomUniform(2 * d, d, InitScale(2 * d), rng);
  for (int v : config.level_vocab_sizes) {
    m.classifiers.push_back(RandomUniform(d, static_cast<std::size_t>(v), InitScale(d), rng));
  }
  m.ecpm_classifier =
      RandomUniform(d, static_cast<std::size_t>(config.ecpm_buckets), InitScale(d), rng);
  return m;
}

std::size_t DecoderModel::ParameterCount() const {
  std::size_t n = 0;
  ForEachParam([&n](const std::string&, const Matrix& m) { n += m.size(); });
  return n;
}

bool DecoderModel::AllFinite() const {
  bool ok = true;
  ForEachParam([&ok](const std::string&, const Matrix& m) { ok = ok && m.AllFinite(); });
  return ok;
}

namespace {

void CheckTokens(const DecoderModel& model, std::span<const int> tokens) {
  const auto& sizes = model.config.level_vocab_sizes;
  if (tokens.size() != sizes.size()) {
    throw std::invalid_argument("decoder: expected " + std::to_string(sizes.size()) +
                                " teacher tokens, got " + std::to_string(tokens.size()));
  }
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    if (tokens[t] < 0 || tokens[t] >= sizes[t]) {
      throw std::invalid_argument("decoder: token out of range at level " + std::to_string(t));
    }
  }
}

void CheckContext(const DecoderModel& model, const Matrix& context) {
  if (context.rows() == 0) throw std::invalid_argument("decoder: empty context");
  if (context.cols() != model.config.hidden) {
    throw std::invalid_argument("decoder: context width does not match hidden size");
  }
}

// Rows [bos; e_0(s_1); ...; e_{T-1}(s_T)]: the previous-level token of every
// decoder position, including the eCPM step.
Var PreviousTokenRows(Tape& tape, const DecoderModel& model, std::span<const int> tokens) {
  std::vector<Var> rows;
  rows.reserve(tokens.size() + 1);
  rows.push_back(tape.Param(model.bos));
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    rows.push_back(ad::SliceRows(tape.Param(model.token_embeddings[t]),
                                 static_cast<std::size_t>(tokens[t]), 1));
  }
  return ad::StackRows(rows);
}

ForwardTrace HeadAndClassify(Tape& tape, const DecoderModel& model, Var context, Var h,
                             int first_layer, LayerCallCounter* counter) {
  const std::size_t positions = h.value().rows();
  for (int l = first_layer; l < model.config.layers; ++l) {
    h = DecoderLayer(tape, model.layers[static_cast<std::size_t>(l)], h, context);
    if (counter) counter->head += positions;
  }
  ForwardTrace trace;
  trace.head_states = h;
  const std::size_t T = model.config.levels();
  for (std::size_t t = 0; t < T; ++t) {
    trace.head_logits.push_back(
        ad::MatMul(ad::SliceRows(h, t, 1), tape.Param(model.classifiers[t])));
  }
  trace.ecpm_logits = EcpmHead(tape, model, ad::SliceRows(h, T, 1));
  return trace;
}

}  // namespace

Var ContextProcess(Tape& tape, const DecoderModel& model, const Matrix& features) {
  if (features.rows() == 0 || features.cols() != model.config.feature_dim) {
    throw std::invalid_argument("ContextProcess: feature matrix must be S x feature_dim, S >= 1");
  }
  return ad::AddBias(ad::MatMul(tape.Constant(features), tape.Param(model.context_w)),
                     tape.Param(model.context_b));
}

Matrix ContextProcess(const DecoderModel& model, const Matrix& features) {
  if (features.rows() == 0 || features.cols() != model.config.feature_dim) {
    throw std::invalid_argument("ContextProcess: feature matrix must be S x feature_dim, S >= 1");
  }
  return AddRowBroadcast(MatMul(features, model.context_w), model.context_b);
}

Var Fuse(Var m, Var s_prev, Var gate_w, Var out_w) {
  Var gate = ad::MatMul(s_prev, gate_w);
  return ad::MatMul(ad::ConcatCols(ad::Hadamard(m, gate), s_prev), out_w);
}

Var DecoderLayer(Tape& tape, const DecoderLayerParams& p, Var h, Var context) {
  auto P = [&tape](const Matrix& m) { return tape.Param(m); };
  Var x = ad::LayerNorm(h, P(p.ln_cross_gamma), P(p.ln_cross_beta));
  Var cross = ad::Attention(ad::MatMul(x, P(p.cross_q)), ad::MatMul(context, P(p.cross_k)),
                            ad::MatMul(context, P(p.cross_v)), false);
  Var a = ad::Add(h, ad::MatMul(cross, P(p.cross_o)));

  x = ad::LayerNorm(a, P(p.ln_self_gamma), P(p.ln_self_beta));
  Var self = ad::Attention(ad::MatMul(x, P(p.self_q)), ad::MatMul(x, P(p.self_k)),
                           ad::MatMul(x, P(p.self_v)), true);
  Var b = ad::Add(a, ad::MatMul(self, P(p.self_o)));

  x = ad::LayerNorm(b, P(p.ln_ffn_gamma), P(p.ln_ffn_beta));
  Var f = ad::Gelu(ad::AddBias(ad::MatMul(x, P(p.ffn_w1)), P(p.ffn_b1)));
  return ad::Add(b, ad::AddBias(ad::MatMul(f, P(p.ffn_w2)), P(p.ffn_b2)));
}

ForwardTrace VanillaArForward(Tape& tape, const DecoderModel& model, Var context,
                              std::span<const int> tokens, LayerCallCounter* counter) {
  CheckTokens(model, tokens);
  CheckContext(model, context.value());
  Var h0 = ad::Add(PreviousTokenRows(tape, model, tokens), tape.Param(model.positions));
  return HeadAndClassify(tape, model, context, h0, 0, counter);
}

ForwardTrace LazyArForward(Tape& tape, const DecoderModel& model, Var context,
                           std::span<const int> tokens, int trunk_layers,
                           LayerCallCounter* counter) {
  if (trunk_layers < 0 || trunk_layers >= model.config.layers) {
    throw std::invalid_argument("LazyArForward: trunk_layers must satisfy 0 <= K < L");
  }
  CheckTokens(model, tokens);
  CheckContext(model, context.value());
  const std::size_t positions = model.config.positions();
  Var s_prev = PreviousTokenRows(tape, model, tokens);

  Var m = tape.Param(model.positions);
  for (int l = 0; l < trunk_layers; ++l) {
    m = DecoderLayer(tape, model.layers[static_cast<std::size_t>(l)], m, context);
    if (counter) counter->trunk += positions;
  }
  // K == 0 injects at the input exactly as the vanilla decoder does.
  Var h = trunk_layers == 0
              ? ad::Add(s_prev, m)
              : Fuse(m, s_prev, tape.Param(model.fuse_gate), tape.Param(model.fuse_out));
  ForwardTrace trace = HeadAndClassify(tape, model, context, h, trunk_layers, counter);
  trace.trunk_states = m;
  for (std::size_t t = 0; t < model.config.levels(); ++t) {
    trace.trunk_logits.push_back(
        ad::MatMul(ad::SliceRows(m, t, 1), tape.Param(model.classifiers[t])));
  }
  return trace;
}

ForwardTrace Forward(Tape& tape, const DecoderModel& model, Var context,
                     std::span<const int> tokens, LayerCallCounter* counter) {
  return LazyArForward(tape, model, context, tokens, model.config.trunk_layers, counter);
}

Var EcpmHead(Tape& tape, const DecoderModel& model, Var final_state) {
  return ad::MatMul(final_state, tape.Param(model.ecpm_classifier));
}

// ---------------------------------------------------------------------------
// Incremental path.

namespace {

Matrix CrossSublayer(const DecoderLayerParams& p, const Matrix& h, const Matrix& keys,
                     const Matrix& values) {
  Matrix x = LayerNorm(h, p.ln_cross_gamma, p.ln_cross_beta);
  Matrix attended = Attend(MatMul(x, p.cross_q), keys, values, false);
  return Add(h, MatMul(attended, p.cross_o));
}

Matrix FfnSublayer(const DecoderLayerParams& p, const Matrix& b) {
  Matrix x = LayerNorm(b, p.ln_ffn_gamma, p.ln_ffn_beta);
  Matrix f = Gelu(AddRowBroadcast(MatMul(x, p.ffn_w1), p.ffn_b1));
  return Add(b, AddRowBroadcast(MatMul(f, p.ffn_w2), p.ffn_b2));
}

Matrix RowOf(const Matrix& m, std::size_t r) { return SliceRows(m, r, 1); }

}  // namespace

std::size_t CrossKv::bytes() const {
  std::size_t n = 0;
  for (const Matrix& k : keys) n += k.size();
  for (const Matrix& v : values) n += v.size();
  return n * sizeof(double);
}

CrossKv BuildCrossKv(const DecoderModel& model, const Matrix& context) {
  CheckContext(model, context);
  CrossKv kv;
  kv.keys.reserve(model.layers.size());
  kv.values.reserve(model.layers.size());
  for (const DecoderLayerParams& p : model.layers) {
    kv.keys.push_back(MatMul(context, p.cross_k));
    kv.values.push_back(MatMul(context, p.cross_v));
  }
  return kv;
}

SelfKvCache EmptySelfCache(const DecoderModel& model, int trunk_layers) {
  SelfKvCache cache;
  const std::size_t head_layers = static_cast<std::size_t>(model.config.layers - trunk_layers);
  for (std::size_t i = 0; i < head_layers; ++i) {
    cache.keys.emplace_back(model.config.positions(), model.config.hidden);
    cache.values.emplace_back(model.config.positions(), model.config.hidden);
  }
  return cache;
}

Matrix TrunkStates(const DecoderModel& model, const CrossKv& kv, int trunk_layers,
                   std::size_t n_positions, LayerCallCounter* counter) {
  if (n_positions == 0 || n_positions > model.config.positions()) {
    throw std::invalid_argument("TrunkStates: bad position count");
  }
  Matrix h = SliceRows(model.positions, 0, n_positions);
  for (int l = 0; l < trunk_layers; ++l) {
    const auto li = static_cast<std::size_t>(l);
    const DecoderLayerParams& p = model.layers[li];
    Matrix a = CrossSublayer(p, h, kv.keys[li], kv.values[li]);
    Matrix x = LayerNorm(a, p.ln_self_gamma, p.ln_self_beta);
    Matrix attended =
        Attend(MatMul(x, p.self_q), MatMul(x, p.self_k), MatMul(x, p.self_v), true);
    Matrix b = Add(a, MatMul(attended, p.self_o));
    h = FfnSublayer(p, b);
    if (counter) counter->trunk += n_positions;
  }
  return h;
}

Matrix InjectPrevious(const DecoderModel& model, const Matrix& trunk_row, int level,
                      int prev_token, int trunk_layers) {
  if (level < 0 || static_cast<std::size_t>(level) > model.config.levels()) {
    throw std::invalid_argument("InjectPrevious: level out of range");
  }
  Matrix s_prev;
  if (level == 0) {
    s_prev = model.bos;
  } else {
    const Matrix& table = model.token_embeddings[static_cast<std::size_t>(level - 1)];
    if (prev_token < 0 || static_cast<std::size_t>(prev_token) >= table.rows()) {
      throw std::invalid_argument("InjectPrevious: token out of range");
    }
    s_prev = RowOf(table, static_cast<std::size_t>(prev_token));
  }
  if (trunk_layers == 0) {
    return Add(s_prev, RowOf(model.positions, static_cast<std::size_t>(level)));
  }
  Matrix gate = MatMul(s_prev, model.fuse_gate);
  return MatMul(ConcatCols(Hadamard(trunk_row, gate), s_prev), model.fuse_out);
}

Matrix DecodeHeadStep(const DecoderModel& model, Matrix row, const CrossKv& kv,
                      SelfKvCache& cache, int trunk_layers, LayerCallCounter* counter) {
  const std::size_t pos = cache.length;
  if (pos >= model.config.positions()) throw std::invalid_argument("DecodeHeadStep: cache full");
  std::vector<double> weights(pos + 1);
  for (int l = trunk_layers; l < model.config.layers; ++l) {
    const auto li = static_cast<std::size_t>(l);
    const auto ci = static_cast<std::size_t>(l - trunk_layers);
    const DecoderLayerParams& p = model.layers[li];
    Matrix a = CrossSublayer(p, row, kv.keys[li], kv.values[li]);
    Matrix x = LayerNorm(a, p.ln_self_gamma, p.ln_self_beta);
    Matrix q = MatMul(x, p.self_q);
    Matrix k = MatMul(x, p.self_k);
    Matrix v = MatMul(x, p.self_v);
    std::copy(k.row(0).begin(), k.row(0).end(), cache.keys[ci].row(pos).begin());
    std::copy(v.row(0).begin(), v.row(0).end(), cache.values[ci].row(pos).begin());
    Matrix attended(1, model.config.hidden);
    AttendRow(q.row(0), cache.keys[ci], cache.values[ci], pos + 1, weights, attended.row(0));
    Matrix b = Add(a, MatMul(attended, p.self_o));
    row = FfnSublayer(p, b);
    if (counter) ++counter->head;
  }
  cache.length = pos + 1;
  return row;
}

Matrix LevelLogProbs(const DecoderModel& model, const Matrix& state, int level) {
  return LogSoftmaxRows(MatMul(state, model.classifiers.at(static_cast<std::size_t>(level))));
}

Matrix EcpmLogProbs(const DecoderModel& model, const Matrix& state) {
  return LogSoftmaxRows(MatMul(state, model.ecpm_classifier));
}

std::vector<double> ScoreSequences(const DecoderModel& model, const Matrix& context,
                                   std::span<const std::vector<int>> sequences,
                                   LayerCallCounter* counter) {
  for (const auto& seq : sequences) CheckTokens(model, seq);
  const int K = model.config.trunk_layers;
  const std::size_t T = model.config.levels();
  const CrossKv kv = BuildCrossKv(model, context);
  const Matrix trunk = TrunkStates(model, kv, K, T, counter);
  std::vector<double> scores;
  scores.reserve(sequences.size());
  for (const auto& seq : sequences) {
    SelfKvCache cache = EmptySelfCache(model, K);
    double total = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      const int prev = t == 0 ? -1 : seq[t - 1];
      Matrix row = InjectPrevious(model, RowOf(trunk, t), static_cast<int>(t), prev, K);
      Matrix state = DecodeHeadStep(model, std::move(row), kv, cache, K, counter);
      total += LevelLogProbs(model, state, static_cast<int>(t))(0, static_cast<std::size_t>(seq[t]));
    }
    scores.push_back(total);
  }
  return scores;
}

}  // namespace adgen
