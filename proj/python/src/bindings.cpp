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


// Python bindings: a thin layer over the C++ modules, taking and returning
// plain lists and dicts.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "adgen/cli.hpp"
#include "adgen/losses.hpp"
#include "adgen/model.hpp"
#include "adgen/serving.hpp"
#include "adgen/simulation.hpp"
#include "adgen/tokenizer.hpp"
#include "adgen/verify.hpp"

namespace py = pybind11;
using namespace adgen;

namespace {

Matrix ToMatrix(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) return Matrix(0, 0);
  Matrix m(rows.size(), rows[0].size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != m.cols()) throw std::invalid_argument("ragged matrix rows");
    for (std::size_t c = 0; c < m.cols(); ++c) m(r, c) = rows[r][c];
  }
  return m;
}

RunConfig MakeRunConfig(const std::map<std::string, std::string>& overrides) {
  RunConfig c;
  ApplyConfig(overrides, c);
  cli::FinalizeRunConfig(c);
  return c;
}

py::dict MetricsDict(const SidMetrics& m) {
  py::dict d;
  d["items"] = m.items;
  d["sids"] = m.sids;
  d["one_on_one_sids"] = m.one_on_one_sids;
  d["cpr"] = m.cpr;
  d["col"] = m.col;
  d["util"] = m.util;
  d["sid_util"] = m.sid_util;
  return d;
}

}  // namespace

PYBIND11_MODULE(_adgen, m) {
  m.doc() = "Generative ad recommender core";

  py::register_exception<DivergenceError>(m, "DivergenceError");

  m.def(
      "topk_precut",
      [](const std::vector<double>& beam_scores, const std::vector<std::vector<double>>& logprobs,
         std::size_t k, bool exhaustive) {
        const Matrix lp = ToMatrix(logprobs);
        const auto e = exhaustive ? TopKExhaustive(beam_scores, lp, k) : TopKPreCut(beam_scores, lp, k);
        std::vector<std::tuple<std::size_t, int, double>> out;
        for (const Expansion& x : e) out.emplace_back(x.beam, x.token, x.score);
        return out;
      },
      py::arg("beam_scores"), py::arg("logprobs"), py::arg("k"), py::arg("exhaustive") = false,
      "Top-k (beam, token, score) expansions ordered by score desc, beam, token.");

  m.def(
      "fit_ecpm_buckets",
      [](const std::vector<double>& values, int n_buckets) {
        const EcpmBuckets b = FitEcpmBuckets(values, n_buckets);
        std::vector<int> tokens;
        for (double v : values) tokens.push_back(DiscretizeEcpm(b, v));
        return py::make_tuple(b.boundaries, b.representatives, tokens);
      },
      py::arg("values"), py::arg("n_buckets"),
      "Equiprobable buckets: (boundaries, representatives, tokens of the fitted values).");

  m.def(
      "rspo_terms",
      [](const std::vector<double>& rewards, const std::vector<double>& policy_logp,
         std::optional<std::vector<double>> ref_logp, double beta, double delta) {
        CandidateList l;
        l.rewards = rewards;
        l.policy_logp = policy_logp;
        l.ref_logp = std::move(ref_logp);
        l.Validate();
        LossConfig c;
        c.beta = beta;
        c.delta = delta;
        return RspoTerms(l, l.policy_logp, c);
      },
      py::arg("rewards"), py::arg("policy_logp"), py::arg("ref_logp") = py::none(),
      py::arg("beta") = 1.0, py::arg("delta") = 0.5,
      "Per-candidate ranking-preference terms; rewards must be non-increasing.");

  m.def(
      "quantize",
      [](const std::vector<std::vector<double>>& embeddings, const std::vector<int>& level_sizes,
         const std::string& mode, std::uint64_t seed) {
        Catalog items;
        for (std::size_t i = 0; i < embeddings.size(); ++i) {
          Item it;
          it.id = i;
          it.embedding = embeddings[i];
          it.non_semantic.account_id = static_cast<std::int64_t>(i);
          items.push_back(std::move(it));
        }
        const QuantizerModel q = FitQuantizer(items, level_sizes, ParseQuantizerMode(mode), seed).model;
        std::vector<std::vector<int>> sids;
        std::vector<std::pair<ItemId, UaSid>> a;
        for (const Item& it : items) {
          UaSid s = EncodeItem(q, it);
          sids.push_back(s.tokens);
          a.emplace_back(it.id, std::move(s));
        }
        return py::make_tuple(sids, MetricsDict(ComputeSidMetrics(a, level_sizes)));
      },
      py::arg("embeddings"), py::arg("level_sizes"), py::arg("mode") = "mgmr", py::arg("seed") = 0,
      "Fits a quantizer; returns (SID token lists, metrics dict). Item i gets account id i.");

  m.def(
      "balanced_kmeans",
      [](const std::vector<std::vector<double>>& points, int k, int max_iters, std::uint64_t seed) {
        const KMeansResult r = BalancedKMeans(ToMatrix(points), k, max_iters, seed);
        return r.assignments;
      },
      py::arg("points"), py::arg("k"), py::arg("max_iters") = 25, py::arg("seed") = 0);

  m.def(
      "beam_search",
      [](const std::map<std::string, std::string>& config,
         const std::vector<std::vector<double>>& features, bool shared_kv, bool precut) {
        const RunConfig c = MakeRunConfig(config);
        const DecoderModel model = DecoderModel::Init(c.sim.model);
        BeamSearchOptions o;
        o.shared_kv = shared_kv;
        o.precut = precut;
        SearchStats st;
        const auto hyps =
            BeamSearch(model, ContextProcess(model, ToMatrix(features)), c.sim.serving.schedule, o, &st);
        std::vector<std::pair<std::vector<int>, double>> out;
        for (const Hypothesis& h : hyps) out.emplace_back(h.tokens, h.score);
        py::dict stats;
        stats["layer_calls"] = st.layer_calls.total();
        stats["trunk_calls"] = st.layer_calls.trunk;
        stats["head_calls"] = st.layer_calls.head;
        stats["kv_builds"] = st.kv_builds;
        stats["hypotheses_per_level"] = st.hypotheses_per_level;
        return py::make_tuple(out, stats);
      },
      py::arg("config"), py::arg("features"), py::arg("shared_kv") = true, py::arg("precut") = true,
      "Beam search with a freshly initialized model built from config keys.");

  m.def(
      "simulate",
      [](std::size_t ticks, const std::map<std::string, std::string>& config) {
        const RunConfig c = MakeRunConfig(config);
        RunReport r;
        {
          py::gil_scoped_release release;
          r = RunOnlineLoop(ticks, c.sim);
        }
        py::dict d;
        d["baseline_ndcg"] = r.baseline_ndcg;
        d["final_ndcg"] = r.final_ndcg;
        d["requests"] = r.requests;
        d["cache_hits"] = r.cache_hits;
        d["cache_hit_rate"] = r.cache_hit_rate();
        d["layer_calls"] = r.layer_calls;
        d["train_steps"] = r.train_steps;
        d["loss_curve"] = r.loss_curve;
        d["published_versions"] = r.published_versions;
        std::vector<double> ndcg;
        std::vector<int> widths;
        for (const TickRecord& t : r.ticks) {
          ndcg.push_back(t.served_ndcg);
          widths.push_back(t.active_width);
        }
        d["tick_ndcg"] = ndcg;
        d["tick_width"] = widths;
        return d;
      },
      py::arg("ticks"), py::arg("config") = std::map<std::string, std::string>{},
      "Closed-loop run; `config` maps run-config keys to string values.");

  m.def(
      "verify",
      [](bool full, std::uint64_t seed, const std::string& fault) {
        verify::SuiteOptions o;
        o.full = full;
        o.learning = full;
        o.seed = seed;
        o.fault = verify::ParseFault(fault);
        std::vector<verify::CheckResult> results;
        {
          py::gil_scoped_release release;
          results = verify::RunSuite(o);
        }
        py::list out;
        for (const auto& r : results) {
          py::dict d;
          d["name"] = r.name;
          d["pass"] = r.pass;
          d["detail"] = r.detail;
          d["seconds"] = r.seconds;
          out.append(d);
        }
        return out;
      },
      py::arg("full") = false, py::arg("seed") = 0, py::arg("fault") = "none");

  m.def(
      "cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code = 0;
        {
          py::gil_scoped_release release;
          code = cli::Run(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs the adgen command; returns (exit code, stdout, stderr).");

  m.def("config_keys", &ConfigKeys);
}
