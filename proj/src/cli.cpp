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


#include "adgen/cli.hpp"

#include <algorithm>
#include <deque>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <random>
#include <unordered_map>

#include "CLI11.hpp"
#include "adgen/serving.hpp"
#include "adgen/simulation.hpp"
#include "adgen/verify.hpp"
#include "json.hpp"

namespace adgen::cli {

namespace fs = std::filesystem;

namespace {

// Random stream numbers; 1-5 belong to the simulation world.
constexpr std::uint64_t kStreamInteractions = 101;
constexpr std::uint64_t kStreamTrainBatches = 102;
constexpr std::uint64_t kStreamBenchContexts = 103;
constexpr std::uint64_t kStreamQuantizer = 5;

Catalog LoadOrGenerateCatalog(const RunConfig& c) {
  if (c.catalog || fs::exists(c.CatalogPath())) return ReadCatalog(c.CatalogPath());
  return GenerateCatalog(c.sim.catalog);
}

void SaveDiagnostic(const fs::path& path, const DecoderModel& model, const EcpmBuckets& buckets,
                    const LossConfig& loss, std::ostream& out) {
  SaveCheckpoint(path, {model, AdamState{}, buckets, loss});
  out << "diagnostic checkpoint (last finite parameters): " << path.string() << "\n";
}

std::string CsvQuote(const std::string& s) {
  return s.find(',') == std::string::npos ? s : "\"" + s + "\"";
}

// Offline training data built from logged exposures.
struct TrainingData {
  std::vector<VslSample> vsl;
  std::vector<RlSample> rl;
};

TrainingData BuildTrainingData(const Catalog& catalog, const std::vector<SyntheticUser>& users,
                               const std::vector<Interaction>& log, const QuantizerModel& q,
                               std::size_t max_list) {
  std::unordered_map<ItemId, UaSid> sid_of;
  for (const Item& item : catalog) sid_of.emplace(item.id, EncodeItem(q, item));
  std::unordered_map<UserId, const SyntheticUser*> user_of;
  for (const SyntheticUser& u : users) user_of.emplace(u.id, &u);

  TrainingData d;
  std::map<UserId, std::map<UaSid, double>> best;  // per user: SID -> best logged eCPM
  for (const Interaction& e : log) {
    auto u = user_of.find(e.user);
    auto s = sid_of.find(e.item);
    if (u == user_of.end() || s == sid_of.end()) {
      throw std::invalid_argument("interaction references unknown user " + std::to_string(e.user) +
                                  " or item " + std::to_string(e.item));
    }
    if (e.behavior >= 2) {
      d.vsl.push_back({UserFeatures(*u->second), s->second.tokens, e.ecpm, u->second->value_tier,
                       static_cast<double>(e.behavior)});
    }
    double& b = best[e.user][s->second];
    b = std::max(b, e.ecpm);
  }
  for (const auto& [user, sids] : best) {
    if (sids.size() < 2) continue;
    std::vector<std::pair<double, UaSid>> ranked;
    for (const auto& [sid, r] : sids) ranked.emplace_back(r, sid);
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    if (ranked.size() > max_list) ranked.resize(max_list);
    RlSample s;
    s.features = UserFeatures(*user_of.at(user));
    s.w_user = user_of.at(user)->value_tier;
    for (const auto& [r, sid] : ranked) {
      s.list.candidates.push_back(sid);
      s.list.rewards.push_back(r);
      s.list.policy_logp.push_back(0.0);  // recomputed by the loss
    }
    d.rl.push_back(std::move(s));
  }
  return d;
}

}  // namespace

void FinalizeRunConfig(RunConfig& config) {
  config.sim.seed = config.seed;
  config.sim.Finalize();
  for (const auto& m : config.quantize_modes) ParseQuantizerMode(m);
  for (const auto& s : config.bench_schedules) ResolveDbw(s, config.sim.sid_vocab.size());
  verify::ParseFault(config.inject_fault);
}

int GenData(const RunConfig& c, std::ostream& out) {
  const SimWorld world = SimWorld::Build(c.sim);
  // Logged exposures come from a legacy policy that shows items in
  // proportion to their reward score.
  std::mt19937_64 rng(DeriveSeed(c.seed, kStreamInteractions));
  std::vector<Interaction> log;
  std::size_t clicks = 0, purchases = 0;
  for (const SyntheticUser& u : world.users) {
    std::vector<double> score;
    for (const Item& item : world.catalog) score.push_back(world.reward.Score(u, item));
    std::discrete_distribution<std::size_t> pick(score.begin(), score.end());
    std::exponential_distribution<double> gap(u.activity_rate);
    double t = 0.0;
    for (std::size_t k = 0; k < c.interactions_per_user; ++k) {
      t += gap(rng);
      const std::size_t i = pick(rng);
      const int behavior = SampleEngagement(c.sim.feedback, u, world.catalog[i], rng);
      clicks += behavior >= 2 ? 1 : 0;
      purchases += behavior == 4 ? 1 : 0;
      log.push_back({u.id, world.catalog[i].id, t, behavior, score[i]});
    }
  }
  std::stable_sort(log.begin(), log.end(),
                   [](const Interaction& a, const Interaction& b) { return a.time < b.time; });
  WriteCatalog(c.CatalogPath(), world.catalog);
  WriteUsers(c.UsersPath(), world.users);
  WriteInteractions(c.LogsPath(), log);
  out << "gen-data: " << world.catalog.size() << " items (" << CountDuplicatedItems(world.catalog)
      << " duplicated), " << world.users.size() << " users, " << log.size() << " interactions ("
      << clicks << " clicks, " << purchases << " purchases) -> " << c.out.string() << "\n";
  return kExitOk;
}

int Quantize(const RunConfig& c, std::ostream& out) {
  const Catalog catalog = LoadOrGenerateCatalog(c);
  std::vector<std::string> modes = c.quantize_modes;
  const std::string selected = ToString(c.sim.quantizer_mode);
  bool has_selected = false;
  for (const auto& m : modes) has_selected |= ParseQuantizerMode(m) == c.sim.quantizer_mode;

  const fs::path csv_path = c.out / "quantizer_metrics.csv";
  std::ofstream csv = OpenForWrite(csv_path);
  csv << "mode,cpr,col,util\n" << std::setprecision(10);
  auto fit = [&](QuantizerMode mode) {
    const std::vector<int>& vocab = mode == QuantizerMode::kFixed ? c.fixed_vocab : c.sim.sid_vocab;
    return FitQuantizer(catalog, vocab, mode, DeriveSeed(c.seed, kStreamQuantizer)).model;
  };
  std::optional<QuantizerModel> chosen;
  for (const auto& name : modes) {
    const QuantizerMode mode = ParseQuantizerMode(name);
    const QuantizerModel q = fit(mode);
    std::vector<std::pair<ItemId, UaSid>> assignments;
    for (const Item& item : catalog) assignments.emplace_back(item.id, EncodeItem(q, item));
    const SidMetrics m = ComputeSidMetrics(assignments, q.level_vocab_sizes);
    csv << ToString(mode) << ',' << m.cpr << ',' << m.col << ',' << m.util << '\n';
    out << "quantize: " << std::left << std::setw(6) << ToString(mode) << " Cpr " << m.cpr
        << "  Col " << m.col << "  Util " << m.util << "\n";
    if (mode == c.sim.quantizer_mode && !chosen) chosen = q;
  }
  if (!has_selected) chosen = fit(c.sim.quantizer_mode);
  SaveQuantizer(c.QuantizerPath(), *chosen);
  out << "quantize: metrics -> " << csv_path.string() << ", " << selected << " quantizer -> "
      << c.QuantizerPath().string() << "\n";
  return kExitOk;
}

int Train(const RunConfig& c, std::ostream& out) {
  const Catalog catalog = ReadCatalog(c.CatalogPath());
  const std::vector<SyntheticUser> users = ReadUsers(c.UsersPath());
  const std::vector<Interaction> log = ReadInteractions(c.LogsPath());
  if (catalog.empty()) throw std::invalid_argument("train: empty catalog");
  const QuantizerModel q =
      c.quantizer || fs::exists(c.QuantizerPath())
          ? LoadQuantizer(c.QuantizerPath())
          : FitQuantizer(catalog, c.sim.sid_vocab, c.sim.quantizer_mode,
                         DeriveSeed(c.seed, kStreamQuantizer))
                .model;
  if (q.dim != catalog.front().embedding.size()) {
    throw std::invalid_argument("train: quantizer dimension does not match the catalog");
  }

  ModelConfig mc = c.sim.model;
  mc.level_vocab_sizes = q.level_vocab_sizes;
  mc.feature_dim = q.dim;

  std::optional<Checkpoint> resumed;
  if (c.resume) {
    resumed = LoadCheckpoint(*c.resume);
    if (resumed->model.config.level_vocab_sizes != mc.level_vocab_sizes ||
        resumed->model.config.feature_dim != mc.feature_dim) {
      throw std::invalid_argument("train: checkpoint does not match the quantizer");
    }
  }
  EcpmBuckets buckets;
  if (resumed) {
    buckets = resumed->buckets;
  } else {
    std::vector<double> values;
    for (const Interaction& e : log) values.push_back(e.ecpm);
    if (values.empty()) throw std::invalid_argument("train: empty interaction log");
    buckets = FitEcpmBuckets(values, mc.ecpm_buckets);
  }
  const TrainingData data = BuildTrainingData(catalog, users, log, q, 8);
  if (data.vsl.empty() && data.rl.empty()) {
    throw std::invalid_argument("train: the log holds no engagements to learn from");
  }

  Trainer trainer(resumed ? resumed->model : DecoderModel::Init(mc), c.sim.loss, c.sim.adam);
  if (resumed) trainer.set_state(resumed->optimizer);
  const std::uint64_t first = trainer.state().step + 1;

  std::vector<LossBreakdown> curve;
  for (std::size_t k = 0; k < c.train_steps; ++k) {
    // Batches depend only on (seed, step) so resumed runs continue the
    // same sequence.
    std::mt19937_64 rng(DeriveSeed(DeriveSeed(c.seed, kStreamTrainBatches), trainer.state().step));
    std::vector<VslSample> vsl;
    std::vector<RlSample> rl;
    for (std::size_t i = 0; i < c.sim.vsl_batch && !data.vsl.empty(); ++i) {
      vsl.push_back(data.vsl[rng() % data.vsl.size()]);
    }
    for (std::size_t i = 0; i < c.sim.rl_batch && !data.rl.empty(); ++i) {
      rl.push_back(data.rl[rng() % data.rl.size()]);
    }
    try {
      curve.push_back(trainer.Step(vsl, rl, buckets));
    } catch (const DivergenceError&) {
      SaveDiagnostic(c.out / "diagnostic_checkpoint.json", trainer.model(), buckets, c.sim.loss, out);
      throw;
    }
  }
  SaveCheckpoint(c.CheckpointPath(), {trainer.model(), trainer.state(), buckets, c.sim.loss});
  const fs::path loss_path = c.out / "loss.csv";
  std::ofstream loss = OpenForWrite(loss_path);
  WriteLossCsv(loss, curve, first);

  out << "train: " << data.vsl.size() << " VSL samples, " << data.rl.size() << " RL lists; steps "
      << first << ".." << trainer.state().step;
  if (!curve.empty()) {
    const LossBreakdown& b = curve.back();
    out << "; last loss " << b.total << " (sid " << b.sid << ", ecpm " << b.ecpm << ", mtp " << b.mtp
        << ", rspo " << b.rspo << ")";
  }
  out << "\ntrain: checkpoint -> " << c.CheckpointPath().string() << ", loss curve -> "
      << loss_path.string() << "\n";
  return kExitOk;
}

int ServeSim(const RunConfig& c, std::ostream& out) {
  SimConfig sim = c.sim;
  sim.keep_request_log = true;
  RunReport r;
  try {
    r = RunOnlineLoop(c.ticks, sim);
  } catch (const DivergenceError& e) {
    const SimWorld world = SimWorld::Build(sim);
    SaveDiagnostic(c.out / "diagnostic_checkpoint.json", *e.last_good(), world.buckets, sim.loss,
                   out);
    throw;
  }
  {
    std::ofstream f = OpenForWrite(c.out / "report.csv");
    WriteTickCsv(f, r);
  }
  WriteRequestLog(c.out / "requests.jsonl", r.request_log);
  {
    std::ofstream f = OpenForWrite(c.out / "requests.csv");
    f << "user,time,snapshot_version,cache_hit,active_width,virtual_latency,layer_calls\n"
      << std::setprecision(10);
    for (const RequestRecord& q : r.request_log) {
      f << q.user << ',' << q.time << ',' << q.snapshot_version << ',' << (q.cache_hit ? 1 : 0)
        << ',' << q.active_width << ',' << q.virtual_latency << ',' << q.layer_calls << '\n';
    }
  }
  {
    std::ofstream f = OpenForWrite(c.out / "loss.csv");
    f << "step,loss\n" << std::setprecision(10);
    for (std::size_t i = 0; i < r.loss_curve.size(); ++i) f << i + 1 << ',' << r.loss_curve[i] << '\n';
  }
  {
    std::ofstream f = OpenForWrite(c.out / "summary.json");
    WriteSummary(f, r);
  }
  out << "serve-sim: " << r.ticks.size() << " ticks, " << r.requests << " requests, cache hit rate "
      << r.cache_hit_rate() << ", " << r.layer_calls << " layer calls, " << r.train_steps
      << " train steps\n"
      << "serve-sim: served NDCG " << r.baseline_ndcg << " -> " << r.final_ndcg << "; reports -> "
      << c.out.string() << "\n";
  return kExitOk;
}

int Bench(const RunConfig& c, std::ostream& out) {
  DecoderModel model = c.resume ? LoadCheckpoint(*c.resume).model : DecoderModel::Init(c.sim.model);
  std::mt19937_64 rng(DeriveSeed(c.seed, kStreamBenchContexts));
  std::vector<Matrix> contexts;
  for (std::size_t i = 0; i < c.bench_requests; ++i) {
    contexts.push_back(ContextProcess(model, RandomUniform(2, model.config.feature_dim, 1.0, rng)));
  }

  const fs::path path = c.out / "bench.csv";
  std::ofstream csv = OpenForWrite(path);
  csv << "decoder,precut,shared_kv,schedule,requests,layer_calls,trunk_calls,head_calls,kv_builds,"
         "kv_peak_bytes,topk_candidates,virtual_latency,identical\n";
  for (const std::string& widths : c.bench_schedules) {
    const BeamSchedule schedule = ResolveDbw(widths, model.config.levels());
    for (const bool lazy : {false, true}) {
      std::vector<std::vector<Hypothesis>> reference;
      for (const bool precut : {false, true}) {
        for (const bool shared : {false, true}) {
          BeamSearchOptions o;
          o.precut = precut;
          o.shared_kv = shared;
          if (!lazy) o.trunk_layers = 0;
          SearchStats total;
          bool identical = true;
          for (std::size_t i = 0; i < contexts.size(); ++i) {
            SearchStats st;
            auto result = BeamSearch(model, contexts[i], schedule, o, &st);
            total.layer_calls.trunk += st.layer_calls.trunk;
            total.layer_calls.head += st.layer_calls.head;
            total.kv_builds += st.kv_builds;
            total.kv_peak_bytes = std::max(total.kv_peak_bytes, st.kv_peak_bytes);
            total.topk_candidates += st.topk_candidates;
            if (reference.size() <= i) {
              reference.push_back(std::move(result));
            } else {
              identical = identical && result.size() == reference[i].size();
              for (std::size_t h = 0; identical && h < result.size(); ++h) {
                identical = result[h].tokens == reference[i][h].tokens &&
                            result[h].score == reference[i][h].score;
              }
            }
          }
          const double latency = static_cast<double>(total.layer_calls.total()) +
                                 kKvBuildCost * static_cast<double>(total.kv_builds);
          csv << (lazy ? "lazyar" : "vanilla") << ',' << (precut ? 1 : 0) << ','
              << (shared ? 1 : 0) << ',' << CsvQuote(widths) << ',' << contexts.size() << ','
              << total.layer_calls.total() << ',' << total.layer_calls.trunk << ','
              << total.layer_calls.head << ',' << total.kv_builds << ',' << total.kv_peak_bytes
              << ',' << total.topk_candidates << ',' << latency << ',' << (identical ? 1 : 0)
              << '\n';
          out << "bench: " << std::left << std::setw(8) << (lazy ? "lazyar" : "vanilla")
              << "precut=" << precut << " shared_kv=" << shared << " schedule=" << std::setw(8)
              << widths << " layer calls " << std::setw(8) << total.layer_calls.total()
              << " kv builds " << std::setw(6) << total.kv_builds << " top-k candidates "
              << total.topk_candidates << "\n";
        }
      }
    }
  }
  out << "bench: -> " << path.string() << "\n";
  return kExitOk;
}

int Verify(const RunConfig& c, bool full, std::ostream& out) {
  verify::SuiteOptions o;
  o.full = full;
  o.learning = full;
  o.seed = c.seed;
  o.fault = verify::ParseFault(c.inject_fault);
  std::size_t failed = 0;
  for (const verify::CheckResult& r : verify::RunSuite(o)) {
    out << verify::FormatResult(r) << std::endl;
    failed += r.pass ? 0 : 1;
  }
  out << (failed == 0 ? "verify: all checks passed" : "verify: " + std::to_string(failed) + " checks FAILED")
      << "\n";
  return failed == 0 ? kExitOk : kExitValidation;
}

int Run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Generative ad recommender: tokenizer, decoder, losses, serving and simulation.",
               "adgen"};
  app.require_subcommand(1);

  std::optional<std::uint64_t> seed;
  std::string config_path;
  std::optional<std::string> out_dir;
  std::vector<std::string> sets;
  bool full = false;
  // Named flags that override config keys.
  std::deque<std::pair<std::string, std::string>> keyed;
  std::vector<std::pair<CLI::Option*, std::size_t>> keyed_opts;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--seed", seed, "Run seed");
    sub->add_option("--config", config_path, "key = value config file");
    sub->add_option("--out", out_dir, "Output directory");
    sub->add_option("--set", sets, "Override a config key (key=value); repeatable");
  };
  auto key_flag = [&](CLI::App* sub, const std::string& flag, const std::string& key,
                      const std::string& help) {
    keyed.emplace_back(key, "");
    keyed_opts.emplace_back(sub->add_option(flag, keyed.back().second, help), keyed.size() - 1);
  };

  CLI::App* gen = app.add_subcommand("gen-data", "Write a synthetic catalog, users and exposure log");
  CLI::App* quant = app.add_subcommand("quantize", "Fit quantizers and write SID metrics");
  CLI::App* train = app.add_subcommand("train", "Train the decoder offline on the exposure log");
  CLI::App* sim = app.add_subcommand("serve-sim", "Run the closed serve/learn/publish loop");
  CLI::App* bench = app.add_subcommand("bench", "Count decoding operations across serving options");
  CLI::App* ver = app.add_subcommand("verify", "Run the property suite");
  for (CLI::App* sub : {gen, quant, train, sim, bench, ver}) common(sub);

  key_flag(gen, "--n-items", "n_items", "Catalog size");
  key_flag(gen, "--n-users", "n_users", "User count");
  key_flag(gen, "--interactions-per-user", "interactions_per_user", "Logged exposures per user");
  key_flag(quant, "--modes", "quantize_modes", "Comma list of fixed, mr, mgmr");
  key_flag(quant, "--mode", "quantizer_mode", "Mode saved as the quantizer artifact");
  key_flag(train, "--steps", "train_steps", "Optimizer steps");
  key_flag(train, "--resume", "resume", "Checkpoint to continue from");
  key_flag(train, "--lr", "lr", "Adam learning rate");
  key_flag(sim, "--ticks", "ticks", "Virtual ticks");
  for (CLI::App* sub : {sim, bench}) {
    key_flag(sub, "--schedule", "schedule", "Beam widths per level, e.g. 4,8,16");
    key_flag(sub, "--shared-kv", "shared_kv", "on/off");
    key_flag(sub, "--precut", "precut", "on/off");
  }
  key_flag(sim, "--tabs-boost", "tabs_boost", "Off-peak beam boost");
  key_flag(sim, "--q-threshold", "q_threshold", "Peak traffic threshold (requests/s)");
  key_flag(sim, "--ttl", "ttl", "Result cache TTL (virtual seconds)");
  key_flag(sim, "--ecpm-rerank", "ecpm_rerank", "on/off");
  key_flag(bench, "--schedules", "bench_schedules", "Semicolon list of schedules");
  key_flag(bench, "--requests", "bench_requests", "Requests per configuration");
  key_flag(bench, "--resume", "resume", "Checkpoint to benchmark");
  key_flag(ver, "--inject-fault", "inject_fault", "Corrupt one component: rspo, gradient, topk");
  ver->add_flag("--full", full, "Full-size suite including closed-loop learning");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    RunConfig config;
    if (!config_path.empty()) ApplyConfig(ReadConfigFile(config_path), config);
    ConfigMap overrides;
    for (const std::string& s : sets) {
      const std::size_t eq = s.find('=');
      if (eq == std::string::npos || eq == 0) {
        throw std::invalid_argument("--set expects key=value, got '" + s + "'");
      }
      overrides[s.substr(0, eq)] = s.substr(eq + 1);
    }
    ApplyConfig(overrides, config);
    overrides.clear();
    for (const auto& [opt, i] : keyed_opts) {
      if (opt->count() > 0) overrides[keyed[i].first] = keyed[i].second;
    }
    if (seed) overrides["seed"] = std::to_string(*seed);
    if (out_dir) overrides["out"] = *out_dir;
    ApplyConfig(overrides, config);
    FinalizeRunConfig(config);

    if (gen->parsed()) return GenData(config, out);
    if (quant->parsed()) return Quantize(config, out);
    if (train->parsed()) return Train(config, out);
    if (sim->parsed()) return ServeSim(config, out);
    if (bench->parsed()) return Bench(config, out);
    return Verify(config, full, out);
  } catch (const DivergenceError& e) {
    err << "error: " << e.what() << " (step " << e.step() << ")\n";
    return kExitRuntime;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace adgen::cli
