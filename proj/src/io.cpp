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


#include "adgen/io.hpp"

#include <cctype>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace adgen {

using nlohmann::json;

namespace {

std::string Trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

[[noreturn]] void BadValue(const std::string& key, const std::string& value) {
  throw std::invalid_argument("config: bad value for " + key + ": '" + value + "'");
}

std::uint64_t ToUint(const std::string& key, const std::string& v) {
  if (v.empty() || v[0] == '-') BadValue(key, v);
  std::size_t used = 0;
  std::uint64_t x = 0;
  try {
    x = std::stoull(v, &used);
  } catch (const std::exception&) {
    BadValue(key, v);
  }
  if (used != v.size()) BadValue(key, v);
  return x;
}

long long ToInt(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  long long x = 0;
  try {
    x = std::stoll(v, &used);
  } catch (const std::exception&) {
    BadValue(key, v);
  }
  if (used != v.size()) BadValue(key, v);
  return x;
}

double ToDouble(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double x = 0.0;
  try {
    x = std::stod(v, &used);
  } catch (const std::exception&) {
    BadValue(key, v);
  }
  if (used != v.size()) BadValue(key, v);
  return x;
}

bool ToBool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  BadValue(key, v);
}

using Setter = std::function<void(RunConfig&, const std::string& key, const std::string& value)>;

const std::map<std::string, Setter>& Setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> t;
    auto u64 = [&t](const char* name, auto field) {
      t[name] = [field](RunConfig& c, const std::string& k, const std::string& v) {
        field(c) = static_cast<std::remove_reference_t<decltype(field(c))>>(ToUint(k, v));
      };
    };
    auto i32 = [&t](const char* name, auto field) {
      t[name] = [field](RunConfig& c, const std::string& k, const std::string& v) {
        field(c) = static_cast<int>(ToInt(k, v));
      };
    };
    auto f64 = [&t](const char* name, auto field) {
      t[name] = [field](RunConfig& c, const std::string& k, const std::string& v) {
        field(c) = ToDouble(k, v);
      };
    };
    auto flag = [&t](const char* name, auto field) {
      t[name] = [field](RunConfig& c, const std::string& k, const std::string& v) {
        field(c) = ToBool(k, v);
      };
    };
    auto path = [&t](const char* name, auto field) {
      t[name] = [field](RunConfig& c, const std::string&, const std::string& v) {
        field(c) = std::filesystem::path(v);
      };
    };
#define F(expr) [](RunConfig& c) -> auto& { return expr; }
    u64("seed", F(c.seed));
    path("out", F(c.out));
    path("catalog", F(c.catalog));
    path("users", F(c.users));
    path("logs", F(c.logs));
    path("quantizer", F(c.quantizer));
    path("checkpoint", F(c.checkpoint));
    path("resume", F(c.resume));

    u64("n_items", F(c.sim.catalog.items));
    u64("embed_dim", F(c.sim.catalog.dim));
    i32("clusters", F(c.sim.catalog.clusters));
    f64("cluster_spread", F(c.sim.catalog.cluster_spread));
    i32("dup_factor", F(c.sim.catalog.duplication.factor));
    f64("dup_fraction", F(c.sim.catalog.duplication.fraction));
    u64("n_users", F(c.sim.users));
    t["quantizer_mode"] = [](RunConfig& c, const std::string&, const std::string& v) {
      c.sim.quantizer_mode = ParseQuantizerMode(v);
    };
    t["sid_vocab"] = [](RunConfig& c, const std::string&, const std::string& v) {
      c.sim.sid_vocab = ParseIntList(v);
    };

    u64("hidden", F(c.sim.model.hidden));
    u64("ffn_hidden", F(c.sim.model.ffn_hidden));
    i32("layers", F(c.sim.model.layers));
    i32("trunk_layers", F(c.sim.model.trunk_layers));
    i32("ecpm_buckets", F(c.sim.model.ecpm_buckets));

    f64("beta", F(c.sim.loss.beta));
    f64("delta", F(c.sim.loss.delta));
    f64("w0", F(c.sim.loss.w0));
    f64("z_max", F(c.sim.loss.z_max));
    f64("lambda_e", F(c.sim.loss.lambda_e));
    f64("lambda_mtp", F(c.sim.loss.lambda_mtp));

    f64("lr", F(c.sim.adam.lr));
    f64("clip_norm", F(c.sim.adam.clip_norm));
    u64("vsl_batch", F(c.sim.vsl_batch));
    u64("rl_batch", F(c.sim.rl_batch));
    u64("updates_per_tick", F(c.sim.updates_per_tick));
    u64("replay_capacity", F(c.sim.replay_capacity));

    f64("tick_seconds", F(c.sim.tick_seconds));
    t["schedule"] = [](RunConfig& c, const std::string&, const std::string& v) {
      ParseIntList(v);
      c.sim.schedule = v;
    };
    f64("tabs_boost", F(c.sim.serving.tabs_boost));
    f64("q_threshold", F(c.sim.q_threshold));
    f64("capacity_slack", F(c.sim.capacity_slack));
    f64("peak_multiplier", F(c.sim.peak_multiplier));
    f64("offpeak_multiplier", F(c.sim.offpeak_multiplier));
    u64("traffic_period", F(c.sim.traffic_period));
    f64("peak_fraction", F(c.sim.peak_fraction));
    flag("shared_kv", F(c.sim.serving.shared_kv));
    flag("precut", F(c.sim.serving.precut));
    flag("ecpm_rerank", F(c.sim.serving.ecpm_rerank));
    flag("use_cache", F(c.sim.serving.use_cache));
    f64("ttl", F(c.sim.serving.ttl_seconds));

    f64("rl_fraction", F(c.sim.rl_fraction));
    f64("explore_epsilon", F(c.sim.explore_epsilon));
    i32("relaxed_factor", F(c.sim.relaxed_factor));
    u64("reference_interval", F(c.sim.reference_interval));

    u64("interactions_per_user", F(c.interactions_per_user));
    u64("train_steps", F(c.train_steps));
    u64("ticks", F(c.ticks));
    t["quantize_modes"] = [](RunConfig& c, const std::string&, const std::string& v) {
      c.quantize_modes = ParseStringList(v, ',');
      for (const auto& m : c.quantize_modes) ParseQuantizerMode(m);
    };
    t["bench_schedules"] = [](RunConfig& c, const std::string&, const std::string& v) {
      c.bench_schedules = ParseStringList(v, ';');
      for (const auto& s : c.bench_schedules) ParseIntList(s);
    };
    t["fixed_vocab"] = [](RunConfig& c, const std::string&, const std::string& v) {
      c.fixed_vocab = ParseIntList(v);
    };
    u64("bench_requests", F(c.bench_requests));
    t["fault_nan_step"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      c.sim.fault_nan_step = ToInt(k, v);
    };
    t["inject_fault"] = [](RunConfig& c, const std::string&, const std::string& v) {
      c.inject_fault = v;
    };
#undef F
    return t;
  }();
  return table;
}

std::ifstream OpenForRead(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open " + path.string());
  return in;
}

template <class Fn>
void ForEachJsonLine(const std::filesystem::path& path, Fn&& fn) {
  std::ifstream in = OpenForRead(path);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (Trim(line).empty()) continue;
    try {
      fn(json::parse(line));
    } catch (const json::exception& e) {
      throw std::invalid_argument(path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
}

json MatrixToJson(const Matrix& m) {
  return json{{"rows", m.rows()}, {"cols", m.cols()},
              {"data", std::vector<double>(m.data().begin(), m.data().end())}};
}

Matrix MatrixFromJson(const json& j) {
  const auto rows = j.at("rows").get<std::size_t>();
  const auto cols = j.at("cols").get<std::size_t>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (data.size() != rows * cols) throw std::invalid_argument("matrix: data size mismatch");
  Matrix m(rows, cols);
  std::copy(data.begin(), data.end(), m.data().begin());
  return m;
}

}  // namespace

ConfigMap ParseConfigText(const std::string& text) {
  ConfigMap map;
  std::istringstream in(text);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = Trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(n) + ": expected key = value");
    }
    const std::string key = Trim(line.substr(0, eq));
    const std::string value = Trim(line.substr(eq + 1));
    if (key.empty()) throw std::invalid_argument("config line " + std::to_string(n) + ": empty key");
    if (!map.emplace(key, value).second) {
      throw std::invalid_argument("config line " + std::to_string(n) + ": repeated key " + key);
    }
  }
  return map;
}

ConfigMap ReadConfigFile(const std::filesystem::path& path) {
  std::ifstream in = OpenForRead(path);
  std::stringstream buf;
  buf << in.rdbuf();
  return ParseConfigText(buf.str());
}

void ApplyConfig(const ConfigMap& map, RunConfig& config) {
  const auto& setters = Setters();
  for (const auto& [key, value] : map) {
    auto it = setters.find(key);
    if (it == setters.end()) throw std::invalid_argument("config: unknown key " + key);
    it->second(config, key, value);
  }
}

std::vector<std::string> ConfigKeys() {
  std::vector<std::string> keys;
  for (const auto& [k, v] : Setters()) keys.push_back(k);
  return keys;
}

std::vector<int> ParseIntList(const std::string& text) {
  std::vector<int> out;
  std::stringstream in(text);
  std::string part;
  while (std::getline(in, part, ',')) {
    out.push_back(static_cast<int>(ToInt("list", Trim(part))));
  }
  if (out.empty()) throw std::invalid_argument("empty integer list");
  return out;
}

std::vector<std::string> ParseStringList(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::stringstream in(text);
  std::string part;
  while (std::getline(in, part, sep)) {
    part = Trim(part);
    if (!part.empty()) out.push_back(part);
  }
  if (out.empty()) throw std::invalid_argument("empty list");
  return out;
}

// ---------------------------------------------------------------------------

std::ofstream OpenForWrite(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

void WriteCatalog(const std::filesystem::path& path, const Catalog& catalog) {
  std::ofstream out = OpenForWrite(path);
  for (const Item& it : catalog) {
    out << json{{"id", it.id},
                {"embedding", it.embedding},
                {"account_id", it.non_semantic.account_id},
                {"conversion_type", static_cast<int>(it.non_semantic.conversion_type)},
                {"latent_value", it.latent_value}}
               .dump()
        << '\n';
  }
}

Catalog ReadCatalog(const std::filesystem::path& path) {
  Catalog catalog;
  ForEachJsonLine(path, [&](const json& j) {
    Item it;
    it.id = j.at("id").get<ItemId>();
    it.embedding = j.at("embedding").get<std::vector<double>>();
    it.non_semantic.account_id = j.at("account_id").get<std::int64_t>();
    const int ct = j.at("conversion_type").get<int>();
    if (ct < 0 || ct >= kConversionTypeCount) throw std::invalid_argument("bad conversion_type");
    it.non_semantic.conversion_type = static_cast<ConversionType>(ct);
    it.latent_value = j.at("latent_value").get<double>();
    if (!catalog.empty()) ValidateItem(it, catalog.front().embedding.size());
    catalog.push_back(std::move(it));
  });
  if (!catalog.empty()) ValidateItem(catalog.front(), catalog.front().embedding.size());
  for (std::size_t i = 0; i < catalog.size(); ++i) {
    if (catalog[i].id != i) throw std::invalid_argument("catalog ids must be 0..n-1 in order");
  }
  return catalog;
}

void WriteUsers(const std::filesystem::path& path, const std::vector<SyntheticUser>& users) {
  std::ofstream out = OpenForWrite(path);
  for (const SyntheticUser& u : users) {
    out << json{{"id", u.id},
                {"interest", u.interest},
                {"value_tier", u.value_tier},
                {"activity_rate", u.activity_rate}}
               .dump()
        << '\n';
  }
}

std::vector<SyntheticUser> ReadUsers(const std::filesystem::path& path) {
  std::vector<SyntheticUser> users;
  ForEachJsonLine(path, [&](const json& j) {
    SyntheticUser u;
    u.id = j.at("id").get<UserId>();
    u.interest = j.at("interest").get<std::vector<double>>();
    u.value_tier = j.at("value_tier").get<double>();
    u.activity_rate = j.at("activity_rate").get<double>();
    ValidateUser(u);
    users.push_back(std::move(u));
  });
  return users;
}

void WriteInteractions(const std::filesystem::path& path, const std::vector<Interaction>& log) {
  std::ofstream out = OpenForWrite(path);
  for (const Interaction& r : log) {
    out << json{{"user", r.user}, {"item", r.item}, {"time", r.time},
                {"behavior", r.behavior}, {"ecpm", r.ecpm}}
               .dump()
        << '\n';
  }
}

std::vector<Interaction> ReadInteractions(const std::filesystem::path& path) {
  std::vector<Interaction> log;
  ForEachJsonLine(path, [&](const json& j) {
    Interaction r;
    r.user = j.at("user").get<UserId>();
    r.item = j.at("item").get<ItemId>();
    r.time = j.at("time").get<double>();
    r.behavior = j.at("behavior").get<int>();
    r.ecpm = j.at("ecpm").get<double>();
    if (r.behavior != 1 && r.behavior != 2 && r.behavior != 4) {
      throw std::invalid_argument("interaction: behavior must be 1, 2 or 4");
    }
    log.push_back(r);
  });
  return log;
}

void WriteRequestLog(const std::filesystem::path& path, const std::vector<RequestRecord>& log) {
  std::ofstream out = OpenForWrite(path);
  for (const RequestRecord& r : log) {
    json items = json::array();
    for (const auto& [item, score] : r.items) items.push_back({item, score});
    out << json{{"user", r.user},
                {"time", r.time},
                {"snapshot_version", r.snapshot_version},
                {"cache_hit", r.cache_hit},
                {"items", items}}
               .dump()
        << '\n';
  }
}

// ---------------------------------------------------------------------------

void SaveQuantizer(const std::filesystem::path& path, const QuantizerModel& model) {
  json codebooks = json::array();
  for (const Matrix& m : model.level_codebooks) codebooks.push_back(MatrixToJson(m));
  json j{{"format", "adgen-quantizer"},
         {"mode", ToString(model.mode)},
         {"dim", model.dim},
         {"level_vocab_sizes", model.level_vocab_sizes},
         {"codebooks", codebooks},
         {"hash_vocab_size", model.hash_vocab_size},
         {"hash_salt", model.hash_salt}};
  OpenForWrite(path) << j.dump() << '\n';
}

QuantizerModel LoadQuantizer(const std::filesystem::path& path) {
  std::ifstream in = OpenForRead(path);
  try {
    const json j = json::parse(in);
    if (j.at("format") != "adgen-quantizer") throw std::invalid_argument("not a quantizer file");
    QuantizerModel m;
    m.mode = ParseQuantizerMode(j.at("mode").get<std::string>());
    m.dim = j.at("dim").get<std::size_t>();
    m.level_vocab_sizes = j.at("level_vocab_sizes").get<std::vector<int>>();
    for (const json& c : j.at("codebooks")) m.level_codebooks.push_back(MatrixFromJson(c));
    m.hash_vocab_size = j.at("hash_vocab_size").get<int>();
    m.hash_salt = j.at("hash_salt").get<std::uint64_t>();
    return m;
  } catch (const json::exception& e) {
    throw std::invalid_argument(path.string() + ": " + e.what());
  }
}

void SaveCheckpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  const ModelConfig& c = ck.model.config;
  json params = json::object();
  ck.model.ForEachParam([&](const std::string& name, const Matrix& m) { params[name] = MatrixToJson(m); });
  json m = json::array(), v = json::array();
  for (const Matrix& x : ck.optimizer.m) m.push_back(MatrixToJson(x));
  for (const Matrix& x : ck.optimizer.v) v.push_back(MatrixToJson(x));
  json j{{"format", "adgen-checkpoint"},
         {"config",
          {{"feature_dim", c.feature_dim},
           {"hidden", c.hidden},
           {"ffn_hidden", c.ffn_hidden},
           {"layers", c.layers},
           {"trunk_layers", c.trunk_layers},
           {"level_vocab_sizes", c.level_vocab_sizes},
           {"ecpm_buckets", c.ecpm_buckets},
           {"seed", c.seed}}},
         {"params", params},
         {"optimizer", {{"step", ck.optimizer.step}, {"m", m}, {"v", v}}},
         {"buckets",
          {{"boundaries", ck.buckets.boundaries},
           {"representatives", ck.buckets.representatives},
           {"requested_buckets", ck.buckets.requested_buckets}}},
         {"loss",
          {{"beta", ck.loss.beta},
           {"delta", ck.loss.delta},
           {"w0", ck.loss.w0},
           {"z_max", ck.loss.z_max},
           {"lambda_e", ck.loss.lambda_e},
           {"lambda_mtp", ck.loss.lambda_mtp}}}};
  OpenForWrite(path) << j.dump() << '\n';
}

Checkpoint LoadCheckpoint(const std::filesystem::path& path) {
  std::ifstream in = OpenForRead(path);
  try {
    const json j = json::parse(in);
    if (j.at("format") != "adgen-checkpoint") throw std::invalid_argument("not a checkpoint file");
    const json& jc = j.at("config");
    ModelConfig c;
    c.feature_dim = jc.at("feature_dim").get<std::size_t>();
    c.hidden = jc.at("hidden").get<std::size_t>();
    c.ffn_hidden = jc.at("ffn_hidden").get<std::size_t>();
    c.layers = jc.at("layers").get<int>();
    c.trunk_layers = jc.at("trunk_layers").get<int>();
    c.level_vocab_sizes = jc.at("level_vocab_sizes").get<std::vector<int>>();
    c.ecpm_buckets = jc.at("ecpm_buckets").get<int>();
    c.seed = jc.at("seed").get<std::uint64_t>();
    Checkpoint ck;
    ck.model = DecoderModel::Init(c);
    const json& params = j.at("params");
    ck.model.ForEachParam([&](const std::string& name, Matrix& m) {
      Matrix loaded = MatrixFromJson(params.at(name));
      if (loaded.rows() != m.rows() || loaded.cols() != m.cols()) {
        throw std::invalid_argument("checkpoint: shape mismatch for " + name);
      }
      m = std::move(loaded);
    });
    const json& opt = j.at("optimizer");
    ck.optimizer.step = opt.at("step").get<std::uint64_t>();
    for (const json& x : opt.at("m")) ck.optimizer.m.push_back(MatrixFromJson(x));
    for (const json& x : opt.at("v")) ck.optimizer.v.push_back(MatrixFromJson(x));
    const json& b = j.at("buckets");
    ck.buckets.boundaries = b.at("boundaries").get<std::vector<double>>();
    ck.buckets.representatives = b.at("representatives").get<std::vector<double>>();
    ck.buckets.requested_buckets = b.at("requested_buckets").get<int>();
    const json& l = j.at("loss");
    ck.loss.beta = l.at("beta").get<double>();
    ck.loss.delta = l.at("delta").get<double>();
    ck.loss.w0 = l.at("w0").get<double>();
    ck.loss.z_max = l.at("z_max").get<double>();
    ck.loss.lambda_e = l.at("lambda_e").get<double>();
    ck.loss.lambda_mtp = l.at("lambda_mtp").get<double>();
    ck.loss.Validate();
    return ck;
  } catch (const json::exception& e) {
    throw std::invalid_argument(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------

void WriteTickCsv(std::ostream& out, const RunReport& report) {
  out << "tick,time,requests,cache_hits,model_invocations,qps,active_width,served_ndcg,"
         "mean_latency,layer_calls,vsl_logs,rl_logs,loss_total,loss_sid,loss_ecpm,loss_mtp,"
         "loss_rspo,snapshot_version\n";
  out << std::setprecision(10);
  for (const TickRecord& t : report.ticks) {
    out << t.tick << ',' << t.time << ',' << t.requests << ',' << t.cache_hits << ','
        << t.model_invocations << ',' << t.qps << ',' << t.active_width << ',' << t.served_ndcg
        << ',' << t.mean_latency << ',' << t.layer_calls << ',' << t.vsl_logs << ','
        << t.rl_logs << ',' << t.loss.total << ',' << t.loss.sid << ',' << t.loss.ecpm << ','
        << t.loss.mtp << ',' << t.loss.rspo << ',' << t.snapshot_version << '\n';
  }
}

void WriteLossCsv(std::ostream& out, const std::vector<LossBreakdown>& curve,
                  std::uint64_t first_step) {
  out << "step,total,sid,ecpm,mtp,rspo,vsl_terms,rl_terms\n" << std::setprecision(10);
  for (std::size_t i = 0; i < curve.size(); ++i) {
    const LossBreakdown& b = curve[i];
    out << first_step + i << ',' << b.total << ',' << b.sid << ',' << b.ecpm << ',' << b.mtp << ','
        << b.rspo << ',' << b.vsl_terms << ',' << b.rl_terms << '\n';
  }
}

void WriteSummary(std::ostream& out, const RunReport& report) {
  json j{{"requests", report.requests},
         {"cache_hits", report.cache_hits},
         {"cache_hit_rate", report.cache_hit_rate()},
         {"layer_calls", report.layer_calls},
         {"train_steps", report.train_steps},
         {"baseline_ndcg", report.baseline_ndcg},
         {"final_ndcg", report.final_ndcg},
         {"snapshots_published", report.published_versions.size()},
         {"sid_cpr", report.sid_metrics.cpr},
         {"sid_col", report.sid_metrics.col},
         {"sid_util", report.sid_metrics.util}};
  out << j.dump(2) << '\n';
}

}  // namespace adgen
