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


// File formats: key=value run configs, newline-delimited JSON records,
// JSON artifacts for the quantizer and checkpoints, and CSV reports.

#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "adgen/losses.hpp"
#include "adgen/model.hpp"
#include "adgen/simulation.hpp"
#include "adgen/tokenizer.hpp"

namespace adgen {

// ---------------------------------------------------------------------------
// Run configuration.

using ConfigMap = std::map<std::string, std::string>;

// Lines of `key = value`; '#' starts a comment; blank lines are ignored.
// Throws std::invalid_argument on malformed lines or repeated keys.
ConfigMap ParseConfigText(const std::string& text);
ConfigMap ReadConfigFile(const std::filesystem::path& path);

struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path out = "out";
  std::optional<std::filesystem::path> catalog;     // default: <out>/catalog.jsonl
  std::optional<std::filesystem::path> users;       // default: <out>/users.jsonl
  std::optional<std::filesystem::path> logs;        // default: <out>/interactions.jsonl
  std::optional<std::filesystem::path> quantizer;   // default: <out>/quantizer.json
  std::optional<std::filesystem::path> checkpoint;  // default: <out>/checkpoint.json
  std::optional<std::filesystem::path> resume;      // checkpoint to continue from

  SimConfig sim;
  std::size_t interactions_per_user = 40;  // gen-data exposures per user
  std::size_t train_steps = 100;
  std::size_t ticks = 50;
  std::vector<std::string> quantize_modes = {"fixed", "mr", "mgmr"};
  std::vector<int> fixed_vocab = {10, 10, 10};  // level sizes for the fixed mode
  std::vector<std::string> bench_schedules = {"4,8,16", "16", "64"};
  std::size_t bench_requests = 5;
  std::string inject_fault;  // verify test hook

  std::filesystem::path CatalogPath() const { return catalog.value_or(out / "catalog.jsonl"); }
  std::filesystem::path UsersPath() const { return users.value_or(out / "users.jsonl"); }
  std::filesystem::path LogsPath() const { return logs.value_or(out / "interactions.jsonl"); }
  std::filesystem::path QuantizerPath() const { return quantizer.value_or(out / "quantizer.json"); }
  std::filesystem::path CheckpointPath() const {
    return checkpoint.value_or(out / "checkpoint.json");
  }
};

// Applies every entry of `map`; unknown keys and unparsable values throw
// std::invalid_argument.
void ApplyConfig(const ConfigMap& map, RunConfig& config);
// Keys accepted by ApplyConfig, sorted.
std::vector<std::string> ConfigKeys();

std::vector<int> ParseIntList(const std::string& text);
std::vector<std::string> ParseStringList(const std::string& text, char sep = ';');

// ---------------------------------------------------------------------------
// Newline-delimited records.

struct Interaction {
  UserId user = 0;
  ItemId item = 0;
  double time = 0.0;
  int behavior = 1;  // 1 impression, 2 click, 4 purchase
  double ecpm = 0.0;
};

void WriteCatalog(const std::filesystem::path& path, const Catalog& catalog);
Catalog ReadCatalog(const std::filesystem::path& path);
void WriteUsers(const std::filesystem::path& path, const std::vector<SyntheticUser>& users);
std::vector<SyntheticUser> ReadUsers(const std::filesystem::path& path);
void WriteInteractions(const std::filesystem::path& path, const std::vector<Interaction>& log);
std::vector<Interaction> ReadInteractions(const std::filesystem::path& path);
void WriteRequestLog(const std::filesystem::path& path, const std::vector<RequestRecord>& log);

// ---------------------------------------------------------------------------
// JSON artifacts. Doubles round-trip exactly.

void SaveQuantizer(const std::filesystem::path& path, const QuantizerModel& model);
QuantizerModel LoadQuantizer(const std::filesystem::path& path);

struct Checkpoint {
  DecoderModel model;
  AdamState optimizer;
  EcpmBuckets buckets;
  LossConfig loss;
};

void SaveCheckpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint LoadCheckpoint(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// CSV reports.

void WriteTickCsv(std::ostream& out, const RunReport& report);
// Rows are numbered from `first_step`.
void WriteLossCsv(std::ostream& out, const std::vector<LossBreakdown>& curve,
                  std::uint64_t first_step = 1);
void WriteSummary(std::ostream& out, const RunReport& report);

// Creates parent directories as needed and opens for writing.
std::ofstream OpenForWrite(const std::filesystem::path& path);

}  // namespace adgen
