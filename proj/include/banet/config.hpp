#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "banet/heads.hpp"
#include "banet/layers.hpp"
#include "banet/train.hpp"

namespace banet {

/// Everything a command needs, resolved from defaults, a key=value file and
/// --set overrides (applied in that order).
struct RunConfig {
  ModelConfig model;
  InitScheme init = InitScheme::he;
  TrainConfig train;
  Precision precision = Precision::f32;
  SynthConfig synth;

  /// Dataset directory (images/, masks/). Empty: generate from synth.*.
  std::filesystem::path data_dir;
  /// The first train_count samples (by id) train, the rest are held out.
  /// 0 trains on everything.
  int train_count = 0;
  double eval_threshold = kDefaultThreshold;
  /// Which samples eval scores: test, train or all.
  std::string eval_split = "test";

  void validate() const;
};

using ConfigPairs = std::vector<std::pair<std::string, std::string>>;

/// Parses `key = value` lines; `#` starts a comment. Errors name the line.
ConfigPairs parse_config_text(std::string_view text);
ConfigPairs read_config_file(const std::filesystem::path& path);
/// "key=value" as given on the command line.
std::pair<std::string, std::string> parse_override(std::string_view text);

/// Applies pairs in order. Unknown keys and malformed values throw
/// ConfigError naming the key.
void apply_config(RunConfig& cfg, const ConfigPairs& pairs);
void set_config_value(RunConfig& cfg, const std::string& key,
                      const std::string& value);

/// Every key with its resolved value, one `key = value` line each, in a
/// fixed order. Feeding the dump back reproduces the config.
std::string dump_config(const RunConfig& cfg);
std::vector<std::string> config_keys();

/// FNV-1a of the dump, as 16 hex digits.
std::string config_hash(const RunConfig& cfg);

/// Creates <root>/<command>-<hash>-<UTC timestamp>[-n] and writes config.txt
/// into it.
std::filesystem::path make_run_dir(const std::filesystem::path& root,
                                   std::string_view command, const RunConfig& cfg);

/// Loads data_dir, or generates the synthetic set when data_dir is empty.
std::vector<Sample> load_samples(const RunConfig& cfg);

/// Splits by train_count. The second list is empty when train_count is 0.
std::pair<std::vector<Sample>, std::vector<Sample>> split_samples(
    const RunConfig& cfg, std::vector<Sample> samples);

}  // namespace banet
