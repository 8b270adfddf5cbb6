#include "banet/config.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <functional>
#include <sstream>
#include <type_traits>

#include "banet/data.hpp"

namespace banet {
namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value,
                            std::string_view expected) {
  throw ConfigError("bad value '" + value + "' for key '" + key + "' (expected " +
                    std::string(expected) + ")");
}

template <typename I>
I parse_integer(const std::string& key, const std::string& value) {
  I out{};
  const char* end = value.data() + value.size();
  auto [p, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || p != end) bad_value(key, value, "an integer");
  return out;
}

double parse_double(const std::string& key, const std::string& value) {
  double out = 0.0;
  const char* end = value.data() + value.size();
  auto [p, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || p != end) bad_value(key, value, "a number");
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  bad_value(key, value, "true or false");
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::string_view rest = value;
  while (true) {
    const auto comma = rest.find(',');
    out.emplace_back(trim(rest.substr(0, comma)));
    if (comma == std::string_view::npos) break;
    rest.remove_prefix(comma + 1);
  }
  return out;
}

std::vector<int> parse_int_list(const std::string& key, const std::string& value) {
  std::vector<int> out;
  for (const std::string& item : split_list(value)) {
    out.push_back(parse_integer<int>(key, item));
  }
  return out;
}

template <std::size_t N>
std::array<int, N> parse_int_array(const std::string& key, const std::string& value) {
  const std::vector<int> v = parse_int_list(key, value);
  if (v.size() != N) {
    bad_value(key, value, std::to_string(N) + " comma-separated integers");
  }
  std::array<int, N> out{};
  std::copy(v.begin(), v.end(), out.begin());
  return out;
}

// Shortest %g form that reads back to the same double.
// Shortest form that reads back to the same double.
std::string fmt_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

template <typename Range>
std::string join(const Range& r) {
  std::string out;
  for (const auto& v : r) {
    if (!out.empty()) out += ',';
    if constexpr (std::is_floating_point_v<std::decay_t<decltype(v)>>) {
      out += fmt_double(v);
    } else {
      out += std::to_string(v);
    }
  }
  return out;
}

std::string fmt_bool(bool b) { return b ? "true" : "false"; }

struct Key {
  std::string name;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
};

#define BANET_INT(key_name, field)                                              \
  Key {                                                                         \
    key_name, [](const RunConfig& c) { return std::to_string(c.field); },       \
        [](RunConfig& c, const std::string& k, const std::string& v) {          \
          c.field = parse_integer<std::decay_t<decltype(c.field)>>(k, v);       \
        }                                                                       \
  }
#define BANET_DOUBLE(key_name, field)                                           \
  Key {                                                                         \
    key_name, [](const RunConfig& c) { return fmt_double(c.field); },           \
        [](RunConfig& c, const std::string& k, const std::string& v) {          \
          c.field = parse_double(k, v);                                         \
        }                                                                       \
  }
#define BANET_BOOL(key_name, field)                                             \
  Key {                                                                         \
    key_name, [](const RunConfig& c) { return fmt_bool(c.field); },             \
        [](RunConfig& c, const std::string& k, const std::string& v) {          \
          c.field = parse_bool(k, v);                                           \
        }                                                                       \
  }
#define BANET_INT4(key_name, field)                                             \
  Key {                                                                         \
    key_name, [](const RunConfig& c) { return join(c.field); },                 \
        [](RunConfig& c, const std::string& k, const std::string& v) {          \
          c.field = parse_int_array<4>(k, v);                                   \
        }                                                                       \
  }

Key pee_key(int stage) {
  return Key{"pee.stage" + std::to_string(stage + 1),
             [stage](const RunConfig& c) { return join(c.model.pee.pool_sizes[stage]); },
             [stage](RunConfig& c, const std::string& k, const std::string& v) {
               c.model.pee.pool_sizes[stage] = parse_int_list(k, v);
             }};
}

const std::vector<Key>& key_table() {
  static const std::vector<Key> table = [] {
    std::vector<Key> t = {
        BANET_INT("backbone.stem_channels", model.backbone.stem_channels),
        BANET_INT4("backbone.stage_channels", model.backbone.stage_channels),
        BANET_INT4("backbone.blocks_per_stage", model.backbone.blocks_per_stage),
        BANET_INT("backbone.reduce_channels", model.backbone.reduce_channels),
        BANET_INT4("aspp.rates", model.backbone.aspp_rates),
        BANET_INT("aspp.out_channels", model.backbone.aspp_out_channels),
        BANET_BOOL("model.pee", model.ablation.pee),
        BANET_BOOL("model.mtl", model.ablation.mtl),
        BANET_BOOL("model.cff", model.ablation.cff),
        BANET_BOOL("model.ia", model.ablation.ia),
        BANET_INT("model.decoder_channels", model.decoder_channels),
        Key{"model.init",
            [](const RunConfig& c) { return std::string(to_string(c.init)); },
            [](RunConfig& c, const std::string&, const std::string& v) {
              c.init = parse_init_scheme(v);
            }},
    };
    for (int s = 0; s < 4; ++s) t.push_back(pee_key(s));
    const std::vector<Key> rest = {
        BANET_INT("train.epochs", train.epochs),
        BANET_INT("train.batch_size", train.batch_size),
        BANET_INT("train.seed", train.seed),
        BANET_INT("train.init_seed", train.init_seed),
        BANET_DOUBLE("train.lr", train.base_lr),
        BANET_DOUBLE("train.momentum", train.momentum),
        BANET_DOUBLE("train.poly_power", train.poly_power),
        Key{"train.lambdas",
            [](const RunConfig& c) { return join(c.train.lambdas); },
            [](RunConfig& c, const std::string& k, const std::string& v) {
              const std::vector<std::string> items = split_list(v);
              if (items.size() != 4) bad_value(k, v, "4 comma-separated numbers");
              for (int i = 0; i < 4; ++i) c.train.lambdas[i] = parse_double(k, items[i]);
            }},
        BANET_INT("train.checkpoint_every", train.checkpoint_every),
        BANET_INT("train.workers", train.workers),
        Key{"train.precision",
            [](const RunConfig& c) { return std::string(to_string(c.precision)); },
            [](RunConfig& c, const std::string& k, const std::string& v) {
              try {
                c.precision = parse_precision(v);
              } catch (const Error&) {
                bad_value(k, v, "f32 or f64");
              }
            }},
        BANET_BOOL("train.augment", train.augment),
        Key{"data.dir", [](const RunConfig& c) { return c.data_dir.string(); },
            [](RunConfig& c, const std::string&, const std::string& v) {
              c.data_dir = v;
            }},
        BANET_INT("data.train_count", train_count),
        BANET_INT("data.out_size", train.augmentation.out_size),
        BANET_INT("data.edge_width", train.augmentation.edge_width),
        BANET_DOUBLE("data.flip_h_prob", train.augmentation.flip_h_prob),
        BANET_DOUBLE("data.flip_v_prob", train.augmentation.flip_v_prob),
        BANET_DOUBLE("data.rot_min_deg", train.augmentation.rot_min_deg),
        BANET_DOUBLE("data.rot_max_deg", train.augmentation.rot_max_deg),
        BANET_DOUBLE("data.crop_min", train.augmentation.crop_min),
        BANET_DOUBLE("data.crop_max", train.augmentation.crop_max),
        BANET_INT("synth.n_images", synth.n_images),
        BANET_INT("synth.image_size", synth.image_size),
        BANET_DOUBLE("synth.axis_min", synth.axis_min),
        BANET_DOUBLE("synth.axis_max", synth.axis_max),
        BANET_DOUBLE("synth.contrast", synth.contrast),
        BANET_DOUBLE("synth.noise_sigma", synth.noise_sigma),
        BANET_DOUBLE("synth.irregularity", synth.irregularity),
        BANET_INT("synth.polarity", synth.polarity),
        BANET_INT("synth.edge_width", synth.edge_width),
        BANET_INT("synth.seed", synth.seed),
        BANET_DOUBLE("eval.threshold", eval_threshold),
        Key{"eval.split", [](const RunConfig& c) { return c.eval_split; },
            [](RunConfig& c, const std::string&, const std::string& v) {
              c.eval_split = v;
            }},
    };
    t.insert(t.end(), rest.begin(), rest.end());
    return t;
  }();
  return table;
}

#undef BANET_INT
#undef BANET_DOUBLE
#undef BANET_BOOL
#undef BANET_INT4

}  // namespace

void RunConfig::validate() const {
  model.validate();
  train.validate();
  synth.validate();
  if (train_count < 0) throw ConfigError("data.train_count must be >= 0");
  if (!(eval_threshold >= 0.0 && eval_threshold <= 1.0)) {
    throw ConfigError("eval.threshold must lie in [0,1]");
  }
  if (eval_split != "test" && eval_split != "train" && eval_split != "all") {
    throw ConfigError("eval.split must be test, train or all");
  }
}

ConfigPairs parse_config_text(std::string_view text) {
  ConfigPairs out;
  int line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) {
      line = line.substr(0, hash);
    }
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": expected key = value, got '" + std::string(line) + "'");
    }
    const std::string key(trim(line.substr(0, eq)));
    if (key.empty()) {
      throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
    }
    out.emplace_back(key, std::string(trim(line.substr(eq + 1))));
  }
  return out;
}

ConfigPairs read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

std::pair<std::string, std::string> parse_override(std::string_view text) {
  const auto eq = text.find('=');
  if (eq == std::string_view::npos || trim(text.substr(0, eq)).empty()) {
    throw ConfigError("--set expects key=value, got '" + std::string(text) + "'");
  }
  return {std::string(trim(text.substr(0, eq))),
          std::string(trim(text.substr(eq + 1)))};
}

void set_config_value(RunConfig& cfg, const std::string& key,
                      const std::string& value) {
  for (const Key& k : key_table()) {
    if (k.name == key) {
      k.set(cfg, key, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

void apply_config(RunConfig& cfg, const ConfigPairs& pairs) {
  for (const auto& [key, value] : pairs) set_config_value(cfg, key, value);
}

std::string dump_config(const RunConfig& cfg) {
  std::string out;
  for (const Key& k : key_table()) out += k.name + " = " + k.get(cfg) + "\n";
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const Key& k : key_table()) out.push_back(k.name);
  return out;
}

std::string config_hash(const RunConfig& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : dump_config(cfg)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::filesystem::path make_run_dir(const std::filesystem::path& root,
                                   std::string_view command, const RunConfig& cfg) {
  const std::time_t now =
      std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof(stamp), "%Y%m%dT%H%M%SZ", &tm);
  const std::string base =
      std::string(command) + "-" + config_hash(cfg) + "-" + stamp;
  std::filesystem::create_directories(root);
  std::filesystem::path dir = root / base;
  for (int n = 1; !std::filesystem::create_directory(dir); ++n) {
    dir = root / (base + "-" + std::to_string(n));
  }
  std::ofstream(dir / "config.txt") << dump_config(cfg);
  return dir;
}

std::vector<Sample> load_samples(const RunConfig& cfg) {
  if (cfg.data_dir.empty()) return synth_generate(cfg.synth).samples;
  return load_dataset(cfg.data_dir, cfg.train.augmentation.edge_width);
}

std::pair<std::vector<Sample>, std::vector<Sample>> split_samples(
    const RunConfig& cfg, std::vector<Sample> samples) {
  if (cfg.train_count == 0) return {std::move(samples), {}};
  if (static_cast<std::size_t>(cfg.train_count) > samples.size()) {
    throw DataError("data.train_count = " + std::to_string(cfg.train_count) +
                    " exceeds the " + std::to_string(samples.size()) +
                    " available samples");
  }
  std::vector<Sample> test(samples.begin() + cfg.train_count, samples.end());
  samples.resize(static_cast<std::size_t>(cfg.train_count));
  return {std::move(samples), std::move(test)};
}

}  // namespace banet
