// banet: synth | train | eval | predict | verify

#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "banet/config.hpp"
#include "banet/verify.hpp"

namespace fs = std::filesystem;
using namespace banet;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3, kVerify = 4 };

struct Common {
  std::string config_file;
  std::vector<std::string> sets;
  std::string runs_dir = "runs";
};

RunConfig resolve(const Common& c, const fs::path& base_file = {}) {
  RunConfig cfg;
  if (!base_file.empty()) apply_config(cfg, read_config_file(base_file));
  if (!c.config_file.empty()) apply_config(cfg, read_config_file(c.config_file));
  for (const std::string& s : c.sets) {
    const auto [k, v] = parse_override(s);
    set_config_value(cfg, k, v);
  }
  cfg.validate();
  return cfg;
}

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config_file, "key = value config file");
  cmd->add_option("--set", c.sets, "override one key (key=value), repeatable");
  cmd->add_option("--runs-dir", c.runs_dir, "parent of the run directories")
      ->capture_default_str();
}

template <typename T>
Model<T> load_model(const RunConfig& cfg, const fs::path& checkpoint) {
  Model<T> model = Model<T>::create(cfg.model, cfg.train.init_seed, cfg.init);
  model.params.assign_from(load_checkpoint<T>(checkpoint));
  return model;
}

const std::vector<Sample>& pick_split(const RunConfig& cfg,
                                      const std::vector<Sample>& all,
                                      const std::vector<Sample>& train,
                                      const std::vector<Sample>& test) {
  if (cfg.eval_split == "all") return all;
  if (cfg.eval_split == "train") return train;
  if (cfg.train_count == 0) {
    throw ConfigError("eval.split = test needs data.train_count > 0");
  }
  return test;
}

template <typename T>
MeanReport write_eval(const Model<T>& model, const std::vector<Sample>& samples,
                      const RunConfig& cfg, const fs::path& csv) {
  const auto rows = evaluate(model, samples, cfg.train.augmentation.out_size,
                             cfg.train.augmentation.edge_width, cfg.eval_threshold);
  std::ofstream out(csv);
  write_metrics_csv(out, rows);
  if (!out) throw DataError("cannot write " + csv.string());
  return mean_report(rows);
}

void print_mean(const char* label, const MeanReport& m) {
  std::printf("%s DI %.4f JA %.4f AC %.4f SE %.4f SP %.4f\n", label, m.di, m.ja, m.ac,
              m.se, m.sp);
}

int cmd_synth(const Common& c) {
  const RunConfig cfg = resolve(c);
  const fs::path dir = make_run_dir(c.runs_dir, "synth", cfg);
  write_dataset(dir / "dataset", synth_generate(cfg.synth));
  std::printf("%s\n", (dir / "dataset").string().c_str());
  return kOk;
}

template <typename T>
int run_train(const RunConfig& cfg, const fs::path& dir) {
  auto [train_set, test_set] = split_samples(cfg, load_samples(cfg));
  TrainConfig tc = cfg.train;
  tc.out_dir = dir;
  Model<T> model = Model<T>::create(cfg.model, tc.init_seed, cfg.init);
  const TrainResult r = train(model, train_set, tc, [](const EpochLog& e) {
    std::printf("epoch %d iter %lld lr %.3g total %.5f decoder %.5f\n", e.epoch,
                static_cast<long long>(e.iter), e.lr, e.total, e.decoder);
    std::fflush(stdout);
  });
  if (!test_set.empty()) {
    print_mean("held-out", write_eval(model, test_set, cfg, dir / "metrics_test.csv"));
  }
  std::printf("%s\n", dir.string().c_str());
  return kOk;
}

int cmd_train(const Common& c, const std::string& resume_dir) {
  RunConfig cfg;
  fs::path dir;
  if (!resume_dir.empty()) {
    dir = resume_dir;
    if (!fs::exists(dir / "config.txt")) {
      throw DataError("no config.txt in run directory " + dir.string());
    }
    cfg = resolve(c, dir / "config.txt");
    cfg.train.resume = true;
    std::ofstream(dir / "config.txt") << dump_config(cfg);
  } else {
    cfg = resolve(c);
    dir = make_run_dir(c.runs_dir, "train", cfg);
  }
  return cfg.precision == Precision::f64 ? run_train<double>(cfg, dir)
                                          : run_train<float>(cfg, dir);
}

template <typename T>
int run_eval(const RunConfig& cfg, const fs::path& checkpoint, const fs::path& dir) {
  const Model<T> model = load_model<T>(cfg, checkpoint);
  const std::vector<Sample> all = load_samples(cfg);
  const auto [train_set, test_set] = split_samples(cfg, all);
  const auto& samples = pick_split(cfg, all, train_set, test_set);
  if (samples.empty()) throw DataError("nothing to evaluate: the split is empty");
  print_mean("MEAN", write_eval(model, samples, cfg, dir / "metrics.csv"));
  std::printf("%s\n", (dir / "metrics.csv").string().c_str());
  return kOk;
}

int cmd_eval(const Common& c, const std::string& checkpoint) {
  const RunConfig cfg = resolve(c);
  const fs::path dir = make_run_dir(c.runs_dir, "eval", cfg);
  return cfg.precision == Precision::f64 ? run_eval<double>(cfg, checkpoint, dir)
                                          : run_eval<float>(cfg, checkpoint, dir);
}

template <typename T>
int run_predict(const RunConfig& cfg, const fs::path& checkpoint, const fs::path& image,
                bool write_prob, const fs::path& dir) {
  const Model<T> model = load_model<T>(cfg, checkpoint);
  const Tensor<float> prob =
      predict_probability(model, read_ppm(image), cfg.train.augmentation.out_size);
  Tensor<float> mask(prob.shape());
  for (std::size_t i = 0; i < prob.numel(); ++i) {
    mask.mutable_data()[i] = prob.data()[i] >= cfg.eval_threshold ? 1.0f : 0.0f;
  }
  const fs::path out = dir / (image.stem().string() + "_mask.pgm");
  save_mask(mask, out);
  if (write_prob) save_grey(prob, dir / (image.stem().string() + "_prob.pgm"));
  std::printf("%s\n", out.string().c_str());
  return kOk;
}

int cmd_predict(const Common& c, const std::string& checkpoint, const std::string& image,
                bool write_prob) {
  const RunConfig cfg = resolve(c);
  const fs::path dir = make_run_dir(c.runs_dir, "predict", cfg);
  return cfg.precision == Precision::f64
             ? run_predict<double>(cfg, checkpoint, image, write_prob, dir)
             : run_predict<float>(cfg, checkpoint, image, write_prob, dir);
}

int cmd_verify(const Common& c, std::uint64_t seed) {
  const RunConfig cfg = resolve(c);
  const fs::path dir = make_run_dir(c.runs_dir, "verify", cfg);
  const auto suites = verify::run_all(seed);
  std::ofstream report(dir / "verify.txt");
  verify::print_report(report, suites);
  const bool ok = verify::print_report(std::cout, suites);
  std::printf("%s\n", ok ? "all checks passed" : "verification FAILED");
  return ok ? kOk : kVerify;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"BA-Net boundary-aware segmentation"};
  app.require_subcommand(1);
  Common common;

  auto* synth = app.add_subcommand("synth", "generate the synthetic lesion dataset");
  add_common(synth, common);

  std::string resume;
  auto* train = app.add_subcommand("train", "train a model");
  add_common(train, common);
  train->add_option("--resume", resume, "continue the run in this directory");

  std::string checkpoint;
  auto* eval = app.add_subcommand("eval", "score a checkpoint, write metrics.csv");
  add_common(eval, common);
  eval->add_option("--checkpoint", checkpoint, "checkpoint.banc")->required();

  std::string image;
  bool write_prob = false;
  auto* predict = app.add_subcommand("predict", "segment one PPM image");
  add_common(predict, common);
  predict->add_option("--checkpoint", checkpoint, "checkpoint.banc")->required();
  predict->add_option("--image", image, "input .ppm")->required();
  predict->add_flag("--prob", write_prob, "also write the probability map");

  std::uint64_t seed = 1;
  auto* verify_cmd = app.add_subcommand("verify", "gradient checks and invariant suites");
  add_common(verify_cmd, common);
  verify_cmd->add_option("--seed", seed, "seed for the random instances")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*synth) return cmd_synth(common);
    if (*train) return cmd_train(common, resume);
    if (*eval) return cmd_eval(common, checkpoint);
    if (*predict) return cmd_predict(common, checkpoint, image, write_prob);
    if (*verify_cmd) return cmd_verify(common, seed);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kUsage;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return kNumeric;
  } catch (const ShapeError& e) {
    std::fprintf(stderr, "shape error: %s\n", e.what());
    return kUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kData;
  }
  return kUsage;
}
