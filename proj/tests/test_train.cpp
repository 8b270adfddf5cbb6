#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>

#include "banet/train.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace banet;
using banet::testing::bitwise_equal;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_model() {
  ModelConfig cfg;
  cfg.backbone.stem_channels = 4;
  cfg.backbone.stage_channels = {4, 4, 6, 6};
  cfg.backbone.reduce_channels = 4;
  cfg.backbone.aspp_out_channels = 4;
  cfg.decoder_channels = 4;
  return cfg;
}

std::vector<Sample> tiny_data(int n) {
  SynthConfig cfg;
  cfg.n_images = n;
  cfg.image_size = 16;
  cfg.axis_min = 0.2;
  return synth_generate(cfg).samples;
}

TrainConfig tiny_train(const fs::path& dir, int epochs) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.batch_size = 2;
  cfg.augmentation.out_size = 16;
  cfg.out_dir = dir;
  return cfg;
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("banet_train_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

// Backward through sum(value * p) leaves exactly `value` in every gradient.
void fill_grads(ParameterStore<double>& params, double value) {
  Tape<double> tape;
  Tensor<double> loss = Tensor<double>::scalar(0.0);
  for (auto& [name, t] : params) {
    const Tensor<double> w = tape.watch(t, name);
    loss = ops::add(loss, ops::sum(ops::mul(w, Tensor<double>(t.shape(), value))));
  }
  tape.backward(loss);
}

}  // namespace

TEST_CASE("poly schedule") {
  CHECK(poly_lr(0, 0.01, 0.9, 100) == doctest::Approx(0.01));
  CHECK(poly_lr(50, 0.01, 0.9, 100) == doctest::Approx(0.01 * std::pow(0.5, 0.9)));
  CHECK(poly_lr(100, 0.01, 0.9, 100) == 0.0);
  double prev = poly_lr(0, 1.0, 0.9, 37);
  for (int i = 1; i <= 37; ++i) {
    const double lr = poly_lr(i, 1.0, 0.9, 37);
    CHECK(lr < prev);
    prev = lr;
  }
  CHECK_THROWS(poly_lr(101, 0.01, 0.9, 100));
  CHECK_THROWS(poly_lr(-1, 0.01, 0.9, 100));
  CHECK(total_iterations(200, 4, 30) == 1500);
  CHECK(total_iterations(5, 2, 3) == 9);
  CHECK(kReferenceBaseLr == 1e-4);
  CHECK(kReferenceMomentum == 0.9);
  CHECK(kReferencePolyPower == 0.9);
}

TEST_CASE("sgd step") {
  Model<double> model = Model<double>::create(tiny_model(), 1);
  const ParameterStore<double> start = model.params.clone();
  OptimizerState<double> opt = OptimizerState<double>::create(model.params);

  SUBCASE("zero momentum is plain gradient descent") {
    opt.momentum = 0.0;
    fill_grads(model.params, 2.0);
    sgd_step(model.params, opt, 0.1);
    for (auto& [name, t] : model.params) {
      const auto before = start.at(name).data();
      for (std::size_t i = 0; i < before.size(); ++i) CHECK(t.data()[i] == before[i] - 0.1 * 2.0);
      CHECK_FALSE(t.has_grad());
    }
  }
  SUBCASE("zero learning rate still fills the velocity") {
    fill_grads(model.params, 0.5);
    sgd_step(model.params, opt, 0.0);
    fill_grads(model.params, 0.5);
    sgd_step(model.params, opt, 0.0);
    for (auto& [name, t] : model.params) {
      CHECK(bitwise_equal(t, start.at(name)));
      for (double v : opt.velocity.at(name).data()) CHECK(v == doctest::Approx(0.9 * 0.5 + 0.5));
    }
  }
  SUBCASE("a parameter without gradient is an error") {
    fill_grads(model.params, 1.0);
    model.params.at("decoder.head.bias").zero_grad();
    CHECK_THROWS_WITH_AS(sgd_step(model.params, opt, 0.1),
                         doctest::Contains("decoder.head.bias"), Error);
  }
}

TEST_CASE("checkpoint files round trip bitwise") {
  TempDir dir("ckpt");
  fs::create_directories(dir.path);
  const Model<float> model = Model<float>::create(tiny_model(), 5);
  save_checkpoint(dir.path / "a.banc", model.params);
  const auto loaded = load_checkpoint<float>(dir.path / "a.banc");
  save_checkpoint(dir.path / "b.banc", loaded);
  CHECK(read_bytes(dir.path / "a.banc") == read_bytes(dir.path / "b.banc"));
  for (const auto& [name, t] : model.params) CHECK(bitwise_equal(t, loaded.at(name)));

  // Values are stored as 32-bit floats, so 64-bit weights come back rounded.
  const Model<double> wide = Model<double>::create(tiny_model(), 5);
  save_checkpoint(dir.path / "d.banc", wide.params);
  const auto narrow = load_checkpoint<double>(dir.path / "d.banc");
  for (const auto& [name, t] : wide.params)
    for (std::size_t i = 0; i < t.numel(); ++i)
      CHECK(narrow.at(name).data()[i] == static_cast<double>(static_cast<float>(t.data()[i])));

  std::ofstream(dir.path / "bad.banc") << "nope";
  CHECK_THROWS_AS(load_checkpoint<double>(dir.path / "bad.banc"), DataError);
  CHECK_THROWS_AS(load_checkpoint<double>(dir.path / "missing.banc"), DataError);
}

TEST_CASE("train step ignores the order of the batch") {
  const auto data = tiny_data(3);
  Model<double> a = Model<double>::create(tiny_model(), 2);
  Model<double> b = Model<double>::create(tiny_model(), 2);
  OptimizerState<double> oa = OptimizerState<double>::create(a.params);
  OptimizerState<double> ob = OptimizerState<double>::create(b.params);
  const std::vector<Sample> reversed(data.rbegin(), data.rend());
  const auto la = train_step(a, oa, data, 0.01, kDefaultLambdas);
  const auto lb = train_step(b, ob, reversed, 0.01, kDefaultLambdas);
  CHECK(la.total_value() == lb.total_value());
  for (const auto& [name, t] : a.params) CHECK(bitwise_equal(t, b.params.at(name)));
}

TEST_CASE("non-finite loss is reported") {
  auto data = tiny_data(2);
  data[0].image.at(0, 0, 3, 3) = std::numeric_limits<float>::quiet_NaN();
  Model<double> model = Model<double>::create(tiny_model(), 2);
  OptimizerState<double> opt = OptimizerState<double>::create(model.params);
  CHECK_THROWS_AS(train_step(model, opt, data, 0.01, kDefaultLambdas), NumericError);
}

TEST_CASE("training runs, logs and is deterministic") {
  const auto data = tiny_data(5);
  TempDir d1("det1"), d2("det2");
  Model<double> m1 = Model<double>::create(tiny_model(), 3);
  Model<double> m2 = Model<double>::create(tiny_model(), 3);
  TrainConfig c2 = tiny_train(d2.path, 2);
  c2.workers = 3;  // parallel augmentation must not change anything
  const TrainResult r1 = train(m1, data, tiny_train(d1.path, 2));
  const TrainResult r2 = train(m2, data, c2);

  REQUIRE(r1.log.size() == 2);
  CHECK(r1.log[1].iter == 6);
  for (const EpochLog& row : r1.log) {
    double total = row.decoder;
    for (int i = 0; i < 4; ++i) total += row.edge[i] + row.seg[i];
    CHECK(row.total == doctest::Approx(total).epsilon(1e-12));
    CHECK(std::isfinite(row.total));
  }
  CHECK(r1.log.back().lr == 0.0);

  for (const char* f : {files::kCheckpoint, files::kLog, files::kOptimizer, files::kState}) {
    CAPTURE(f);
    CHECK(read_bytes(d1.path / f) == read_bytes(d2.path / f));
  }
  std::istringstream log(read_bytes(d1.path / files::kLog));
  std::string line;
  std::getline(log, line);
  CHECK(line == kTrainLogHeader);
  int rows = 0;
  while (std::getline(log, line)) ++rows;
  CHECK(rows == 2);
  CHECK(fs::exists(d1.path / files::kTiming));
}

TEST_CASE("resume matches an uninterrupted run in 32-bit training") {
  const auto data = tiny_data(4);
  TempDir full("full"), cut("cut");
  TrainConfig cfg_full = tiny_train(full.path, 3);
  Model<float> m_full = Model<float>::create(tiny_model(), 4);
  train(m_full, data, cfg_full);

  TrainConfig cfg_cut = tiny_train(cut.path, 3);
  cfg_cut.checkpoint_every = 1;
  struct Stop {};
  Model<float> m_cut = Model<float>::create(tiny_model(), 4);
  CHECK_THROWS_AS(train(m_cut, data, cfg_cut,
                        [](const EpochLog& e) {
                          if (e.epoch == 2) throw Stop{};
                        }),
                  Stop);

  cfg_cut.resume = true;
  Model<float> m_resumed = Model<float>::create(tiny_model(), 99);  // overwritten on load
  const TrainResult r = train(m_resumed, data, cfg_cut);
  CHECK(r.start_epoch == 2);
  CHECK(r.log.size() == 3);
  CHECK(read_bytes(full.path / files::kCheckpoint) == read_bytes(cut.path / files::kCheckpoint));
  CHECK(read_bytes(full.path / files::kLog) == read_bytes(cut.path / files::kLog));
}

TEST_CASE("evaluation and prediction") {
  const auto data = tiny_data(3);
  const Model<double> model = Model<double>::create(tiny_model(), 6);
  CHECK_THROWS_AS(evaluate(model, std::vector<Sample>{}, 16, 3), DataError);
  const auto rows = evaluate(model, data, 16, 3, 0.0);
  REQUIRE(rows.size() == 3);
  for (const EvalRow& row : rows) {
    CHECK(row.report.se == 1.0);
    CHECK(row.report.counts.total() == 16 * 16);
  }
  const Tensor<float> prob = predict_probability(model, data[0].image, 16);
  CHECK(prob.shape() == Shape{1, 1, 16, 16});
  const Tensor<float> big = predict_probability(model, resize_sample(data[0], 24, 3).image, 16);
  CHECK(big.shape() == Shape{1, 1, 24, 24});
  for (float v : big.data()) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
}

TEST_CASE("train config validation") {
  TrainConfig cfg;
  cfg.momentum = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  Model<double> model = Model<double>::create(tiny_model(), 1);
  CHECK_THROWS_AS(train(model, {}, TrainConfig{}), DataError);
}
