#include "banet/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <thread>

namespace banet {

template <typename T>
OptimizerState<T> OptimizerState<T>::create(const ParameterStore<T>& params) {
  OptimizerState s;
  for (const auto& [name, p] : params) s.velocity.add(name, Tensor<T>(p.shape()));
  return s;
}

double poly_lr(std::int64_t iter, double base_lr, double power,
               std::int64_t total_iters) {
  if (total_iters <= 0) throw Error("poly_lr: total_iters must be positive");
  if (iter < 0 || iter > total_iters) {
    throw Error("poly_lr: iteration " + std::to_string(iter) + " outside [0, " +
                std::to_string(total_iters) + "]");
  }
  const double remaining =
      1.0 - static_cast<double>(iter) / static_cast<double>(total_iters);
  return base_lr * std::pow(remaining, power);
}

template <typename T>
void sgd_step(ParameterStore<T>& params, OptimizerState<T>& state, double lr) {
  for (auto& [name, p] : params) {
    if (!p.has_grad()) {
      throw Error("sgd_step: parameter '" + name + "' has no gradient");
    }
  }
  const T momentum = static_cast<T>(state.momentum);
  const T step = static_cast<T>(lr);
  for (auto& [name, p] : params) {
    auto v = state.velocity.at(name).mutable_data();
    const auto g = p.grad();
    auto w = p.mutable_data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      v[i] = momentum * v[i] + g[i];
      w[i] -= step * v[i];
    }
    p.zero_grad();
  }
}

std::int64_t total_iterations(std::size_t dataset_size, int batch_size, int epochs) {
  const std::int64_t per_epoch =
      (static_cast<std::int64_t>(dataset_size) + batch_size - 1) / batch_size;
  return per_epoch * epochs;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (!(base_lr >= 0.0)) throw ConfigError("train.lr must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw ConfigError("train.momentum must lie in [0,1)");
  }
  if (!(poly_power > 0.0)) throw ConfigError("train.poly_power must be positive");
  if (checkpoint_every < 0) throw ConfigError("train.checkpoint_every must be >= 0");
  if (workers < 1) throw ConfigError("train.workers must be >= 1");
  augmentation.validate();
}

std::string format_log_row(const EpochLog& r) {
  std::string out;
  char buf[64];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof(buf), ",%.17g", v);
    out += buf;
  };
  out = std::to_string(r.epoch) + "," + std::to_string(r.iter);
  put(r.lr);
  put(r.decoder);
  for (double v : r.edge) put(v);
  for (double v : r.seg) put(v);
  put(r.total);
  return out;
}

template <typename T>
LossBreakdown<T> train_step(Model<T>& model, OptimizerState<T>& opt,
                            std::span<const Sample> samples, double lr,
                            const std::array<double, 4>& lambdas) {
  std::vector<Sample> ordered(samples.begin(), samples.end());
  std::sort(ordered.begin(), ordered.end(),
            [](const Sample& a, const Sample& b) { return a.id < b.id; });
  const Batch<T> batch = make_batch<T>(ordered);

  Tape<T> tape;
  const ForwardResult<T> fwd = model.forward(batch.images, &tape);
  LossBreakdown<T> loss =
      total_loss(fwd.outputs, batch.seg_masks, batch.edge_masks, lambdas);
  if (!std::isfinite(loss.total_value())) {
    const int bad = tape.first_non_finite();
    throw NumericError("non-finite loss; first non-finite tensor: " +
                       (bad >= 0 ? tape.describe(bad) : std::string("none")));
  }
  tape.backward(loss.total);
  sgd_step(model.params, opt, lr);
  return loss;
}

namespace {

std::vector<Sample> augment_epoch(const std::vector<Sample>& data,
                                  const TrainConfig& cfg, int epoch) {
  std::vector<Sample> out(data.size());
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      if (cfg.augment) {
        Rng rng(augment_seed(cfg.seed, static_cast<std::uint64_t>(epoch), i));
        out[i] = augment(data[i], cfg.augmentation, rng);
      } else {
        out[i] = resize_sample(data[i], cfg.augmentation.out_size,
                               cfg.augmentation.edge_width);
      }
    }
  };
  const std::size_t workers =
      std::min<std::size_t>(static_cast<std::size_t>(cfg.workers), data.size());
  if (workers <= 1) {
    work(0, data.size());
    return out;
  }
  {
    std::vector<std::jthread> threads;
    const std::size_t chunk = (data.size() + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
      const std::size_t begin = w * chunk;
      const std::size_t end = std::min(data.size(), begin + chunk);
      if (begin < end) threads.emplace_back(work, begin, end);
    }
  }
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write " + tmp.string());
    out << text;
  }
  std::filesystem::rename(tmp, path);
}

template <typename T>
void save_binary(const std::filesystem::path& path, const ParameterStore<T>& p) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  save_checkpoint(tmp, p);
  std::filesystem::rename(tmp, path);
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::vector<std::string> lines;
  std::ifstream in(path);
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

EpochLog parse_log_row(const std::string& line) {
  EpochLog r;
  std::vector<double> v;
  std::size_t pos = 0;
  while (pos <= line.size()) {
    const std::size_t comma = std::min(line.find(',', pos), line.size());
    v.push_back(std::stod(line.substr(pos, comma - pos)));
    pos = comma + 1;
  }
  if (v.size() != 13) throw DataError("malformed training log row: " + line);
  r.epoch = static_cast<int>(v[0]);
  r.iter = static_cast<std::int64_t>(v[1]);
  r.lr = v[2];
  r.decoder = v[3];
  for (int i = 0; i < 4; ++i) {
    r.edge[i] = v[4 + i];
    r.seg[i] = v[8 + i];
  }
  r.total = v[12];
  return r;
}

}  // namespace

template <typename T>
TrainResult train(Model<T>& model, const std::vector<Sample>& data,
                  const TrainConfig& cfg,
                  const std::function<void(const EpochLog&)>& on_epoch) {
  cfg.validate();
  if (data.empty()) throw DataError("training dataset is empty");
  namespace fs = std::filesystem;
  const bool write = !cfg.out_dir.empty();
  if (write) fs::create_directories(cfg.out_dir);

  OptimizerState<T> opt = OptimizerState<T>::create(model.params);
  opt.base_lr = cfg.base_lr;
  opt.momentum = cfg.momentum;
  opt.poly_power = cfg.poly_power;
  const int batches =
      static_cast<int>((data.size() + cfg.batch_size - 1) / cfg.batch_size);
  opt.total_iters = total_iterations(data.size(), cfg.batch_size, cfg.epochs);

  TrainResult result;
  if (write && cfg.resume && fs::exists(cfg.out_dir / files::kState)) {
    const auto state = read_lines(cfg.out_dir / files::kState);
    int epoch = -1;
    for (const std::string& line : state) {
      if (line.rfind("epoch ", 0) == 0) epoch = std::stoi(line.substr(6));
    }
    if (epoch < 0 || epoch > cfg.epochs) {
      throw DataError("corrupt training state in " + cfg.out_dir.string());
    }
    model.params.assign_from(load_checkpoint<T>(cfg.out_dir / files::kCheckpoint));
    opt.velocity.assign_from(load_checkpoint<T>(cfg.out_dir / files::kOptimizer));
    const auto lines = read_lines(cfg.out_dir / files::kLog);
    for (std::size_t i = 1; i < lines.size() && static_cast<int>(i) <= epoch; ++i) {
      result.log.push_back(parse_log_row(lines[i]));
    }
    if (static_cast<int>(result.log.size()) != epoch) {
      throw DataError("training log in " + cfg.out_dir.string() +
                      " is shorter than the checkpointed epoch count");
    }
    result.start_epoch = epoch;
  }

  std::ofstream log_file, timing_file;
  if (write) {
    log_file.open(cfg.out_dir / files::kLog, std::ios::trunc);
    log_file << kTrainLogHeader << '\n';
    for (const EpochLog& r : result.log) log_file << format_log_row(r) << '\n';
    log_file.flush();
    const bool fresh_timing = result.start_epoch == 0;
    timing_file.open(cfg.out_dir / files::kTiming,
                     fresh_timing ? std::ios::trunc : std::ios::app);
    if (fresh_timing) timing_file << "epoch,wall_seconds\n";
  }

  std::int64_t iter = static_cast<std::int64_t>(result.start_epoch) * batches;
  std::vector<std::size_t> order(data.size());
  for (int epoch = result.start_epoch; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::vector<Sample> epoch_data = augment_epoch(data, cfg, epoch);
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(derive_seed({cfg.seed, static_cast<std::uint64_t>(epoch), 0x5eedULL}));
    shuffle_rng.shuffle(order);

    EpochLog row;
    row.epoch = epoch + 1;
    for (int b = 0; b < batches; ++b) {
      const std::size_t begin = static_cast<std::size_t>(b) * cfg.batch_size;
      const std::size_t end = std::min(data.size(), begin + cfg.batch_size);
      std::vector<Sample> batch;
      batch.reserve(end - begin);
      for (std::size_t k = begin; k < end; ++k) batch.push_back(epoch_data[order[k]]);
      const double lr = poly_lr(iter, opt);
      const LossBreakdown<T> loss = train_step(model, opt, batch, lr, cfg.lambdas);
      ++iter;
      row.decoder += loss.decoder_loss;
      for (int i = 0; i < 4; ++i) {
        row.edge[i] += loss.stage_edge[i];
        row.seg[i] += loss.stage_seg[i];
      }
    }
    row.iter = iter;
    row.lr = poly_lr(iter, opt);
    row.decoder /= batches;
    row.total = row.decoder;
    for (int i = 0; i < 4; ++i) {
      row.edge[i] /= batches;
      row.seg[i] /= batches;
      row.total += cfg.lambdas[i] * (row.edge[i] + row.seg[i]);
    }
    row.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.log.push_back(row);

    if (write) {
      log_file << format_log_row(row) << '\n';
      log_file.flush();
      timing_file << row.epoch << ',' << row.wall_seconds << '\n';
      timing_file.flush();
      const bool last = epoch + 1 == cfg.epochs;
      if (last || (cfg.checkpoint_every > 0 && row.epoch % cfg.checkpoint_every == 0)) {
        save_binary(cfg.out_dir / files::kCheckpoint, model.params);
        save_binary(cfg.out_dir / files::kOptimizer, opt.velocity);
        write_text(cfg.out_dir / files::kState,
                   "epoch " + std::to_string(row.epoch) + "\niter " +
                       std::to_string(iter) + "\n");
      }
    }
    if (on_epoch) on_epoch(row);
  }
  return result;
}

template <typename T>
std::vector<EvalRow> evaluate(const Model<T>& model, const std::vector<Sample>& data,
                              int out_size, int edge_width, double threshold) {
  if (data.empty()) throw DataError("evaluation dataset is empty");
  std::vector<EvalRow> rows;
  rows.reserve(data.size());
  for (const Sample& s : data) {
    const Sample r = resize_sample(s, out_size, edge_width);
    const std::span<const Sample> one(&r, 1);
    const Batch<T> batch = make_batch<T>(one);
    const ForwardResult<T> fwd = model.forward(batch.images);
    const Tensor<T> prob = ops::sigmoid(fwd.outputs.seg_logits);
    rows.push_back({s.id, metrics(confusion(prob, batch.seg_masks, threshold))});
  }
  return rows;
}

template <typename T>
Tensor<float> predict_probability(const Model<T>& model, const Tensor<float>& image,
                                  int out_size) {
  const Shape& s = image.shape();
  if (s.n != 1 || s.c != 3) {
    throw ShapeError("predict expects a [1,3,H,W] image, got " + to_string(s));
  }
  Tensor<float> resized = image;
  if (s.h != out_size || s.w != out_size) {
    resized = ops::bilinear_resize(image.detach(), out_size, out_size);
  }
  std::vector<T> values(resized.data().begin(), resized.data().end());
  const Tensor<T> input(resized.shape(), std::move(values));
  const ForwardResult<T> fwd = model.forward(input);
  Tensor<T> logits = fwd.outputs.seg_logits;
  if (s.h != out_size || s.w != out_size) logits = ops::bilinear_resize(logits, s.h, s.w);
  const Tensor<T> prob = ops::sigmoid(logits);
  std::vector<float> out(prob.data().begin(), prob.data().end());
  return Tensor<float>(prob.shape(), std::move(out));
}

#define BANET_INSTANTIATE_TRAIN(T)                                              \
  template struct OptimizerState<T>;                                           \
  template void sgd_step(ParameterStore<T>&, OptimizerState<T>&, double);      \
  template LossBreakdown<T> train_step(Model<T>&, OptimizerState<T>&,          \
                                       std::span<const Sample>, double,        \
                                       const std::array<double, 4>&);          \
  template TrainResult train(Model<T>&, const std::vector<Sample>&,            \
                             const TrainConfig&,                               \
                             const std::function<void(const EpochLog&)>&);     \
  template std::vector<EvalRow> evaluate(const Model<T>&,                      \
                                         const std::vector<Sample>&, int, int, \
                                         double);                              \
  template Tensor<float> predict_probability(const Model<T>&,                  \
                                             const Tensor<float>&, int);

BANET_INSTANTIATE_TRAIN(float)
BANET_INSTANTIATE_TRAIN(double)

#undef BANET_INSTANTIATE_TRAIN

}  // namespace banet
