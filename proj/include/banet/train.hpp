#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "banet/data.hpp"
#include "banet/heads.hpp"
#include "banet/losses.hpp"
#include "banet/metrics.hpp"

namespace banet {

inline constexpr double kReferenceBaseLr = 1e-4;
inline constexpr double kReferenceMomentum = 0.9;
inline constexpr double kReferencePolyPower = 0.9;
/// Desk runs train from scratch for 1500 iterations; 1e-4 barely moves the
/// loss in that budget.
inline constexpr double kDeskBaseLr = 1e-2;

/// Momentum SGD state with the poly learning-rate schedule.
template <typename T>
struct OptimizerState {
  double momentum = kReferenceMomentum;
  double base_lr = kReferenceBaseLr;
  double poly_power = kReferencePolyPower;
  std::int64_t total_iters = 1;
  /// One buffer per parameter, same names and shapes.
  ParameterStore<T> velocity;

  static OptimizerState create(const ParameterStore<T>& params);
};

/// base_lr * (1 - iter / total_iters)^power, for 0 <= iter <= total_iters.
double poly_lr(std::int64_t iter, double base_lr, double power,
               std::int64_t total_iters);

template <typename T>
double poly_lr(std::int64_t iter, const OptimizerState<T>& state) {
  return poly_lr(iter, state.base_lr, state.poly_power, state.total_iters);
}

/// v <- momentum * v + grad; p <- p - lr * v; then zeroes the gradients.
/// Throws if a parameter received no gradient.
template <typename T>
void sgd_step(ParameterStore<T>& params, OptimizerState<T>& state, double lr);

/// iterations = epochs * ceil(n / batch), so the schedule ends at zero.
std::int64_t total_iterations(std::size_t dataset_size, int batch_size, int epochs);

struct TrainConfig {
  int epochs = 30;
  int batch_size = 4;
  std::uint64_t seed = 1;
  std::uint64_t init_seed = 1;
  double base_lr = kDeskBaseLr;
  double momentum = kReferenceMomentum;
  double poly_power = kReferencePolyPower;
  std::array<double, 4> lambdas = kDefaultLambdas;
  bool augment = true;
  AugmentConfig augmentation;
  /// Save a checkpoint every N epochs (0: only at the end).
  int checkpoint_every = 0;
  /// Threads used for augmentation; results do not depend on this.
  int workers = 1;
  /// Run directory for logs and checkpoints; empty disables all file output.
  std::filesystem::path out_dir;
  /// Continue from the checkpoint in out_dir if one exists.
  bool resume = false;

  void validate() const;
};

/// Epoch means of the loss components.
struct EpochLog {
  int epoch = 0;
  std::int64_t iter = 0;
  double lr = 0.0;
  double decoder = 0.0;
  std::array<double, 4> edge{};
  std::array<double, 4> seg{};
  double total = 0.0;
  double wall_seconds = 0.0;
};

inline constexpr const char* kTrainLogHeader =
    "epoch,iter,lr,decoder,edge1,edge2,edge3,edge4,seg1,seg2,seg3,seg4,total";

std::string format_log_row(const EpochLog& row);

struct TrainResult {
  std::vector<EpochLog> log;
  int start_epoch = 0;  // > 0 after a resume
};

/// Output file names inside TrainConfig::out_dir.
namespace files {
inline constexpr const char* kCheckpoint = "checkpoint.banc";
inline constexpr const char* kOptimizer = "optimizer.banc";
inline constexpr const char* kState = "train_state.txt";
inline constexpr const char* kLog = "train_log.csv";
inline constexpr const char* kTiming = "timing.csv";
}  // namespace files

/// One optimisation step on `samples`. The batch is assembled in id order,
/// so the result does not depend on the order of `samples`.
template <typename T>
LossBreakdown<T> train_step(Model<T>& model, OptimizerState<T>& opt,
                            std::span<const Sample> samples, double lr,
                            const std::array<double, 4>& lambdas);

template <typename T>
TrainResult train(Model<T>& model, const std::vector<Sample>& data,
                  const TrainConfig& cfg,
                  const std::function<void(const EpochLog&)>& on_epoch = {});

/// Per-image metrics after resizing each sample to out_size.
template <typename T>
std::vector<EvalRow> evaluate(const Model<T>& model, const std::vector<Sample>& data,
                              int out_size, int edge_width,
                              double threshold = kDefaultThreshold);

/// Foreground probability at the image's own resolution.
template <typename T>
Tensor<float> predict_probability(const Model<T>& model, const Tensor<float>& image,
                                  int out_size);

}  // namespace banet
