#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "banet/rng.hpp"
#include "banet/tensor.hpp"

namespace banet {

/// One training example at its native resolution. Images are [1,3,H,W] in
/// [0,1]; masks are [1,1,H,W] with values exactly 0 or 1.
struct Sample {
  std::string id;
  Tensor<float> image;
  Tensor<float> seg_mask;
  Tensor<float> edge_mask;
};

inline constexpr int kDefaultEdgeWidth = 3;

/// Morphological boundary (mask minus its 4-connected erosion, outside the
/// image counting as background) dilated by a width x width square.
Tensor<float> derive_edge_mask(const Tensor<float>& seg_mask,
                               int width = kDefaultEdgeWidth);

/// Throws DataError unless every value is 0 or 1.
void require_binary(const Tensor<float>& mask, const std::string& what);

// --- synthetic lesions -----------------------------------------------------

struct SynthConfig {
  int n_images = 250;
  int image_size = 64;
  /// Semi-axis range as a fraction of the image size.
  double axis_min = 0.12;
  double axis_max = 0.30;
  double contrast = 0.4;
  double noise_sigma = 0.05;
  /// Amplitude of the sinusoidal radius perturbation (0 = exact ellipse).
  double irregularity = 0.1;
  /// Lesion intensity relative to the background: -1 darker, +1 brighter,
  /// 0 drawn per image.
  int polarity = -1;
  int edge_width = kDefaultEdgeWidth;
  std::uint64_t seed = 7;

  void validate() const;
};

/// Generating parameters of one synthetic image, as written to the manifest.
struct LesionParams {
  std::string id;
  double cx = 0, cy = 0;
  double semi_a = 0, semi_b = 0;
  double theta = 0;
  int polarity = 1;  // +1 brighter than background, -1 darker
  double background = 0;
  std::uint64_t seed = 0;
};

struct SynthDataset {
  std::vector<Sample> samples;
  std::vector<LesionParams> lesions;
};

SynthDataset synth_generate(const SynthConfig& cfg);

/// E[pi * a * b] for independent uniform semi-axes, in pixels.
double expected_ellipse_area(const SynthConfig& cfg);

/// Writes images/<id>.ppm, masks/<id>.pgm and manifest.csv under `dir`.
void write_dataset(const std::filesystem::path& dir, const SynthDataset& data);

// --- augmentation ----------------------------------------------------------

struct AugmentConfig {
  double flip_h_prob = 0.5;
  double flip_v_prob = 0.5;
  double rot_min_deg = -10.0;
  double rot_max_deg = 10.0;
  double crop_min = 0.5;
  double crop_max = 1.0;
  int out_size = 64;
  int edge_width = kDefaultEdgeWidth;

  void validate() const;
};

/// Centred crop of random scale, rotation, flips, then resize to out_size.
/// Images are resampled bilinearly, masks by nearest neighbour; the edge
/// mask is re-derived from the transformed segmentation mask.
Sample augment(const Sample& sample, const AugmentConfig& cfg, Rng& rng);

/// Resize only (used for evaluation).
Sample resize_sample(const Sample& sample, int out_size, int edge_width);

/// Per-sample augmentation stream keyed by (seed, epoch, sample index).
inline std::uint64_t augment_seed(std::uint64_t seed, std::uint64_t epoch,
                                  std::uint64_t sample_index) {
  return derive_seed({seed, epoch, sample_index});
}

// Geometric primitives, exposed for testing.
Tensor<float> crop_center(const Tensor<float>& t, int out_h, int out_w);
Tensor<float> flip_horizontal(const Tensor<float>& t);
Tensor<float> flip_vertical(const Tensor<float>& t);
/// Rotation about the image centre. Images use bilinear sampling with border
/// replication; masks use nearest sampling with background outside.
Tensor<float> rotate_image(const Tensor<float>& t, double degrees);
Tensor<float> rotate_mask(const Tensor<float>& t, double degrees);
Tensor<float> resize_nearest(const Tensor<float>& t, int out_h, int out_w);

// --- netpbm I/O --------------------------------------------------------------

/// Binary P6 RGB image scaled to [0,1].
Tensor<float> read_ppm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const Tensor<float>& image);
/// Binary P5 grey image, raw bytes.
struct GreyImage {
  int width = 0;
  int height = 0;
  int maxval = 255;
  std::vector<std::uint8_t> pixels;
};
GreyImage read_pgm(const std::filesystem::path& path);
/// P5 mask; pixel > 127 is foreground.
Tensor<float> load_mask(const std::filesystem::path& path);
void save_mask(const Tensor<float>& mask, const std::filesystem::path& path);
/// Writes an arbitrary [0,1] map as 8-bit P5.
void save_grey(const Tensor<float>& map, const std::filesystem::path& path);

/// Loads images/<id>.ppm with masks/<id>.pgm; sorted by id.
std::vector<Sample> load_dataset(const std::filesystem::path& dir,
                                 int edge_width = kDefaultEdgeWidth);

/// Stacks samples into [n,3,H,W], [n,1,H,W], [n,1,H,W] batches.
template <typename T>
struct Batch {
  Tensor<T> images;
  Tensor<T> seg_masks;
  Tensor<T> edge_masks;
};

template <typename T>
Batch<T> make_batch(std::span<const Sample> samples);

}  // namespace banet
