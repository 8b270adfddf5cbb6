#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "banet/data.hpp"

namespace banet {

void SynthConfig::validate() const {
  if (n_images <= 0) throw ConfigError("synth.n_images must be positive");
  if (image_size <= 0 || image_size % 8 != 0) {
    throw ConfigError("synth.image_size must be a positive multiple of 8");
  }
  if (!(axis_min > 0.0 && axis_min <= axis_max && axis_max <= 0.5)) {
    throw ConfigError("synth.axis_min/axis_max must satisfy 0 < min <= max <= 0.5");
  }
  if (!(contrast > 0.0 && contrast <= 1.0)) {
    throw ConfigError("synth.contrast must lie in (0,1]");
  }
  if (!(noise_sigma >= 0.0)) throw ConfigError("synth.noise_sigma must be >= 0");
  if (!(irregularity >= 0.0 && irregularity < 0.5)) {
    throw ConfigError("synth.irregularity must lie in [0,0.5)");
  }
  if (polarity < -1 || polarity > 1) {
    throw ConfigError("synth.polarity must be -1, 0 or 1");
  }
  // Smallest possible lesion must still cover 1% of the image.
  const double min_area = std::numbers::pi * axis_min * axis_min *
                          (1.0 - irregularity) * (1.0 - irregularity);
  if (min_area < 0.01) {
    throw ConfigError("synth.axis_min too small: lesions could cover < 1% of the image");
  }
  if (edge_width < 1 || edge_width % 2 == 0) {
    throw ConfigError("synth.edge_width must be odd and >= 1");
  }
}

double expected_ellipse_area(const SynthConfig& cfg) {
  const double mean_axis = 0.5 * (cfg.axis_min + cfg.axis_max) * cfg.image_size;
  return std::numbers::pi * mean_axis * mean_axis;
}

namespace {

constexpr int kHarmonics = 3;  // radius perturbation uses sin(k phi), k = 2..4

Sample render(const SynthConfig& cfg, LesionParams& lesion) {
  Rng rng(lesion.seed);
  const int S = cfg.image_size;
  lesion.semi_a = rng.uniform(cfg.axis_min, cfg.axis_max) * S;
  lesion.semi_b = rng.uniform(cfg.axis_min, cfg.axis_max) * S;
  lesion.theta = rng.uniform(0.0, std::numbers::pi);
  double amp[kHarmonics], phase[kHarmonics];
  for (int k = 0; k < kHarmonics; ++k) {
    amp[k] = rng.uniform(0.5, 1.0) / kHarmonics;
    phase[k] = rng.uniform(0.0, 2.0 * std::numbers::pi);
  }
  const double reach =
      std::max(lesion.semi_a, lesion.semi_b) * (1.0 + cfg.irregularity) + 1.0;
  auto centre = [&](double extent) {
    return reach < extent / 2.0 ? rng.uniform(reach, extent - reach) : extent / 2.0;
  };
  lesion.cx = centre(S);
  lesion.cy = centre(S);
  const int drawn = rng.bernoulli(0.5) ? 1 : -1;
  lesion.polarity = cfg.polarity == 0 ? drawn : cfg.polarity;
  lesion.background = lesion.polarity > 0 ? rng.uniform(0.0, 1.0 - cfg.contrast)
                                          : rng.uniform(cfg.contrast, 1.0);
  const double fg = lesion.background + lesion.polarity * cfg.contrast;

  Sample s;
  s.id = lesion.id;
  s.image = Tensor<float>(Shape{1, 3, S, S});
  s.seg_mask = Tensor<float>(Shape{1, 1, S, S});
  const double ct = std::cos(lesion.theta), st = std::sin(lesion.theta);
  for (int y = 0; y < S; ++y) {
    for (int x = 0; x < S; ++x) {
      const double dx = x + 0.5 - lesion.cx;
      const double dy = y + 0.5 - lesion.cy;
      const double u = (ct * dx + st * dy) / lesion.semi_a;
      const double v = (-st * dx + ct * dy) / lesion.semi_b;
      const double phi = std::atan2(v, u);
      double bump = 0.0;
      for (int k = 0; k < kHarmonics; ++k) bump += amp[k] * std::sin((k + 2) * phi + phase[k]);
      const bool inside = std::hypot(u, v) <= 1.0 + cfg.irregularity * bump;
      s.seg_mask.at(0, 0, y, x) = inside ? 1.0f : 0.0f;
    }
  }
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < S; ++y) {
      for (int x = 0; x < S; ++x) {
        double v = s.seg_mask.at(0, 0, y, x) == 1.0f ? fg : lesion.background;
        if (cfg.noise_sigma > 0.0) v += cfg.noise_sigma * rng.normal();
        s.image.at(0, c, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  s.edge_mask = derive_edge_mask(s.seg_mask, cfg.edge_width);
  return s;
}

std::string image_id(int index, int count) {
  const int digits = std::max(4, static_cast<int>(std::to_string(count - 1).size()));
  std::string n = std::to_string(index);
  if (static_cast<int>(n.size()) < digits) n.insert(0, digits - n.size(), '0');
  return "img_" + n;
}

}  // namespace

SynthDataset synth_generate(const SynthConfig& cfg) {
  cfg.validate();
  SynthDataset data;
  data.samples.reserve(cfg.n_images);
  data.lesions.reserve(cfg.n_images);
  for (int i = 0; i < cfg.n_images; ++i) {
    LesionParams lesion;
    lesion.id = image_id(i, cfg.n_images);
    lesion.seed = derive_seed({cfg.seed, static_cast<std::uint64_t>(i)});
    data.samples.push_back(render(cfg, lesion));
    data.lesions.push_back(lesion);
  }
  return data;
}

void write_dataset(const std::filesystem::path& dir, const SynthDataset& data) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "masks");
  for (const Sample& s : data.samples) {
    write_ppm(dir / "images" / (s.id + ".ppm"), s.image);
    save_mask(s.seg_mask, dir / "masks" / (s.id + ".pgm"));
  }
  std::ofstream manifest(dir / "manifest.csv");
  if (!manifest) throw DataError("cannot write manifest in " + dir.string());
  manifest << "id,cx,cy,semi_a,semi_b,theta,polarity,background,seed\n";
  char buf[256];
  for (const LesionParams& l : data.lesions) {
    std::snprintf(buf, sizeof(buf), "%s,%.17g,%.17g,%.17g,%.17g,%.17g,%d,%.17g,%llu\n",
                  l.id.c_str(), l.cx, l.cy, l.semi_a, l.semi_b, l.theta, l.polarity,
                  l.background, static_cast<unsigned long long>(l.seed));
    manifest << buf;
  }
}

}  // namespace banet
