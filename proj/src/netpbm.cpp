#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>

#include "banet/data.hpp"

namespace banet {
namespace {

struct Header {
  std::string magic;
  int width = 0;
  int height = 0;
  int maxval = 0;
};

int read_header_int(std::istream& in, const std::string& file) {
  int c = in.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    } else if (std::isspace(c)) {
      c = in.get();
    } else {
      break;
    }
  }
  if (c == EOF || !std::isdigit(c)) {
    throw DataError(file + ": malformed netpbm header");
  }
  long value = 0;
  while (c != EOF && std::isdigit(c)) {
    value = value * 10 + (c - '0');
    if (value > 1 << 20) throw DataError(file + ": header value too large");
    c = in.get();
  }
  if (c == EOF || !std::isspace(c)) {
    throw DataError(file + ": malformed netpbm header");
  }
  return static_cast<int>(value);
}

Header read_header(std::istream& in, const std::string& file,
                   const std::string& expected) {
  Header h;
  char magic[2] = {0, 0};
  in.read(magic, 2);
  h.magic.assign(magic, 2);
  if (in.gcount() != 2 || h.magic != expected) {
    throw DataError(file + ": expected " + expected + " netpbm file");
  }
  h.width = read_header_int(in, file);
  h.height = read_header_int(in, file);
  h.maxval = read_header_int(in, file);
  if (h.width <= 0 || h.height <= 0) throw DataError(file + ": empty image");
  if (h.maxval <= 0 || h.maxval > 255) {
    throw DataError(file + ": unsupported maxval " + std::to_string(h.maxval));
  }
  return h;
}

std::vector<std::uint8_t> read_payload(std::istream& in, std::size_t n,
                                       const std::string& file) {
  std::vector<std::uint8_t> bytes(n);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) {
    throw DataError(file + ": truncated pixel data");
  }
  return bytes;
}

std::uint8_t to_byte(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  return out;
}

}  // namespace

Tensor<float> read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  const Header h = read_header(in, path.string(), "P6");
  const auto bytes =
      read_payload(in, static_cast<std::size_t>(h.width) * h.height * 3, path.string());
  Tensor<float> img(Shape{1, 3, h.height, h.width});
  const float scale = 1.0f / static_cast<float>(h.maxval);
  for (int y = 0; y < h.height; ++y) {
    for (int x = 0; x < h.width; ++x) {
      const std::size_t k = (static_cast<std::size_t>(y) * h.width + x) * 3;
      for (int c = 0; c < 3; ++c) {
        img.at(0, c, y, x) = std::min(1.0f, bytes[k + c] * scale);
      }
    }
  }
  return img;
}

void write_ppm(const std::filesystem::path& path, const Tensor<float>& image) {
  const Shape& s = image.shape();
  if (s.n != 1 || s.c != 3) {
    throw ShapeError("write_ppm expects [1,3,H,W], got " + to_string(s));
  }
  std::ofstream out = open_out(path);
  out << "P6\n" << s.w << ' ' << s.h << "\n255\n";
  std::vector<char> bytes(static_cast<std::size_t>(s.h) * s.w * 3);
  for (int y = 0; y < s.h; ++y) {
    for (int x = 0; x < s.w; ++x) {
      for (int c = 0; c < 3; ++c) {
        bytes[(static_cast<std::size_t>(y) * s.w + x) * 3 + c] =
            static_cast<char>(to_byte(image.at(0, c, y, x)));
      }
    }
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed to write " + path.string());
}

GreyImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  const Header h = read_header(in, path.string(), "P5");
  GreyImage g;
  g.width = h.width;
  g.height = h.height;
  g.maxval = h.maxval;
  g.pixels = read_payload(in, static_cast<std::size_t>(h.width) * h.height,
                          path.string());
  return g;
}

Tensor<float> load_mask(const std::filesystem::path& path) {
  const GreyImage g = read_pgm(path);
  Tensor<float> mask(Shape{1, 1, g.height, g.width});
  auto m = mask.mutable_data();
  for (std::size_t i = 0; i < g.pixels.size(); ++i) {
    m[i] = g.pixels[i] > 127 ? 1.0f : 0.0f;
  }
  return mask;
}

void save_mask(const Tensor<float>& mask, const std::filesystem::path& path) {
  require_binary(mask, path.string());
  save_grey(mask, path);
}

void save_grey(const Tensor<float>& map, const std::filesystem::path& path) {
  const Shape& s = map.shape();
  if (s.n != 1 || s.c != 1) {
    throw ShapeError("expected a [1,1,H,W] map, got " + to_string(s));
  }
  std::ofstream out = open_out(path);
  out << "P5\n" << s.w << ' ' << s.h << "\n255\n";
  std::vector<char> bytes(map.numel());
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    bytes[i] = static_cast<char>(to_byte(map.data()[i]));
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed to write " + path.string());
}

std::vector<Sample> load_dataset(const std::filesystem::path& dir, int edge_width) {
  namespace fs = std::filesystem;
  const fs::path images = dir / "images";
  const fs::path masks = dir / "masks";
  if (!fs::is_directory(images) || !fs::is_directory(masks)) {
    throw DataError(dir.string() + ": expected images/ and masks/ subdirectories");
  }
  std::map<std::string, fs::path> image_files, mask_files;
  for (const auto& e : fs::directory_iterator(images)) {
    if (e.path().extension() == ".ppm") image_files[e.path().stem().string()] = e.path();
  }
  for (const auto& e : fs::directory_iterator(masks)) {
    if (e.path().extension() == ".pgm") mask_files[e.path().stem().string()] = e.path();
  }
  for (const auto& [id, p] : mask_files) {
    if (!image_files.contains(id)) {
      throw DataError("mask '" + id + "' has no matching image in " + images.string());
    }
  }
  std::vector<Sample> out;
  for (const auto& [id, p] : image_files) {
    auto m = mask_files.find(id);
    if (m == mask_files.end()) {
      throw DataError("image '" + id + "' has no matching mask in " + masks.string());
    }
    Sample s;
    s.id = id;
    s.image = read_ppm(p);
    s.seg_mask = load_mask(m->second);
    if (s.image.shape().h != s.seg_mask.shape().h ||
        s.image.shape().w != s.seg_mask.shape().w) {
      throw DataError("sample '" + id + "': image is " +
                      std::to_string(s.image.shape().w) + "x" +
                      std::to_string(s.image.shape().h) + " but mask is " +
                      std::to_string(s.seg_mask.shape().w) + "x" +
                      std::to_string(s.seg_mask.shape().h));
    }
    s.edge_mask = derive_edge_mask(s.seg_mask, edge_width);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace banet
