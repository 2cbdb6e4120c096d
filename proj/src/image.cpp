#include "fgs/image.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include "fgs/error.hpp"

namespace fgs {

Image::Image(int height, int width, double fill)
    : height_(height),
      width_(width),
      pixels_(static_cast<std::size_t>(3) * height * width, fill) {
  if (height <= 0 || width <= 0) throw ShapeError("image dims must be positive");
}

Tensor Image::to_tensor() const {
  return Tensor(Shape{1, 3, height_, width_}, pixels_);
}

Image Image::from_tensor(const Tensor& t, int n) {
  const Shape& s = t.shape();
  if (s.c != 3) throw ShapeError("image tensor needs 3 channels, got " + s.str());
  Image img(s.h, s.w);
  const double* src = t.plane(n, 0);
  for (std::size_t i = 0; i < img.pixels_.size(); ++i) {
    img.pixels_[i] = std::clamp(src[i], 0.0, 1.0);
  }
  return img;
}

Image Image::crop(int y, int x, int h, int w) const {
  if (y < 0 || x < 0 || y + h > height_ || x + w > width_) {
    throw ShapeError("crop outside image");
  }
  Image out(h, w);
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) out.at(c, i, j) = at(c, y + i, x + j);
  return out;
}

namespace {

int read_header_int(std::istream& in) {
  int c = in.peek();
  while (c != EOF) {
    if (c == '#') {
      std::string skip;
      std::getline(in, skip);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      break;
    }
    c = in.peek();
  }
  int v = 0;
  if (!(in >> v)) throw FormatError("malformed PPM header");
  return v;
}

}  // namespace

Image read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  std::string magic(2, '\0');
  in.read(magic.data(), 2);
  if (magic != "P6") throw FormatError(path + ": not a binary PPM");
  const int w = read_header_int(in);
  const int h = read_header_int(in);
  const int maxval = read_header_int(in);
  if (w <= 0 || h <= 0 || maxval != 255) {
    throw FormatError(path + ": unsupported PPM geometry or depth");
  }
  in.get();
  std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h * 3);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size())) {
    throw FormatError(path + ": truncated pixel data");
  }
  Image img(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(c, y, x) = raw[(static_cast<std::size_t>(y) * w + x) * 3 + c] / 255.0;
  return img;
}

void write_ppm(const Image& img, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path);
  out << "P6\n" << img.width() << ' ' << img.height() << "\n255\n";
  std::vector<unsigned char> raw(img.pixel_count() * 3);
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      for (int c = 0; c < 3; ++c)
        raw[(static_cast<std::size_t>(y) * img.width() + x) * 3 + c] =
            static_cast<unsigned char>(std::lround(std::clamp(img.at(c, y, x), 0.0, 1.0) * 255.0));
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
}

Image synthesize_image(int height, int width, std::uint64_t seed) {
  std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ULL + 0x1234567ULL);
  auto uni = [&rng](double lo, double hi) {
    return lo + (hi - lo) * (static_cast<double>(rng() >> 11) * 0x1.0p-53);
  };
  Image img(height, width);

  double corner[4][3];
  for (auto& col : corner)
    for (double& v : col) v = uni(0.1, 0.9);
  for (int y = 0; y < height; ++y) {
    const double fy = height > 1 ? static_cast<double>(y) / (height - 1) : 0.0;
    for (int x = 0; x < width; ++x) {
      const double fx = width > 1 ? static_cast<double>(x) / (width - 1) : 0.0;
      for (int c = 0; c < 3; ++c) {
        img.at(c, y, x) = (1 - fy) * ((1 - fx) * corner[0][c] + fx * corner[1][c]) +
                          fy * ((1 - fx) * corner[2][c] + fx * corner[3][c]);
      }
    }
  }

  const int shapes = 3 + static_cast<int>(rng() % 6);
  for (int s = 0; s < shapes; ++s) {
    const double cy = uni(0, height);
    const double cx = uni(0, width);
    const double ry = uni(0.08, 0.35) * height;
    const double rx = uni(0.08, 0.35) * width;
    const bool ellipse = rng() % 2 == 0;
    double color[3];
    for (double& v : color) v = uni(0.0, 1.0);
    const double texture_amp = uni(0.0, 0.12);
    const double freq = uni(0.2, 1.2);
    const double angle = uni(0, std::numbers::pi);
    const double kx = std::cos(angle) * freq;
    const double ky = std::sin(angle) * freq;
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        const double dy = (y + 0.5 - cy) / ry;
        const double dx = (x + 0.5 - cx) / rx;
        const double dist = ellipse ? std::sqrt(dx * dx + dy * dy)
                                    : std::max(std::abs(dx), std::abs(dy));
        // Soft edge roughly one pixel wide.
        const double edge = std::clamp((1.0 - dist) * std::min(rx, ry) + 0.5, 0.0, 1.0);
        if (edge <= 0.0) continue;
        const double tex = texture_amp * std::sin(kx * x + ky * y);
        for (int c = 0; c < 3; ++c) {
          const double v = std::clamp(color[c] + tex, 0.0, 1.0);
          img.at(c, y, x) = (1 - edge) * img.at(c, y, x) + edge * v;
        }
      }
    }
  }

  std::normal_distribution<double> noise(0.0, 2.0 / 255.0);
  for (double& v : img.pixels()) v = std::clamp(v + noise(rng), 0.0, 1.0);
  return img;
}

void write_synthetic_dataset(const std::string& dir, int count, int height,
                             int width, std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  for (int i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "img_%03d.ppm", i);
    write_ppm(synthesize_image(height, width, seed + static_cast<std::uint64_t>(i)),
              (std::filesystem::path(dir) / name).string());
  }
}

std::vector<std::string> list_images(const std::string& dir) {
  std::vector<std::string> out;
  if (!std::filesystem::is_directory(dir)) return out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".ppm") {
      out.push_back(e.path().string());
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace fgs
