#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fgs/tensor.hpp"

namespace fgs {

// RGB image, planar storage, values in [0, 1].
class Image {
 public:
  Image() = default;
  Image(int height, int width, double fill = 0.0);

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t pixel_count() const {
    return static_cast<std::size_t>(height_) * width_;
  }

  double& at(int c, int y, int x) {
    return pixels_[(static_cast<std::size_t>(c) * height_ + y) * width_ + x];
  }
  double at(int c, int y, int x) const {
    return pixels_[(static_cast<std::size_t>(c) * height_ + y) * width_ + x];
  }
  const std::vector<double>& pixels() const { return pixels_; }
  std::vector<double>& pixels() { return pixels_; }

  // (1, 3, H, W)
  Tensor to_tensor() const;
  // Takes sample `n` of a 3-channel tensor, clamping to [0, 1].
  static Image from_tensor(const Tensor& t, int n = 0);

  Image crop(int y, int x, int h, int w) const;

  bool operator==(const Image&) const = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<double> pixels_;
};

// Binary PPM (P6, maxval 255). Values are quantized to 8 bits on write.
Image read_ppm(const std::string& path);
void write_ppm(const Image& img, const std::string& path);

// Deterministic procedural image: gradient background, soft-edged shapes,
// oriented texture and mild noise.
Image synthesize_image(int height, int width, std::uint64_t seed);

// Writes `count` synthetic images named img_000.ppm, ... into `dir`.
void write_synthetic_dataset(const std::string& dir, int count, int height,
                             int width, std::uint64_t seed);

// Sorted list of *.ppm files in `dir`.
std::vector<std::string> list_images(const std::string& dir);

}  // namespace fgs
