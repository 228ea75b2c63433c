#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace threadrecon {

struct Pixel {
  int x = 0;
  int y = 0;
  friend bool operator==(const Pixel&, const Pixel&) = default;
};

/// Row-major raster of pixel values.
template <typename T>
class Raster {
 public:
  Raster() = default;
  Raster(int width, int height, T fill = T{})
      : width_(width), height_(height),
        data_(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), fill) {}

  int width() const { return width_; }
  int height() const { return height_; }
  bool contains(int x, int y) const { return x >= 0 && y >= 0 && x < width_ && y < height_; }
  bool contains(Pixel p) const { return contains(p.x, p.y); }

  T& operator()(int x, int y) { return data_[index(x, y)]; }
  const T& operator()(int x, int y) const { return data_[index(x, y)]; }
  T& operator()(Pixel p) { return (*this)(p.x, p.y); }
  const T& operator()(Pixel p) const { return (*this)(p.x, p.y); }

  std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x);
  }
  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }

  friend bool operator==(const Raster&, const Raster&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<T> data_;
};

using GrayImage = Raster<std::uint8_t>;

/// Binary pixel mask; nonzero entries are members.
using Mask = Raster<std::uint8_t>;

/// Mask members in row-major order.
std::vector<Pixel> mask_pixels(const Mask& mask);
std::size_t mask_count(const Mask& mask);

GrayImage read_png_gray(const std::filesystem::path& path);
void write_png_gray(const std::filesystem::path& path, const GrayImage& image);

/// Reads a PNG and thresholds it: any nonzero gray value is a member.
Mask read_png_mask(const std::filesystem::path& path);
/// Writes members as 255 and background as 0.
void write_png_mask(const std::filesystem::path& path, const Mask& mask);

}  // namespace threadrecon
