#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "keymark/error.hpp"

namespace keymark::geometry {

// Integer pixel location: u is the column (x rightward), v the row (y downward).
struct Pixel {
  int u{0};
  int v{0};
  friend bool operator==(const Pixel&, const Pixel&) = default;
};

// Continuous pixel coordinates, as produced by projection.
struct PixelF {
  double u{0.0};
  double v{0.0};
  PixelF() = default;
  PixelF(double u_, double v_) : u(u_), v(v_) {}
  PixelF(Pixel p) : u(p.u), v(p.v) {}  // NOLINT(google-explicit-constructor)
};

// Row-major raster. The element type decides what the image means.
template <typename T>
class Grid {
 public:
  Grid() = default;
  Grid(int width, int height, T fill = T{})
      : width_(width), height_(height), data_(static_cast<std::size_t>(width) * height, fill) {}

  int width() const { return width_; }
  int height() const { return height_; }
  bool empty() const { return data_.empty(); }

  bool contains(int u, int v) const { return u >= 0 && v >= 0 && u < width_ && v < height_; }
  bool contains(Pixel p) const { return contains(p.u, p.v); }

  T& at(int u, int v) { return data_[index(u, v)]; }
  const T& at(int u, int v) const { return data_[index(u, v)]; }
  T& at(Pixel p) { return at(p.u, p.v); }
  const T& at(Pixel p) const { return at(p.u, p.v); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }

  bool same_shape(int w, int h) const { return width_ == w && height_ == h; }
  template <typename U>
  bool same_shape(const Grid<U>& other) const {
    return width_ == other.width() && height_ == other.height();
  }

  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  std::size_t index(int u, int v) const { return static_cast<std::size_t>(v) * width_ + u; }

  int width_{0};
  int height_{0};
  std::vector<T> data_;
};

using Rgb = std::array<std::uint8_t, 3>;
using RgbImage = Grid<Rgb>;

// Boolean foreground grid. Stored as bytes to keep element access by reference.
using BinaryMask = Grid<std::uint8_t>;

inline constexpr double kDefaultFarPlane = 5.0;

// Depths in meters along the camera z axis; 0.0 marks an invalid reading.
class DepthImage : public Grid<double> {
 public:
  static constexpr double kInvalid = 0.0;

  DepthImage() = default;
  DepthImage(int width, int height, double fill = kInvalid, double far_plane = kDefaultFarPlane)
      : Grid<double>(width, height, fill), far_plane_(far_plane) {}

  double far_plane() const { return far_plane_; }
  bool valid(int u, int v) const {
    double d = at(u, v);
    return d > 0.0 && d < far_plane_;
  }

 private:
  double far_plane_{kDefaultFarPlane};
};

inline std::size_t count_foreground(const BinaryMask& mask) {
  std::size_t n = 0;
  for (auto b : mask.data()) n += b ? 1 : 0;
  return n;
}

// Axis-aligned pixel rectangle, half-open: [u0, u1) x [v0, v1).
struct PixelRect {
  int u0{0}, v0{0}, u1{0}, v1{0};
  bool contains(Pixel p) const { return p.u >= u0 && p.u < u1 && p.v >= v0 && p.v < v1; }
  int width() const { return u1 - u0; }
  int height() const { return v1 - v0; }
  friend bool operator==(const PixelRect&, const PixelRect&) = default;
};

// Bounding box of the foreground; EmptyMask when there is none.
PixelRect bounding_box(const BinaryMask& mask);

}  // namespace keymark::geometry
