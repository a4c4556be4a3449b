// Row-major scalar grids over a periodic torus or a bounded patch, with
// bilinear sampling. Vertex (i,j) sits at origin + (i*h, j*h).
#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "distdiff/core.hpp"

namespace distdiff {

template <typename T>
class Grid2D {
 public:
  Grid2D() = default;
  Grid2D(int nx, int ny, T fill = T{})
      : nx_(nx), ny_(ny), data_(std::size_t(nx) * std::size_t(ny), fill) {}

  int nx() const { return nx_; }
  int ny() const { return ny_; }
  std::size_t size() const { return data_.size(); }

  T& at(int i, int j) { return data_[idx(i, j)]; }
  const T& at(int i, int j) const { return data_[idx(i, j)]; }
  T& operator[](std::size_t k) { return data_[k]; }
  const T& operator[](std::size_t k) const { return data_[k]; }

  std::size_t idx(int i, int j) const {
    return std::size_t(j) * std::size_t(nx_) + std::size_t(i);
  }
  int ix(std::size_t k) const { return int(k % std::size_t(nx_)); }
  int iy(std::size_t k) const { return int(k / std::size_t(nx_)); }

  const std::vector<T>& data() const { return data_; }
  std::vector<T>& data() { return data_; }

 private:
  int nx_ = 0;
  int ny_ = 0;
  std::vector<T> data_;
};

/// Geometry of the vertex lattice: spacing, origin, and wrap behavior.
struct GridGeometry {
  int nx = 0;            // vertex count, x
  int ny = 0;            // vertex count, y
  double h = 0.0;        // spacing
  Vec2 origin{0.0, 0.0};
  bool periodic = true;

  double extent_x() const { return periodic ? nx * h : (nx - 1) * h; }
  double extent_y() const { return periodic ? ny * h : (ny - 1) * h; }

  int wrap_x(int i) const {
    if (periodic) {
      i %= nx;
      return i < 0 ? i + nx : i;
    }
    return i < 0 ? 0 : (i >= nx ? nx - 1 : i);
  }
  int wrap_y(int j) const {
    if (periodic) {
      j %= ny;
      return j < 0 ? j + ny : j;
    }
    return j < 0 ? 0 : (j >= ny ? ny - 1 : j);
  }
  bool in_x_range(int i) const { return periodic || (i >= 0 && i < nx); }
  bool in_y_range(int j) const { return periodic || (j >= 0 && j < ny); }

  Vec2 vertex(int i, int j) const {
    return {origin.x + i * h, origin.y + j * h};
  }

  /// Wrap a point into the fundamental domain (periodic) or leave as is.
  Vec2 canonical(Vec2 p) const {
    if (!periodic) return p;
    double lx = extent_x(), ly = extent_y();
    double x = std::fmod(p.x - origin.x, lx);
    double y = std::fmod(p.y - origin.y, ly);
    if (x < 0) x += lx;
    if (y < 0) y += ly;
    return {origin.x + x, origin.y + y};
  }

  /// Shortest coordinate displacement from a to b (wrap-aware).
  Vec2 displacement(const Vec2& a, const Vec2& b) const {
    Vec2 d = b - a;
    if (periodic) {
      double lx = extent_x(), ly = extent_y();
      d.x -= lx * std::round(d.x / lx);
      d.y -= ly * std::round(d.y / ly);
    }
    return d;
  }

  bool contains(const Vec2& p) const {
    if (periodic) return true;
    double eps = 1e-12;
    return p.x >= origin.x - eps && p.x <= origin.x + (nx - 1) * h + eps &&
           p.y >= origin.y - eps && p.y <= origin.y + (ny - 1) * h + eps;
  }

  /// Cell-local coordinates of p: lower-left vertex (i0,j0) and fractions.
  struct CellCoords {
    int i0, j0;
    double fx, fy;
  };
  CellCoords locate(const Vec2& p) const {
    Vec2 q = canonical(p);
    double gx = (q.x - origin.x) / h;
    double gy = (q.y - origin.y) / h;
    int i0 = int(std::floor(gx));
    int j0 = int(std::floor(gy));
    double fx = gx - i0;
    double fy = gy - j0;
    if (!periodic) {
      if (i0 < 0) { i0 = 0; fx = 0.0; }
      if (j0 < 0) { j0 = 0; fy = 0.0; }
      if (i0 >= nx - 1) { i0 = nx - 2; fx = gx - i0; }
      if (j0 >= ny - 1) { j0 = ny - 2; fy = gy - j0; }
    }
    return {i0, j0, fx, fy};
  }

  /// Nearest vertex index pair to a point.
  std::pair<int, int> nearest_vertex(const Vec2& p) const {
    auto c = locate(p);
    int i = c.fx < 0.5 ? c.i0 : c.i0 + 1;
    int j = c.fy < 0.5 ? c.j0 : c.j0 + 1;
    return {wrap_x(i), wrap_y(j)};
  }
};

/// Bilinear sample of a scalar grid at a continuous point.
inline double bilinear(const GridGeometry& geo, const Grid2D<double>& f,
                       const Vec2& p) {
  auto c = geo.locate(p);
  int i0 = geo.wrap_x(c.i0), i1 = geo.wrap_x(c.i0 + 1);
  int j0 = geo.wrap_y(c.j0), j1 = geo.wrap_y(c.j0 + 1);
  double v00 = f.at(i0, j0), v10 = f.at(i1, j0);
  double v01 = f.at(i0, j1), v11 = f.at(i1, j1);
  return (1 - c.fx) * (1 - c.fy) * v00 + c.fx * (1 - c.fy) * v10 +
         (1 - c.fx) * c.fy * v01 + c.fx * c.fy * v11;
}

}  // namespace distdiff
