#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "nnqc/errors.hpp"

namespace nnqc {

// Dense 2D grid, row-major (row = y, col = x).
template <typename T>
struct Grid2D {
  int h = 0;
  int w = 0;
  std::vector<T> data;

  Grid2D() = default;
  Grid2D(int h_, int w_, T fill = T{})
      : h(h_), w(w_), data(static_cast<std::size_t>(h_) * w_, fill) {}

  T& at(int y, int x) { return data[static_cast<std::size_t>(y) * w + x]; }
  const T& at(int y, int x) const {
    return data[static_cast<std::size_t>(y) * w + x];
  }
  std::size_t size() const { return data.size(); }
  bool same_shape(const Grid2D& o) const { return h == o.h && w == o.w; }
  bool operator==(const Grid2D& o) const {
    return h == o.h && w == o.w && data == o.data;
  }
};

// Dense 3D grid in NIfTI memory order: x fastest, then y, then z.
template <typename T>
struct Grid3D {
  int nx = 0, ny = 0, nz = 0;
  std::vector<T> data;

  Grid3D() = default;
  Grid3D(int nx_, int ny_, int nz_, T fill = T{})
      : nx(nx_),
        ny(ny_),
        nz(nz_),
        data(static_cast<std::size_t>(nx_) * ny_ * nz_, fill) {}

  T& at(int x, int y, int z) {
    return data[static_cast<std::size_t>(z) * ny * nx +
                static_cast<std::size_t>(y) * nx + x];
  }
  const T& at(int x, int y, int z) const {
    return data[static_cast<std::size_t>(z) * ny * nx +
                static_cast<std::size_t>(y) * nx + x];
  }
  std::size_t size() const { return data.size(); }
  bool same_shape(const Grid3D& o) const {
    return nx == o.nx && ny == o.ny && nz == o.nz;
  }
  bool operator==(const Grid3D& o) const {
    return nx == o.nx && ny == o.ny && nz == o.nz && data == o.data;
  }
};

using MaskGrid2D = Grid2D<int>;
using ImageGrid2D = Grid2D<float>;
using MaskGrid3D = Grid3D<int>;
using ImageGrid3D = Grid3D<float>;

// Axial slice z of a 3D grid as a 2D grid (row = y, col = x).
template <typename T>
Grid2D<T> axial_slice(const Grid3D<T>& v, int z) {
  if (z < 0 || z >= v.nz) throw ShapeError("axial_slice: z out of range");
  Grid2D<T> s(v.ny, v.nx);
  for (int y = 0; y < v.ny; ++y)
    for (int x = 0; x < v.nx; ++x) s.at(y, x) = v.at(x, y, z);
  return s;
}

template <typename T>
void set_axial_slice(Grid3D<T>& v, int z, const Grid2D<T>& s) {
  if (s.h != v.ny || s.w != v.nx || z < 0 || z >= v.nz)
    throw ShapeError("set_axial_slice: shape mismatch");
  for (int y = 0; y < v.ny; ++y)
    for (int x = 0; x < v.nx; ++x) v.at(x, y, z) = s.at(y, x);
}

template <typename T>
int max_value(const Grid2D<T>& g) {
  T m = 0;
  for (const T& v : g.data) m = v > m ? v : m;
  return static_cast<int>(m);
}

template <typename T>
int max_value(const Grid3D<T>& g) {
  T m = 0;
  for (const T& v : g.data) m = v > m ? v : m;
  return static_cast<int>(m);
}

}  // namespace nnqc
