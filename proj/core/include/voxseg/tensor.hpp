#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "voxseg/types.hpp"

namespace voxseg {

// Dense 5-axis tensor (batch, channel, z, y, x), x-fastest within a channel,
// channels within a batch element. Dense feature vectors use the channel
// axis with unit spatial extents.
template <typename T>
struct TensorT {
  int n = 1, c = 1, nz = 1, ny = 1, nx = 1;
  std::vector<T> v;

  TensorT() = default;
  TensorT(int n_, int c_, int nz_, int ny_, int nx_)
      : n(n_), c(c_), nz(nz_), ny(ny_), nx(nx_),
        v(size_t(n_) * c_ * nz_ * ny_ * nx_, T(0)) {}

  static TensorT vec(int n_, int width) { return TensorT(n_, width, 1, 1, 1); }

  size_t size() const { return v.size(); }
  int spatial() const { return nz * ny * nx; }
  int per_sample() const { return c * spatial(); }

  size_t offset(int b, int ch, int z, int y, int x) const {
    return ((((size_t(b) * c + ch) * nz + z) * ny + y) * nx + x);
  }
  T& at(int b, int ch, int z, int y, int x) {
    return v[offset(b, ch, z, y, x)];
  }
  T at(int b, int ch, int z, int y, int x) const {
    return v[offset(b, ch, z, y, x)];
  }

  T* sample(int b) { return v.data() + size_t(b) * per_sample(); }
  const T* sample(int b) const { return v.data() + size_t(b) * per_sample(); }

  bool same_shape(const TensorT& o) const {
    return n == o.n && c == o.c && nz == o.nz && ny == o.ny && nx == o.nx;
  }
  std::string shape_str() const {
    return std::to_string(n) + "x" + std::to_string(c) + "x" +
           std::to_string(nz) + "x" + std::to_string(ny) + "x" +
           std::to_string(nx);
  }

  template <typename U>
  TensorT<U> cast() const {
    TensorT<U> out(n, c, nz, ny, nx);
    for (size_t i = 0; i < v.size(); ++i) out.v[i] = U(v[i]);
    return out;
  }
};

using Tensor = TensorT<float>;

}  // namespace voxseg
