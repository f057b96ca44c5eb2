#pragma once

#include <cstdint>
#include <vector>

#include "voxseg/types.hpp"

namespace voxseg {

// Approximate high-dimensional Gaussian filtering by splat-blur-slice on a
// simplex lattice. For points with features f (pre-scaled by 1/sigma),
// filter() approximates out_i = sum_j exp(-|f_i - f_j|^2 / 2) * in_j,
// including the j = i term. Inputs and outputs are scaled symmetrically by
// each point's inverse root self response (measured through the actual
// lattice), so the self term equals in_i exactly and a lone point passes
// through unchanged.
class PermutohedralLattice {
 public:
  // features: n rows of d floats, row-major. d in [1, 8].
  PermutohedralLattice(const float* features, size_t n, int d);

  int dim() const { return d_; }
  size_t points() const { return n_; }
  size_t lattice_size() const { return lattice_points_; }

  // in, out: n rows of m doubles, row-major. out may not alias in.
  void filter(const double* in, double* out, int m) const;

 private:
  int d_ = 0;
  size_t n_ = 0;
  size_t lattice_points_ = 0;
  std::vector<int32_t> corner_;  // n x (d+1) lattice point ids
  std::vector<float> bary_;      // n x (d+1) barycentric weights
  std::vector<double> self_;     // n, inverse root of the raw self response
  std::vector<int32_t> nbr_;     // lattice x (d+1) x 2 blur neighbors, -1 none
};

}  // namespace voxseg
