#pragma once

#include <cstdint>
#include <vector>

#include "voxseg/volume.hpp"

namespace voxseg {

// Graph Laplacian L = D - W of the in-mask voxel graph: unit weights on
// 6-connected in-mask pairs, diagonal = neighbor count. Stored as CSR
// adjacency; the diagonal is implicit in the row degree.
class SparseLaplacian {
 public:
  explicit SparseLaplacian(const BrainMask& m);

  uint64_t n() const { return voxel_of_.size(); }
  const Dims& dims() const { return dims_; }

  // Grid linear index of row i and its inverse (-1 for out-of-mask voxels).
  uint64_t voxel_of(uint64_t row) const { return voxel_of_[row]; }
  int64_t row_of(uint64_t voxel) const { return index_of_[voxel]; }

  uint32_t degree(uint64_t row) const {
    return offsets_[row + 1] - offsets_[row];
  }
  const uint32_t* row_begin(uint64_t row) const {
    return nbrs_.data() + offsets_[row];
  }
  const uint32_t* row_end(uint64_t row) const {
    return nbrs_.data() + offsets_[row + 1];
  }

  // y = L x
  void matvec(const double* x, double* y) const;

 private:
  Dims dims_;
  std::vector<int64_t> index_of_;
  std::vector<uint64_t> voxel_of_;
  std::vector<uint32_t> offsets_;
  std::vector<uint32_t> nbrs_;
};

struct EigenPair {
  double lambda = 0;
  std::vector<double> f;  // unit Euclidean norm
};

struct SolveStats {
  uint64_t matvecs = 0;
  int restarts = 0;
  std::vector<double> residuals;  // ||L f - lambda f|| per returned pair
};

// The k algebraically smallest eigenpairs, ascending. Thick-restart Lanczos
// with the constant vector deflated explicitly; the (0, 1/sqrt(n)) pair is
// reattached analytically. Residual target 1e-10, hard cap 10*n
// matrix-vector products; non-convergence throws with the achieved residual.
std::vector<EigenPair> smallest_eigenpairs(const SparseLaplacian& L, int k,
                                           SolveStats* stats = nullptr);

// Per-voxel 6-channel feature field: three standardized spectral channels
// followed by three center-of-mass-subtracted Cartesian channels (voxel
// units). Out-of-mask voxels are zero in every channel.
class CoordField {
 public:
  static constexpr int kChannels = 6;

  CoordField() = default;
  CoordField(Dims dims, Spacing spacing)
      : dims_(dims), spacing_(spacing),
        data_(dims.count() * kChannels, 0.0f) {}

  const Dims& dims() const { return dims_; }
  const Spacing& spacing() const { return spacing_; }

  const float* at(uint64_t voxel) const { return data_.data() + voxel * kChannels; }
  float* at(uint64_t voxel) { return data_.data() + voxel * kChannels; }
  float channel(uint64_t voxel, int c) const { return at(voxel)[c]; }

  Volume channel_volume(int c) const;  // float32 copy of one channel

 private:
  Dims dims_;
  Spacing spacing_;
  std::vector<float> data_;
};

struct SpectralReport {
  std::vector<double> lambdas;    // the three non-constant eigenvalues
  std::vector<double> residuals;
  uint64_t matvecs = 0;
  int restarts = 0;
};

// First three non-constant eigenfunctions on the mask graph, sign-fixed by
// correlation with the centered Cartesian coordinates and standardized to
// zero mean / unit variance over the mask. Rejects disconnected masks with a
// component-size listing; reduce with largest_component() first if intended.
CoordField spectral_coordinates(const BrainMask& m,
                                SpectralReport* report = nullptr);

// Spectral channels plus centered Cartesian channels.
CoordField coordinate_features(const BrainMask& m,
                               SpectralReport* report = nullptr);

}  // namespace voxseg
