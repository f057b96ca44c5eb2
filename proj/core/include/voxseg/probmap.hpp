#pragma once

#include <cmath>
#include <vector>

#include "voxseg/volume.hpp"

namespace voxseg {

// Per-voxel label distribution, stored voxel-major: probs[i*eta + l].
class ProbMap {
 public:
  ProbMap() = default;
  ProbMap(Dims dims, Spacing spacing, int eta)
      : dims_(dims), spacing_(spacing), eta_(eta),
        probs_(dims.count() * uint64_t(eta), 0.0f) {
    if (eta < 2) throw validation_error("ProbMap needs at least 2 labels");
  }

  const Dims& dims() const { return dims_; }
  const Spacing& spacing() const { return spacing_; }
  int eta() const { return eta_; }
  uint64_t voxels() const { return dims_.count(); }

  float at(uint64_t i, int l) const { return probs_[i * eta_ + l]; }
  float& at(uint64_t i, int l) { return probs_[i * eta_ + l]; }
  const float* row(uint64_t i) const { return probs_.data() + i * eta_; }
  float* row(uint64_t i) { return probs_.data() + i * eta_; }

  std::vector<float>& flat() { return probs_; }
  const std::vector<float>& flat() const { return probs_; }

  // Degenerate distribution: all mass on `label`.
  void set_delta(uint64_t i, int label) {
    float* r = row(i);
    for (int l = 0; l < eta_; ++l) r[l] = 0.0f;
    r[label] = 1.0f;
  }

  // Hard labels; ties resolve to the smaller label id.
  Volume argmax() const {
    Volume out(dims_, spacing_, VoxelType::u8);
    auto& lab = out.data<uint8_t>();
    for (uint64_t i = 0; i < voxels(); ++i) {
      const float* r = row(i);
      int best = 0;
      for (int l = 1; l < eta_; ++l)
        if (r[l] > r[best]) best = l;
      lab[i] = uint8_t(best);
    }
    return out;
  }

 private:
  Dims dims_;
  Spacing spacing_;
  int eta_ = 0;
  std::vector<float> probs_;
};

// In-mask rows must sum to 1 within tol; out-of-mask rows must put all mass
// on background. Returns the worst in-mask deviation.
inline double check_probmap(const ProbMap& p, const BrainMask& m,
                            double tol = 1e-6) {
  if (!(p.dims() == m.dims()))
    throw validation_error("probmap/mask dim mismatch");
  double worst = 0.0;
  for (uint64_t i = 0; i < p.voxels(); ++i) {
    const float* r = p.row(i);
    if (m.test(i)) {
      double s = 0.0;
      for (int l = 0; l < p.eta(); ++l) {
        if (r[l] < 0.0f)
          throw validation_error("negative probability at voxel " +
                                 std::to_string(i));
        s += r[l];
      }
      worst = std::max(worst, std::abs(s - 1.0));
    } else {
      if (r[0] != 1.0f)
        throw validation_error("out-of-mask voxel " + std::to_string(i) +
                               " not background-degenerate");
      for (int l = 1; l < p.eta(); ++l)
        if (r[l] != 0.0f)
          throw validation_error("out-of-mask voxel " + std::to_string(i) +
                                 " carries foreground mass");
    }
  }
  if (worst > tol)
    throw validation_error("probability rows deviate from 1 by " +
                           std::to_string(worst));
  return worst;
}

}  // namespace voxseg
