#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "voxseg/probmap.hpp"
#include "voxseg/volume.hpp"

namespace voxseg {

// Fully connected CRF over the voxel grid: appearance (position + intensity)
// and smoothness (position) Gaussian pairwise potentials with Potts
// compatibility, optimized by parallel mean field. The exact path sums over
// all pairs; the fast path filters the appearance messages with a
// permutohedral lattice and the smoothness messages with a separable
// truncated Gaussian. Both share the update combiner, so zero pairwise
// weights give bitwise-identical unary softmaxes.
struct CrfParams {
  float v1 = 3.0f;           // appearance weight
  float v2 = 3.0f;           // smoothness weight
  float sigma_alpha = 3.0f;  // appearance spatial bandwidth, mm
  float sigma_beta = 10.0f;  // appearance intensity bandwidth
  float sigma_gamma = 3.0f;  // smoothness spatial bandwidth, mm
  int iterations = 5;

  void validate() const;
};

// Per-voxel negative log label probabilities, voxel-major like ProbMap.
struct UnaryField {
  Dims dims;
  Spacing spacing;
  int class_count = 0;
  std::vector<float> psi;

  uint64_t voxels() const { return dims.count(); }
  const float* row(uint64_t i) const { return psi.data() + i * class_count; }
  float* row(uint64_t i) { return psi.data() + i * class_count; }
};

// Mean-field iterate; update arithmetic runs in double.
struct MeanFieldState {
  Dims dims;
  int class_count = 0;
  std::vector<double> q;

  const double* row(uint64_t i) const { return q.data() + i * class_count; }
  double* row(uint64_t i) { return q.data() + i * class_count; }
  ProbMap to_probmap(const Spacing& spacing) const;
};

// psi = -log(max(P, floor)).
UnaryField unary_from_probmap(const ProbMap& p, float floor = 1e-6f);

// (appearance, smoothness) kernel values for one voxel pair; positions are
// index times spacing.
std::pair<double, double> pairwise_kernel(uint64_t i, uint64_t j,
                                          const Volume& image,
                                          const CrfParams& params);

// Mean field with pairwise sums from the O(N^2) double loop, self term
// excluded, simultaneous updates, per-sweep normalization. Guarded to 4096
// voxels.
MeanFieldState meanfield_exact(const UnaryField& unary, const Volume& image,
                               const CrfParams& params);

// Same update with filtered messages; linear cost, any size.
MeanFieldState meanfield_fast(const UnaryField& unary, const Volume& image,
                              const CrfParams& params);

// Exact Gibbs energy of a hard labeling: sum of unaries plus Potts pairwise
// over unordered pairs. Guarded to 4096 voxels.
double gibbs_energy(const std::vector<uint8_t>& labels,
                    const UnaryField& unary, const Volume& image,
                    const CrfParams& params);

struct CrfResult {
  Volume labels;  // u8
  ProbMap q;
};

// meanfield_fast on -log(probmap); argmax with ties to the smaller label;
// out-of-mask voxels forced to background.
CrfResult crf_refine(const ProbMap& probmap, const Volume& image,
                     const BrainMask& mask, const CrfParams& params);

}  // namespace voxseg
