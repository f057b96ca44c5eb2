#pragma once

#include "voxseg/network.hpp"
#include "voxseg/probmap.hpp"
#include "voxseg/spectral.hpp"
#include "voxseg/volume.hpp"

namespace voxseg {

// Per-voxel running sums of deposited label distributions plus deposit
// counts; normalizing yields the mean prediction at every voxel.
class VoteAccumulator {
 public:
  VoteAccumulator() = default;
  VoteAccumulator(Dims dims, Spacing spacing, int eta);

  const Dims& dims() const { return dims_; }
  int eta() const { return eta_; }

  // sums[voxel] += dist[0..eta), counts[voxel] += 1.
  void add(uint64_t voxel, const float* dist);

  uint32_t count(uint64_t voxel) const { return counts_[voxel]; }
  const float* sum(uint64_t voxel) const {
    return sums_.data() + voxel * eta_;
  }

  // Mean of the deposits per voxel; voxels without any deposit get the
  // degenerate background distribution. A single deposit passes through
  // bit-exactly.
  ProbMap normalized() const;

 private:
  Dims dims_;
  Spacing spacing_;
  int eta_ = 0;
  std::vector<float> sums_;
  std::vector<uint32_t> counts_;
};

// Infer-mode class distributions at the given centers: one row of
// class_count probabilities per task per center, tasks in the trainer's
// neighborhood offset order (center first, then offsets sorted by
// (dz, dy, dx)).
struct PatchPredictions {
  int task_count = 1;
  int class_count = 2;
  std::vector<uint64_t> centers;
  std::vector<float> probs;  // centers x tasks x classes, row-major

  const float* dist(size_t center, int task) const {
    return probs.data() +
           (center * uint64_t(task_count) + task) * class_count;
  }
};

// Batched forward passes over patch windows centered at `centers`; patches
// overhanging the volume read zeros. Deterministic: identical calls give
// identical bits, and a duplicated center gets an identical row.
PatchPredictions predict_patches(Network& net, const Volume& image,
                                 const CoordField& coords,
                                 const std::vector<uint64_t>& centers,
                                 int patch = 23, int batch_size = 64);

// Routes task t of each center into the accumulator at voxel
// center + offset(t); deposits addressed outside the volume are dropped.
VoteAccumulator accumulate(const PatchPredictions& preds, Dims dims,
                           Spacing spacing);

// accumulate() then per-voxel mean; voxels left without any deposit become
// background.
ProbMap aggregate(const PatchPredictions& preds, Dims dims, Spacing spacing);

struct CascadeOutput {
  ProbMap probmap;             // background 0 + structure classes
  std::vector<float> fg_prob;  // stage-1 foreground probability per voxel
};

// Two-stage segmentation. Stage 1 scores every in-mask voxel on a stride
// grid with the binary net; centers whose aggregated foreground probability
// exceeds 0.5 go through the structures net. Composed distribution:
// P(0) = 1 - fg, P(l) = fg * P_struct(l | foreground), where the structure
// conditional renormalizes the structures net's softmax over labels >= 1.
// Gated-out, out-of-mask, and structurally unvisited voxels are background.
CascadeOutput cascade(const Volume& image, const BrainMask& mask,
                      const CoordField& coords, Network& net_fg,
                      Network& net_struct, int stride = 1, int patch = 23,
                      int batch_size = 64);

// Hard labels: per-voxel argmax, ties to the smaller label id.
inline Volume argmax_labels(const ProbMap& p) { return p.argmax(); }

}  // namespace voxseg
