#pragma once

#include <array>

#include "voxseg/network.hpp"
#include "voxseg/spectral.hpp"
#include "voxseg/volume.hpp"

namespace voxseg {

enum class Stage { fg_bg, structures };

// Per-image patch quotas. fg_bg draws fg_quota foreground and bg_quota
// in-mask background centers; structures draws per_structure centers per
// label id, doubled for ids listed in doubled_ids. When a class population
// is smaller than its quota the sampler falls back to drawing with
// replacement unless cap_to_population shrinks the quota instead.
struct SamplingPlan {
  Stage stage = Stage::fg_bg;
  int patch = 23;
  long long fg_quota = 30000;
  long long bg_quota = 30000;
  long long per_structure = 3000;
  std::vector<int> doubled_ids;
  bool jitter = false;
  bool cap_to_population = false;

  void validate() const;
};

struct TrainConfig {
  double base_lr = 0.01;
  double power = 0.9;
  double momentum = 0.9;
  int batch_size = 64;
  int epochs = 1;
  long long max_iter = 0;  // 0: epochs x batches-per-epoch
  uint64_t seed = 1;
  int neighborhood = 1;    // 1 center, 7 center+faces, 27 full 3^3
  bool use_coords = true;  // false: no coordinate concat (ablation arm)

  void validate() const;
};

struct TrainSample {
  Tensor patch;  // 1 x 1 x s x s x s
  std::array<float, CoordField::kChannels> coords{};
  std::vector<int> targets;
};

struct SampleRef {
  int image = 0;
  uint64_t center = 0;        // target reference voxel
  uint64_t patch_center = 0;  // extraction center (jittered copy of center)
};

struct SampleSet {
  int task_count = 1;
  std::vector<SampleRef> refs;
  std::vector<int> targets;  // refs.size() rows of task_count ids
  std::vector<std::string> warnings;
};

// Task offset order: center first, remaining offsets sorted by (dz,dy,dx).
std::vector<std::array<int, 3>> neighborhood_offsets(int neighborhood);

// size^3 window centered on `center`; voxels outside the volume read as 0.
Tensor extract_patch(const Volume& v, uint64_t center, int size = 23);
void extract_patch_into(const std::vector<float>& voxels, const Dims& dims,
                        uint64_t center, int size, float* dst);

// Label at the center, then at each neighborhood offset; outside-volume
// neighbors read as background 0.
std::vector<int> multitask_targets(const Volume& seg, uint64_t center,
                                   int neighborhood);

// Class-balanced center sampling on one image. Jitter shifts patch_center
// by a uniform {-1,0,1}^3 offset (clamped to the volume); targets and
// coordinates stay referenced to the unshifted center voxel's class.
SampleSet sample_patches(const Volume& seg, const BrainMask& mask,
                         const SamplingPlan& plan, int neighborhood, Rng& rng);

double poly_lr(long long iter, const TrainConfig& cfg);

// v <- momentum*v - lr*g; theta <- theta + v. Velocity is created on first
// use; non-finite gradients abort with the offending parameter named.
void sgd_step(const std::vector<Tensor*>& params,
              const std::vector<Tensor*>& grads, double lr, double momentum,
              std::vector<std::vector<float>>& velocity);
void sgd_step(Network& net, double lr, double momentum,
              std::vector<std::vector<float>>& velocity);

struct TrainItem {
  const Volume* image = nullptr;  // intensities
  const Volume* seg = nullptr;    // internal label ids
  const BrainMask* mask = nullptr;
  const CoordField* coords = nullptr;
};

struct IterStat {
  long long iter = 0;
  double lr = 0;
  double loss = 0;
};

struct EpochStat {
  int epoch = 0;
  double mean_loss = 0;
  std::vector<double> task_accuracy;  // center task first
};

struct RunReport {
  std::vector<std::string> warnings;
  std::vector<IterStat> iters;
  std::vector<EpochStat> epochs;
  long long max_iter = 0;
  long long skipped_small_batches = 0;  // trailing batches of size 1
};

// One stage: sample each epoch with seeds derived from cfg.seed, walk
// shuffled minibatches with the poly schedule. class_count is the label
// count of the structures stage; fg_bg always trains 2 classes.
Network train_stage(const std::vector<TrainItem>& data,
                    const SamplingPlan& plan, const TrainConfig& cfg,
                    int class_count, RunReport& report);

struct TrainOutput {
  Network fg_bg;
  Network structures;
  RunReport fg_report;
  RunReport struct_report;
};

// The full two-network cascade: foreground/background first, structures
// second (seeded at cfg.seed + 1 so the stages draw independent streams).
TrainOutput train(const std::vector<TrainItem>& data,
                  const SamplingPlan& fg_plan, const SamplingPlan& struct_plan,
                  const TrainConfig& cfg, int class_count);

}  // namespace voxseg
