#pragma once

#include <string>
#include <vector>

#include "voxseg/labels.hpp"
#include "voxseg/volume.hpp"

namespace voxseg {

enum class ShapeKind { sphere, ellipsoid, shell };

struct StructureSpec {
  ShapeKind shape = ShapeKind::sphere;
  double cx = 0, cy = 0, cz = 0;  // center, voxel coordinates
  double rx = 1, ry = 1, rz = 1;  // semi-axes; spheres use rx for all three
  double inner_frac = 0;          // shells: inner boundary as fraction of outer
  int label = 1;                  // internal id, 1..eta-1
  double mean = 100;              // intensity statistics inside the shape
  double stddev = 0;
  std::string name;
};

struct PhantomSpec {
  std::string name;
  Dims dims{64, 64, 64};
  Spacing spacing{1, 1, 1};
  std::vector<StructureSpec> structures;  // later entries overwrite earlier
  double background_mean = 30;
  double background_std = 8;
  uint64_t seed = 0;
  double bias_amplitude = 0;  // multiplicative smooth polynomial field

  int eta() const;       // label count including background
  void validate() const;
};

struct PhantomCase {
  Volume image;  // float32
  Volume seg;    // uint8 internal labels
  BrainMask mask;
};

// Rasterizes the spec: per-voxel Gaussian intensities about each structure
// mean, background noise on the in-mask remainder, mask = structure union
// dilated by 2 voxels (6-connectivity steps). Deterministic given spec.seed.
PhantomCase generate(const PhantomSpec& spec);

// Identity label table (id == raw) for a generated case.
LabelTable phantom_label_table(const PhantomSpec& spec);

// Canonical desk-scale phantoms:
//   [0] nested-shells: 3 concentric classes plus background
//   [1] sphere-grid: 8 spheres in a 2x2x2 arrangement, two low-contrast pairs
//       (pair mean separation = 0.5 * stddev)
//   [2] mirrored-pair: two spheres with identical intensity statistics on
//       opposite sides of the midplane, separable only by position
std::vector<PhantomSpec> default_suite();

}  // namespace voxseg
