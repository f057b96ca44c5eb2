#pragma once

#include <cstdint>
#include <filesystem>
#include <variant>
#include <vector>

#include "voxseg/types.hpp"

namespace voxseg {

// Dense 3D scalar grid, x-fastest in memory. Immutable by convention once
// filled: operations below return new volumes instead of mutating.
class Volume {
 public:
  using Storage = std::variant<std::vector<uint8_t>, std::vector<int16_t>,
                               std::vector<float>, std::vector<uint16_t>>;

  Volume() = default;
  Volume(Dims dims, Spacing spacing, VoxelType dtype);

  const Dims& dims() const { return dims_; }
  const Spacing& spacing() const { return spacing_; }
  VoxelType dtype() const { return dtype_; }
  uint64_t size() const { return dims_.count(); }

  uint64_t index(uint32_t x, uint32_t y, uint32_t z) const {
    return (uint64_t(z) * dims_.ny + y) * dims_.nx + x;
  }

  // Generic element access; integer stores round to nearest and clamp to the
  // dtype range. Convenient for construction and tests, not for hot loops.
  double value(uint64_t i) const;
  double value(uint32_t x, uint32_t y, uint32_t z) const {
    return value(index(x, y, z));
  }
  void set(uint64_t i, double v);
  void set(uint32_t x, uint32_t y, uint32_t z, double v) {
    set(index(x, y, z), v);
  }

  template <typename T>
  std::vector<T>& data() {
    return std::get<std::vector<T>>(storage_);
  }
  template <typename T>
  const std::vector<T>& data() const {
    return std::get<std::vector<T>>(storage_);
  }

  const Storage& storage() const { return storage_; }

  // Converted copy of the payload, whatever the stored dtype.
  std::vector<float> as_f32() const;
  std::vector<int32_t> as_i32() const;

  bool is_integer_type() const { return dtype_ != VoxelType::f32; }

 private:
  Dims dims_;
  Spacing spacing_;
  VoxelType dtype_ = VoxelType::u8;
  Storage storage_;
};

// Boolean companion grid marking in-brain voxels.
class BrainMask {
 public:
  BrainMask() = default;
  BrainMask(Dims dims, Spacing spacing);

  const Dims& dims() const { return dims_; }
  const Spacing& spacing() const { return spacing_; }
  uint64_t size() const { return dims_.count(); }

  uint64_t index(uint32_t x, uint32_t y, uint32_t z) const {
    return (uint64_t(z) * dims_.ny + y) * dims_.nx + x;
  }
  bool test(uint64_t i) const { return bits_[i] != 0; }
  bool test(uint32_t x, uint32_t y, uint32_t z) const {
    return test(index(x, y, z));
  }
  void set(uint64_t i, bool v) { bits_[i] = v ? 1 : 0; }
  void set(uint32_t x, uint32_t y, uint32_t z, bool v) {
    set(index(x, y, z), v);
  }

  uint64_t count() const;
  const std::vector<uint8_t>& bits() const { return bits_; }

  // Linear indices of set voxels, ascending.
  std::vector<uint64_t> set_indices() const;

  Volume to_volume() const;  // u8 {0,1}, for file output

 private:
  Dims dims_;
  Spacing spacing_;
  std::vector<uint8_t> bits_;
};

Volume read_volume(const std::filesystem::path& path);
void write_volume(const Volume& v, const std::filesystem::path& path);

// Sets the bit exactly where intensity != 0; all-zero input is an error.
BrainMask mask_from_nonzero(const Volume& v);

struct Point3 {
  double x = 0, y = 0, z = 0;
};

// Arithmetic mean of set-voxel integer coordinates.
Point3 center_of_mass(const BrainMask& m);

// 6-connected component labels (1-based) for set voxels, 0 elsewhere,
// plus per-component voxel counts indexed by label-1.
struct ComponentMap {
  std::vector<uint32_t> label;  // size = mask size
  std::vector<uint64_t> sizes;  // sizes[k] = voxels with label k+1
};
ComponentMap connected_components(const BrainMask& m);

// Keeps only the largest 6-connected component (ties: lowest label wins).
BrainMask largest_component(const BrainMask& m);

// Morphological dilation, `steps` rounds of 6-neighborhood growth.
BrainMask dilate(const BrainMask& m, int steps);

}  // namespace voxseg
