#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace voxseg {

// Thrown for invalid user input (files, configs, CLI arguments). The CLI maps
// this to exit code 2; internal failures keep std::runtime_error (exit 3).
struct validation_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Dims {
  uint32_t nx = 0, ny = 0, nz = 0;

  bool operator==(const Dims&) const = default;
  uint64_t count() const { return uint64_t(nx) * ny * nz; }
};

struct Spacing {
  float sx = 1.0f, sy = 1.0f, sz = 1.0f;

  bool operator==(const Spacing&) const = default;
};

// On-disk dtype codes, fixed by the VVOL format.
enum class VoxelType : uint8_t { u8 = 0, i16 = 1, f32 = 2, u16 = 3 };

const char* voxel_type_name(VoxelType t);
size_t voxel_type_size(VoxelType t);

inline std::string dims_str(const Dims& d) {
  return std::to_string(d.nx) + "x" + std::to_string(d.ny) + "x" +
         std::to_string(d.nz);
}

}  // namespace voxseg
