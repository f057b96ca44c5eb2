#include "voxseg/volume.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <queue>

static_assert(std::endian::native == std::endian::little,
              "VVOL I/O assumes a little-endian host");

namespace voxseg {

const char* voxel_type_name(VoxelType t) {
  switch (t) {
    case VoxelType::u8: return "uint8";
    case VoxelType::i16: return "int16";
    case VoxelType::f32: return "float32";
    case VoxelType::u16: return "uint16";
  }
  return "?";
}

size_t voxel_type_size(VoxelType t) {
  switch (t) {
    case VoxelType::u8: return 1;
    case VoxelType::i16: return 2;
    case VoxelType::f32: return 4;
    case VoxelType::u16: return 2;
  }
  return 0;
}

namespace {

constexpr char kMagic[8] = {'V', 'V', 'O', 'L', '0', '0', '0', '1'};
constexpr size_t kHeaderBytes = 33;

void check_invariants(const Dims& d, const Spacing& s) {
  if (d.nx == 0 || d.ny == 0 || d.nz == 0)
    throw validation_error("volume dims must be positive, got " + dims_str(d));
  if (!(s.sx > 0.0f) || !(s.sy > 0.0f) || !(s.sz > 0.0f))
    throw validation_error("voxel spacing must be strictly positive");
}

template <typename T>
double clamp_round(double v) {
  if constexpr (std::is_integral_v<T>) {
    v = std::nearbyint(v);
    v = std::clamp(v, double(std::numeric_limits<T>::min()),
                   double(std::numeric_limits<T>::max()));
  }
  return v;
}

}  // namespace

Volume::Volume(Dims dims, Spacing spacing, VoxelType dtype)
    : dims_(dims), spacing_(spacing), dtype_(dtype) {
  check_invariants(dims, spacing);
  const size_t n = dims.count();
  switch (dtype) {
    case VoxelType::u8: storage_ = std::vector<uint8_t>(n, 0); break;
    case VoxelType::i16: storage_ = std::vector<int16_t>(n, 0); break;
    case VoxelType::f32: storage_ = std::vector<float>(n, 0.0f); break;
    case VoxelType::u16: storage_ = std::vector<uint16_t>(n, 0); break;
  }
}

double Volume::value(uint64_t i) const {
  return std::visit([i](const auto& v) { return double(v[i]); }, storage_);
}

void Volume::set(uint64_t i, double val) {
  std::visit(
      [i, val](auto& v) {
        using T = typename std::decay_t<decltype(v)>::value_type;
        v[i] = T(clamp_round<T>(val));
      },
      storage_);
}

std::vector<float> Volume::as_f32() const {
  std::vector<float> out(size());
  std::visit(
      [&out](const auto& v) {
        std::transform(v.begin(), v.end(), out.begin(),
                       [](auto x) { return float(x); });
      },
      storage_);
  return out;
}

std::vector<int32_t> Volume::as_i32() const {
  std::vector<int32_t> out(size());
  std::visit(
      [&out](const auto& v) {
        std::transform(v.begin(), v.end(), out.begin(),
                       [](auto x) { return int32_t(std::lround(double(x))); });
      },
      storage_);
  return out;
}

Volume read_volume(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw validation_error("cannot open volume file: " + path.string());

  char header[kHeaderBytes];
  in.read(header, kHeaderBytes);
  if (in.gcount() != std::streamsize(kHeaderBytes))
    throw validation_error("truncated volume file (header): " + path.string());
  if (std::memcmp(header, kMagic, 8) != 0)
    throw validation_error("bad magic in " + path.string() +
                           " (expected VVOL0001)");

  Dims dims;
  Spacing sp;
  std::memcpy(&dims.nx, header + 8, 4);
  std::memcpy(&dims.ny, header + 12, 4);
  std::memcpy(&dims.nz, header + 16, 4);
  const uint8_t code = uint8_t(header[20]);
  if (code > 3)
    throw validation_error("unknown dtype code " + std::to_string(code) +
                           " in " + path.string());
  std::memcpy(&sp.sx, header + 21, 4);
  std::memcpy(&sp.sy, header + 25, 4);
  std::memcpy(&sp.sz, header + 29, 4);

  Volume v(dims, sp, VoxelType(code));
  const size_t payload = dims.count() * voxel_type_size(v.dtype());
  const auto read_payload = [&](auto& vec) {
    in.read(reinterpret_cast<char*>(vec.data()), payload);
    if (in.gcount() != std::streamsize(payload))
      throw validation_error("truncated volume file (payload): " +
                             path.string() + ", expected " +
                             std::to_string(payload) + " bytes");
  };
  std::visit(read_payload, const_cast<Volume::Storage&>(v.storage()));

  // A well-formed file ends exactly at the payload.
  if (in.peek() != std::char_traits<char>::eof())
    throw validation_error("trailing bytes after payload in " + path.string());
  return v;
}

void write_volume(const Volume& v, const std::filesystem::path& path) {
  check_invariants(v.dims(), v.spacing());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw validation_error("cannot write volume file: " + path.string());

  char header[kHeaderBytes];
  std::memcpy(header, kMagic, 8);
  const Dims& d = v.dims();
  const Spacing& s = v.spacing();
  std::memcpy(header + 8, &d.nx, 4);
  std::memcpy(header + 12, &d.ny, 4);
  std::memcpy(header + 16, &d.nz, 4);
  header[20] = char(uint8_t(v.dtype()));
  std::memcpy(header + 21, &s.sx, 4);
  std::memcpy(header + 25, &s.sy, 4);
  std::memcpy(header + 29, &s.sz, 4);
  out.write(header, kHeaderBytes);

  std::visit(
      [&out](const auto& vec) {
        using T = typename std::decay_t<decltype(vec)>::value_type;
        out.write(reinterpret_cast<const char*>(vec.data()),
                  std::streamsize(vec.size() * sizeof(T)));
      },
      v.storage());
  if (!out)
    throw std::runtime_error("short write to " + path.string());
}

BrainMask::BrainMask(Dims dims, Spacing spacing)
    : dims_(dims), spacing_(spacing), bits_(dims.count(), 0) {
  check_invariants(dims, spacing);
}

uint64_t BrainMask::count() const {
  uint64_t c = 0;
  for (uint8_t b : bits_) c += b;
  return c;
}

std::vector<uint64_t> BrainMask::set_indices() const {
  std::vector<uint64_t> idx;
  idx.reserve(size() / 4);
  for (uint64_t i = 0; i < bits_.size(); ++i)
    if (bits_[i]) idx.push_back(i);
  return idx;
}

Volume BrainMask::to_volume() const {
  Volume v(dims_, spacing_, VoxelType::u8);
  auto& out = v.data<uint8_t>();
  std::copy(bits_.begin(), bits_.end(), out.begin());
  return v;
}

BrainMask mask_from_nonzero(const Volume& v) {
  BrainMask m(v.dims(), v.spacing());
  bool any = false;
  std::visit(
      [&](const auto& vec) {
        for (uint64_t i = 0; i < vec.size(); ++i) {
          if (vec[i] != 0) {
            m.set(i, true);
            any = true;
          }
        }
      },
      v.storage());
  if (!any)
    throw validation_error(
        "mask_from_nonzero: volume is all zero, empty brain mask");
  return m;
}

Point3 center_of_mass(const BrainMask& m) {
  double sx = 0, sy = 0, sz = 0;
  uint64_t n = 0;
  const Dims& d = m.dims();
  uint64_t i = 0;
  for (uint32_t z = 0; z < d.nz; ++z)
    for (uint32_t y = 0; y < d.ny; ++y)
      for (uint32_t x = 0; x < d.nx; ++x, ++i) {
        if (!m.test(i)) continue;
        sx += x;
        sy += y;
        sz += z;
        ++n;
      }
  if (n == 0) throw validation_error("center_of_mass: empty mask");
  return {sx / double(n), sy / double(n), sz / double(n)};
}

ComponentMap connected_components(const BrainMask& m) {
  const Dims& d = m.dims();
  ComponentMap cm;
  cm.label.assign(m.size(), 0);

  std::vector<uint64_t> stack;
  uint32_t next = 0;
  for (uint64_t seed = 0; seed < m.size(); ++seed) {
    if (!m.test(seed) || cm.label[seed] != 0) continue;
    ++next;
    uint64_t count = 0;
    stack.push_back(seed);
    cm.label[seed] = next;
    while (!stack.empty()) {
      const uint64_t i = stack.back();
      stack.pop_back();
      ++count;
      const uint32_t x = uint32_t(i % d.nx);
      const uint32_t y = uint32_t((i / d.nx) % d.ny);
      const uint32_t z = uint32_t(i / (uint64_t(d.nx) * d.ny));
      const auto visit = [&](uint64_t j) {
        if (m.test(j) && cm.label[j] == 0) {
          cm.label[j] = next;
          stack.push_back(j);
        }
      };
      if (x > 0) visit(i - 1);
      if (x + 1 < d.nx) visit(i + 1);
      if (y > 0) visit(i - d.nx);
      if (y + 1 < d.ny) visit(i + d.nx);
      if (z > 0) visit(i - uint64_t(d.nx) * d.ny);
      if (z + 1 < d.nz) visit(i + uint64_t(d.nx) * d.ny);
    }
    cm.sizes.push_back(count);
  }
  return cm;
}

BrainMask dilate(const BrainMask& m, int steps) {
  const Dims& d = m.dims();
  std::vector<uint8_t> cur = m.bits();
  std::vector<uint8_t> next(cur.size());
  for (int s = 0; s < steps; ++s) {
    next = cur;
    uint64_t i = 0;
    for (uint32_t z = 0; z < d.nz; ++z)
      for (uint32_t y = 0; y < d.ny; ++y)
        for (uint32_t x = 0; x < d.nx; ++x, ++i) {
          if (cur[i]) continue;
          const bool hit =
              (x > 0 && cur[i - 1]) || (x + 1 < d.nx && cur[i + 1]) ||
              (y > 0 && cur[i - d.nx]) || (y + 1 < d.ny && cur[i + d.nx]) ||
              (z > 0 && cur[i - uint64_t(d.nx) * d.ny]) ||
              (z + 1 < d.nz && cur[i + uint64_t(d.nx) * d.ny]);
          if (hit) next[i] = 1;
        }
    cur.swap(next);
  }
  BrainMask out(d, m.spacing());
  for (uint64_t i = 0; i < cur.size(); ++i) out.set(i, cur[i] != 0);
  return out;
}

BrainMask largest_component(const BrainMask& m) {
  const ComponentMap cm = connected_components(m);
  if (cm.sizes.empty()) throw validation_error("largest_component: empty mask");
  const uint32_t best =
      uint32_t(std::max_element(cm.sizes.begin(), cm.sizes.end()) -
               cm.sizes.begin()) +
      1;
  BrainMask out(m.dims(), m.spacing());
  for (uint64_t i = 0; i < m.size(); ++i)
    if (cm.label[i] == best) out.set(i, true);
  return out;
}

}  // namespace voxseg
