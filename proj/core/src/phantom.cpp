#include "voxseg/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "voxseg/rng.hpp"

namespace voxseg {

int PhantomSpec::eta() const {
  int top = 0;
  for (const auto& s : structures) top = std::max(top, s.label);
  return top + 1;
}

void PhantomSpec::validate() const {
  std::vector<std::string> problems;
  if (dims.nx == 0 || dims.ny == 0 || dims.nz == 0)
    problems.push_back("dims must be positive");
  if (structures.empty())
    problems.push_back("at least one structure required (mask would be empty)");
  for (size_t i = 0; i < structures.size(); ++i) {
    const auto& s = structures[i];
    const std::string tag = "structure " + std::to_string(i) +
                            (s.name.empty() ? "" : " (" + s.name + ")");
    if (s.label < 1 || s.label > 255)
      problems.push_back(tag + ": label " + std::to_string(s.label) +
                         " outside 1..255");
    if (!(s.rx > 0) || (s.shape != ShapeKind::sphere && (!(s.ry > 0) || !(s.rz > 0))))
      problems.push_back(tag + ": radii must be positive");
    if (s.shape == ShapeKind::shell &&
        (s.inner_frac < 0 || s.inner_frac >= 1))
      problems.push_back(tag + ": shell inner_frac must lie in [0,1)");
    if (s.stddev < 0) problems.push_back(tag + ": stddev must be nonnegative");
  }
  if (background_std < 0) problems.push_back("background_std must be nonnegative");
  if (bias_amplitude < 0) problems.push_back("bias_amplitude must be nonnegative");
  if (!problems.empty()) {
    std::string msg = "invalid phantom spec" +
                      (name.empty() ? std::string() : " '" + name + "'") + ":";
    for (const auto& p : problems) msg += "\n  - " + p;
    throw validation_error(msg);
  }
}

namespace {

struct Extent {
  double rx, ry, rz;
};

Extent semi_axes(const StructureSpec& s) {
  if (s.shape == ShapeKind::sphere) return {s.rx, s.rx, s.rx};
  return {s.rx, s.ry, s.rz};
}

// Squared normalized distance from the structure center.
inline double norm_dist2(const StructureSpec& s, const Extent& e, uint32_t x,
                         uint32_t y, uint32_t z) {
  const double dx = (double(x) - s.cx) / e.rx;
  const double dy = (double(y) - s.cy) / e.ry;
  const double dz = (double(z) - s.cz) / e.rz;
  return dx * dx + dy * dy + dz * dz;
}

inline bool contains(const StructureSpec& s, double u2) {
  if (s.shape == ShapeKind::shell)
    return u2 <= 1.0 && u2 > s.inner_frac * s.inner_frac;
  return u2 <= 1.0;
}

}  // namespace

PhantomCase generate(const PhantomSpec& spec) {
  spec.validate();
  const Dims& d = spec.dims;

  Volume seg(d, spec.spacing, VoxelType::u8);
  auto& lab = seg.data<uint8_t>();
  for (const auto& s : spec.structures) {
    const Extent e = semi_axes(s);
    const uint32_t x0 = uint32_t(std::max(0.0, std::floor(s.cx - e.rx)));
    const uint32_t x1 = uint32_t(std::min(double(d.nx) - 1, std::ceil(s.cx + e.rx)));
    const uint32_t y0 = uint32_t(std::max(0.0, std::floor(s.cy - e.ry)));
    const uint32_t y1 = uint32_t(std::min(double(d.ny) - 1, std::ceil(s.cy + e.ry)));
    const uint32_t z0 = uint32_t(std::max(0.0, std::floor(s.cz - e.rz)));
    const uint32_t z1 = uint32_t(std::min(double(d.nz) - 1, std::ceil(s.cz + e.rz)));
    for (uint32_t z = z0; z <= z1; ++z)
      for (uint32_t y = y0; y <= y1; ++y)
        for (uint32_t x = x0; x <= x1; ++x)
          if (contains(s, norm_dist2(s, e, x, y, z)))
            lab[seg.index(x, y, z)] = uint8_t(s.label);
  }

  BrainMask fg(d, spec.spacing);
  bool any = false;
  for (uint64_t i = 0; i < seg.size(); ++i) {
    if (lab[i] != 0) {
      fg.set(i, true);
      any = true;
    }
  }
  if (!any)
    throw validation_error("phantom spec rasterizes to an empty mask");
  BrainMask mask = dilate(fg, 2);

  // Intensity statistics per label id, last writer wins like rasterization.
  std::map<int, std::pair<double, double>> stats;
  for (const auto& s : spec.structures) stats[s.label] = {s.mean, s.stddev};

  Volume image(d, spec.spacing, VoxelType::f32);
  auto& img = image.data<float>();
  Rng rng(spec.seed);
  for (uint64_t i = 0; i < image.size(); ++i) {
    if (lab[i] != 0) {
      const auto& [mean, sd] = stats[lab[i]];
      img[i] = float(rng.normal(mean, sd));
    } else if (mask.test(i)) {
      img[i] = float(rng.normal(spec.background_mean, spec.background_std));
    }
  }

  if (spec.bias_amplitude > 0) {
    // Fixed low-order polynomial, rescaled so the modulation peak is exactly
    // the requested amplitude.
    const auto poly = [&](uint32_t x, uint32_t y, uint32_t z) {
      const double u = d.nx > 1 ? 2.0 * x / (d.nx - 1) - 1.0 : 0.0;
      const double v = d.ny > 1 ? 2.0 * y / (d.ny - 1) - 1.0 : 0.0;
      const double w = d.nz > 1 ? 2.0 * z / (d.nz - 1) - 1.0 : 0.0;
      return 0.4 * u + 0.3 * v + 0.25 * w + 0.35 * u * v - 0.3 * w * w;
    };
    double peak = 0;
    for (uint32_t z = 0; z < d.nz; ++z)
      for (uint32_t y = 0; y < d.ny; ++y)
        for (uint32_t x = 0; x < d.nx; ++x)
          if (mask.test(x, y, z))
            peak = std::max(peak, std::abs(poly(x, y, z)));
    if (peak > 0) {
      const double scale = spec.bias_amplitude / peak;
      for (uint32_t z = 0; z < d.nz; ++z)
        for (uint32_t y = 0; y < d.ny; ++y)
          for (uint32_t x = 0; x < d.nx; ++x) {
            const uint64_t i = image.index(x, y, z);
            if (mask.test(i)) img[i] *= float(1.0 + scale * poly(x, y, z));
          }
    }
  }

  return {std::move(image), std::move(seg), std::move(mask)};
}

LabelTable phantom_label_table(const PhantomSpec& spec) {
  std::map<int, std::string> names;
  for (const auto& s : spec.structures)
    names[s.label] = s.name.empty() ? "class_" + std::to_string(s.label)
                                    : s.name;
  std::vector<LabelEntry> entries;
  for (const auto& [label, name] : names)
    entries.push_back({label, label, name});
  return LabelTable(std::move(entries));
}

std::vector<PhantomSpec> default_suite() {
  std::vector<PhantomSpec> suite;

  {
    PhantomSpec p;
    p.name = "nested-shells";
    p.background_mean = 25;
    p.background_std = 8;
    const double c = 32;
    p.structures = {
        {ShapeKind::sphere, c, c, c, 9, 9, 9, 0.0, 1, 60, 8, "core"},
        {ShapeKind::shell, c, c, c, 14, 14, 14, 9.0 / 14.0, 2, 105, 8, "mid"},
        {ShapeKind::shell, c, c, c, 19, 19, 19, 14.0 / 19.0, 3, 150, 8,
         "outer"},
    };
    suite.push_back(std::move(p));
  }

  {
    PhantomSpec p;
    p.name = "sphere-grid";
    p.background_mean = 15;
    p.background_std = 8;
    const double lo = 23, hi = 41, r = 7, sd = 12;
    // Labels 1/2 and 3/4 are the low-contrast pairs: mean gap = 0.5 * stddev.
    p.structures = {
        {ShapeKind::sphere, lo, lo, lo, r, r, r, 0.0, 1, 60, sd, "pair_a_1"},
        {ShapeKind::sphere, hi, lo, lo, r, r, r, 0.0, 2, 66, sd, "pair_a_2"},
        {ShapeKind::sphere, lo, hi, lo, r, r, r, 0.0, 3, 120, sd, "pair_b_1"},
        {ShapeKind::sphere, hi, hi, lo, r, r, r, 0.0, 4, 126, sd, "pair_b_2"},
        {ShapeKind::sphere, lo, lo, hi, r, r, r, 0.0, 5, 30, sd, "solo_1"},
        {ShapeKind::sphere, hi, lo, hi, r, r, r, 0.0, 6, 90, sd, "solo_2"},
        {ShapeKind::sphere, lo, hi, hi, r, r, r, 0.0, 7, 160, sd, "solo_3"},
        {ShapeKind::sphere, hi, hi, hi, r, r, r, 0.0, 8, 200, sd, "solo_4"},
    };
    suite.push_back(std::move(p));
  }

  {
    PhantomSpec p;
    p.name = "mirrored-pair";
    p.background_mean = 40;
    p.background_std = 8;
    // Same intensity statistics on both sides: position is the only cue.
    p.structures = {
        {ShapeKind::sphere, 21, 32, 32, 10, 10, 10, 0.0, 1, 100, 8, "left"},
        {ShapeKind::sphere, 43, 32, 32, 10, 10, 10, 0.0, 2, 100, 8, "right"},
    };
    suite.push_back(std::move(p));
  }

  return suite;
}

}  // namespace voxseg
