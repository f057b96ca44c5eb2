#include <cmath>
#include <string>

#include "voxseg/spectral.hpp"

namespace voxseg {

Volume CoordField::channel_volume(int c) const {
  Volume v(dims_, spacing_, VoxelType::f32);
  auto& out = v.data<float>();
  for (uint64_t i = 0; i < dims_.count(); ++i) out[i] = channel(i, c);
  return v;
}

namespace {

// Flip so the strongest correlation with a centered Cartesian axis is
// positive; an (near) uncorrelated eigenvector gets its largest-magnitude
// entry made positive instead.
void fix_sign(std::vector<double>& f, const SparseLaplacian& L,
              const Point3& com) {
  const Dims& d = L.dims();
  const uint64_t plane = uint64_t(d.nx) * d.ny;
  double corr[3] = {0, 0, 0};
  double cnorm2[3] = {0, 0, 0};
  for (uint64_t row = 0; row < L.n(); ++row) {
    const uint64_t i = L.voxel_of(row);
    const double c[3] = {double(i % d.nx) - com.x,
                         double((i / d.nx) % d.ny) - com.y,
                         double(i / plane) - com.z};
    for (int a = 0; a < 3; ++a) {
      corr[a] += f[row] * c[a];
      cnorm2[a] += c[a] * c[a];
    }
  }
  int best = -1;
  double best_mag = 0;
  for (int a = 0; a < 3; ++a) {
    const double denom = std::sqrt(cnorm2[a]);
    const double r = denom > 0 ? std::abs(corr[a]) / denom : 0.0;
    if (r > best_mag) {
      best_mag = r;
      best = a;
    }
  }
  double pivot;
  if (best >= 0 && best_mag >= 1e-6) {
    pivot = corr[best];
  } else {
    uint64_t arg = 0;
    for (uint64_t row = 1; row < L.n(); ++row)
      if (std::abs(f[row]) > std::abs(f[arg])) arg = row;
    pivot = f[arg];
  }
  if (pivot < 0)
    for (auto& v : f) v = -v;
}

}  // namespace

CoordField spectral_coordinates(const BrainMask& m, SpectralReport* report) {
  const ComponentMap cm = connected_components(m);
  if (cm.sizes.size() != 1) {
    std::string msg = "mask is not connected: " +
                      std::to_string(cm.sizes.size()) + " components of sizes";
    for (uint64_t s : cm.sizes) msg += " " + std::to_string(s);
    msg += "; reduce to the largest component first";
    throw validation_error(msg);
  }
  if (m.count() < 5)
    throw validation_error("mask too small for 3 spectral channels (" +
                           std::to_string(m.count()) + " voxels)");

  const SparseLaplacian L(m);
  SolveStats stats;
  auto pairs = smallest_eigenpairs(L, 4, &stats);
  if (pairs[1].lambda <= 0)
    throw std::runtime_error(
        "connected mask produced a repeated zero eigenvalue");

  const Point3 com = center_of_mass(m);
  CoordField field(m.dims(), m.spacing());
  if (report) {
    report->lambdas.clear();
    report->residuals.clear();
    report->matvecs = stats.matvecs;
    report->restarts = stats.restarts;
  }

  const double n = double(L.n());
  for (int c = 0; c < 3; ++c) {
    EigenPair& p = pairs[c + 1];
    fix_sign(p.f, L, com);

    // Unit-norm and mean-free over the mask, so std = 1/sqrt(n); the
    // standardized channel is just sqrt(n) * f, recentred for safety.
    double mean = 0;
    for (double v : p.f) mean += v;
    mean /= n;
    double var = 0;
    for (double v : p.f) var += (v - mean) * (v - mean);
    var /= n;
    const double scale = var > 0 ? 1.0 / std::sqrt(var) : 0.0;
    for (uint64_t row = 0; row < L.n(); ++row)
      field.at(L.voxel_of(row))[c] = float((p.f[row] - mean) * scale);

    if (report) {
      report->lambdas.push_back(p.lambda);
      report->residuals.push_back(stats.residuals[c + 1]);
    }
  }
  return field;
}

CoordField coordinate_features(const BrainMask& m, SpectralReport* report) {
  CoordField field = spectral_coordinates(m, report);
  const Point3 com = center_of_mass(m);
  const Dims& d = m.dims();
  const uint64_t plane = uint64_t(d.nx) * d.ny;
  for (uint64_t i = 0; i < m.size(); ++i) {
    if (!m.test(i)) continue;
    float* row = field.at(i);
    row[3] = float(double(i % d.nx) - com.x);
    row[4] = float(double((i / d.nx) % d.ny) - com.y);
    row[5] = float(double(i / plane) - com.z);
  }
  return field;
}

}  // namespace voxseg
