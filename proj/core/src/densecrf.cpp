#include "voxseg/densecrf.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <string>

#include "voxseg/permutohedral.hpp"

namespace voxseg {

namespace {

constexpr uint64_t kExactLimit = 4096;

using RowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void check_unary(const UnaryField& unary, const Volume& image,
                 const CrfParams& params) {
  params.validate();
  if (unary.class_count < 2)
    throw validation_error("unary field needs at least 2 classes");
  if (!(unary.dims == image.dims()))
    throw validation_error("unary/image dim mismatch");
  if (unary.psi.size() != unary.voxels() * uint64_t(unary.class_count))
    throw validation_error("unary field size mismatch");
  for (float v : unary.psi)
    if (!std::isfinite(v))
      throw validation_error("unary field has non-finite entries");
}

double kernel_app(double dx, double dy, double dz, double di,
                  const CrfParams& p) {
  const double sa = double(p.sigma_alpha), sb = double(p.sigma_beta);
  const double r2 = (dx * dx + dy * dy + dz * dz) / (sa * sa);
  return std::exp(-0.5 * r2 - 0.5 * di * di / (sb * sb));
}

double kernel_smooth(double dx, double dy, double dz, const CrfParams& p) {
  const double sg = double(p.sigma_gamma);
  return std::exp(-0.5 * (dx * dx + dy * dy + dz * dz) / (sg * sg));
}

// One parallel update from message sums: q_i(l) = softmax_l(-psi_i(l) -
// msg_i(l)), stabilized by subtracting the row maximum. Both inference paths
// go through here, so zero messages reproduce the unary softmax bitwise.
void apply_update(const UnaryField& unary, const std::vector<double>& msg,
                  std::vector<double>& q) {
  const uint64_t n = unary.voxels();
  const int cls = unary.class_count;
  for (uint64_t i = 0; i < n; ++i) {
    const float* psi = unary.row(i);
    const double* m = msg.data() + i * cls;
    double* row = q.data() + i * cls;
    double top = -std::numeric_limits<double>::infinity();
    for (int l = 0; l < cls; ++l) {
      row[l] = -double(psi[l]) - m[l];
      top = std::max(top, row[l]);
    }
    double sum = 0.0;
    for (int l = 0; l < cls; ++l) {
      row[l] = std::exp(row[l] - top);
      sum += row[l];
    }
    const double inv = 1.0 / sum;
    for (int l = 0; l < cls; ++l) row[l] *= inv;
  }
}

MeanFieldState init_state(const UnaryField& unary) {
  MeanFieldState s;
  s.dims = unary.dims;
  s.class_count = unary.class_count;
  s.q.assign(unary.voxels() * uint64_t(unary.class_count), 0.0);
  std::vector<double> zero(s.q.size(), 0.0);
  apply_update(unary, zero, s.q);
  return s;
}

// Truncated separable Gaussian over the grid, taps within 3 sigma along each
// axis, center tap exactly 1.
struct SpatialBlur {
  Dims dims;
  std::vector<double> wx, wy, wz;
  int rx = 0, ry = 0, rz = 0;

  SpatialBlur(Dims d, Spacing sp, float sigma) : dims(d) {
    auto taps = [sigma](float step, std::vector<double>& w) {
      const int r = int(std::floor(3.0 * double(sigma) / double(step) + 1e-9));
      w.resize(2 * r + 1);
      for (int t = -r; t <= r; ++t) {
        const double u = double(t) * double(step) / double(sigma);
        w[t + r] = std::exp(-0.5 * u * u);
      }
      return r;
    };
    rx = taps(sp.sx, wx);
    ry = taps(sp.sy, wy);
    rz = taps(sp.sz, wz);
  }

  // in and scratch are both overwritten; result lands in `in`.
  void run(std::vector<double>& in, std::vector<double>& scratch) const {
    const int nx = dims.nx, ny = dims.ny, nz = dims.nz;
    auto pass = [&](const std::vector<double>& src, std::vector<double>& dst,
                    int radius, const std::vector<double>& w, int extent,
                    uint64_t stride, auto line_base) {
      const uint64_t lines = dims.count() / uint64_t(extent);
      for (uint64_t line = 0; line < lines; ++line) {
        const uint64_t base = line_base(line);
        for (int u = 0; u < extent; ++u) {
          const int lo = std::max(-radius, -u);
          const int hi = std::min(radius, extent - 1 - u);
          double acc = 0.0;
          for (int t = lo; t <= hi; ++t)
            acc += w[t + radius] * src[base + uint64_t(u + t) * stride];
          dst[base + uint64_t(u) * stride] = acc;
        }
      }
    };
    // x lines are contiguous rows
    pass(in, scratch, rx, wx, nx, 1,
         [&](uint64_t line) { return line * uint64_t(nx); });
    // y lines: one per (z, x)
    pass(scratch, in, ry, wy, ny, uint64_t(nx), [&](uint64_t line) {
      const uint64_t z = line / uint64_t(nx), x = line % uint64_t(nx);
      return z * uint64_t(nx) * uint64_t(ny) + x;
    });
    // z lines: one per (y, x)
    pass(in, scratch, rz, wz, nz, uint64_t(nx) * uint64_t(ny),
         [&](uint64_t line) { return line; });
    in.swap(scratch);
  }
};

// msg_i(l) = v1 * sum_{j != i} k_app(i,j) (1 - q_j(l))
//          + v2 * sum_{j != i} k_smooth(i,j) (1 - q_j(l)),
// assembled from per-label filtered sums with the self term removed.
void messages_from_filtered(const std::vector<double>& q,
                            const std::vector<double>& app,
                            const std::vector<double>& smooth, uint64_t n,
                            int cls, double v1, double v2,
                            std::vector<double>& msg) {
  for (uint64_t i = 0; i < n; ++i) {
    const double* qi = q.data() + i * cls;
    const double* ai = app.data() + i * cls;
    const double* si = smooth.data() + i * cls;
    double* mi = msg.data() + i * cls;
    double asum = 0.0, ssum = 0.0;
    for (int l = 0; l < cls; ++l) {
      asum += ai[l] - qi[l];
      ssum += si[l] - qi[l];
    }
    for (int l = 0; l < cls; ++l)
      mi[l] = v1 * (asum - (ai[l] - qi[l])) + v2 * (ssum - (si[l] - qi[l]));
  }
}

}  // namespace

void CrfParams::validate() const {
  auto bad = [](float v) { return !std::isfinite(v); };
  if (bad(v1) || v1 < 0.0f || bad(v2) || v2 < 0.0f)
    throw validation_error("pairwise weights must be finite and nonnegative");
  if (bad(sigma_alpha) || sigma_alpha <= 0.0f || bad(sigma_beta) ||
      sigma_beta <= 0.0f || bad(sigma_gamma) || sigma_gamma <= 0.0f)
    throw validation_error("kernel bandwidths must be finite and positive");
  if (iterations < 1)
    throw validation_error("mean field needs at least one iteration");
}

ProbMap MeanFieldState::to_probmap(const Spacing& spacing) const {
  ProbMap p(dims, spacing, class_count);
  auto& flat = p.flat();
  for (size_t i = 0; i < q.size(); ++i) flat[i] = float(q[i]);
  return p;
}

UnaryField unary_from_probmap(const ProbMap& p, float floor) {
  if (!(floor > 0.0f) || !std::isfinite(floor))
    throw validation_error("probability floor must be positive");
  UnaryField u;
  u.dims = p.dims();
  u.spacing = p.spacing();
  u.class_count = p.eta();
  u.psi.resize(p.flat().size());
  for (size_t i = 0; i < u.psi.size(); ++i)
    u.psi[i] = -std::log(std::max(p.flat()[i], floor));
  return u;
}

std::pair<double, double> pairwise_kernel(uint64_t i, uint64_t j,
                                          const Volume& image,
                                          const CrfParams& params) {
  params.validate();
  const Dims& d = image.dims();
  if (i >= d.count() || j >= d.count())
    throw validation_error("pairwise kernel voxel out of range");
  const Spacing& sp = image.spacing();
  auto coord = [&](uint64_t v, double& x, double& y, double& z) {
    x = double(v % uint64_t(d.nx)) * double(sp.sx);
    y = double((v / uint64_t(d.nx)) % uint64_t(d.ny)) * double(sp.sy);
    z = double(v / (uint64_t(d.nx) * uint64_t(d.ny))) * double(sp.sz);
  };
  double xi, yi, zi, xj, yj, zj;
  coord(i, xi, yi, zi);
  coord(j, xj, yj, zj);
  const double di = double(image.value(i)) - double(image.value(j));
  return {kernel_app(xi - xj, yi - yj, zi - zj, di, params),
          kernel_smooth(xi - xj, yi - yj, zi - zj, params)};
}

MeanFieldState meanfield_exact(const UnaryField& unary, const Volume& image,
                               const CrfParams& params) {
  check_unary(unary, image, params);
  const uint64_t n = unary.voxels();
  const int cls = unary.class_count;
  if (n > kExactLimit)
    throw validation_error("exact mean field is limited to " +
                           std::to_string(kExactLimit) + " voxels");

  // Pair weights v1*k_app + v2*k_smooth, zero diagonal so the self term
  // drops out of the matrix product.
  const std::vector<float> inten = image.as_f32();
  const Dims& d = unary.dims;
  const Spacing& sp = unary.spacing;
  std::vector<double> px(n), py(n), pz(n);
  for (uint64_t i = 0; i < n; ++i) {
    px[i] = double(i % uint64_t(d.nx)) * double(sp.sx);
    py[i] = double((i / uint64_t(d.nx)) % uint64_t(d.ny)) * double(sp.sy);
    pz[i] = double(i / (uint64_t(d.nx) * uint64_t(d.ny))) * double(sp.sz);
  }
  std::vector<double> w(n * n, 0.0);
  for (uint64_t i = 0; i < n; ++i)
    for (uint64_t j = i + 1; j < n; ++j) {
      const double dx = px[i] - px[j], dy = py[i] - py[j], dz = pz[i] - pz[j];
      const double di = double(inten[i]) - double(inten[j]);
      const double wij = double(params.v1) * kernel_app(dx, dy, dz, di, params) +
                         double(params.v2) * kernel_smooth(dx, dy, dz, params);
      w[i * n + j] = wij;
      w[j * n + i] = wij;
    }
  std::vector<double> wsum(n, 0.0);
  for (uint64_t i = 0; i < n; ++i)
    for (uint64_t j = 0; j < n; ++j) wsum[i] += w[i * n + j];

  MeanFieldState state = init_state(unary);
  std::vector<double> msg(n * uint64_t(cls));
  Eigen::Map<const RowMat> W(w.data(), Eigen::Index(n), Eigen::Index(n));
  RowMat prod = RowMat::Zero(Eigen::Index(n), Eigen::Index(cls));
  for (int it = 0; it < params.iterations; ++it) {
    Eigen::Map<const RowMat> Q(state.q.data(), Eigen::Index(n),
                               Eigen::Index(cls));
    prod.noalias() = W * Q;  // sum_j w_ij q_j(l), self excluded by the zeros
    for (uint64_t i = 0; i < n; ++i)
      for (int l = 0; l < cls; ++l)
        msg[i * cls + l] = wsum[i] - prod(Eigen::Index(i), Eigen::Index(l));
    apply_update(unary, msg, state.q);
  }
  return state;
}

MeanFieldState meanfield_fast(const UnaryField& unary, const Volume& image,
                              const CrfParams& params) {
  check_unary(unary, image, params);
  const uint64_t n = unary.voxels();
  const int cls = unary.class_count;
  const std::vector<float> inten = image.as_f32();
  const Dims& d = unary.dims;
  const Spacing& sp = unary.spacing;

  std::vector<float> feat(n * 4);
  for (uint64_t i = 0; i < n; ++i) {
    feat[i * 4 + 0] =
        float(double(i % uint64_t(d.nx)) * double(sp.sx) / params.sigma_alpha);
    feat[i * 4 + 1] = float(double((i / uint64_t(d.nx)) % uint64_t(d.ny)) *
                            double(sp.sy) / params.sigma_alpha);
    feat[i * 4 + 2] = float(double(i / (uint64_t(d.nx) * uint64_t(d.ny))) *
                            double(sp.sz) / params.sigma_alpha);
    feat[i * 4 + 3] = inten[i] / params.sigma_beta;
  }
  PermutohedralLattice lattice(feat.data(), n, 4);
  SpatialBlur blur(d, sp, params.sigma_gamma);

  MeanFieldState state = init_state(unary);
  std::vector<double> app(n * uint64_t(cls));
  std::vector<double> smooth(n * uint64_t(cls));
  std::vector<double> msg(n * uint64_t(cls));
  std::vector<double> line(n), scratch(n);
  for (int it = 0; it < params.iterations; ++it) {
    lattice.filter(state.q.data(), app.data(), cls);
    for (int l = 0; l < cls; ++l) {
      for (uint64_t i = 0; i < n; ++i) line[i] = state.q[i * cls + l];
      blur.run(line, scratch);
      for (uint64_t i = 0; i < n; ++i) smooth[i * cls + l] = line[i];
    }
    messages_from_filtered(state.q, app, smooth, n, cls, double(params.v1),
                           double(params.v2), msg);
    apply_update(unary, msg, state.q);
  }
  return state;
}

double gibbs_energy(const std::vector<uint8_t>& labels,
                    const UnaryField& unary, const Volume& image,
                    const CrfParams& params) {
  check_unary(unary, image, params);
  const uint64_t n = unary.voxels();
  if (n > kExactLimit)
    throw validation_error("exact energy is limited to " +
                           std::to_string(kExactLimit) + " voxels");
  if (labels.size() != n)
    throw validation_error("labeling size mismatch");
  for (uint64_t i = 0; i < n; ++i)
    if (labels[i] >= unary.class_count)
      throw validation_error("label id out of range");

  double energy = 0.0;
  for (uint64_t i = 0; i < n; ++i) energy += double(unary.row(i)[labels[i]]);

  const std::vector<float> inten = image.as_f32();
  const Dims& d = unary.dims;
  const Spacing& sp = unary.spacing;
  std::vector<double> px(n), py(n), pz(n);
  for (uint64_t i = 0; i < n; ++i) {
    px[i] = double(i % uint64_t(d.nx)) * double(sp.sx);
    py[i] = double((i / uint64_t(d.nx)) % uint64_t(d.ny)) * double(sp.sy);
    pz[i] = double(i / (uint64_t(d.nx) * uint64_t(d.ny))) * double(sp.sz);
  }
  for (uint64_t i = 0; i < n; ++i)
    for (uint64_t j = i + 1; j < n; ++j) {
      if (labels[i] == labels[j]) continue;
      const double dx = px[i] - px[j], dy = py[i] - py[j], dz = pz[i] - pz[j];
      const double di = double(inten[i]) - double(inten[j]);
      energy += double(params.v1) * kernel_app(dx, dy, dz, di, params) +
                double(params.v2) * kernel_smooth(dx, dy, dz, params);
    }
  return energy;
}

CrfResult crf_refine(const ProbMap& probmap, const Volume& image,
                     const BrainMask& mask, const CrfParams& params) {
  if (!(probmap.dims() == image.dims()) || !(probmap.dims() == mask.dims()))
    throw validation_error("probmap/image/mask dim mismatch");
  UnaryField unary = unary_from_probmap(probmap);
  MeanFieldState state = meanfield_fast(unary, image, params);

  CrfResult out{Volume(probmap.dims(), probmap.spacing(), VoxelType::u8),
                state.to_probmap(probmap.spacing())};
  auto& lab = out.labels.data<uint8_t>();
  const int cls = state.class_count;
  for (uint64_t i = 0; i < state.dims.count(); ++i) {
    if (!mask.test(i)) {
      lab[i] = 0;
      out.q.set_delta(i, 0);
      continue;
    }
    const double* row = state.row(i);
    int best = 0;
    for (int l = 1; l < cls; ++l)
      if (row[l] > row[best]) best = l;
    lab[i] = uint8_t(best);
  }
  return out;
}

}  // namespace voxseg
