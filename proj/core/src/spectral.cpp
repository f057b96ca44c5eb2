#include "voxseg/spectral.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "voxseg/rng.hpp"

namespace voxseg {

SparseLaplacian::SparseLaplacian(const BrainMask& m) : dims_(m.dims()) {
  index_of_.assign(m.size(), -1);
  for (uint64_t i = 0; i < m.size(); ++i) {
    if (m.test(i)) {
      index_of_[i] = int64_t(voxel_of_.size());
      voxel_of_.push_back(i);
    }
  }
  if (voxel_of_.empty())
    throw validation_error("cannot build a Laplacian on an empty mask");

  const Dims& d = dims_;
  const uint64_t plane = uint64_t(d.nx) * d.ny;
  offsets_.assign(n() + 1, 0);
  nbrs_.reserve(n() * 6);
  for (uint64_t row = 0; row < n(); ++row) {
    const uint64_t i = voxel_of_[row];
    const uint32_t x = uint32_t(i % d.nx);
    const uint32_t y = uint32_t((i / d.nx) % d.ny);
    const uint32_t z = uint32_t(i / plane);
    const auto push = [&](uint64_t j) {
      if (index_of_[j] >= 0) nbrs_.push_back(uint32_t(index_of_[j]));
    };
    if (x > 0) push(i - 1);
    if (x + 1 < d.nx) push(i + 1);
    if (y > 0) push(i - d.nx);
    if (y + 1 < d.ny) push(i + d.nx);
    if (z > 0) push(i - plane);
    if (z + 1 < d.nz) push(i + plane);
    offsets_[row + 1] = uint32_t(nbrs_.size());
  }
}

void SparseLaplacian::matvec(const double* x, double* y) const {
  const uint64_t rows = n();
  for (uint64_t i = 0; i < rows; ++i) {
    double acc = double(degree(i)) * x[i];
    for (const uint32_t* p = row_begin(i); p != row_end(i); ++p) acc -= x[*p];
    y[i] = acc;
  }
}

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Thick-restart Lanczos on the deflated operator P L P, P = I - 11^T/n.
// Returns the `want` smallest eigenpairs of L restricted to 1-perp.
std::vector<EigenPair> lanczos_smallest(const SparseLaplacian& L, int want,
                                        SolveStats& stats) {
  const int64_t n = int64_t(L.n());
  const int64_t space = n - 1;  // dimension of 1-perp
  if (want > space)
    throw validation_error("requested " + std::to_string(want + 1) +
                           " eigenpairs from a graph with only " +
                           std::to_string(n) + " vertices");

  const int m = int(std::min<int64_t>(space, std::max(2 * want + 32, 64)));
  const uint64_t budget = 10 * uint64_t(n);
  const double tol = 1e-10;

  MatrixXd V(n, m + 1);  // +1: residual vector that seeds the next restart
  MatrixXd T = MatrixXd::Zero(m, m);
  VectorXd w(n);
  Rng rng(0x5eedULL);

  const auto deflate = [&](VectorXd& v) { v.array() -= v.mean(); };
  const auto reorth = [&](VectorXd& v, int cols) {
    for (int pass = 0; pass < 2; ++pass) {
      if (cols > 0)
        v.noalias() -= V.leftCols(cols) * (V.leftCols(cols).transpose() * v);
      deflate(v);
    }
  };
  const auto random_unit = [&](int cols) {
    VectorXd v(n);
    for (int64_t i = 0; i < n; ++i) v[i] = rng.normal();
    reorth(v, cols);
    const double nrm = v.norm();
    if (nrm < 1e-12)
      throw std::runtime_error("eigensolver failed to draw a basis vector");
    return VectorXd(v / nrm);
  };

  int locked = 0;  // leading Ritz vectors kept across restarts
  VectorXd arrow;  // coupling of kept pairs to the restart vector
  V.col(0) = random_unit(0);

  std::vector<EigenPair> out;
  while (true) {
    // Expand the basis from column `locked` to m.
    double beta_last = 0;
    for (int j = locked; j < m; ++j) {
      L.matvec(V.col(j).data(), w.data());
      ++stats.matvecs;
      deflate(w);
      const double alpha = V.col(j).dot(w);
      T(j, j) = alpha;
      if (j == locked && locked > 0) {
        for (int i = 0; i < locked; ++i) {
          T(i, j) = T(j, i) = arrow[i];
        }
      }
      reorth(w, j + 1);
      const double beta = w.norm();
      beta_last = beta;
      if (j + 1 <= m) {
        if (beta > 1e-13 * std::max(1.0, std::abs(alpha))) {
          V.col(j + 1) = w / beta;
        } else {
          // Invariant subspace hit: re-seed with a fresh direction.
          beta_last = 0;
          if (j + 1 < m) V.col(j + 1) = random_unit(j + 1);
        }
        if (j + 1 < m) T(j, j + 1) = T(j + 1, j) = beta_last;
      }
    }

    Eigen::SelfAdjointEigenSolver<MatrixXd> es(T);
    const VectorXd& theta = es.eigenvalues();   // ascending
    const MatrixXd& y = es.eigenvectors();

    // Residual estimate per Ritz pair: |beta_m * last component|.
    bool converged = true;
    for (int i = 0; i < want; ++i) {
      const double res = std::abs(beta_last * y(m - 1, i));
      if (res > tol * std::max(1.0, std::abs(theta[i]))) {
        converged = false;
        break;
      }
    }

    if (converged || stats.matvecs >= budget) {
      out.clear();
      double worst = 0;
      for (int i = 0; i < want; ++i) {
        EigenPair p;
        VectorXd f = V.leftCols(m) * y.col(i);
        deflate(f);
        f.normalize();
        L.matvec(f.data(), w.data());
        ++stats.matvecs;
        const double lambda = f.dot(w);
        const double res = (w - lambda * f).norm();
        worst = std::max(worst, res / std::max(1.0, std::abs(lambda)));
        p.lambda = std::abs(lambda) < 1e-10 ? 0.0 : lambda;
        p.f.assign(f.data(), f.data() + n);
        stats.residuals.push_back(res);
        out.push_back(std::move(p));
      }
      if (worst > 1e-8)
        throw std::runtime_error(
            "eigensolver did not converge within " +
            std::to_string(stats.matvecs) + " matvecs; worst relative "
            "residual " + std::to_string(worst));
      return out;
    }

    // Thick restart: keep the smallest Ritz pairs plus the residual vector.
    ++stats.restarts;
    const int keep = std::min(want + 8, m - 2);
    MatrixXd kept = V.leftCols(m) * y.leftCols(keep);
    V.leftCols(keep) = kept;
    V.col(keep) = V.col(m);  // normalized residual vector
    arrow.resize(keep);
    for (int i = 0; i < keep; ++i) arrow[i] = beta_last * y(m - 1, i);
    T.setZero();
    for (int i = 0; i < keep; ++i) T(i, i) = theta[i];
    locked = keep;
  }
}

}  // namespace

std::vector<EigenPair> smallest_eigenpairs(const SparseLaplacian& L, int k,
                                           SolveStats* stats) {
  if (k < 1) throw validation_error("eigenpair count must be positive");
  if (uint64_t(k) > L.n())
    throw validation_error("requested " + std::to_string(k) +
                           " eigenpairs from a graph with " +
                           std::to_string(L.n()) + " vertices");
  SolveStats local;
  SolveStats& st = stats ? *stats : local;
  st.matvecs = 0;
  st.restarts = 0;
  st.residuals.clear();

  const uint64_t n = L.n();
  std::vector<EigenPair> out;
  EigenPair constant;
  constant.lambda = 0.0;
  constant.f.assign(n, 1.0 / std::sqrt(double(n)));
  st.residuals.push_back(0.0);
  out.push_back(std::move(constant));

  if (k > 1) {
    // Already ascending, and every lambda is >= 0, so appending after the
    // analytic zero keeps the whole list sorted (stats.residuals stays
    // aligned with it).
    auto rest = lanczos_smallest(L, k - 1, st);
    for (auto& p : rest) out.push_back(std::move(p));
  }
  return out;
}

}  // namespace voxseg
