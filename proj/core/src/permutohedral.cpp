#include "voxseg/permutohedral.hpp"

#include <cmath>
#include <cstring>
#include <unordered_map>

namespace voxseg {

namespace {

// Lattice key: the first d coordinates of a zero-sum integer point.
struct KeyHash {
  size_t operator()(const std::vector<int32_t>& k) const {
    uint64_t h = 1469598103934665603ull;
    for (int32_t v : k) {
      h ^= uint64_t(uint32_t(v));
      h *= 1099511628211ull;
    }
    return size_t(h);
  }
};

using KeyMap = std::unordered_map<std::vector<int32_t>, int32_t, KeyHash>;

int32_t intern(KeyMap& map, std::vector<std::vector<int32_t>>& keys,
               const std::vector<int32_t>& key) {
  auto [it, fresh] = map.try_emplace(key, int32_t(keys.size()));
  if (fresh) keys.push_back(key);
  return it->second;
}

}  // namespace

PermutohedralLattice::PermutohedralLattice(const float* features, size_t n,
                                           int d)
    : d_(d), n_(n) {
  if (d < 1 || d > 8)
    throw validation_error("lattice feature dimension must be in [1,8]");
  if (n == 0) throw validation_error("lattice needs at least one point");

  const int h = d + 1;
  // Embedding scale: sqrt(2/3)*(d+1) makes the splat/blur/slice variance
  // budget nominally unity, but pinning the zero-distance response to 1
  // widens the realized kernel, so an extra per-dimension factor calibrates
  // the dense-limit response back onto exp(-r^2/2) (fitted against exact
  // path-sum evaluation of the blur chain).
  static const double kappa[9] = {1.0,    1.0567, 1.0781, 1.0814, 1.0773,
                                  1.0697, 1.0606, 1.0521, 1.0430};
  std::vector<double> scale(d);
  const double emb = std::sqrt(2.0 / 3.0) * h * kappa[d];
  for (int i = 0; i < d; ++i)
    scale[i] = emb / std::sqrt(double(i + 1) * (i + 2));

  corner_.assign(n * size_t(h), -1);
  bary_.assign(n * size_t(h), 0.0f);
  self_.assign(n, 0.0);

  KeyMap map;
  std::vector<std::vector<int32_t>> keys;
  std::vector<double> elevated(h);
  std::vector<int32_t> rem0(h), rank(h);
  std::vector<double> bary(h + 1);
  std::vector<int32_t> key(d);

  for (size_t p = 0; p < n; ++p) {
    const float* f = features + p * size_t(d);

    // project onto the zero-sum hyperplane
    double sm = 0;
    for (int i = d; i > 0; --i) {
      const double cf = double(f[i - 1]) * scale[i - 1];
      elevated[i] = sm - i * cf;
      sm += cf;
    }
    elevated[0] = sm;

    // nearest multiple-of-h point per coordinate
    int32_t sum = 0;
    for (int i = 0; i < h; ++i) {
      const double v = elevated[i] / h;
      const int32_t up = int32_t(std::ceil(v)) * h;
      const int32_t down = int32_t(std::floor(v)) * h;
      rem0[i] = (up - elevated[i] < elevated[i] - down) ? up : down;
      sum += rem0[i] / h;
    }

    // rank coordinates by descending residual (ties by index)
    for (int i = 0; i < h; ++i) rank[i] = 0;
    for (int i = 0; i < h; ++i) {
      const double di = elevated[i] - rem0[i];
      for (int j = i + 1; j < h; ++j)
        if (di < elevated[j] - rem0[j])
          ++rank[i];
        else
          ++rank[j];
    }

    // walk the rounded point back onto the zero-sum plane
    for (int i = 0; i < h; ++i) {
      rank[i] += sum;
      if (rank[i] < 0) {
        rank[i] += h;
        rem0[i] += h;
      } else if (rank[i] > d) {
        rank[i] -= h;
        rem0[i] -= h;
      }
    }

    // barycentric coordinates from the sorted residuals
    std::fill(bary.begin(), bary.end(), 0.0);
    for (int i = 0; i < h; ++i) {
      const double v = (elevated[i] - rem0[i]) / h;
      bary[d - rank[i]] += v;
      bary[d + 1 - rank[i]] -= v;
    }
    bary[0] += 1.0 + bary[h];

    // enclosing simplex corners, remainder r = 0..d
    for (int r = 0; r < h; ++r) {
      for (int i = 0; i < d; ++i)
        key[i] = rem0[i] + (rank[i] <= d - r ? r : r - h);
      corner_[p * h + r] = intern(map, keys, key);
      bary_[p * h + r] = float(bary[r]);
    }
  }

  // Pad the lattice with one ring of blur neighbors. The blur routes mass
  // between corners through intermediate lattice points; without padding
  // those routes break near the edge of the splatted set and the effective
  // kernel degrades there.
  std::vector<int32_t> nk(d);
  {
    const size_t splatted = keys.size();
    for (size_t q = 0; q < splatted; ++q) {
      for (int j = 0; j < h; ++j)
        for (int sign : {1, -1}) {
          const std::vector<int32_t>& k = keys[q];
          for (int i = 0; i < d; ++i) nk[i] = k[i] + sign;
          if (j < d) nk[j] = k[j] - sign * d;
          intern(map, keys, nk);
        }
    }
  }
  lattice_points_ = keys.size();

  // blur adjacency: along axis j, neighbors differ by +-u_j where u_j is
  // all ones except 1 - h at coordinate j (the last coordinate is implied
  // by the zero sum)
  nbr_.assign(lattice_points_ * size_t(h) * 2, -1);
  for (size_t q = 0; q < lattice_points_; ++q) {
    const std::vector<int32_t>& k = keys[q];
    for (int j = 0; j < h; ++j) {
      for (int s = 0; s < 2; ++s) {
        const int sign = s == 0 ? 1 : -1;
        for (int i = 0; i < d; ++i) nk[i] = k[i] + sign;
        if (j < d) nk[j] = k[j] - sign * d;
        auto it = map.find(nk);
        if (it != map.end()) nbr_[(q * h + j) * 2 + s] = it->second;
      }
    }
  }

  // Self response by delta propagation through the interned lattice: the
  // blur routes mass between the corners of a simplex via intermediate
  // points that exist only where data splatted, so the zero-distance
  // response depends on occupancy and must be measured, not assumed.
  // Points sharing a corner tuple share the corner-to-corner transfer
  // matrix; memoize it per simplex.
  KeyMap simplex_map;
  std::vector<std::vector<double>> transfer;
  std::vector<double> acc(lattice_points_, 0.0);
  std::vector<int32_t> touched;
  std::vector<std::pair<int32_t, double>> cur, nxt;
  std::vector<int32_t> tuple(h);
  auto deposit = [&](int32_t q, double v) {
    if (acc[q] == 0.0) touched.push_back(q);
    acc[q] += v;
  };
  for (size_t p = 0; p < n; ++p) {
    for (int r = 0; r < h; ++r) tuple[r] = corner_[p * h + r];
    auto [it, fresh] =
        simplex_map.try_emplace(tuple, int32_t(transfer.size()));
    if (fresh) {
      std::vector<double> M(size_t(h) * h, 0.0);
      for (int r = 0; r < h; ++r) {
        cur.assign(1, {tuple[r], 1.0});
        for (int j = 0; j < h; ++j) {
          for (const auto& [q, v] : cur) {
            deposit(q, v);
            const int32_t a = nbr_[(size_t(q) * h + j) * 2];
            const int32_t b = nbr_[(size_t(q) * h + j) * 2 + 1];
            if (a >= 0) deposit(a, 0.5 * v);
            if (b >= 0) deposit(b, 0.5 * v);
          }
          nxt.clear();
          for (int32_t q : touched) {
            nxt.emplace_back(q, acc[q]);
            acc[q] = 0.0;
          }
          touched.clear();
          cur.swap(nxt);
        }
        for (const auto& [q, v] : cur)
          for (int r2 = 0; r2 < h; ++r2)
            if (q == tuple[r2]) M[size_t(r) * h + r2] = v;
      }
      transfer.push_back(std::move(M));
    }
    const std::vector<double>& M = transfer[size_t(it->second)];
    double self = 0;
    for (int r = 0; r < h; ++r) {
      const double w = double(bary_[p * h + r]);
      for (int r2 = 0; r2 < h; ++r2)
        self += w * double(bary_[p * h + r2]) * M[size_t(r) * h + r2];
    }
    // Symmetric normalization: the raw response factorizes per endpoint
    // (splat loss times slice loss), so dividing both sides by sqrt(self)
    // cancels the interpolation loss while keeping the zero-distance
    // response exactly 1.
    self_[p] = 1.0 / std::sqrt(self);
  }
}

void PermutohedralLattice::filter(const double* in, double* out,
                                  int m) const {
  if (m < 1) throw validation_error("filter needs at least one channel");
  const int h = d_ + 1;
  std::vector<double> val(lattice_points_ * size_t(m), 0.0);
  std::vector<double> tmp(lattice_points_ * size_t(m), 0.0);

  // splat, inputs prescaled by the inverse root self response
  for (size_t p = 0; p < n_; ++p)
    for (int r = 0; r < h; ++r) {
      const double w = double(bary_[p * h + r]) * self_[p];
      double* dst = val.data() + size_t(corner_[p * h + r]) * m;
      const double* src = in + p * size_t(m);
      for (int c = 0; c < m; ++c) dst[c] += w * src[c];
    }

  // blur with [1/2, 1, 1/2] along each lattice axis in turn
  for (int j = 0; j < h; ++j) {
    for (size_t q = 0; q < lattice_points_; ++q) {
      const int32_t a = nbr_[(q * h + j) * 2];
      const int32_t b = nbr_[(q * h + j) * 2 + 1];
      const double* self = val.data() + q * size_t(m);
      const double* na = a >= 0 ? val.data() + size_t(a) * m : nullptr;
      const double* nb = b >= 0 ? val.data() + size_t(b) * m : nullptr;
      double* dst = tmp.data() + q * size_t(m);
      for (int c = 0; c < m; ++c)
        dst[c] = self[c] + 0.5 * ((na ? na[c] : 0.0) + (nb ? nb[c] : 0.0));
    }
    std::swap(val, tmp);
  }

  // slice, outputs scaled the same way so the self response is exactly 1
  for (size_t p = 0; p < n_; ++p) {
    double* dst = out + p * size_t(m);
    for (int c = 0; c < m; ++c) dst[c] = 0.0;
    for (int r = 0; r < h; ++r) {
      const double w = double(bary_[p * h + r]) * self_[p];
      const double* src = val.data() + size_t(corner_[p * h + r]) * m;
      for (int c = 0; c < m; ++c) dst[c] += w * src[c];
    }
  }
}

}  // namespace voxseg
