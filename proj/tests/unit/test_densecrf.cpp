#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "doctest.h"
#include "voxseg/cascade.hpp"
#include "voxseg/densecrf.hpp"
#include "voxseg/probmap.hpp"
#include "voxseg/rng.hpp"
#include "voxseg/volume.hpp"

using namespace voxseg;

namespace {

// Reference softmax(-psi) with the same stabilization as the library update.
std::vector<double> softmax_neg(const float* psi, int cls) {
  std::vector<double> q(cls);
  double top = -1e300;
  for (int l = 0; l < cls; ++l) top = std::max(top, -double(psi[l]));
  double sum = 0.0;
  for (int l = 0; l < cls; ++l) {
    q[l] = std::exp(-double(psi[l]) - top);
    sum += q[l];
  }
  for (int l = 0; l < cls; ++l) q[l] /= sum;
  return q;
}

int row_argmax(const double* q, int cls) {
  int best = 0;
  for (int l = 1; l < cls; ++l)
    if (q[l] > q[best]) best = l;
  return best;
}

// Ball of label 1 (plus an off-center ball of label 2 when cls > 2) in a
// background, with intensity steps of 30 per label.
struct Instance {
  std::vector<uint8_t> truth;
  Volume image;
  ProbMap probs;
};

Instance make_instance(Dims d, int cls, double flip_rate, uint64_t seed) {
  Rng rng(seed);
  Instance inst{std::vector<uint8_t>(d.count(), 0),
                Volume(d, {1, 1, 1}, VoxelType::f32),
                ProbMap(d, {1, 1, 1}, cls)};
  const double cx = 0.5 * (d.nx - 1), cy = 0.5 * (d.ny - 1),
               cz = 0.5 * (d.nz - 1);
  const double r = 0.3 * std::min({double(d.nx), double(d.ny), double(d.nz)});
  for (uint32_t z = 0; z < d.nz; ++z)
    for (uint32_t y = 0; y < d.ny; ++y)
      for (uint32_t x = 0; x < d.nx; ++x) {
        const uint64_t i = (uint64_t(z) * d.ny + y) * d.nx + x;
        const double dx = x - cx, dy = y - cy, dz = z - cz;
        if (dx * dx + dy * dy + dz * dz <= r * r)
          inst.truth[i] = 1;
        else if (cls > 2 && x < d.nx / 4 && y < d.ny / 4)
          inst.truth[i] = 2;
      }
  auto& img = inst.image.data<float>();
  for (uint64_t i = 0; i < d.count(); ++i) {
    img[i] = float(20.0 + 30.0 * inst.truth[i] + rng.normal(0.0, 4.0));
    int lab = inst.truth[i];
    if (rng.uniform() < flip_rate)
      lab = int((lab + 1 + rng.below(uint64_t(cls) - 1)) % uint64_t(cls));
    float* row = inst.probs.row(i);
    for (int l = 0; l < cls; ++l) row[l] = 0.2f / float(cls - 1);
    row[lab] = 0.8f;
  }
  return inst;
}

uint64_t disagreements(const std::vector<uint8_t>& a,
                       const std::vector<uint8_t>& b) {
  uint64_t n = 0;
  for (size_t i = 0; i < a.size(); ++i) n += a[i] != b[i];
  return n;
}

}  // namespace

TEST_CASE("unary field applies the probability floor") {
  ProbMap p({3, 1, 1}, {1, 1, 1}, 2);
  p.row(0)[0] = 1.0f;
  p.row(0)[1] = 0.0f;
  p.row(1)[0] = float(std::exp(-1.0));
  p.row(1)[1] = 1.0f - float(std::exp(-1.0));
  p.row(2)[0] = 0.0f;
  p.row(2)[1] = 1.0f;
  const UnaryField u = unary_from_probmap(p);
  CHECK(u.row(0)[0] == 0.0f);
  CHECK(u.row(0)[1] == doctest::Approx(-std::log(1e-6)).epsilon(1e-4));
  CHECK(u.row(1)[0] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(u.row(2)[0] == doctest::Approx(13.8155).epsilon(1e-3));
}

TEST_CASE("pairwise kernel matches the closed forms") {
  CrfParams params;
  SUBCASE("same voxel gives unit kernels") {
    Volume img({2, 1, 1}, {1, 1, 1}, VoxelType::f32);
    const auto [kb, ks] = pairwise_kernel(0, 0, img, params);
    CHECK(kb == 1.0);
    CHECK(ks == 1.0);
  }
  SUBCASE("spatial distance sigma*sqrt(2), equal intensity") {
    Volume img({2, 1, 1}, {float(3.0 * std::sqrt(2.0)), 1, 1},
               VoxelType::f32);
    const auto [kb, ks] = pairwise_kernel(0, 1, img, params);
    CHECK(kb == doctest::Approx(std::exp(-1.0)).epsilon(1e-6));
    CHECK(ks == doctest::Approx(std::exp(-1.0)).epsilon(1e-6));
  }
  SUBCASE("intensity gap of one bandwidth, negligible distance") {
    Volume img({2, 1, 1}, {1e-4f, 1, 1}, VoxelType::f32);
    img.data<float>() = {0.0f, 10.0f};
    const auto [kb, ks] = pairwise_kernel(0, 1, img, params);
    CHECK(kb == doctest::Approx(std::exp(-0.5)).epsilon(1e-6));
    CHECK(ks == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("zero pairwise weights reproduce the unary softmax") {
  const Dims d{4, 3, 2};
  Instance inst = make_instance(d, 3, 0.3, 41);
  const UnaryField u = unary_from_probmap(inst.probs);
  CrfParams params;
  params.v1 = 0.0f;
  params.v2 = 0.0f;
  params.iterations = 4;
  const MeanFieldState ex = meanfield_exact(u, inst.image, params);
  const MeanFieldState fa = meanfield_fast(u, inst.image, params);
  REQUIRE(ex.q.size() == fa.q.size());
  CHECK(std::memcmp(ex.q.data(), fa.q.data(),
                    ex.q.size() * sizeof(double)) == 0);
  for (uint64_t i = 0; i < d.count(); ++i) {
    const auto ref = softmax_neg(u.row(i), 3);
    for (int l = 0; l < 3; ++l)
      CHECK(ex.row(i)[l] == doctest::Approx(ref[l]).epsilon(1e-14));
    CHECK(row_argmax(ex.row(i), 3) ==
          row_argmax(ref.data(), 3));
  }
}

TEST_CASE("a single voxel ignores the pairwise term") {
  UnaryField u;
  u.dims = Dims{1, 1, 1};
  u.spacing = {1, 1, 1};
  u.class_count = 4;
  u.psi = {0.2f, 1.7f, 0.9f, 3.0f};
  Volume img(u.dims, u.spacing, VoxelType::f32);
  img.data<float>() = {42.0f};
  CrfParams params;  // default nonzero weights
  const auto ref = softmax_neg(u.psi.data(), 4);
  for (const MeanFieldState& s :
       {meanfield_exact(u, img, params), meanfield_fast(u, img, params)})
    for (int l = 0; l < 4; ++l)
      CHECK(s.q[l] == doctest::Approx(ref[l]).epsilon(1e-12));
}

TEST_CASE("strong smoothness flips an ambiguous neighbor") {
  ProbMap p({2, 1, 1}, {1, 1, 1}, 2);
  p.row(0)[0] = 0.01f;
  p.row(0)[1] = 0.99f;
  p.row(1)[0] = 0.5f;
  p.row(1)[1] = 0.5f;
  const UnaryField u = unary_from_probmap(p);
  Volume img({2, 1, 1}, {1, 1, 1}, VoxelType::f32);
  img.data<float>() = {50.0f, 50.0f};
  CrfParams params;
  params.v1 = 0.0f;
  params.v2 = 10.0f;

  SUBCASE("one sweep matches a hand-computed update") {
    params.iterations = 1;
    const MeanFieldState s = meanfield_exact(u, img, params);
    const double w =
        10.0 * std::exp(-0.5 / (double(params.sigma_gamma) *
                                double(params.sigma_gamma)));
    const auto qa = softmax_neg(u.row(0), 2);
    const auto qb = softmax_neg(u.row(1), 2);
    auto step = [&](const float* psi, const std::vector<double>& other,
                    int l) {
      double e0 = -double(psi[0]) - w * (1.0 - other[0]);
      double e1 = -double(psi[1]) - w * (1.0 - other[1]);
      const double z = std::exp(e0) + std::exp(e1);
      return std::exp(l == 0 ? e0 : e1) / z;
    };
    for (int l = 0; l < 2; ++l) {
      CHECK(s.row(0)[l] == doctest::Approx(step(u.row(0), qb, l)).epsilon(1e-12));
      CHECK(s.row(1)[l] == doctest::Approx(step(u.row(1), qa, l)).epsilon(1e-12));
    }
  }
  SUBCASE("the ambiguous voxel adopts its neighbor's label") {
    params.iterations = 5;
    const MeanFieldState s = meanfield_exact(u, img, params);
    CHECK(row_argmax(s.row(1), 2) == 1);
    CHECK(s.row(1)[1] > 0.9);
  }
}

TEST_CASE("uniform unaries stay uniform") {
  const Dims d{3, 3, 3};
  UnaryField u;
  u.dims = d;
  u.spacing = {1, 1, 1};
  u.class_count = 4;
  u.psi.assign(d.count() * 4, float(std::log(4.0)));
  Volume img(d, u.spacing, VoxelType::f32);
  auto& data = img.data<float>();
  Rng rng(7);
  for (auto& v : data) v = float(rng.uniform() * 100.0);
  CrfParams params;
  params.iterations = 3;
  for (const MeanFieldState& s :
       {meanfield_exact(u, img, params), meanfield_fast(u, img, params)})
    for (uint64_t i = 0; i < d.count(); ++i)
      for (int l = 0; l < 4; ++l) {
        CHECK(s.row(i)[l] == s.row(i)[0]);  // label symmetry is exact
        CHECK(s.row(i)[l] == doctest::Approx(0.25).epsilon(1e-12));
      }
}

TEST_CASE("label permutation permutes the result") {
  const Dims d{4, 4, 4};
  Instance inst = make_instance(d, 3, 0.2, 19);
  const UnaryField u = unary_from_probmap(inst.probs);
  const int perm[3] = {2, 0, 1};
  UnaryField up = u;
  for (uint64_t i = 0; i < d.count(); ++i)
    for (int l = 0; l < 3; ++l) up.row(i)[perm[l]] = u.row(i)[l];
  CrfParams params;
  params.iterations = 3;
  const MeanFieldState a = meanfield_exact(u, inst.image, params);
  const MeanFieldState b = meanfield_exact(up, inst.image, params);
  const MeanFieldState fa = meanfield_fast(u, inst.image, params);
  const MeanFieldState fb = meanfield_fast(up, inst.image, params);
  for (uint64_t i = 0; i < d.count(); ++i)
    for (int l = 0; l < 3; ++l) {
      CHECK(b.row(i)[perm[l]] == doctest::Approx(a.row(i)[l]).epsilon(1e-12));
      CHECK(fb.row(i)[perm[l]] ==
            doctest::Approx(fa.row(i)[l]).epsilon(1e-12));
    }
}

TEST_CASE("rows stay normalized through every sweep") {
  const Dims d{6, 6, 6};
  Instance inst = make_instance(d, 4, 0.25, 23);
  const UnaryField u = unary_from_probmap(inst.probs);
  for (int sweeps = 1; sweeps <= 5; ++sweeps) {
    CrfParams params;
    params.iterations = sweeps;
    for (const MeanFieldState& s : {meanfield_exact(u, inst.image, params),
                                    meanfield_fast(u, inst.image, params)})
      for (uint64_t i = 0; i < d.count(); ++i) {
        double sum = 0.0;
        for (int l = 0; l < 4; ++l) {
          CHECK(s.row(i)[l] >= 0.0);
          CHECK(s.row(i)[l] <= 1.0);
          sum += s.row(i)[l];
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
      }
  }
}

TEST_CASE("fast path tracks the exact path on small instances") {
  for (const uint64_t seed : {5ull, 17ull}) {
    const Dims d = seed == 5 ? Dims{8, 8, 8} : Dims{12, 12, 12};
    Instance inst = make_instance(d, 3, 0.1, seed);
    const UnaryField u = unary_from_probmap(inst.probs);
    CrfParams params;  // defaults: v1=v2=3, sa=sg=3, sb=10, 5 sweeps
    const MeanFieldState ex = meanfield_exact(u, inst.image, params);
    const MeanFieldState fa = meanfield_fast(u, inst.image, params);
    uint64_t agree = 0;
    double worst = 0.0;
    for (uint64_t i = 0; i < d.count(); ++i) {
      agree += row_argmax(ex.row(i), 3) == row_argmax(fa.row(i), 3);
      for (int l = 0; l < 3; ++l)
        worst = std::max(worst, std::abs(ex.row(i)[l] - fa.row(i)[l]));
    }
    CAPTURE(seed);
    CAPTURE(worst);
    CHECK(double(agree) / double(d.count()) >= 0.99);
    CHECK(worst <= 0.05);
  }
}

TEST_CASE("gibbs energy evaluates the exact objective") {
  SUBCASE("uniform labeling has zero pairwise energy") {
    const Dims d{3, 3, 3};
    Instance inst = make_instance(d, 3, 0.3, 31);
    const UnaryField u = unary_from_probmap(inst.probs);
    const std::vector<uint8_t> labels(d.count(), 1);
    double expect = 0.0;
    for (uint64_t i = 0; i < d.count(); ++i) expect += double(u.row(i)[1]);
    CHECK(gibbs_energy(labels, u, inst.image, CrfParams{}) ==
          doctest::Approx(expect).epsilon(1e-12));
  }
  SUBCASE("co-located disagreeing pair costs v1 + v2") {
    UnaryField u;
    u.dims = Dims{2, 1, 1};
    u.spacing = {1e-4f, 1, 1};
    u.class_count = 2;
    u.psi = {0.5f, 0.5f, 0.5f, 0.5f};
    Volume img(u.dims, u.spacing, VoxelType::f32);
    img.data<float>() = {30.0f, 30.0f};
    const double e = gibbs_energy({0, 1}, u, img, CrfParams{});
    CHECK(e - 1.0 == doctest::Approx(6.0).epsilon(1e-6));
  }
  SUBCASE("mean-field argmax rarely loses to the unary argmax") {
    // Neighboring voxels share a label 85% of the time; intensities follow
    // the label, so disagreeing pairs keep only the weak spatial coupling
    // and confident unaries usually dominate it.
    int wins = 0;
    Rng rng(401);
    for (int trial = 0; trial < 100; ++trial) {
      const int ta = int(rng.below(2));
      const int tb = rng.uniform() < 0.85 ? ta : 1 - ta;
      UnaryField u;
      u.dims = Dims{2, 1, 1};
      u.spacing = {1, 1, 1};
      u.class_count = 2;
      auto conf = [&rng] { return float(0.9 + 0.099 * rng.uniform()); };
      const float pa = ta == 0 ? conf() : 1.0f - conf();
      const float pb = tb == 0 ? conf() : 1.0f - conf();
      u.psi = {-std::log(pa), -std::log(1.0f - pa), -std::log(pb),
               -std::log(1.0f - pb)};
      Volume img(u.dims, u.spacing, VoxelType::f32);
      img.data<float>() = {float(20.0 + 30.0 * ta + rng.normal(0.0, 5.0)),
                           float(20.0 + 30.0 * tb + rng.normal(0.0, 5.0))};
      const CrfParams params;

      // enumeration oracle: check gibbs_energy on all four labelings
      const auto [kb, ks] = pairwise_kernel(0, 1, img, params);
      const double pair = 3.0 * kb + 3.0 * ks;
      const std::vector<uint8_t> labelings[4] = {{0, 0}, {0, 1}, {1, 0},
                                                 {1, 1}};
      for (const auto& lab : labelings) {
        const double expect = double(u.psi[lab[0]]) +
                              double(u.psi[2 + lab[1]]) +
                              (lab[0] != lab[1] ? pair : 0.0);
        CHECK(gibbs_energy(lab, u, img, params) ==
              doctest::Approx(expect).epsilon(1e-12));
      }

      const MeanFieldState s = meanfield_exact(u, img, params);
      const std::vector<uint8_t> mf{uint8_t(row_argmax(s.row(0), 2)),
                                    uint8_t(row_argmax(s.row(1), 2))};
      const std::vector<uint8_t> un{uint8_t(u.psi[1] < u.psi[0]),
                                    uint8_t(u.psi[3] < u.psi[2])};
      wins += gibbs_energy(mf, u, img, params) <=
              gibbs_energy(un, u, img, params) + 1e-12;
    }
    CHECK(wins >= 95);
  }
}

TEST_CASE("refinement with zero weights equals the cascade argmax") {
  const Dims d{5, 4, 3};
  Instance inst = make_instance(d, 4, 0.4, 53);
  BrainMask mask(d, {1, 1, 1});
  Rng rng(99);
  for (uint64_t i = 0; i < d.count(); ++i) {
    const bool in = rng.uniform() < 0.8;
    mask.set(i, in);
    if (!in) inst.probs.set_delta(i, 0);
  }
  CrfParams params;
  params.v1 = 0.0f;
  params.v2 = 0.0f;
  const CrfResult res = crf_refine(inst.probs, inst.image, mask, params);
  const Volume ref = argmax_labels(inst.probs);
  CHECK(res.labels.data<uint8_t>() == ref.data<uint8_t>());
  CHECK(check_probmap(res.q, mask) <= 1e-6);
}

TEST_CASE("refinement removes salt-and-pepper errors") {
  // Two half-spaces with distinct intensities; 6% of the unary labels are
  // flipped. The planar boundary survives smoothing, so refinement can only
  // clean up the isolated flips.
  const Dims d{12, 12, 12};
  Rng rng(71);
  std::vector<uint8_t> truth(d.count());
  Volume img(d, {1, 1, 1}, VoxelType::f32);
  ProbMap probs(d, {1, 1, 1}, 2);
  auto& data = img.data<float>();
  for (uint32_t z = 0; z < d.nz; ++z)
    for (uint32_t y = 0; y < d.ny; ++y)
      for (uint32_t x = 0; x < d.nx; ++x) {
        const uint64_t i = (uint64_t(z) * d.ny + y) * d.nx + x;
        truth[i] = x < d.nx / 2 ? 0 : 1;
        data[i] = float(20.0 + 30.0 * truth[i] + rng.normal(0.0, 3.0));
        int lab = truth[i];
        if (rng.uniform() < 0.06) lab = 1 - lab;
        probs.row(i)[lab] = 0.8f;
        probs.row(i)[1 - lab] = 0.2f;
      }
  BrainMask mask(d, {1, 1, 1});
  for (uint64_t i = 0; i < d.count(); ++i) mask.set(i, true);

  const Volume before = argmax_labels(probs);
  const uint64_t errs_before = disagreements(truth, before.data<uint8_t>());
  REQUIRE(errs_before > 0);

  const CrfResult res = crf_refine(probs, img, mask, CrfParams{});
  const uint64_t errs_after = disagreements(truth,
                                            res.labels.data<uint8_t>());
  CAPTURE(errs_before);
  CAPTURE(errs_after);
  CHECK(errs_after < errs_before);
}

TEST_CASE("crf input validation") {
  CrfParams params;
  params.v1 = -1.0f;
  CHECK_THROWS_AS(params.validate(), validation_error);
  params = CrfParams{};
  params.sigma_beta = 0.0f;
  CHECK_THROWS_AS(params.validate(), validation_error);
  params = CrfParams{};
  params.iterations = 0;
  CHECK_THROWS_AS(params.validate(), validation_error);

  const Dims big{17, 17, 17};
  UnaryField u;
  u.dims = big;
  u.spacing = {1, 1, 1};
  u.class_count = 2;
  u.psi.assign(big.count() * 2, 0.5f);
  Volume img(big, u.spacing, VoxelType::f32);
  CHECK_THROWS_AS(meanfield_exact(u, img, CrfParams{}), validation_error);
  CHECK_THROWS_AS(
      gibbs_energy(std::vector<uint8_t>(big.count(), 0), u, img, CrfParams{}),
      validation_error);

  UnaryField small;
  small.dims = Dims{2, 1, 1};
  small.spacing = {1, 1, 1};
  small.class_count = 2;
  small.psi = {0.1f, 0.2f, 0.3f, 0.4f};
  Volume wrong(Dims{3, 1, 1}, {1, 1, 1}, VoxelType::f32);
  CHECK_THROWS_AS(meanfield_fast(small, wrong, CrfParams{}),
                  validation_error);
  Volume right(small.dims, small.spacing, VoxelType::f32);
  CHECK_THROWS_AS(gibbs_energy({0}, small, right, CrfParams{}),
                  validation_error);
  CHECK_THROWS_AS(gibbs_energy({0, 2}, small, right, CrfParams{}),
                  validation_error);
  CHECK_THROWS_AS(pairwise_kernel(0, 2, right, CrfParams{}),
                  validation_error);

  ProbMap p(small.dims, small.spacing, 2);
  CHECK_THROWS_AS(unary_from_probmap(p, 0.0f), validation_error);
  small.psi[1] = std::numeric_limits<float>::infinity();
  CHECK_THROWS_AS(meanfield_fast(small, right, CrfParams{}),
                  validation_error);
}
