#include "voxseg/network.hpp"

#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "voxseg/model_io.hpp"

using namespace voxseg;

namespace {

template <typename T>
void fill_uniform(TensorT<T>& t, Rng& rng, double lo = -1.0, double hi = 1.0) {
  for (auto& v : t.v) v = T(lo + (hi - lo) * rng.uniform());
}

// Keeps values away from the relu kink so finite differences stay valid.
template <typename T>
void fill_kink_free(TensorT<T>& t, Rng& rng, double margin = 0.05) {
  for (auto& v : t.v) {
    double x = 2.0 * rng.uniform() - 1.0;
    if (std::abs(x) < margin) x = x < 0 ? -margin : margin;
    v = T(x);
  }
}

// The denominator floor must dominate the probe's own noise: slots whose
// true derivative is structurally zero (a uniform bias shift cancelled by a
// downstream batch-norm mean) measure only rounding noise eps/(2h) ~ 1e-11.
double rel_err(double a, double f) {
  return std::abs(a - f) / std::max(1e-6, std::abs(a) + std::abs(f));
}

// Central finite difference of `loss` with respect to one slot.
template <typename Fn>
double fd(Fn&& loss, double& slot, double h = 1e-5) {
  const double orig = slot;
  slot = orig + h;
  const double lp = loss();
  slot = orig - h;
  const double lm = loss();
  slot = orig;
  return (lp - lm) / (2.0 * h);
}

// Checks d(sum(R .* layer(x)))/d{x, params} against finite differences.
// Returns the worst relative error over all (or strided) elements.
double check_layer(LayerT<double>& layer, TensorT<double>& x, const Mode& mode,
                   Rng& rng) {
  TensorT<double> out = layer.forward(x, mode);
  TensorT<double> R = out;
  fill_uniform(R, rng);
  auto loss = [&]() {
    TensorT<double> o = layer.forward(x, mode);
    double s = 0;
    for (size_t i = 0; i < o.v.size(); ++i) s += R.v[i] * o.v[i];
    return s;
  };

  layer.zero_grads();
  layer.forward(x, mode);
  TensorT<double> gin = layer.backward(R);

  double worst = 0;
  auto sweep = [&](std::vector<double>& vals, const std::vector<double>& grad) {
    const size_t stride = std::max<size_t>(1, vals.size() / 200);
    for (size_t i = 0; i < vals.size(); i += stride)
      worst = std::max(worst, rel_err(grad[i], fd(loss, vals[i])));
  };
  sweep(x.v, gin.v);
  auto params = layer.params();
  auto grads = layer.grads();
  for (size_t p = 0; p < params.size(); ++p) sweep(params[p]->v, grads[p]->v);
  return worst;
}

// Small net mirroring the canonical layer order at desk scale: 9^3 input,
// two conv blocks, coordinate concat, two heads.
template <typename T>
NetworkT<T> mini_net(Rng& rng, T drop_rate) {
  NetworkT<T> net;
  net.coord_width = 2;
  auto push = [&net](LayerT<T>* l, const std::string& name) {
    l->name = name;
    net.trunk.emplace_back(l);
  };
  auto* c1 = new Conv3d<T>(3, 1, 3, true);
  push(c1, "conv1");
  push(new Relu<T>(), "relu1");
  push(new MaxPool3d<T>(2, 2), "pool1");
  auto* c2 = new Conv3d<T>(3, 3, 4, false);
  push(c2, "conv2");
  push(new BatchNorm<T>(4), "bn2");
  push(new Relu<T>(), "relu2");
  auto* d1 = new Dense<T>(32, 10, true);
  push(d1, "dense1");
  push(new Relu<T>(), "relu3");
  push(new Dropout<T>(drop_rate), "drop1");
  push(new Concat<T>(2), "concat");
  auto* d2 = new Dense<T>(12, 6, false);
  push(d2, "dense2");
  push(new BatchNorm<T>(6), "bn3");
  push(new Relu<T>(), "relu4");
  push(new Dropout<T>(drop_rate), "drop2");
  xavier_init_conv(*c1, rng);
  xavier_init_conv(*c2, rng);
  xavier_init_dense(*d1, rng);
  xavier_init_dense(*d2, rng);
  for (int t = 0; t < 2; ++t) {
    auto* h = new Dense<T>(6, 3, true);
    h->name = "head" + std::to_string(t);
    xavier_init_dense(*h, rng);
    net.heads.emplace_back(h);
  }
  return net;
}

}  // namespace

TEST_CASE("canonical net walks the fixed shape chain") {
  Rng rng(11);
  Network net = build_canonical<float>(25, 1, 6, rng);
  auto chain = shape_chain(net);
  auto shape_of = [&](const std::string& name) {
    for (auto& [n, s] : chain)
      if (n == name) return s;
    return std::string("missing:" + name);
  };
  CHECK(shape_of("conv1") == "1x32x17x17x17");
  CHECK(shape_of("pool1") == "1x32x9x9x9");
  CHECK(shape_of("conv2") == "1x64x5x5x5");
  CHECK(shape_of("conv3") == "1x64x3x3x3");
  CHECK(shape_of("dense1") == "1x1024x1x1x1");
  CHECK(shape_of("concat") == "1x1030x1x1x1");
  CHECK(shape_of("dense2") == "1x512x1x1x1");
  CHECK(shape_of("head0") == "1x25x1x1x1");
}

TEST_CASE("weight census matches the fixed per-layer counts") {
  Rng rng(12);
  Network net = build_canonical<float>(25, 1, 6, rng);
  Census c = weight_census(net);
  REQUIRE(c.rows.size() == 6);
  CHECK(c.rows[0].layer == "conv1");
  CHECK(c.rows[0].weights == 10976);
  CHECK(c.rows[1].weights == 256000);
  CHECK(c.rows[2].weights == 110592);
  CHECK(c.rows[3].weights == 1769472);
  CHECK(c.rows[4].weights == 527360);
  CHECK(c.rows[5].layer == "head0");
  CHECK(c.rows[5].weights == 12800);
  CHECK(c.total == 2687200);

  Network multi = build_canonical<float>(25, 7, 6, rng);
  CHECK(weight_census(multi).total == 2687200 + 6 * 12800);

  Network binary = build_canonical<float>(2, 7, 6, rng);
  long long heads = 0;
  for (auto& row : weight_census(binary).rows)
    if (row.layer.rfind("head", 0) == 0) heads += row.weights;
  CHECK(heads == 7 * 512 * 2);
}

TEST_CASE("coordinate-free variant drops the concat layer") {
  Rng rng(13);
  Network net = build_canonical<float>(25, 1, 0, rng);
  CHECK(net.concat_layer() == nullptr);
  CHECK(net.coord_width == 0);
  Census c = weight_census(net);
  CHECK(c.rows[4].weights == 512 * 1024);
  auto chain = shape_chain(net);
  for (auto& [n, s] : chain) CHECK(n != "concat");
  Mode m;
  TensorT<float> batch(1, 1, 23, 23, 23);
  auto logits = net.forward(batch, TensorT<float>(), m);
  CHECK(logits[0].per_sample() == 25);
}

TEST_CASE("biases start at zero and xavier weights match the fan bound") {
  Rng rng(14);
  Network net = build_canonical<float>(25, 2, 6, rng);
  auto* c1 = static_cast<Conv3d<float>*>(net.trunk[0].get());
  const double a = std::sqrt(6.0 / (343.0 + 343.0 * 32.0));
  double var = 0, mx = 0;
  for (float w : c1->weights().v) {
    var += double(w) * w;
    mx = std::max(mx, std::abs(double(w)));
  }
  var /= double(c1->weights().size());
  CHECK(mx <= a);
  CHECK(var == doctest::Approx(a * a / 3.0).epsilon(0.05));
  for (float b : c1->bias().v) CHECK(b == 0.0f);
  for (auto& h : net.heads)
    for (float b : static_cast<Dense<float>*>(h.get())->bias().v)
      CHECK(b == 0.0f);
}

TEST_CASE("xavier statistics for symmetric fans") {
  Rng rng(15);
  TensorT<double> w(1, 100000, 1, 1, 1);
  xavier_init(w, 3, 3, rng);  // a = 1
  double mean = 0;
  for (double v : w.v) mean += v;
  mean /= double(w.size());
  double var = 0;
  for (double v : w.v) var += (v - mean) * (v - mean);
  var /= double(w.size());
  // sd(mean) = 1/sqrt(3n), sd(var) ~ sqrt((a^4/5 - var^2)/n)
  CHECK(std::abs(mean) < 3.0 * 1.0 / std::sqrt(3.0 * 100000));
  CHECK(std::abs(var - 1.0 / 3.0) < 3.0 * 9.5e-4);
  for (double v : w.v) CHECK(std::abs(v) <= 1.0);
}

TEST_CASE("conv forward matches a direct sliding-window sum") {
  Rng rng(16);
  Conv3d<float> conv(3, 2, 3, true);
  fill_uniform(conv.weights(), rng);
  fill_uniform(conv.bias(), rng);
  TensorT<float> x(2, 2, 4, 5, 6);
  fill_uniform(x, rng);
  Mode m;
  TensorT<float> out = conv.forward(x, m);
  REQUIRE(out.shape_str() == "2x3x2x3x4");
  for (int b = 0; b < 2; ++b)
    for (int o = 0; o < 3; ++o)
      for (int z = 0; z < 2; ++z)
        for (int y = 0; y < 3; ++y)
          for (int xx = 0; xx < 4; ++xx) {
            double acc = conv.bias().v[o];
            for (int ci = 0; ci < 2; ++ci)
              for (int kz = 0; kz < 3; ++kz)
                for (int ky = 0; ky < 3; ++ky)
                  for (int kx = 0; kx < 3; ++kx)
                    acc += double(conv.weights().at(o, ci, kz, ky, kx)) *
                           double(x.at(b, ci, z + kz, y + ky, xx + kx));
            CHECK(out.at(b, o, z, y, xx) ==
                  doctest::Approx(acc).epsilon(1e-4));
          }
}

TEST_CASE("ceil-mode pooling clips the overhanging window") {
  CHECK(MaxPool3d<float>::out_extent(17, 2, 2) == 9);
  CHECK(MaxPool3d<float>::out_extent(4, 2, 2) == 2);
  MaxPool3d<float> pool(2, 2);
  TensorT<float> x(1, 1, 1, 1, 5);
  for (int i = 0; i < 5; ++i) x.v[i] = float(i + 1);
  Mode m;
  TensorT<float> out = pool.forward(x, m);
  REQUIRE(out.nx == 3);
  CHECK(out.v == std::vector<float>{2, 4, 5});

  TensorT<float> row(1, 1, 1, 1, 4);
  row.v = {1, 3, 2, 4};
  CHECK(pool.forward(row, m).v == std::vector<float>{3, 4});

  TensorT<float> dot(1, 1, 1, 1, 1);
  CHECK_THROWS_AS(pool.forward(dot, m), validation_error);
}

TEST_CASE("pooling backward routes to the first maximum in scan order") {
  MaxPool3d<float> pool(2, 2);
  TensorT<float> x(1, 1, 2, 2, 2);
  std::fill(x.v.begin(), x.v.end(), 7.0f);
  Mode m;
  TensorT<float> out = pool.forward(x, m);
  REQUIRE(out.size() == 1);
  TensorT<float> g(1, 1, 1, 1, 1);
  g.v[0] = 2.5f;
  TensorT<float> gin = pool.backward(g);
  CHECK(gin.v[0] == 2.5f);
  for (size_t i = 1; i < gin.v.size(); ++i) CHECK(gin.v[i] == 0.0f);
}

TEST_CASE("batchnorm hand example: stats, moving averages, infer transform") {
  BatchNorm<float> bn(1);
  TensorT<float> x(2, 1, 1, 1, 2);
  x.v = {1, 2, 3, 4};
  Mode train{Phase::train, nullptr};
  TensorT<float> y = bn.forward(x, train);
  // mean 2.5, biased var 1.25
  CHECK(bn.moving_mean().v[0] == doctest::Approx(0.25));
  CHECK(bn.moving_var().v[0] == doctest::Approx(0.9 + 0.125));
  const double inv = 1.0 / std::sqrt(1.25 + 1e-5);
  CHECK(y.v[0] == doctest::Approx((1 - 2.5) * inv));
  CHECK(y.v[3] == doctest::Approx((4 - 2.5) * inv));

  Mode infer;
  TensorT<float> z = bn.forward(x, infer);
  const double inv_run = 1.0 / std::sqrt(1.025 + 1e-5);
  CHECK(z.v[0] == doctest::Approx((1 - 0.25) * inv_run));

  TensorT<float> one(1, 1, 1, 1, 2);
  CHECK_THROWS_AS(bn.forward(one, train), validation_error);
}

TEST_CASE("dropout keeps the advertised fraction and rescales survivors") {
  Rng rng(17);
  Dropout<float> drop(0.5f);
  TensorT<float> x = TensorT<float>::vec(1, 20000);
  std::fill(x.v.begin(), x.v.end(), 1.0f);
  Mode train{Phase::train, &rng};
  TensorT<float> y = drop.forward(x, train);
  int kept = 0;
  for (float v : y.v) {
    CHECK((v == 0.0f || v == 2.0f));
    kept += v != 0.0f;
  }
  // 3 sigma of Binomial(20000, 0.5)
  CHECK(std::abs(kept - 10000) < 3.0 * std::sqrt(20000 * 0.25));

  SUBCASE("infer mode passes through untouched, never consulting the rng") {
    Mode infer{Phase::infer, nullptr};
    TensorT<float> z = drop.forward(x, infer);
    CHECK(z.v == x.v);
  }
  SUBCASE("rate zero is the identity in train mode too") {
    Dropout<float> none(0.0f);
    Mode t2{Phase::train, nullptr};  // rng must not be needed
    TensorT<float> z = none.forward(x, t2);
    CHECK(z.v == x.v);
  }
  SUBCASE("train mode without an rng is an error") {
    Mode bad{Phase::train, nullptr};
    CHECK_THROWS_AS(drop.forward(x, bad), std::runtime_error);
  }
  SUBCASE("same seed, same mask") {
    Rng a(5), b(5);
    Dropout<float> d1(0.5f), d2(0.5f);
    Mode ma{Phase::train, &a}, mb{Phase::train, &b};
    CHECK(d1.forward(x, ma).v == d2.forward(x, mb).v);
  }
}

TEST_CASE("layer gradients match central finite differences") {
  Rng rng(18);
  Mode infer;
  Mode train{Phase::train, nullptr};

  SUBCASE("conv with bias") {
    Conv3d<double> l(3, 2, 3, true);
    fill_uniform(l.weights(), rng);
    fill_uniform(l.bias(), rng);
    TensorT<double> x(2, 2, 4, 5, 6);
    fill_uniform(x, rng);
    CHECK(check_layer(l, x, infer, rng) < 1e-4);
  }
  SUBCASE("conv without bias") {
    Conv3d<double> l(3, 3, 2, false);
    fill_uniform(l.weights(), rng);
    TensorT<double> x(2, 3, 3, 4, 4);
    fill_uniform(x, rng);
    CHECK(check_layer(l, x, infer, rng) < 1e-4);
  }
  SUBCASE("relu away from the kink") {
    Relu<double> l;
    TensorT<double> x(2, 3, 4, 4, 4);
    fill_kink_free(x, rng);
    CHECK(check_layer(l, x, infer, rng) < 1e-4);
  }
  SUBCASE("maxpool with well-separated values") {
    MaxPool3d<double> l(2, 2);
    TensorT<double> x(2, 2, 5, 5, 5);
    std::vector<int> perm(x.size());
    for (size_t i = 0; i < perm.size(); ++i) perm[i] = int(i);
    rng.shuffle(perm);
    for (size_t i = 0; i < x.v.size(); ++i) x.v[i] = 0.01 * perm[i];
    CHECK(check_layer(l, x, infer, rng) < 1e-4);
  }
  SUBCASE("batchnorm in train mode") {
    BatchNorm<double> l(3);
    TensorT<double> x(2, 3, 3, 3, 3);
    fill_uniform(x, rng);
    CHECK(check_layer(l, x, train, rng) < 1e-4);
  }
  SUBCASE("batchnorm in infer mode") {
    BatchNorm<double> l(3);
    fill_uniform(*l.params()[0], rng, 0.5, 1.5);
    fill_uniform(*l.params()[1], rng);
    fill_uniform(l.moving_var(), rng, 0.5, 2.0);
    TensorT<double> x(2, 3, 2, 2, 2);
    fill_uniform(x, rng);
    CHECK(check_layer(l, x, infer, rng) < 1e-4);
  }
  SUBCASE("dense with implicit flatten") {
    Dense<double> l(12, 7, true);
    fill_uniform(l.weights(), rng);
    fill_uniform(l.bias(), rng);
    TensorT<double> x(3, 3, 1, 2, 2);
    fill_uniform(x, rng);
    CHECK(check_layer(l, x, infer, rng) < 1e-4);
  }
  SUBCASE("concat passes gradient only to the activation slice") {
    Concat<double> l(4);
    TensorT<double> coords = TensorT<double>::vec(3, 4);
    fill_uniform(coords, rng);
    l.set_coords(coords);
    TensorT<double> x = TensorT<double>::vec(3, 5);
    fill_uniform(x, rng);
    CHECK(check_layer(l, x, infer, rng) < 1e-4);
  }
}

TEST_CASE("softmax loss: values, gradients, and ignore handling") {
  Rng rng(19);
  TensorT<double> lg = TensorT<double>::vec(4, 5);
  fill_uniform(lg, rng, -2.0, 2.0);
  std::vector<int> tg = {1, -1, 4, 0};

  auto loss_of = [&]() {
    return softmax_loss<double>({lg}, {tg}).loss;
  };
  TaskLoss<double> out = softmax_loss<double>({lg}, {tg});

  for (int b = 0; b < 4; ++b) {
    const double* p = out.probs[0].sample(b);
    double sum = 0;
    for (int i = 0; i < 5; ++i) {
      CHECK(p[i] >= 0.0);
      sum += p[i];
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
  }
  // ignored sample contributes nothing
  for (int i = 0; i < 5; ++i) CHECK(out.dlogits[0].sample(1)[i] == 0.0);

  double worst = 0;
  for (size_t i = 0; i < lg.v.size(); ++i)
    worst = std::max(worst, rel_err(out.dlogits[0].v[i], fd(loss_of, lg.v[i])));
  CHECK(worst < 1e-4);

  SUBCASE("uniform logits give log(classes) averaged over the full batch") {
    TensorT<double> z = TensorT<double>::vec(2, 4);
    TaskLoss<double> r = softmax_loss<double>({z}, {{2, -1}});
    CHECK(r.loss == doctest::Approx(std::log(4.0) / 2.0));
  }
  SUBCASE("bad target is rejected") {
    TensorT<double> z = TensorT<double>::vec(1, 4);
    CHECK_THROWS_AS(softmax_loss<double>({z}, {{4}}), validation_error);
    CHECK_THROWS_AS(softmax_loss<double>({z}, {{-2}}), validation_error);
  }
  SUBCASE("multi-task loss is the sum of per-task losses") {
    TensorT<double> z = TensorT<double>::vec(1, 4);
    TaskLoss<double> one = softmax_loss<double>({z}, {{0}});
    TaskLoss<double> two = softmax_loss<double>({z, z}, {{0}, {0}});
    CHECK(two.loss == doctest::Approx(2.0 * one.loss));
  }
}

TEST_CASE("whole net gradient-checks end to end") {
  Rng rng(21);
  NetworkT<double> net = mini_net<double>(rng, 0.0);
  TensorT<double> x(2, 1, 9, 9, 9);
  fill_uniform(x, rng);
  TensorT<double> coords = TensorT<double>::vec(2, 2);
  fill_uniform(coords, rng);
  std::vector<std::vector<int>> targets = {{0, 2}, {1, -1}};
  Mode train{Phase::train, nullptr};

  auto loss_of = [&]() {
    auto logits = net.forward(x, coords, train);
    return softmax_loss<double>(logits, targets).loss;
  };

  net.zero_grads();
  auto logits = net.forward(x, coords, train);
  TaskLoss<double> tl = softmax_loss<double>(logits, targets);
  TensorT<double> gin = net.backward(tl.dlogits);

  double worst = 0;
  auto sweep = [&](std::vector<double>& vals, const std::vector<double>& grad,
                   size_t cap) {
    const size_t stride = std::max<size_t>(1, vals.size() / cap);
    for (size_t i = 0; i < vals.size(); i += stride)
      worst = std::max(worst, rel_err(grad[i], fd(loss_of, vals[i])));
  };
  sweep(x.v, gin.v, 150);
  auto params = net.params();
  auto grads = net.grads();
  REQUIRE(params.size() == grads.size());
  for (size_t p = 0; p < params.size(); ++p)
    sweep(params[p]->v, grads[p]->v, 60);
  CHECK(worst < 1e-4);
}

TEST_CASE("infer forward is deterministic and batch rows are independent") {
  Rng rng(22);
  NetworkT<float> net = mini_net<float>(rng, 0.5f);
  TensorT<float> x(2, 1, 9, 9, 9);
  fill_uniform(x, rng);
  // duplicate row 0 into row 1
  std::copy(x.sample(0), x.sample(0) + x.per_sample(), x.sample(1));
  TensorT<float> coords = TensorT<float>::vec(2, 2);
  coords.v = {0.3f, -0.2f, 0.3f, -0.2f};
  Mode infer;
  auto a = net.forward(x, coords, infer);
  auto b = net.forward(x, coords, infer);
  for (size_t t = 0; t < a.size(); ++t) {
    CHECK(a[t].v == b[t].v);
    for (int i = 0; i < 3; ++i)
      CHECK(a[t].sample(0)[i] == a[t].sample(1)[i]);
  }
}

TEST_CASE("forward rejects mismatched shapes") {
  Rng rng(23);
  NetworkT<float> net = mini_net<float>(rng, 0.5f);
  Mode infer;
  TensorT<float> wrong_c(1, 2, 9, 9, 9);
  CHECK_THROWS_AS(net.forward(wrong_c, TensorT<float>::vec(1, 2), infer),
                  validation_error);
  TensorT<float> ok(1, 1, 9, 9, 9);
  CHECK_THROWS_AS(net.forward(ok, TensorT<float>::vec(2, 2), infer),
                  validation_error);
  TensorT<float> nan_coords = TensorT<float>::vec(1, 2);
  nan_coords.v[0] = std::nanf("");
  CHECK_THROWS_AS(net.forward(ok, nan_coords, infer), validation_error);
  CHECK_THROWS_AS(net.backward({}), validation_error);
}

TEST_CASE("model round-trip is byte-identical and preserves inference") {
  Rng rng(24);
  NetworkT<float> net = mini_net<float>(rng, 0.5f);

  // push the moving statistics off their defaults
  TensorT<float> xb(3, 1, 9, 9, 9);
  fill_uniform(xb, rng);
  TensorT<float> cb = TensorT<float>::vec(3, 2);
  fill_uniform(cb, rng);
  Rng drop_rng(99);
  Mode train{Phase::train, &drop_rng};
  net.forward(xb, cb, train);

  testutil::TempFile f1(".dnmd"), f2(".dnmd");
  save_model(net, f1.path().string());
  Network loaded = load_model(f1.path().string());
  save_model(loaded, f2.path().string());
  CHECK(testutil::slurp(f1.path()) == testutil::slurp(f2.path()));
  CHECK(loaded.coord_width == 2);
  CHECK(loaded.task_count() == 2);
  CHECK(loaded.class_count() == 3);

  TensorT<float> x(2, 1, 9, 9, 9);
  fill_uniform(x, rng);
  TensorT<float> coords = TensorT<float>::vec(2, 2);
  fill_uniform(coords, rng);
  Mode infer;
  auto a = net.forward(x, coords, infer);
  auto b = loaded.forward(x, coords, infer);
  REQUIRE(a.size() == b.size());
  for (size_t t = 0; t < a.size(); ++t) CHECK(a[t].v == b[t].v);
}

TEST_CASE("model loader rejects malformed files") {
  Rng rng(25);
  NetworkT<float> net = mini_net<float>(rng, 0.5f);
  testutil::TempFile f(".dnmd");
  const std::string path = f.path().string();
  save_model(net, path);
  const std::vector<char> bytes = testutil::slurp(f.path());

  SUBCASE("truncation") {
    testutil::spit(f.path(), std::vector<char>(
                                 bytes.begin(), bytes.begin() + bytes.size() / 2));
    CHECK_THROWS_AS(load_model(path), validation_error);
  }
  SUBCASE("bad magic") {
    std::vector<char> bad = bytes;
    bad[0] = 'X';
    testutil::spit(f.path(), bad);
    CHECK_THROWS_AS(load_model(path), validation_error);
  }
  SUBCASE("trailing bytes") {
    std::vector<char> extra = bytes;
    extra.push_back('\0');
    testutil::spit(f.path(), extra);
    CHECK_THROWS_AS(load_model(path), validation_error);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_model(path + ".nope"), validation_error);
  }
}
