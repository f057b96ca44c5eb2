#pragma once

#include <Eigen/Core>
#include <cmath>
#include <memory>

#include "voxseg/rng.hpp"
#include "voxseg/tensor.hpp"

namespace voxseg {

enum class Phase { train, infer };

// Dropout is the only rng consumer, and only while training.
struct Mode {
  Phase phase = Phase::infer;
  Rng* rng = nullptr;
};

enum class LayerKind : uint8_t {
  conv3d = 0,
  relu = 1,
  maxpool3d = 2,
  batchnorm = 3,
  dropout = 4,
  dense = 5,
  concat = 6,
};

inline const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::conv3d: return "conv3d";
    case LayerKind::relu: return "relu";
    case LayerKind::maxpool3d: return "maxpool3d";
    case LayerKind::batchnorm: return "batchnorm";
    case LayerKind::dropout: return "dropout";
    case LayerKind::dense: return "dense";
    case LayerKind::concat: return "concat";
  }
  return "?";
}

// Layers cache whatever their backward needs during forward; one logical
// forward/backward stream per instance.
template <typename T>
struct LayerT {
  std::string name;

  virtual ~LayerT() = default;
  virtual LayerKind kind() const = 0;
  virtual TensorT<T> forward(const TensorT<T>& in, const Mode& mode) = 0;
  virtual TensorT<T> backward(const TensorT<T>& gout) = 0;
  virtual std::vector<TensorT<T>*> params() { return {}; }
  virtual std::vector<TensorT<T>*> grads() { return {}; }

  void zero_grads() {
    for (TensorT<T>* g : grads()) std::fill(g->v.begin(), g->v.end(), T(0));
  }
};

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ColMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>;

// One sample, all channels: patch columns for a valid (unpadded)
// cross-correlation. Column p holds the input window for output position p,
// ordered channel, kz, ky, kx.
template <typename T>
void im2col(const T* in, int cin, int D, int H, int W, int k, ColMat<T>& col) {
  const int OD = D - k + 1, OH = H - k + 1, OW = W - k + 1;
  int p = 0;
  for (int oz = 0; oz < OD; ++oz)
    for (int oy = 0; oy < OH; ++oy)
      for (int ox = 0; ox < OW; ++ox, ++p) {
        T* dst = col.data() + size_t(p) * col.rows();
        for (int ci = 0; ci < cin; ++ci)
          for (int kz = 0; kz < k; ++kz)
            for (int ky = 0; ky < k; ++ky) {
              const T* src =
                  in + ((size_t(ci) * D + oz + kz) * H + oy + ky) * W + ox;
              for (int kx = 0; kx < k; ++kx) *dst++ = src[kx];
            }
      }
}

template <typename T>
void col2im_add(const ColMat<T>& col, int cin, int D, int H, int W, int k,
                T* in_grad) {
  const int OD = D - k + 1, OH = H - k + 1, OW = W - k + 1;
  int p = 0;
  for (int oz = 0; oz < OD; ++oz)
    for (int oy = 0; oy < OH; ++oy)
      for (int ox = 0; ox < OW; ++ox, ++p) {
        const T* src = col.data() + size_t(p) * col.rows();
        for (int ci = 0; ci < cin; ++ci)
          for (int kz = 0; kz < k; ++kz)
            for (int ky = 0; ky < k; ++ky) {
              T* dst =
                  in_grad + ((size_t(ci) * D + oz + kz) * H + oy + ky) * W + ox;
              for (int kx = 0; kx < k; ++kx) dst[kx] += *src++;
            }
      }
}

}  // namespace detail

template <typename T>
class Conv3d : public LayerT<T> {
 public:
  Conv3d(int k, int cin, int cout, bool has_bias)
      : k_(k), cin_(cin), cout_(cout), has_bias_(has_bias),
        w_(cout, cin, k, k, k), gw_(cout, cin, k, k, k) {
    if (k < 1 || k % 2 == 0)
      throw validation_error("conv kernels must be odd-sized, got " +
                             std::to_string(k));
    if (has_bias_) {
      b_ = TensorT<T>::vec(1, cout);
      gb_ = TensorT<T>::vec(1, cout);
    }
  }

  LayerKind kind() const override { return LayerKind::conv3d; }
  int kernel() const { return k_; }
  int in_channels() const { return cin_; }
  int out_channels() const { return cout_; }
  bool has_bias() const { return has_bias_; }

  std::vector<TensorT<T>*> params() override {
    return has_bias_ ? std::vector<TensorT<T>*>{&w_, &b_}
                     : std::vector<TensorT<T>*>{&w_};
  }
  std::vector<TensorT<T>*> grads() override {
    return has_bias_ ? std::vector<TensorT<T>*>{&gw_, &gb_}
                     : std::vector<TensorT<T>*>{&gw_};
  }
  TensorT<T>& weights() { return w_; }
  TensorT<T>& bias() { return b_; }

  TensorT<T> forward(const TensorT<T>& in, const Mode&) override {
    if (in.c != cin_)
      throw validation_error(this->name + ": expected " +
                             std::to_string(cin_) + " channels, got " +
                             std::to_string(in.c));
    if (in.nz < k_ || in.ny < k_ || in.nx < k_)
      throw validation_error(this->name + ": input " + in.shape_str() +
                             " smaller than kernel " + std::to_string(k_));
    in_ = in;
    const int OD = in.nz - k_ + 1, OH = in.ny - k_ + 1, OW = in.nx - k_ + 1;
    const int K = cin_ * k_ * k_ * k_, P = OD * OH * OW;
    TensorT<T> out(in.n, cout_, OD, OH, OW);
    Eigen::Map<const detail::RowMat<T>> Wm(w_.v.data(), cout_, K);
    detail::ColMat<T> col(K, P);
    for (int b = 0; b < in.n; ++b) {
      detail::im2col(in.sample(b), cin_, in.nz, in.ny, in.nx, k_, col);
      Eigen::Map<detail::RowMat<T>> Om(out.sample(b), cout_, P);
      Om.noalias() = Wm * col;
      if (has_bias_)
        for (int o = 0; o < cout_; ++o) Om.row(o).array() += b_.v[o];
    }
    return out;
  }

  TensorT<T> backward(const TensorT<T>& gout) override {
    const int OD = in_.nz - k_ + 1, OH = in_.ny - k_ + 1, OW = in_.nx - k_ + 1;
    const int K = cin_ * k_ * k_ * k_, P = OD * OH * OW;
    TensorT<T> gin(in_.n, cin_, in_.nz, in_.ny, in_.nx);
    Eigen::Map<const detail::RowMat<T>> Wm(w_.v.data(), cout_, K);
    Eigen::Map<detail::RowMat<T>> Gw(gw_.v.data(), cout_, K);
    detail::ColMat<T> col(K, P), gcol(K, P);
    for (int b = 0; b < in_.n; ++b) {
      detail::im2col(in_.sample(b), cin_, in_.nz, in_.ny, in_.nx, k_, col);
      Eigen::Map<const detail::RowMat<T>> Go(gout.sample(b), cout_, P);
      Gw.noalias() += Go * col.transpose();
      if (has_bias_)
        for (int o = 0; o < cout_; ++o) {
          // fixed-order accumulation keeps runs bit-reproducible
          T s = 0;
          const T* g = gout.sample(b) + size_t(o) * P;
          for (int p = 0; p < P; ++p) s += g[p];
          gb_.v[o] += s;
        }
      gcol.noalias() = Wm.transpose() * Go;
      detail::col2im_add(gcol, cin_, in_.nz, in_.ny, in_.nx, k_,
                         gin.sample(b));
    }
    return gin;
  }

 private:
  int k_, cin_, cout_;
  bool has_bias_;
  TensorT<T> w_, gw_, b_, gb_;
  TensorT<T> in_;
};

template <typename T>
class Relu : public LayerT<T> {
 public:
  LayerKind kind() const override { return LayerKind::relu; }

  TensorT<T> forward(const TensorT<T>& in, const Mode&) override {
    mask_.assign(in.size(), 0);
    TensorT<T> out = in;
    for (size_t i = 0; i < out.v.size(); ++i) {
      if (out.v[i] > T(0))
        mask_[i] = 1;
      else
        out.v[i] = T(0);
    }
    return out;
  }

  TensorT<T> backward(const TensorT<T>& gout) override {
    TensorT<T> gin = gout;
    for (size_t i = 0; i < gin.v.size(); ++i)
      if (!mask_[i]) gin.v[i] = T(0);
    return gin;
  }

 private:
  std::vector<uint8_t> mask_;
};

template <typename T>
class MaxPool3d : public LayerT<T> {
 public:
  MaxPool3d(int size = 2, int stride = 2) : size_(size), stride_(stride) {
    if (size < 1 || stride < 1)
      throw validation_error("pool size and stride must be positive");
  }

  LayerKind kind() const override { return LayerKind::maxpool3d; }
  int size() const { return size_; }
  int stride() const { return stride_; }

  // Ceil mode: the last window may hang over the edge and is clipped.
  static int out_extent(int in, int size, int stride) {
    return (in - size + stride - 1) / stride + 1;
  }

  TensorT<T> forward(const TensorT<T>& in, const Mode&) override {
    if (in.spatial() < 2)
      throw validation_error("pool input " + in.shape_str() +
                             " has fewer than 2 spatial elements");
    in_shape_ = in;
    const int OD = out_extent(in.nz, size_, stride_);
    const int OH = out_extent(in.ny, size_, stride_);
    const int OW = out_extent(in.nx, size_, stride_);
    TensorT<T> out(in.n, in.c, OD, OH, OW);
    argmax_.assign(out.size(), 0);
    size_t o = 0;
    for (int b = 0; b < in.n; ++b)
      for (int ch = 0; ch < in.c; ++ch)
        for (int oz = 0; oz < OD; ++oz)
          for (int oy = 0; oy < OH; ++oy)
            for (int ox = 0; ox < OW; ++ox, ++o) {
              const int z1 = std::min(oz * stride_ + size_, in.nz);
              const int y1 = std::min(oy * stride_ + size_, in.ny);
              const int x1 = std::min(ox * stride_ + size_, in.nx);
              T best{};
              size_t arg = 0;
              bool first = true;
              for (int z = oz * stride_; z < z1; ++z)
                for (int y = oy * stride_; y < y1; ++y)
                  for (int x = ox * stride_; x < x1; ++x) {
                    const size_t idx = in.offset(b, ch, z, y, x);
                    if (first || in.v[idx] > best) {
                      best = in.v[idx];
                      arg = idx;
                      first = false;
                    }
                  }
              out.v[o] = best;
              argmax_[o] = arg;
            }
    return out;
  }

  TensorT<T> backward(const TensorT<T>& gout) override {
    TensorT<T> gin(in_shape_.n, in_shape_.c, in_shape_.nz, in_shape_.ny,
                   in_shape_.nx);
    for (size_t o = 0; o < gout.size(); ++o) gin.v[argmax_[o]] += gout.v[o];
    return gin;
  }

 private:
  int size_, stride_;
  TensorT<T> in_shape_;  // dims only; payload unused
  std::vector<size_t> argmax_;
};

template <typename T>
class BatchNorm : public LayerT<T> {
 public:
  explicit BatchNorm(int channels, T eps = T(1e-5), T momentum = T(0.9))
      : c_(channels), eps_(eps), momentum_(momentum),
        gamma_(TensorT<T>::vec(1, channels)),
        beta_(TensorT<T>::vec(1, channels)),
        moving_mean_(TensorT<T>::vec(1, channels)),
        moving_var_(TensorT<T>::vec(1, channels)),
        ggamma_(TensorT<T>::vec(1, channels)),
        gbeta_(TensorT<T>::vec(1, channels)) {
    std::fill(gamma_.v.begin(), gamma_.v.end(), T(1));
    std::fill(moving_var_.v.begin(), moving_var_.v.end(), T(1));
  }

  LayerKind kind() const override { return LayerKind::batchnorm; }
  int channels() const { return c_; }
  T eps() const { return eps_; }
  T momentum() const { return momentum_; }

  std::vector<TensorT<T>*> params() override { return {&gamma_, &beta_}; }
  std::vector<TensorT<T>*> grads() override { return {&ggamma_, &gbeta_}; }
  TensorT<T>& moving_mean() { return moving_mean_; }
  TensorT<T>& moving_var() { return moving_var_; }

  TensorT<T> forward(const TensorT<T>& in, const Mode& mode) override {
    if (in.c != c_)
      throw validation_error(this->name + ": expected " + std::to_string(c_) +
                             " channels, got " + std::to_string(in.c));
    phase_ = mode.phase;
    const int spatial = in.spatial();
    TensorT<T> out(in.n, in.c, in.nz, in.ny, in.nx);

    if (mode.phase == Phase::train) {
      if (in.n < 2)
        throw validation_error(
            "batchnorm in train mode needs batch >= 2, got " +
            std::to_string(in.n));
      const T N = T(in.n) * T(spatial);
      xhat_ = TensorT<T>(in.n, in.c, in.nz, in.ny, in.nx);
      inv_std_.assign(c_, T(0));
      for (int ch = 0; ch < c_; ++ch) {
        T mean = 0;
        for (int b = 0; b < in.n; ++b) {
          const T* x = in.sample(b) + size_t(ch) * spatial;
          for (int i = 0; i < spatial; ++i) mean += x[i];
        }
        mean /= N;
        T var = 0;
        for (int b = 0; b < in.n; ++b) {
          const T* x = in.sample(b) + size_t(ch) * spatial;
          for (int i = 0; i < spatial; ++i) var += (x[i] - mean) * (x[i] - mean);
        }
        var /= N;  // biased, used both for normalization and moving stats
        const T inv = T(1) / std::sqrt(var + eps_);
        inv_std_[ch] = inv;
        for (int b = 0; b < in.n; ++b) {
          const T* x = in.sample(b) + size_t(ch) * spatial;
          T* xh = xhat_.sample(b) + size_t(ch) * spatial;
          T* y = out.sample(b) + size_t(ch) * spatial;
          for (int i = 0; i < spatial; ++i) {
            xh[i] = (x[i] - mean) * inv;
            y[i] = gamma_.v[ch] * xh[i] + beta_.v[ch];
          }
        }
        moving_mean_.v[ch] = momentum_ * moving_mean_.v[ch] + (T(1) - momentum_) * mean;
        moving_var_.v[ch] = momentum_ * moving_var_.v[ch] + (T(1) - momentum_) * var;
      }
      batch_n_ = N;
    } else {
      inv_std_.assign(c_, T(0));
      for (int ch = 0; ch < c_; ++ch)
        inv_std_[ch] = T(1) / std::sqrt(moving_var_.v[ch] + eps_);
      xhat_ = TensorT<T>(in.n, in.c, in.nz, in.ny, in.nx);
      for (int b = 0; b < in.n; ++b)
        for (int ch = 0; ch < c_; ++ch) {
          const T* x = in.sample(b) + size_t(ch) * spatial;
          T* xh = xhat_.sample(b) + size_t(ch) * spatial;
          T* y = out.sample(b) + size_t(ch) * spatial;
          for (int i = 0; i < spatial; ++i) {
            xh[i] = (x[i] - moving_mean_.v[ch]) * inv_std_[ch];
            y[i] = gamma_.v[ch] * xh[i] + beta_.v[ch];
          }
        }
    }
    return out;
  }

  TensorT<T> backward(const TensorT<T>& gout) override {
    const int spatial = gout.spatial();
    TensorT<T> gin(gout.n, gout.c, gout.nz, gout.ny, gout.nx);
    for (int ch = 0; ch < c_; ++ch) {
      T dg = 0, db = 0;
      for (int b = 0; b < gout.n; ++b) {
        const T* gy = gout.sample(b) + size_t(ch) * spatial;
        const T* xh = xhat_.sample(b) + size_t(ch) * spatial;
        for (int i = 0; i < spatial; ++i) {
          dg += gy[i] * xh[i];
          db += gy[i];
        }
      }
      ggamma_.v[ch] += dg;
      gbeta_.v[ch] += db;
      const T scale = gamma_.v[ch] * inv_std_[ch];
      for (int b = 0; b < gout.n; ++b) {
        const T* gy = gout.sample(b) + size_t(ch) * spatial;
        const T* xh = xhat_.sample(b) + size_t(ch) * spatial;
        T* gx = gin.sample(b) + size_t(ch) * spatial;
        for (int i = 0; i < spatial; ++i)
          gx[i] = phase_ == Phase::train
                      ? scale * (gy[i] - db / batch_n_ - xh[i] * dg / batch_n_)
                      : scale * gy[i];
      }
    }
    return gin;
  }

 private:
  int c_;
  T eps_, momentum_;
  TensorT<T> gamma_, beta_, moving_mean_, moving_var_, ggamma_, gbeta_;
  TensorT<T> xhat_;
  std::vector<T> inv_std_;
  T batch_n_ = 0;
  Phase phase_ = Phase::infer;
};

template <typename T>
class Dropout : public LayerT<T> {
 public:
  explicit Dropout(T rate = T(0.5)) : rate_(rate) {
    if (rate < T(0) || rate >= T(1))
      throw validation_error("dropout rate must lie in [0,1)");
  }

  LayerKind kind() const override { return LayerKind::dropout; }
  T rate() const { return rate_; }

  TensorT<T> forward(const TensorT<T>& in, const Mode& mode) override {
    if (mode.phase == Phase::infer || rate_ == T(0)) {
      active_ = false;
      return in;
    }
    if (!mode.rng)
      throw std::runtime_error("dropout in train mode needs an rng");
    active_ = true;
    const T keep = T(1) - rate_;
    const T scale = T(1) / keep;
    mask_.assign(in.size(), 0);
    TensorT<T> out = in;
    for (size_t i = 0; i < out.v.size(); ++i) {
      if (mode.rng->uniform() >= double(rate_)) {
        mask_[i] = 1;
        out.v[i] *= scale;
      } else {
        out.v[i] = T(0);
      }
    }
    return out;
  }

  TensorT<T> backward(const TensorT<T>& gout) override {
    if (!active_) return gout;
    const T scale = T(1) / (T(1) - rate_);
    TensorT<T> gin = gout;
    for (size_t i = 0; i < gin.v.size(); ++i)
      gin.v[i] = mask_[i] ? gin.v[i] * scale : T(0);
    return gin;
  }

 private:
  T rate_;
  bool active_ = false;
  std::vector<uint8_t> mask_;
};

template <typename T>
class Dense : public LayerT<T> {
 public:
  Dense(int in_w, int out_w, bool has_bias)
      : in_w_(in_w), out_w_(out_w), has_bias_(has_bias),
        w_(TensorT<T>(out_w, in_w, 1, 1, 1)),
        gw_(TensorT<T>(out_w, in_w, 1, 1, 1)) {
    if (has_bias_) {
      b_ = TensorT<T>::vec(1, out_w);
      gb_ = TensorT<T>::vec(1, out_w);
    }
  }

  LayerKind kind() const override { return LayerKind::dense; }
  int in_width() const { return in_w_; }
  int out_width() const { return out_w_; }
  bool has_bias() const { return has_bias_; }

  std::vector<TensorT<T>*> params() override {
    return has_bias_ ? std::vector<TensorT<T>*>{&w_, &b_}
                     : std::vector<TensorT<T>*>{&w_};
  }
  std::vector<TensorT<T>*> grads() override {
    return has_bias_ ? std::vector<TensorT<T>*>{&gw_, &gb_}
                     : std::vector<TensorT<T>*>{&gw_};
  }
  TensorT<T>& weights() { return w_; }
  TensorT<T>& bias() { return b_; }

  TensorT<T> forward(const TensorT<T>& in, const Mode&) override {
    if (in.per_sample() != in_w_)
      throw validation_error(this->name + ": flattened width " +
                             std::to_string(in.per_sample()) +
                             " does not match weight rows " +
                             std::to_string(in_w_));
    in_ = in;  // kept flattened for backward
    TensorT<T> out = TensorT<T>::vec(in.n, out_w_);
    Eigen::Map<const detail::RowMat<T>> X(in.v.data(), in.n, in_w_);
    Eigen::Map<const detail::RowMat<T>> Wm(w_.v.data(), out_w_, in_w_);
    Eigen::Map<detail::RowMat<T>> Y(out.v.data(), in.n, out_w_);
    Y.noalias() = X * Wm.transpose();
    if (has_bias_) {
      Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> bv(b_.v.data(),
                                                               out_w_);
      Y.rowwise() += bv.transpose();
    }
    return out;
  }

  TensorT<T> backward(const TensorT<T>& gout) override {
    TensorT<T> gin(in_.n, in_.c, in_.nz, in_.ny, in_.nx);
    Eigen::Map<const detail::RowMat<T>> X(in_.v.data(), in_.n, in_w_);
    Eigen::Map<const detail::RowMat<T>> Go(gout.v.data(), gout.n, out_w_);
    Eigen::Map<const detail::RowMat<T>> Wm(w_.v.data(), out_w_, in_w_);
    Eigen::Map<detail::RowMat<T>> Gw(gw_.v.data(), out_w_, in_w_);
    Eigen::Map<detail::RowMat<T>> Gx(gin.v.data(), in_.n, in_w_);
    Gw.noalias() += Go.transpose() * X;
    if (has_bias_)
      for (int o = 0; o < out_w_; ++o) {
        // fixed-order accumulation keeps runs bit-reproducible
        T s = 0;
        for (int b = 0; b < gout.n; ++b) s += gout.v[size_t(b) * out_w_ + o];
        gb_.v[o] += s;
      }
    Gx.noalias() = Go * Wm;
    return gin;
  }

 private:
  int in_w_, out_w_;
  bool has_bias_;
  TensorT<T> w_, gw_, b_, gb_;
  TensorT<T> in_;
};

// Appends per-sample coordinate features to the flattened activations.
// The coordinate tensor is injected by the owning network before forward.
template <typename T>
class Concat : public LayerT<T> {
 public:
  explicit Concat(int coord_width) : cw_(coord_width) {
    if (coord_width < 1)
      throw validation_error("concat coordinate width must be positive");
  }

  LayerKind kind() const override { return LayerKind::concat; }
  int coord_width() const { return cw_; }

  void set_coords(const TensorT<T>& coords) {
    for (const T& v : coords.v)
      if (!std::isfinite(double(v)))
        throw validation_error("non-finite coordinate feature");
    coords_ = coords;
  }

  TensorT<T> forward(const TensorT<T>& in, const Mode&) override {
    if (coords_.n != in.n || coords_.per_sample() != cw_)
      throw validation_error("concat: coords shape " + coords_.shape_str() +
                             " does not match batch " + in.shape_str());
    in_w_ = in.per_sample();
    TensorT<T> out = TensorT<T>::vec(in.n, in_w_ + cw_);
    for (int b = 0; b < in.n; ++b) {
      T* dst = out.sample(b);
      const T* src = in.sample(b);
      std::copy(src, src + in_w_, dst);
      std::copy(coords_.sample(b), coords_.sample(b) + cw_, dst + in_w_);
    }
    return out;
  }

  TensorT<T> backward(const TensorT<T>& gout) override {
    TensorT<T> gin = TensorT<T>::vec(gout.n, in_w_);
    for (int b = 0; b < gout.n; ++b) {
      const T* src = gout.sample(b);
      std::copy(src, src + in_w_, gin.sample(b));
    }
    return gin;
  }

 private:
  int cw_;
  int in_w_ = 0;
  TensorT<T> coords_;
};

// Uniform [-a, a] with a = sqrt(6 / (fan_in + fan_out)).
template <typename T>
void xavier_init(TensorT<T>& w, int fan_in, int fan_out, Rng& rng) {
  const double a = std::sqrt(6.0 / (double(fan_in) + double(fan_out)));
  for (T& v : w.v) v = T(a * (2.0 * rng.uniform() - 1.0));
}

template <typename T>
void xavier_init_conv(Conv3d<T>& layer, Rng& rng) {
  const int kv = layer.kernel() * layer.kernel() * layer.kernel();
  xavier_init(layer.weights(), layer.in_channels() * kv,
              layer.out_channels() * kv, rng);
}

template <typename T>
void xavier_init_dense(Dense<T>& layer, Rng& rng) {
  xavier_init(layer.weights(), layer.in_width(), layer.out_width(), rng);
}

}  // namespace voxseg
