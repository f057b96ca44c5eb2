#pragma once

#include "voxseg/layers.hpp"

namespace voxseg {

// Patch classifier: a shared trunk feeding one linear head per task.
// Trunk layout and parameter shapes are fixed by build_canonical; the
// container itself is generic so tests can assemble small nets.
template <typename T>
struct NetworkT {
  std::vector<std::unique_ptr<LayerT<T>>> trunk;
  std::vector<std::unique_ptr<LayerT<T>>> heads;
  int coord_width = 0;  // 0 means no coordinate concat in the trunk
  TensorT<T> trunk_out_;  // cached by forward for the head fan-in gradient

  Concat<T>* concat_layer() {
    for (auto& l : trunk)
      if (l->kind() == LayerKind::concat) return static_cast<Concat<T>*>(l.get());
    return nullptr;
  }

  // coords may be empty when the trunk has no concat layer.
  std::vector<TensorT<T>> forward(const TensorT<T>& batch,
                                  const TensorT<T>& coords, const Mode& mode) {
    if (Concat<T>* cc = concat_layer()) cc->set_coords(coords);
    TensorT<T> x = batch;
    for (auto& l : trunk) x = l->forward(x, mode);
    trunk_out_ = x;
    std::vector<TensorT<T>> logits;
    logits.reserve(heads.size());
    for (auto& h : heads) logits.push_back(h->forward(x, mode));
    return logits;
  }

  // dlogits must match forward's outputs one-to-one; accumulates parameter
  // gradients and returns the gradient with respect to the input batch.
  TensorT<T> backward(const std::vector<TensorT<T>>& dlogits) {
    if (dlogits.size() != heads.size())
      throw validation_error("backward: expected " +
                             std::to_string(heads.size()) + " gradients, got " +
                             std::to_string(dlogits.size()));
    TensorT<T> g(trunk_out_.n, trunk_out_.c, trunk_out_.nz, trunk_out_.ny,
                 trunk_out_.nx);
    for (size_t t = 0; t < heads.size(); ++t) {
      TensorT<T> gh = heads[t]->backward(dlogits[t]);
      for (size_t i = 0; i < g.v.size(); ++i) g.v[i] += gh.v[i];
    }
    for (auto it = trunk.rbegin(); it != trunk.rend(); ++it)
      g = (*it)->backward(g);
    return g;
  }

  std::vector<TensorT<T>*> params() {
    std::vector<TensorT<T>*> out;
    for (auto& l : trunk)
      for (auto* p : l->params()) out.push_back(p);
    for (auto& h : heads)
      for (auto* p : h->params()) out.push_back(p);
    return out;
  }

  std::vector<TensorT<T>*> grads() {
    std::vector<TensorT<T>*> out;
    for (auto& l : trunk)
      for (auto* g : l->grads()) out.push_back(g);
    for (auto& h : heads)
      for (auto* g : h->grads()) out.push_back(g);
    return out;
  }

  void zero_grads() {
    for (auto& l : trunk) l->zero_grads();
    for (auto& h : heads) h->zero_grads();
  }

  int task_count() const { return int(heads.size()); }

  int class_count() const {
    if (heads.empty()) throw validation_error("network has no heads");
    return static_cast<Dense<T>*>(heads[0].get())->out_width();
  }
};

using Network = NetworkT<float>;

struct CensusRow {
  std::string layer;
  long long weights;  // bias entries excluded
};

struct Census {
  std::vector<CensusRow> rows;
  long long total = 0;
};

// Counts learnable weight-matrix entries of conv and dense layers; biases
// and normalization scale/shift are excluded.
template <typename T>
Census weight_census(NetworkT<T>& net) {
  Census c;
  auto add = [&](LayerT<T>& l) {
    long long n = 0;
    if (l.kind() == LayerKind::conv3d || l.kind() == LayerKind::dense)
      n = (long long)l.params()[0]->size();
    if (n > 0) {
      c.rows.push_back({l.name, n});
      c.total += n;
    }
  };
  for (auto& l : net.trunk) add(*l);
  for (auto& h : net.heads) add(*h);
  return c;
}

// Fixed patch pipeline for 23x23x23 single-channel input:
//   conv 7^3 x32 (bias) -> relu -> maxpool 2/2 (ceil)
//   conv 5^3 x64 -> bn -> relu
//   conv 3^3 x64 -> bn -> relu
//   dense 1728 -> 1024 (bias) -> relu -> dropout 0.5
//   concat +coord_width
//   dense -> 512 -> bn -> relu -> dropout 0.5
//   one dense 512 -> class_count head (bias) per task
// coord_width 0 drops the concat layer (ablation variant).
template <typename T>
NetworkT<T> build_canonical(int class_count, int task_count, int coord_width,
                            Rng& rng) {
  if (class_count < 2) throw validation_error("need at least 2 classes");
  if (task_count < 1) throw validation_error("need at least 1 task");
  if (coord_width < 0) throw validation_error("negative coordinate width");

  NetworkT<T> net;
  net.coord_width = coord_width;
  auto push = [&net](LayerT<T>* l, const std::string& name) {
    l->name = name;
    net.trunk.emplace_back(l);
  };

  auto* c1 = new Conv3d<T>(7, 1, 32, true);
  push(c1, "conv1");
  push(new Relu<T>(), "relu1");
  push(new MaxPool3d<T>(2, 2), "pool1");
  auto* c2 = new Conv3d<T>(5, 32, 64, false);
  push(c2, "conv2");
  push(new BatchNorm<T>(64), "bn2");
  push(new Relu<T>(), "relu2");
  auto* c3 = new Conv3d<T>(3, 64, 64, false);
  push(c3, "conv3");
  push(new BatchNorm<T>(64), "bn3");
  push(new Relu<T>(), "relu3");
  auto* d1 = new Dense<T>(64 * 3 * 3 * 3, 1024, true);
  push(d1, "dense1");
  push(new Relu<T>(), "relu4");
  push(new Dropout<T>(T(0.5)), "drop1");
  if (coord_width > 0) push(new Concat<T>(coord_width), "concat");
  auto* d2 = new Dense<T>(1024 + coord_width, 512, false);
  push(d2, "dense2");
  push(new BatchNorm<T>(512), "bn4");
  push(new Relu<T>(), "relu5");
  push(new Dropout<T>(T(0.5)), "drop2");

  xavier_init_conv(*c1, rng);
  xavier_init_conv(*c2, rng);
  xavier_init_conv(*c3, rng);
  xavier_init_dense(*d1, rng);
  xavier_init_dense(*d2, rng);

  for (int t = 0; t < task_count; ++t) {
    auto* h = new Dense<T>(512, class_count, true);
    h->name = "head" + std::to_string(t);
    xavier_init_dense(*h, rng);
    net.heads.emplace_back(h);
  }
  return net;
}

// Infer-mode forward on a zero batch, recording each trunk layer's output
// shape and the first head's. Useful for structural checks and inspection.
template <typename T>
std::vector<std::pair<std::string, std::string>> shape_chain(
    NetworkT<T>& net, int nz = 23, int ny = 23, int nx = 23) {
  TensorT<T> x(1, 1, nz, ny, nx);
  if (Concat<T>* cc = net.concat_layer())
    cc->set_coords(TensorT<T>::vec(1, cc->coord_width()));
  Mode mode;
  std::vector<std::pair<std::string, std::string>> out;
  for (auto& l : net.trunk) {
    x = l->forward(x, mode);
    out.emplace_back(l->name, x.shape_str());
  }
  if (!net.heads.empty()) {
    TensorT<T> y = net.heads[0]->forward(x, mode);
    out.emplace_back(net.heads[0]->name, y.shape_str());
  }
  return out;
}

template <typename T>
struct TaskLoss {
  double loss = 0;                  // sum over tasks of batch-mean NLL
  std::vector<TensorT<T>> probs;    // softmax rows per task
  std::vector<TensorT<T>> dlogits;  // gradient of loss per task
};

// Row-wise softmax with max subtraction.
template <typename T>
TensorT<T> softmax_rows(const TensorT<T>& logits) {
  const int w = logits.per_sample();
  TensorT<T> p = logits;
  for (int b = 0; b < p.n; ++b) {
    T* row = p.sample(b);
    T mx = row[0];
    for (int i = 1; i < w; ++i) mx = std::max(mx, row[i]);
    T sum = 0;
    for (int i = 0; i < w; ++i) {
      row[i] = std::exp(row[i] - mx);
      sum += row[i];
    }
    for (int i = 0; i < w; ++i) row[i] /= sum;
  }
  return p;
}

// Cross entropy per task, averaged over the full batch (a target of -1
// contributes zero loss and zero gradient but still counts in the divisor),
// summed across tasks.
template <typename T>
TaskLoss<T> softmax_loss(const std::vector<TensorT<T>>& logits,
                         const std::vector<std::vector<int>>& targets) {
  if (logits.size() != targets.size())
    throw validation_error("softmax_loss: " + std::to_string(logits.size()) +
                           " logit sets vs " + std::to_string(targets.size()) +
                           " target sets");
  TaskLoss<T> out;
  for (size_t t = 0; t < logits.size(); ++t) {
    const TensorT<T>& lg = logits[t];
    const std::vector<int>& tg = targets[t];
    if (int(tg.size()) != lg.n)
      throw validation_error("softmax_loss: batch " + std::to_string(lg.n) +
                             " vs " + std::to_string(tg.size()) + " targets");
    const int w = lg.per_sample();
    TensorT<T> p = softmax_rows(lg);
    TensorT<T> d = TensorT<T>::vec(lg.n, w);
    const double inv_n = 1.0 / double(lg.n);
    for (int b = 0; b < lg.n; ++b) {
      const int y = tg[b];
      if (y == -1) continue;
      if (y < 0 || y >= w)
        throw validation_error("softmax_loss: target " + std::to_string(y) +
                               " out of range for " + std::to_string(w) +
                               " classes");
      const T* pr = p.sample(b);
      out.loss += -std::log(std::max(double(pr[y]), 1e-300)) * inv_n;
      T* dr = d.sample(b);
      for (int i = 0; i < w; ++i) dr[i] = T((double(pr[i]) - (i == y)) * inv_n);
    }
    out.probs.push_back(std::move(p));
    out.dlogits.push_back(std::move(d));
  }
  return out;
}

}  // namespace voxseg
