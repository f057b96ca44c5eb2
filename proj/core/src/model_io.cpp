#include "voxseg/model_io.hpp"

#include <cstring>
#include <fstream>

namespace voxseg {

namespace {

constexpr char kMagic[8] = {'D', 'N', 'M', 'D', '0', '0', '0', '1'};

void put_u8(std::ostream& os, uint8_t v) { os.put(char(v)); }

void put_u32(std::ostream& os, uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), 4);
}

void put_str(std::ostream& os, const std::string& s) {
  put_u32(os, uint32_t(s.size()));
  os.write(s.data(), std::streamsize(s.size()));
}

// Rank-1 hyperparameter vector first, then payload tensors.
void put_tensor(std::ostream& os, const std::vector<uint32_t>& dims,
                const float* data) {
  put_u8(os, uint8_t(dims.size()));
  size_t count = 1;
  for (uint32_t d : dims) {
    put_u32(os, d);
    count *= d;
  }
  os.write(reinterpret_cast<const char*>(data),
           std::streamsize(count * sizeof(float)));
}

void put_vec(std::ostream& os, const std::vector<float>& v) {
  put_tensor(os, {uint32_t(v.size())}, v.data());
}

void write_layer(std::ostream& os, LayerT<float>& l) {
  put_u8(os, uint8_t(l.kind()));
  put_str(os, l.name);
  switch (l.kind()) {
    case LayerKind::conv3d: {
      auto& c = static_cast<Conv3d<float>&>(l);
      put_u32(os, c.has_bias() ? 3u : 2u);
      put_vec(os, {float(c.kernel()), float(c.in_channels()),
                   float(c.out_channels()), c.has_bias() ? 1.f : 0.f});
      const auto& w = c.weights();
      put_tensor(os,
                 {uint32_t(w.n), uint32_t(w.c), uint32_t(w.nz), uint32_t(w.ny),
                  uint32_t(w.nx)},
                 w.v.data());
      if (c.has_bias()) put_vec(os, c.bias().v);
      break;
    }
    case LayerKind::relu:
      put_u32(os, 1u);
      put_vec(os, {});
      break;
    case LayerKind::maxpool3d: {
      auto& p = static_cast<MaxPool3d<float>&>(l);
      put_u32(os, 1u);
      put_vec(os, {float(p.size()), float(p.stride())});
      break;
    }
    case LayerKind::batchnorm: {
      auto& b = static_cast<BatchNorm<float>&>(l);
      put_u32(os, 5u);
      put_vec(os, {float(b.channels()), b.eps(), b.momentum()});
      put_vec(os, b.params()[0]->v);
      put_vec(os, b.params()[1]->v);
      put_vec(os, b.moving_mean().v);
      put_vec(os, b.moving_var().v);
      break;
    }
    case LayerKind::dropout: {
      auto& d = static_cast<Dropout<float>&>(l);
      put_u32(os, 1u);
      put_vec(os, {d.rate()});
      break;
    }
    case LayerKind::dense: {
      auto& d = static_cast<Dense<float>&>(l);
      put_u32(os, d.has_bias() ? 3u : 2u);
      put_vec(os, {float(d.in_width()), float(d.out_width()),
                   d.has_bias() ? 1.f : 0.f});
      put_tensor(os, {uint32_t(d.out_width()), uint32_t(d.in_width())},
                 d.weights().v.data());
      if (d.has_bias()) put_vec(os, d.bias().v);
      break;
    }
    case LayerKind::concat: {
      auto& c = static_cast<Concat<float>&>(l);
      put_u32(os, 1u);
      put_vec(os, {float(c.coord_width())});
      break;
    }
  }
}

struct Reader {
  std::ifstream is;
  std::string path;

  explicit Reader(const std::string& p)
      : is(p, std::ios::binary), path(p) {
    if (!is) throw validation_error("cannot open model file: " + p);
  }

  void need(void* dst, size_t n, const char* what) {
    is.read(reinterpret_cast<char*>(dst), std::streamsize(n));
    if (size_t(is.gcount()) != n)
      throw validation_error("truncated model file (" + std::string(what) +
                             "): " + path);
  }

  uint8_t u8(const char* what) {
    uint8_t v;
    need(&v, 1, what);
    return v;
  }

  uint32_t u32(const char* what) {
    uint32_t v;
    need(&v, 4, what);
    return v;
  }

  std::string str() {
    uint32_t n = u32("name length");
    if (n > (1u << 20)) throw validation_error("model layer name too long");
    std::string s(n, '\0');
    need(s.data(), n, "name");
    return s;
  }

  std::vector<float> tensor(std::vector<uint32_t>* dims_out = nullptr) {
    uint8_t rank = u8("tensor rank");
    if (rank > 5) throw validation_error("model tensor rank > 5");
    size_t count = 1;
    std::vector<uint32_t> dims(rank);
    for (uint8_t i = 0; i < rank; ++i) {
      dims[i] = u32("tensor dim");
      count *= dims[i];
    }
    if (count > (size_t(1) << 28))
      throw validation_error("model tensor implausibly large");
    std::vector<float> v(count);
    need(v.data(), count * sizeof(float), "tensor payload");
    if (dims_out) *dims_out = std::move(dims);
    return v;
  }
};

int hyper_int(const std::vector<float>& h, size_t i, const char* what) {
  if (i >= h.size())
    throw validation_error(std::string("model hyperparameters missing ") +
                           what);
  return int(h[i]);
}

void expect_size(const std::vector<float>& v, size_t n, const char* what) {
  if (v.size() != n)
    throw validation_error(std::string("model tensor size mismatch for ") +
                           what + ": got " + std::to_string(v.size()) +
                           ", expected " + std::to_string(n));
}

std::unique_ptr<LayerT<float>> read_layer(Reader& r) {
  const uint8_t code = r.u8("layer kind");
  const std::string name = r.str();
  const uint32_t ntens = r.u32("tensor count");
  if (ntens < 1) throw validation_error("layer missing hyperparameter tensor");
  const std::vector<float> hyper = r.tensor();

  auto want = [&](uint32_t n) {
    if (ntens != n)
      throw validation_error("layer " + name + ": expected " +
                             std::to_string(n) + " tensors, got " +
                             std::to_string(ntens));
  };

  std::unique_ptr<LayerT<float>> out;
  switch (LayerKind(code)) {
    case LayerKind::conv3d: {
      const int k = hyper_int(hyper, 0, "kernel");
      const int cin = hyper_int(hyper, 1, "in channels");
      const int cout = hyper_int(hyper, 2, "out channels");
      const bool bias = hyper_int(hyper, 3, "bias flag") != 0;
      want(bias ? 3u : 2u);
      auto c = std::make_unique<Conv3d<float>>(k, cin, cout, bias);
      std::vector<uint32_t> dims;
      std::vector<float> w = r.tensor(&dims);
      expect_size(w, c->weights().size(), "conv weights");
      c->weights().v = std::move(w);
      if (bias) {
        std::vector<float> b = r.tensor();
        expect_size(b, size_t(cout), "conv bias");
        c->bias().v = std::move(b);
      }
      out = std::move(c);
      break;
    }
    case LayerKind::relu:
      want(1u);
      out = std::make_unique<Relu<float>>();
      break;
    case LayerKind::maxpool3d:
      want(1u);
      out = std::make_unique<MaxPool3d<float>>(hyper_int(hyper, 0, "size"),
                                               hyper_int(hyper, 1, "stride"));
      break;
    case LayerKind::batchnorm: {
      const int ch = hyper_int(hyper, 0, "channels");
      if (hyper.size() < 3)
        throw validation_error("batchnorm hyperparameters incomplete");
      want(5u);
      auto b = std::make_unique<BatchNorm<float>>(ch, hyper[1], hyper[2]);
      for (TensorT<float>* dst :
           {b->params()[0], b->params()[1], &b->moving_mean(),
            &b->moving_var()}) {
        std::vector<float> v = r.tensor();
        expect_size(v, size_t(ch), "batchnorm vector");
        dst->v = std::move(v);
      }
      out = std::move(b);
      break;
    }
    case LayerKind::dropout:
      want(1u);
      if (hyper.empty()) throw validation_error("dropout rate missing");
      out = std::make_unique<Dropout<float>>(hyper[0]);
      break;
    case LayerKind::dense: {
      const int in_w = hyper_int(hyper, 0, "in width");
      const int out_w = hyper_int(hyper, 1, "out width");
      const bool bias = hyper_int(hyper, 2, "bias flag") != 0;
      want(bias ? 3u : 2u);
      auto d = std::make_unique<Dense<float>>(in_w, out_w, bias);
      std::vector<float> w = r.tensor();
      expect_size(w, size_t(in_w) * size_t(out_w), "dense weights");
      d->weights().v = std::move(w);
      if (bias) {
        std::vector<float> b = r.tensor();
        expect_size(b, size_t(out_w), "dense bias");
        d->bias().v = std::move(b);
      }
      out = std::move(d);
      break;
    }
    case LayerKind::concat:
      want(1u);
      out = std::make_unique<Concat<float>>(hyper_int(hyper, 0, "width"));
      break;
    default:
      throw validation_error("unknown layer kind code " + std::to_string(code));
  }
  out->name = name;
  return out;
}

}  // namespace

void save_model(Network& net, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write model file: " + path);
  os.write(kMagic, sizeof(kMagic));
  put_u32(os, uint32_t(net.trunk.size() + net.heads.size()));
  for (auto& l : net.trunk) {
    if (l->name.rfind("head", 0) == 0)
      throw validation_error("trunk layer name reserved for heads: " + l->name);
    write_layer(os, *l);
  }
  for (size_t t = 0; t < net.heads.size(); ++t) {
    if (net.heads[t]->name != "head" + std::to_string(t))
      throw validation_error("head layers must be named head0..headN in order");
    write_layer(os, *net.heads[t]);
  }
  if (!os) throw std::runtime_error("model write failed: " + path);
}

Network load_model(const std::string& path) {
  Reader r(path);
  char magic[8];
  r.need(magic, 8, "magic");
  if (std::memcmp(magic, kMagic, 8) != 0)
    throw validation_error("bad model magic in " + path);
  const uint32_t count = r.u32("layer count");
  if (count > 4096) throw validation_error("model layer count implausible");
  Network net;
  for (uint32_t i = 0; i < count; ++i) {
    auto l = read_layer(r);
    const bool is_head = l->name.rfind("head", 0) == 0;
    if (is_head) {
      if (l->kind() != LayerKind::dense)
        throw validation_error("head layer " + l->name + " is not dense");
      net.heads.push_back(std::move(l));
    } else {
      if (!net.heads.empty())
        throw validation_error("trunk layer after head layers: " + l->name);
      if (l->kind() == LayerKind::concat)
        net.coord_width = static_cast<Concat<float>*>(l.get())->coord_width();
      net.trunk.push_back(std::move(l));
    }
  }
  if (net.heads.empty()) throw validation_error("model has no head layers");
  r.is.peek();
  if (!r.is.eof())
    throw validation_error("trailing bytes after model payload: " + path);
  return net;
}

}  // namespace voxseg
