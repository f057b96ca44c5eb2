#include "voxseg/cascade.hpp"

#include <algorithm>

#include "voxseg/trainer.hpp"

namespace voxseg {

VoteAccumulator::VoteAccumulator(Dims dims, Spacing spacing, int eta)
    : dims_(dims), spacing_(spacing), eta_(eta),
      sums_(dims.count() * uint64_t(eta), 0.0f), counts_(dims.count(), 0) {
  if (eta < 2)
    throw validation_error("vote accumulator needs at least 2 labels");
}

void VoteAccumulator::add(uint64_t voxel, const float* dist) {
  if (voxel >= counts_.size())
    throw validation_error("vote deposit outside volume");
  float* s = sums_.data() + voxel * eta_;
  for (int l = 0; l < eta_; ++l) s[l] += dist[l];
  ++counts_[voxel];
}

ProbMap VoteAccumulator::normalized() const {
  ProbMap out(dims_, spacing_, eta_);
  for (uint64_t i = 0; i < counts_.size(); ++i) {
    if (counts_[i] == 0) {
      out.set_delta(i, 0);
      continue;
    }
    const float inv = 1.0f / float(counts_[i]);
    const float* s = sums_.data() + i * eta_;
    float* r = out.row(i);
    for (int l = 0; l < eta_; ++l) r[l] = s[l] * inv;
  }
  return out;
}

PatchPredictions predict_patches(Network& net, const Volume& image,
                                 const CoordField& coords,
                                 const std::vector<uint64_t>& centers,
                                 int patch, int batch_size) {
  if (patch < 1 || patch % 2 == 0)
    throw validation_error("patch size must be odd and positive");
  if (batch_size < 1) throw validation_error("batch_size must be positive");
  const int cw = net.coord_width;
  if (cw != 0 && cw != CoordField::kChannels)
    throw validation_error("network expects " + std::to_string(cw) +
                           " coordinate channels, field carries " +
                           std::to_string(CoordField::kChannels));
  if (cw > 0 && !(image.dims() == coords.dims()))
    throw validation_error("image/coords dim mismatch");
  for (uint64_t c : centers)
    if (c >= image.size())
      throw validation_error("patch center outside volume");

  PatchPredictions out;
  out.task_count = net.task_count();
  out.class_count = net.class_count();
  out.centers = centers;
  out.probs.resize(centers.size() * uint64_t(out.task_count) *
                   out.class_count);

  const std::vector<float> vox = image.as_f32();
  Mode infer{Phase::infer, nullptr};
  for (size_t start = 0; start < centers.size();
       start += size_t(batch_size)) {
    const int b = int(std::min<size_t>(batch_size, centers.size() - start));
    Tensor patches(b, 1, patch, patch, patch);
    Tensor cb = Tensor::vec(b, cw);
    for (int s = 0; s < b; ++s) {
      extract_patch_into(vox, image.dims(), centers[start + s], patch,
                         patches.sample(s));
      if (cw > 0) {
        const float* cf = coords.at(centers[start + s]);
        std::copy(cf, cf + cw, cb.sample(s));
      }
    }
    auto logits = net.forward(patches, cb, infer);
    for (int t = 0; t < out.task_count; ++t) {
      Tensor p = softmax_rows(logits[t]);
      for (int s = 0; s < b; ++s)
        std::copy(p.sample(s), p.sample(s) + out.class_count,
                  out.probs.data() +
                      ((start + s) * uint64_t(out.task_count) + t) *
                          out.class_count);
    }
  }
  return out;
}

VoteAccumulator accumulate(const PatchPredictions& preds, Dims dims,
                           Spacing spacing) {
  const auto offsets = neighborhood_offsets(preds.task_count);
  VoteAccumulator acc(dims, spacing, preds.class_count);
  for (size_t i = 0; i < preds.centers.size(); ++i) {
    const uint64_t c = preds.centers[i];
    if (c >= dims.count())
      throw validation_error("prediction center outside volume");
    const int64_t cx = int64_t(c % dims.nx);
    const int64_t cy = int64_t((c / dims.nx) % dims.ny);
    const int64_t cz = int64_t(c / (uint64_t(dims.nx) * dims.ny));
    for (int t = 0; t < preds.task_count; ++t) {
      const auto& [dz, dy, dx] = offsets[t];
      const int64_t x = cx + dx, y = cy + dy, z = cz + dz;
      if (x < 0 || x >= dims.nx || y < 0 || y >= dims.ny || z < 0 ||
          z >= dims.nz)
        continue;
      acc.add((uint64_t(z) * dims.ny + y) * dims.nx + uint64_t(x),
              preds.dist(i, t));
    }
  }
  return acc;
}

ProbMap aggregate(const PatchPredictions& preds, Dims dims, Spacing spacing) {
  return accumulate(preds, dims, spacing).normalized();
}

namespace {

std::vector<uint64_t> strided_mask_centers(const BrainMask& mask,
                                           int stride) {
  std::vector<uint64_t> out;
  const Dims& d = mask.dims();
  for (uint32_t z = 0; z < d.nz; z += uint32_t(stride))
    for (uint32_t y = 0; y < d.ny; y += uint32_t(stride))
      for (uint32_t x = 0; x < d.nx; x += uint32_t(stride)) {
        const uint64_t i = mask.index(x, y, z);
        if (mask.test(i)) out.push_back(i);
      }
  return out;
}

}  // namespace

CascadeOutput cascade(const Volume& image, const BrainMask& mask,
                      const CoordField& coords, Network& net_fg,
                      Network& net_struct, int stride, int patch,
                      int batch_size) {
  if (stride < 1) throw validation_error("stride must be positive");
  if (!(image.dims() == mask.dims()))
    throw validation_error("image/mask dim mismatch");
  if (net_fg.class_count() != 2)
    throw validation_error("foreground network must have 2 classes, has " +
                           std::to_string(net_fg.class_count()));
  if (net_struct.class_count() < 2)
    throw validation_error("structures network needs at least 2 classes");

  const Dims& d = image.dims();
  const std::vector<uint64_t> centers = strided_mask_centers(mask, stride);

  CascadeOutput out;
  out.fg_prob.assign(d.count(), 0.0f);
  PatchPredictions fg_preds =
      predict_patches(net_fg, image, coords, centers, patch, batch_size);
  ProbMap fg_map = aggregate(fg_preds, d, image.spacing());
  for (uint64_t i = 0; i < d.count(); ++i)
    out.fg_prob[i] = mask.test(i) ? fg_map.at(i, 1) : 0.0f;

  std::vector<uint64_t> fg_centers;
  for (uint64_t c : centers)
    if (out.fg_prob[c] > 0.5f) fg_centers.push_back(c);

  const int eta = net_struct.class_count();
  ProbMap struct_map(d, image.spacing(), eta);
  if (!fg_centers.empty()) {
    PatchPredictions st = predict_patches(net_struct, image, coords,
                                          fg_centers, patch, batch_size);
    struct_map = aggregate(st, d, image.spacing());
  }

  out.probmap = ProbMap(d, image.spacing(), eta);
  for (uint64_t i = 0; i < d.count(); ++i) {
    if (!mask.test(i) || !(out.fg_prob[i] > 0.5f)) {
      out.probmap.set_delta(i, 0);
      continue;
    }
    const float fg = out.fg_prob[i];
    const float* s = struct_map.row(i);
    double denom = 0.0;
    for (int l = 1; l < eta; ++l) denom += s[l];
    if (denom <= 0.0) {  // gated in but no structural deposit reached here
      out.probmap.set_delta(i, 0);
      continue;
    }
    float* r = out.probmap.row(i);
    r[0] = 1.0f - fg;
    const double scale = fg / denom;
    for (int l = 1; l < eta; ++l) r[l] = float(s[l] * scale);
  }
  return out;
}

}  // namespace voxseg
