#include "voxseg/trainer.hpp"

#include <algorithm>
#include <cmath>

namespace voxseg {

void SamplingPlan::validate() const {
  if (patch < 1 || patch % 2 == 0)
    throw validation_error("patch size must be odd and positive, got " +
                           std::to_string(patch));
  if (stage == Stage::fg_bg) {
    if (fg_quota <= 0 || bg_quota <= 0)
      throw validation_error("fg/bg quotas must be positive");
  } else if (per_structure <= 0) {
    throw validation_error("per-structure quota must be positive");
  }
}

void TrainConfig::validate() const {
  if (base_lr <= 0) throw validation_error("base_lr must be positive");
  if (batch_size < 1) throw validation_error("batch_size must be positive");
  if (epochs < 1) throw validation_error("epochs must be positive");
  if (max_iter < 0) throw validation_error("max_iter must be nonnegative");
  if (neighborhood != 1 && neighborhood != 7 && neighborhood != 27)
    throw validation_error("neighborhood must be 1, 7, or 27, got " +
                           std::to_string(neighborhood));
  if (power < 0) throw validation_error("power must be nonnegative");
  if (momentum < 0 || momentum >= 1)
    throw validation_error("momentum must lie in [0,1)");
}

std::vector<std::array<int, 3>> neighborhood_offsets(int neighborhood) {
  std::vector<std::array<int, 3>> out;
  out.push_back({0, 0, 0});
  if (neighborhood == 1) return out;
  std::vector<std::array<int, 3>> rest;
  for (int dz = -1; dz <= 1; ++dz)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        if (dz == 0 && dy == 0 && dx == 0) continue;
        const int manhattan = std::abs(dz) + std::abs(dy) + std::abs(dx);
        if (neighborhood == 7 && manhattan != 1) continue;
        rest.push_back({dz, dy, dx});
      }
  if (neighborhood != 7 && neighborhood != 27)
    throw validation_error("neighborhood must be 1, 7, or 27, got " +
                           std::to_string(neighborhood));
  std::sort(rest.begin(), rest.end());
  out.insert(out.end(), rest.begin(), rest.end());
  return out;
}

void extract_patch_into(const std::vector<float>& voxels, const Dims& dims,
                        uint64_t center, int size, float* dst) {
  const int h = size / 2;
  const int64_t cx = int64_t(center % dims.nx);
  const int64_t cy = int64_t((center / dims.nx) % dims.ny);
  const int64_t cz = int64_t(center / (uint64_t(dims.nx) * dims.ny));
  for (int dz = -h; dz <= h; ++dz) {
    const int64_t z = cz + dz;
    for (int dy = -h; dy <= h; ++dy) {
      const int64_t y = cy + dy;
      if (z < 0 || z >= dims.nz || y < 0 || y >= dims.ny) {
        for (int dx = -h; dx <= h; ++dx) *dst++ = 0.0f;
        continue;
      }
      const float* row = voxels.data() + (uint64_t(z) * dims.ny + y) * dims.nx;
      for (int dx = -h; dx <= h; ++dx) {
        const int64_t x = cx + dx;
        *dst++ = (x < 0 || x >= dims.nx) ? 0.0f : row[x];
      }
    }
  }
}

Tensor extract_patch(const Volume& v, uint64_t center, int size) {
  if (center >= v.size())
    throw validation_error("patch center " + std::to_string(center) +
                           " outside volume of " + std::to_string(v.size()) +
                           " voxels");
  if (size < 1 || size % 2 == 0)
    throw validation_error("patch size must be odd and positive");
  Tensor out(1, 1, size, size, size);
  extract_patch_into(v.as_f32(), v.dims(), center, size, out.v.data());
  return out;
}

std::vector<int> multitask_targets(const Volume& seg, uint64_t center,
                                   int neighborhood) {
  if (center >= seg.size())
    throw validation_error("target center outside volume");
  const Dims& d = seg.dims();
  const int64_t cx = int64_t(center % d.nx);
  const int64_t cy = int64_t((center / d.nx) % d.ny);
  const int64_t cz = int64_t(center / (uint64_t(d.nx) * d.ny));
  std::vector<int> out;
  for (const auto& [dz, dy, dx] : neighborhood_offsets(neighborhood)) {
    const int64_t x = cx + dx, y = cy + dy, z = cz + dz;
    const bool inside =
        x >= 0 && x < d.nx && y >= 0 && y < d.ny && z >= 0 && z < d.nz;
    out.push_back(inside
                      ? int(seg.value(uint32_t(x), uint32_t(y), uint32_t(z)))
                      : 0);
  }
  return out;
}

namespace {

// First q entries of a partial Fisher-Yates pass: a uniform q-subset.
std::vector<uint64_t> sample_distinct(std::vector<uint64_t>& pool,
                                      long long q, Rng& rng) {
  for (long long j = 0; j < q; ++j)
    std::swap(pool[j], pool[j + ptrdiff_t(rng.below(pool.size() - j))]);
  return std::vector<uint64_t>(pool.begin(), pool.begin() + q);
}

uint64_t jitter_center(uint64_t center, const Dims& d, Rng& rng) {
  const int64_t cx = int64_t(center % d.nx);
  const int64_t cy = int64_t((center / d.nx) % d.ny);
  const int64_t cz = int64_t(center / (uint64_t(d.nx) * d.ny));
  const int64_t x =
      std::clamp<int64_t>(cx + int64_t(rng.below(3)) - 1, 0, d.nx - 1);
  const int64_t y =
      std::clamp<int64_t>(cy + int64_t(rng.below(3)) - 1, 0, d.ny - 1);
  const int64_t z =
      std::clamp<int64_t>(cz + int64_t(rng.below(3)) - 1, 0, d.nz - 1);
  return (uint64_t(z) * d.ny + uint64_t(y)) * d.nx + uint64_t(x);
}

}  // namespace

SampleSet sample_patches(const Volume& seg, const BrainMask& mask,
                         const SamplingPlan& plan, int neighborhood,
                         Rng& rng) {
  plan.validate();
  if (!(seg.dims().nx == mask.dims().nx && seg.dims().ny == mask.dims().ny &&
        seg.dims().nz == mask.dims().nz))
    throw validation_error("segmentation dims " + dims_str(seg.dims()) +
                           " do not match mask dims " + dims_str(mask.dims()));

  // class id -> in-mask member voxels; fg_bg folds all structures into 1
  const bool binary = plan.stage == Stage::fg_bg;
  std::vector<std::vector<uint64_t>> members;
  int max_id = 0;
  for (uint64_t i = 0; i < seg.size(); ++i) {
    if (!mask.test(i)) continue;
    int id = int(seg.value(i));
    if (binary) id = id > 0 ? 1 : 0;
    if (id >= int(members.size())) members.resize(id + 1);
    members[id].push_back(i);
    max_id = std::max(max_id, id);
  }

  SampleSet out;
  out.task_count = int(neighborhood_offsets(neighborhood).size());
  const int first_class = binary ? 0 : 1;  // structures stage skips background
  for (int id = first_class; id <= max_id || (binary && id <= 1); ++id) {
    long long quota = binary ? (id == 0 ? plan.bg_quota : plan.fg_quota)
                             : plan.per_structure;
    if (!binary && std::find(plan.doubled_ids.begin(), plan.doubled_ids.end(),
                             id) != plan.doubled_ids.end())
      quota *= 2;
    std::vector<uint64_t>* pool =
        id < int(members.size()) ? &members[id] : nullptr;
    if (!pool || pool->empty()) {
      out.warnings.push_back("class " + std::to_string(id) +
                             " has no in-mask voxels; skipped");
      continue;
    }
    std::vector<uint64_t> centers;
    if ((long long)pool->size() >= quota) {
      centers = sample_distinct(*pool, quota, rng);
    } else if (plan.cap_to_population) {
      centers = *pool;
    } else {
      centers.reserve(quota);
      for (long long j = 0; j < quota; ++j)
        centers.push_back((*pool)[rng.below(pool->size())]);
    }
    for (uint64_t c : centers) {
      SampleRef ref;
      ref.center = c;
      ref.patch_center = plan.jitter ? jitter_center(c, seg.dims(), rng) : c;
      out.refs.push_back(ref);
      std::vector<int> t = multitask_targets(seg, c, neighborhood);
      for (int& v : t)
        if (binary) v = v > 0 ? 1 : 0;
      out.targets.insert(out.targets.end(), t.begin(), t.end());
    }
  }

  // one joint shuffle so minibatches mix classes
  std::vector<size_t> perm(out.refs.size());
  for (size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  rng.shuffle(perm);
  SampleSet shuffled;
  shuffled.task_count = out.task_count;
  shuffled.warnings = std::move(out.warnings);
  shuffled.refs.reserve(out.refs.size());
  shuffled.targets.reserve(out.targets.size());
  for (size_t i : perm) {
    shuffled.refs.push_back(out.refs[i]);
    for (int t = 0; t < out.task_count; ++t)
      shuffled.targets.push_back(out.targets[i * out.task_count + t]);
  }
  return shuffled;
}

double poly_lr(long long iter, const TrainConfig& cfg) {
  if (cfg.max_iter <= 0) throw validation_error("poly_lr needs max_iter > 0");
  if (iter < 0 || iter > cfg.max_iter)
    throw validation_error("iteration " + std::to_string(iter) +
                           " outside [0, " + std::to_string(cfg.max_iter) +
                           "]");
  return cfg.base_lr *
         std::pow(1.0 - double(iter) / double(cfg.max_iter), cfg.power);
}

void sgd_step(const std::vector<Tensor*>& params,
              const std::vector<Tensor*>& grads, double lr, double momentum,
              std::vector<std::vector<float>>& velocity) {
  if (params.size() != grads.size())
    throw validation_error("sgd_step: parameter/gradient count mismatch");
  if (velocity.empty()) {
    velocity.resize(params.size());
    for (size_t p = 0; p < params.size(); ++p)
      velocity[p].assign(params[p]->size(), 0.0f);
  }
  if (velocity.size() != params.size())
    throw validation_error("sgd_step: velocity count mismatch");
  for (size_t p = 0; p < params.size(); ++p) {
    Tensor& th = *params[p];
    const Tensor& g = *grads[p];
    std::vector<float>& v = velocity[p];
    if (g.size() != th.size() || v.size() != th.size())
      throw validation_error("sgd_step: shape mismatch at parameter " +
                             std::to_string(p));
    for (size_t i = 0; i < th.v.size(); ++i) {
      if (!std::isfinite(g.v[i]))
        throw std::runtime_error(
            "non-finite gradient at parameter tensor " + std::to_string(p) +
            " element " + std::to_string(i));
      v[i] = float(momentum * v[i] - lr * g.v[i]);
      th.v[i] += v[i];
    }
  }
}

void sgd_step(Network& net, double lr, double momentum,
              std::vector<std::vector<float>>& velocity) {
  sgd_step(net.params(), net.grads(), lr, momentum, velocity);
}

namespace {

struct ImageCache {
  std::vector<float> voxels;
  Dims dims;
};

void check_items(const std::vector<TrainItem>& data) {
  if (data.empty()) throw validation_error("no training images");
  for (const TrainItem& it : data) {
    if (!it.image || !it.seg || !it.mask || !it.coords)
      throw validation_error("training item with missing image/seg/mask/coords");
    if (it.image->size() != it.seg->size() ||
        it.image->size() != it.mask->size() ||
        it.image->size() != it.coords->dims().count())
      throw validation_error("training item with mismatched volume sizes");
  }
}

}  // namespace

Network train_stage(const std::vector<TrainItem>& data,
                    const SamplingPlan& plan, const TrainConfig& cfg,
                    int class_count, RunReport& report) {
  plan.validate();
  cfg.validate();
  check_items(data);
  const int classes = plan.stage == Stage::fg_bg ? 2 : class_count;
  if (classes < 2) throw validation_error("need at least 2 classes");
  const int tasks = cfg.neighborhood;

  Rng master(cfg.seed);
  Rng init_rng = master.spawn(1);
  Rng drop_rng = master.spawn(2);
  const int cw = cfg.use_coords ? CoordField::kChannels : 0;
  Network net = build_canonical<float>(classes, tasks, cw, init_rng);
  std::vector<std::vector<float>> velocity;

  std::vector<ImageCache> cache(data.size());
  for (size_t i = 0; i < data.size(); ++i) {
    cache[i].voxels = data[i].image->as_f32();
    cache[i].dims = data[i].image->dims();
  }

  TrainConfig schedule = cfg;
  long long iter = 0;
  Mode train_mode{Phase::train, &drop_rng};
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    SampleSet set;
    set.task_count = tasks;
    for (size_t img = 0; img < data.size(); ++img) {
      Rng srng = master.spawn(uint64_t(epoch) * 7919 + img + 100);
      SampleSet s = sample_patches(*data[img].seg, *data[img].mask, plan,
                                   cfg.neighborhood, srng);
      for (SampleRef& r : s.refs) r.image = int(img);
      set.refs.insert(set.refs.end(), s.refs.begin(), s.refs.end());
      set.targets.insert(set.targets.end(), s.targets.begin(),
                         s.targets.end());
      if (epoch == 0)
        report.warnings.insert(report.warnings.end(), s.warnings.begin(),
                               s.warnings.end());
    }
    if (set.refs.empty())
      throw validation_error("sampling produced no training patches");
    Rng shuffle_rng = master.spawn(uint64_t(epoch) * 104729 + 3);
    std::vector<size_t> perm(set.refs.size());
    for (size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    shuffle_rng.shuffle(perm);

    if (schedule.max_iter <= 0) {
      const long long per_epoch =
          ((long long)set.refs.size() + cfg.batch_size - 1) / cfg.batch_size;
      schedule.max_iter = (long long)cfg.epochs * per_epoch;
      report.max_iter = schedule.max_iter;
    }

    double epoch_loss = 0;
    long long epoch_batches = 0;
    std::vector<long long> correct(tasks, 0), seen(tasks, 0);
    for (size_t start = 0; start < perm.size();
         start += size_t(cfg.batch_size)) {
      const int b = int(std::min<size_t>(cfg.batch_size,
                                         perm.size() - start));
      if (b < 2) {  // batch normalization needs two samples in train mode
        ++report.skipped_small_batches;
        continue;
      }
      if (iter >= schedule.max_iter) break;
      Tensor patches(b, 1, plan.patch, plan.patch, plan.patch);
      Tensor coords = Tensor::vec(b, cw);
      std::vector<std::vector<int>> targets(
          tasks, std::vector<int>(b, -1));
      for (int s = 0; s < b; ++s) {
        const SampleRef& ref = set.refs[perm[start + s]];
        const ImageCache& ic = cache[ref.image];
        extract_patch_into(ic.voxels, ic.dims, ref.patch_center, plan.patch,
                           patches.sample(s));
        if (cw > 0) {
          const float* cf = data[ref.image].coords->at(ref.patch_center);
          std::copy(cf, cf + cw, coords.sample(s));
        }
        for (int t = 0; t < tasks; ++t)
          targets[t][s] = set.targets[perm[start + s] * tasks + t];
      }
      auto logits = net.forward(patches, coords, train_mode);
      TaskLoss<float> tl = softmax_loss(logits, targets);
      for (int t = 0; t < tasks; ++t)
        for (int s = 0; s < b; ++s) {
          const int y = targets[t][s];
          if (y < 0) continue;
          const float* row = tl.probs[t].sample(s);
          int arg = 0;
          for (int k = 1; k < classes; ++k)
            if (row[k] > row[arg]) arg = k;
          correct[t] += arg == y;
          ++seen[t];
        }
      net.zero_grads();
      net.backward(tl.dlogits);
      const double lr = poly_lr(iter, schedule);
      sgd_step(net, lr, cfg.momentum, velocity);
      report.iters.push_back({iter, lr, tl.loss});
      epoch_loss += tl.loss;
      ++epoch_batches;
      ++iter;
    }
    EpochStat es;
    es.epoch = epoch;
    es.mean_loss = epoch_batches ? epoch_loss / double(epoch_batches) : 0.0;
    for (int t = 0; t < tasks; ++t)
      es.task_accuracy.push_back(seen[t] ? double(correct[t]) / double(seen[t])
                                         : 0.0);
    report.epochs.push_back(es);
  }
  return net;
}

TrainOutput train(const std::vector<TrainItem>& data,
                  const SamplingPlan& fg_plan, const SamplingPlan& struct_plan,
                  const TrainConfig& cfg, int class_count) {
  if (fg_plan.stage != Stage::fg_bg)
    throw validation_error("first plan must be the fg_bg stage");
  if (struct_plan.stage != Stage::structures)
    throw validation_error("second plan must be the structures stage");
  TrainOutput out;
  out.fg_bg = train_stage(data, fg_plan, cfg, class_count, out.fg_report);
  TrainConfig cfg2 = cfg;
  cfg2.seed = cfg.seed + 1;
  out.structures =
      train_stage(data, struct_plan, cfg2, class_count, out.struct_report);
  return out;
}

}  // namespace voxseg
