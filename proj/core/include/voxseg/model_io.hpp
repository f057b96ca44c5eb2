#pragma once

#include <string>

#include "voxseg/network.hpp"

namespace voxseg {

// Binary model container, magic "DNMD0001", little-endian throughout:
//   uint32 layer count, then per layer
//     uint8 kind code, uint32 name length, name bytes, uint32 tensor count,
//     per tensor: uint8 rank, uint32 dims[rank], float32 payload.
// The first tensor of every layer is its hyperparameter vector (rank 1);
// parameter, bias, and moving-statistic tensors follow in a fixed order per
// kind. Layers named "head<t>" are the per-task output heads; everything
// else is trunk, in file order.
void save_model(Network& net, const std::string& path);
Network load_model(const std::string& path);

}  // namespace voxseg
