#pragma once

#include "voxseg/volume.hpp"

namespace voxseg {

// Volume overlap 2|S ∩ S̄| / (|S| + |S̄|) restricted to one label.
// Both sets empty counts as perfect agreement (1.0).
double dice(const Volume& s, const Volume& s_ref, int label);

}  // namespace voxseg
