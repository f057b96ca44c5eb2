#include "voxseg/metrics.hpp"

namespace voxseg {

double dice(const Volume& s, const Volume& s_ref, int label) {
  if (!(s.dims() == s_ref.dims()))
    throw validation_error("dice: dim mismatch, " + dims_str(s.dims()) +
                           " vs " + dims_str(s_ref.dims()));
  const auto a = s.as_i32();
  const auto b = s_ref.as_i32();
  uint64_t na = 0, nb = 0, both = 0;
  for (uint64_t i = 0; i < a.size(); ++i) {
    const bool ia = a[i] == label;
    const bool ib = b[i] == label;
    na += ia;
    nb += ib;
    both += ia && ib;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * double(both) / double(na + nb);
}

}  // namespace voxseg
