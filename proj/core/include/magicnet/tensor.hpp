#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace magicnet {

// Rank-N parameter container, row-major.
template <typename Real>
struct Tensor {
  std::vector<uint32_t> dims;
  std::vector<Real> data;

  Tensor() = default;
  explicit Tensor(std::vector<uint32_t> d)
      : dims(std::move(d)), data(element_count(dims), Real(0)) {}

  static size_t element_count(const std::vector<uint32_t>& d) {
    if (d.empty()) return 0;
    size_t n = 1;
    for (uint32_t v : d) n *= v;
    return n;
  }

  size_t size() const { return data.size(); }
};

// channels x time activation container; row-major with time as the minor
// axis, so data[c * time + t].
template <typename Real>
struct Tensor2D {
  int64_t channels = 0;
  int64_t time = 0;
  std::vector<Real> data;

  Tensor2D() = default;
  Tensor2D(int64_t c, int64_t t)
      : channels(c), time(t), data(static_cast<size_t>(c) * static_cast<size_t>(t), Real(0)) {}

  Real& at(int64_t c, int64_t t) { return data[static_cast<size_t>(c * time + t)]; }
  Real at(int64_t c, int64_t t) const { return data[static_cast<size_t>(c * time + t)]; }
  Real* row(int64_t c) { return data.data() + c * time; }
  const Real* row(int64_t c) const { return data.data() + c * time; }
};

}  // namespace magicnet
