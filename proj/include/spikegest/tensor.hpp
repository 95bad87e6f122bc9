#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace spikegest {

// Dense row-major matrix of doubles. Small helper, not a linear-algebra
// library; the layers below only need indexed access and flat iteration.
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<double> v;

  Mat() = default;
  Mat(int r, int c, double fill = 0.0) : rows(r), cols(c), v(static_cast<size_t>(r) * c, fill) {}

  double& at(int r, int c) { return v[static_cast<size_t>(r) * cols + c]; }
  double at(int r, int c) const { return v[static_cast<size_t>(r) * cols + c]; }
  size_t size() const { return v.size(); }

  bool finite() const {
    for (double x : v)
      if (!std::isfinite(x)) return false;
    return true;
  }
};

// (T x C x L) tensor, time-major: index = (t*C + c)*L + l.
struct Tensor3 {
  int t = 0;
  int c = 0;
  int l = 0;
  std::vector<double> v;

  Tensor3() = default;
  Tensor3(int t_, int c_, int l_, double fill = 0.0)
      : t(t_), c(c_), l(l_), v(static_cast<size_t>(t_) * c_ * l_, fill) {}

  size_t idx(int ti, int ci, int li) const {
    return (static_cast<size_t>(ti) * c + ci) * l + li;
  }
  double& at(int ti, int ci, int li) { return v[idx(ti, ci, li)]; }
  double at(int ti, int ci, int li) const { return v[idx(ti, ci, li)]; }
  size_t size() const { return v.size(); }
};

// Binary spike tensor over (T time steps x C channels x L positions).
// The dense bit plane serves the convolutions; the sorted flat index list
// serves the Jaccard path, which must only touch nonzeros.
struct SpikeTrain {
  int t = 0;
  int c = 0;
  int l = 0;
  std::vector<uint8_t> bits;      // 0/1 per (t,c,l), time-major
  std::vector<int64_t> nonzeros;  // sorted flat indices of the 1 entries

  SpikeTrain() = default;
  SpikeTrain(int t_, int c_, int l_)
      : t(t_), c(c_), l(l_), bits(static_cast<size_t>(t_) * c_ * l_, 0) {}

  size_t idx(int ti, int ci, int li) const {
    return (static_cast<size_t>(ti) * c + ci) * l + li;
  }
  uint8_t at(int ti, int ci, int li) const { return bits[idx(ti, ci, li)]; }

  // Marks a spike. Callers must set positions in increasing flat order so the
  // nonzero list stays sorted (layer loops do this naturally).
  void set(int ti, int ci, int li) {
    size_t i = idx(ti, ci, li);
    bits[i] = 1;
    nonzeros.push_back(static_cast<int64_t>(i));
  }

  size_t size() const { return bits.size(); }

  double density() const {
    return bits.empty() ? 0.0 : static_cast<double>(nonzeros.size()) / static_cast<double>(bits.size());
  }

  bool same_shape(const SpikeTrain& o) const { return t == o.t && c == o.c && l == o.l; }

  // Nonzero time indices of the (ci, li) column, ascending.
  std::vector<int> column_nonzeros(int ci, int li) const {
    std::vector<int> out;
    for (int ti = 0; ti < t; ++ti)
      if (bits[idx(ti, ci, li)]) out.push_back(ti);
    return out;
  }
};

inline SpikeTrain make_spike_train_from_bits(int t, int c, int l, const std::vector<uint8_t>& bits) {
  if (bits.size() != static_cast<size_t>(t) * c * l)
    throw std::invalid_argument("spike train bit count does not match shape");
  SpikeTrain s(t, c, l);
  for (size_t i = 0; i < bits.size(); ++i) {
    if (bits[i] != 0 && bits[i] != 1) throw std::invalid_argument("spike train entries must be 0 or 1");
    if (bits[i]) {
      s.bits[i] = 1;
      s.nonzeros.push_back(static_cast<int64_t>(i));
    }
  }
  return s;
}

}  // namespace spikegest
