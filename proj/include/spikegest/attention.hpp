#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "spikegest/tensor.hpp"

namespace spikegest {

constexpr double kJaccardEps = 1e-6;

// Jaccard similarity of two binary vectors given as sorted nonzero index
// lists: |A∩B| / (|A∪B| + eps). Work is linear in the number of nonzeros;
// `steps` (when given) counts the merge iterations for the scaling tests.
inline double jaccard_sorted(std::span<const int64_t> a, std::span<const int64_t> b, double eps,
                             size_t* steps = nullptr) {
  size_t i = 0, j = 0, inter = 0, uni = 0, work = 0;
  while (i < a.size() && j < b.size()) {
    ++work;
    if (a[i] == b[j]) {
      ++inter;
      ++uni;
      ++i;
      ++j;
    } else if (a[i] < b[j]) {
      ++uni;
      ++i;
    } else {
      ++uni;
      ++j;
    }
  }
  uni += (a.size() - i) + (b.size() - j);
  work += (a.size() - i) + (b.size() - j);
  if (steps) *steps = work;
  return static_cast<double>(inter) / (static_cast<double>(uni) + eps);
}

// Dense binary-vector form; validates inputs, then runs the index-list path.
inline double jaccard(std::span<const double> x, std::span<const double> y, double eps = kJaccardEps) {
  if (x.size() != y.size()) throw std::invalid_argument("jaccard: length mismatch");
  std::vector<int64_t> xi, yi;
  for (size_t i = 0; i < x.size(); ++i) {
    if (x[i] != 0.0 && x[i] != 1.0) throw std::invalid_argument("jaccard: non-binary entry in x");
    if (y[i] != 0.0 && y[i] != 1.0) throw std::invalid_argument("jaccard: non-binary entry in y");
    if (x[i] == 1.0) xi.push_back(static_cast<int64_t>(i));
    if (y[i] == 1.0) yi.push_back(static_cast<int64_t>(i));
  }
  return jaccard_sorted(xi, yi, eps);
}

// Query/key/value spike trains of identical shape.
struct AttentionTriplet {
  SpikeTrain q, k, v;

  void validate() const {
    if (!q.same_shape(k) || !q.same_shape(v))
      throw std::invalid_argument("attention triplet: Q/K/V shapes differ");
  }
};

// Channel-wise SJA: one scalar w = Jaccard(flatten(Q), flatten(K)) per sample
// scales every channel of V, so the output entries are in {0, w}.
inline double sja_channelwise_weight(const AttentionTriplet& in, double eps = kJaccardEps) {
  in.validate();
  return jaccard_sorted(in.q.nonzeros, in.k.nonzeros, eps);
}

inline Tensor3 sja_channelwise(const AttentionTriplet& in, double eps = kJaccardEps) {
  double w = sja_channelwise_weight(in, eps);
  Tensor3 out(in.v.t, in.v.c, in.v.l);
  for (int64_t i : in.v.nonzeros) out.v[static_cast<size_t>(i)] = w;
  return out;
}

// Per-channel-scalar reading of the channel-wise rule (one Jaccard per channel
// slice). Off by default; kept behind a switch for ablations.
inline std::vector<double> sja_per_channel_weights(const AttentionTriplet& in, double eps = kJaccardEps) {
  in.validate();
  std::vector<std::vector<int64_t>> qi(in.q.c), ki(in.k.c);
  const int64_t L = in.q.l;
  const int64_t C = in.q.c;
  for (int64_t f : in.q.nonzeros) {
    int64_t ci = (f / L) % C;
    qi[ci].push_back(f);
  }
  for (int64_t f : in.k.nonzeros) {
    int64_t ci = (f / L) % C;
    ki[ci].push_back(f);
  }
  std::vector<double> w(in.q.c);
  for (int ci = 0; ci < in.q.c; ++ci) w[ci] = jaccard_sorted(qi[ci], ki[ci], eps);
  return w;
}

inline Tensor3 sja_per_channel(const AttentionTriplet& in, double eps = kJaccardEps) {
  std::vector<double> w = sja_per_channel_weights(in, eps);
  Tensor3 out(in.v.t, in.v.c, in.v.l);
  const int64_t L = in.v.l;
  const int64_t C = in.v.c;
  for (int64_t f : in.v.nonzeros) out.v[static_cast<size_t>(f)] = w[(f / L) % C];
  return out;
}

// Element-wise SJA: each (channel, position) gets its own weight, the Jaccard
// of the Q and K time columns at that position.
inline Mat sja_elementwise_weights(const AttentionTriplet& in, double eps = kJaccardEps) {
  in.validate();
  const int C = in.q.c, L = in.q.l;
  // Bucket nonzeros per (c,l) column; one pass over each train.
  std::vector<std::vector<int64_t>> qcol(static_cast<size_t>(C) * L), kcol(static_cast<size_t>(C) * L);
  const int64_t plane = static_cast<int64_t>(C) * L;
  for (int64_t f : in.q.nonzeros) qcol[static_cast<size_t>(f % plane)].push_back(f / plane);
  for (int64_t f : in.k.nonzeros) kcol[static_cast<size_t>(f % plane)].push_back(f / plane);
  Mat w(C, L);
  for (int ci = 0; ci < C; ++ci)
    for (int li = 0; li < L; ++li) {
      size_t col = static_cast<size_t>(ci) * L + li;
      w.at(ci, li) = jaccard_sorted(qcol[col], kcol[col], eps);
    }
  return w;
}

inline Tensor3 sja_elementwise(const AttentionTriplet& in, double eps = kJaccardEps) {
  Mat w = sja_elementwise_weights(in, eps);
  Tensor3 out(in.v.t, in.v.c, in.v.l);
  const int64_t plane = static_cast<int64_t>(in.v.c) * in.v.l;
  for (int64_t f : in.v.nonzeros) out.v[static_cast<size_t>(f)] = w.v[static_cast<size_t>(f % plane)];
  return out;
}

// Dense softmax attention baseline: softmax(Q K^T / sqrt(d)) V with row-wise
// softmax. O(n^2 d) time and an explicit O(n^2) score matrix by construction.
inline Mat dense_attention(const Mat& q, const Mat& k, const Mat& v) {
  if (q.cols < 1) throw std::invalid_argument("dense_attention: d must be >= 1");
  if (k.rows != q.rows || k.cols != q.cols || v.rows != q.rows || v.cols != q.cols)
    throw std::invalid_argument("dense_attention: Q/K/V shapes differ");
  const int n = q.rows, d = q.cols;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  Mat scores(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int c = 0; c < d; ++c) acc += q.at(i, c) * k.at(j, c);
      scores.at(i, j) = acc * inv_sqrt_d;
    }
  Mat out(n, d);
  std::vector<double> p(n);
  for (int i = 0; i < n; ++i) {
    double mx = scores.at(i, 0);
    for (int j = 1; j < n; ++j) mx = std::max(mx, scores.at(i, j));
    double z = 0.0;
    for (int j = 0; j < n; ++j) {
      p[j] = std::exp(scores.at(i, j) - mx);
      z += p[j];
    }
    for (int j = 0; j < n; ++j) {
      double pij = p[j] / z;
      for (int c = 0; c < d; ++c) out.at(i, c) += pij * v.at(j, c);
    }
  }
  return out;
}

}  // namespace spikegest
