#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "spikegest/tensor.hpp"

namespace spikegest {

// Neuron constants for the iterative LIF update
//   M^t = T^{t-1} + X^t
//   S^t = 1[M^t >= u_th]
//   T^t = v_reset*S^t + decay*M^t*(1 - S^t)
// decay keeps the e^(-dt/tau) identity with dt_ms/tau_ms.
struct LifParams {
  double u_th = 1.0;
  double v_reset = 0.0;
  double decay = 0.9;
  double dt_ms = 1.0;
  double tau_ms = 9.491221581029301;  // -dt/ln(decay) for the defaults

  static LifParams from_decay(double u_th, double v_reset, double decay, double dt_ms = 1.0) {
    LifParams p;
    p.u_th = u_th;
    p.v_reset = v_reset;
    p.decay = decay;
    p.dt_ms = dt_ms;
    p.tau_ms = -dt_ms / std::log(decay);
    p.validate();
    return p;
  }

  void validate() const {
    if (!(decay > 0.0 && decay < 1.0)) throw std::invalid_argument("lif: decay must be in (0,1)");
    if (!(dt_ms > 0.0) || !(tau_ms > 0.0)) throw std::invalid_argument("lif: dt and tau must be positive");
    if (std::fabs(decay - std::exp(-dt_ms / tau_ms)) > 1e-12)
      throw std::invalid_argument("lif: decay != exp(-dt/tau)");
    if (!(u_th > v_reset)) throw std::invalid_argument("lif: u_th must exceed v_reset");
  }
};

// Evolving per-neuron state of one layer: membrane M^t and temporal feature T^t.
struct LifState {
  Mat membrane;
  Mat temporal;

  LifState() = default;
  LifState(int channels, int positions) : membrane(channels, positions), temporal(channels, positions) {}
};

// 0/1 spike plane for a single time step.
struct SpikePlane {
  int rows = 0;
  int cols = 0;
  std::vector<uint8_t> v;

  SpikePlane() = default;
  SpikePlane(int r, int c) : rows(r), cols(c), v(static_cast<size_t>(r) * c, 0) {}
  uint8_t at(int r, int c) const { return v[static_cast<size_t>(r) * cols + c]; }
};

// One step of the iterative LIF update over a whole layer.
inline SpikePlane lif_step(LifState& state, const Mat& input_drive, const LifParams& p) {
  if (input_drive.rows != state.temporal.rows || input_drive.cols != state.temporal.cols)
    throw std::invalid_argument("lif_step: drive shape does not match state");
  if (!input_drive.finite()) throw std::invalid_argument("lif_step: non-finite input drive");
  SpikePlane spikes(input_drive.rows, input_drive.cols);
  const size_t n = input_drive.size();
  for (size_t i = 0; i < n; ++i) {
    double m = state.temporal.v[i] + input_drive.v[i];
    state.membrane.v[i] = m;
    if (m >= p.u_th) {
      spikes.v[i] = 1;
      state.temporal.v[i] = p.v_reset;
    } else {
      state.temporal.v[i] = p.decay * m;
    }
  }
  return spikes;
}

// 1-D convolution weights over the position axis, same padding, odd kernel.
struct Conv1d {
  int c_out = 0;
  int c_in = 0;
  int k = 1;
  std::vector<double> w;  // [c_out][c_in][k]
  std::vector<double> b;  // [c_out]

  Conv1d() = default;
  Conv1d(int co, int ci, int kk)
      : c_out(co), c_in(ci), k(kk), w(static_cast<size_t>(co) * ci * kk, 0.0), b(co, 0.0) {
    if (kk % 2 == 0) throw std::invalid_argument("conv1d: kernel size must be odd");
  }

  double wt(int o, int i, int dk) const { return w[(static_cast<size_t>(o) * c_in + i) * k + dk]; }
  double& wt(int o, int i, int dk) { return w[(static_cast<size_t>(o) * c_in + i) * k + dk]; }

  // Dense drive from a real-valued (c_in x L) slice.
  Mat drive_dense(const Mat& x) const {
    if (x.rows != c_in) throw std::invalid_argument("conv1d: input channel mismatch");
    int L = x.cols;
    int off = k / 2;
    Mat out(c_out, L);
    for (int o = 0; o < c_out; ++o)
      for (int l = 0; l < L; ++l) {
        double acc = b[o];
        for (int i = 0; i < c_in; ++i)
          for (int dk = 0; dk < k; ++dk) {
            int src = l + dk - off;
            if (src >= 0 && src < L) acc += wt(o, i, dk) * x.at(i, src);
          }
        out.at(o, l) = acc;
      }
    return out;
  }

  // Drive from a binary slice, visiting only spike positions.
  void drive_sparse(const SpikePlane& x, Mat& out) const {
    int L = x.cols;
    int off = k / 2;
    for (int o = 0; o < c_out; ++o)
      for (int l = 0; l < L; ++l) out.at(o, l) = b[o];
    for (int i = 0; i < x.rows; ++i)
      for (int li = 0; li < L; ++li) {
        if (!x.at(i, li)) continue;
        for (int dk = 0; dk < k; ++dk) {
          int l = li + off - dk;
          if (l < 0 || l >= L) continue;
          for (int o = 0; o < c_out; ++o) out.at(o, l) += wt(o, i, dk);
        }
      }
  }
};

// Runs a ConvLIF layer over a real-valued (T x C_in x L) input, chaining the
// LIF state across time from T^0 = 0.
inline SpikeTrain conv_lif_forward(const Tensor3& input, const Conv1d& conv, const LifParams& p) {
  if (input.c != conv.c_in) throw std::invalid_argument("conv_lif_forward: channel mismatch");
  SpikeTrain out(input.t, conv.c_out, input.l);
  LifState state(conv.c_out, input.l);
  Mat slice(input.c, input.l);
  for (int t = 0; t < input.t; ++t) {
    for (int ci = 0; ci < input.c; ++ci)
      for (int li = 0; li < input.l; ++li) slice.at(ci, li) = input.at(t, ci, li);
    Mat drive = conv.drive_dense(slice);
    SpikePlane s = lif_step(state, drive, p);
    for (int ci = 0; ci < conv.c_out; ++ci)
      for (int li = 0; li < input.l; ++li)
        if (s.at(ci, li)) out.set(t, ci, li);
  }
  return out;
}

// Spike-train input variant; the spatial convolution only touches nonzeros.
inline SpikeTrain conv_lif_forward(const SpikeTrain& input, const Conv1d& conv, const LifParams& p) {
  if (input.c != conv.c_in) throw std::invalid_argument("conv_lif_forward: channel mismatch");
  SpikeTrain out(input.t, conv.c_out, input.l);
  LifState state(conv.c_out, input.l);
  Mat drive(conv.c_out, input.l);
  SpikePlane slice(input.c, input.l);
  size_t cursor = 0;
  const size_t plane = static_cast<size_t>(input.c) * input.l;
  for (int t = 0; t < input.t; ++t) {
    std::fill(slice.v.begin(), slice.v.end(), 0);
    size_t lo = static_cast<size_t>(t) * plane;
    size_t hi = lo + plane;
    while (cursor < input.nonzeros.size() && static_cast<size_t>(input.nonzeros[cursor]) < hi) {
      slice.v[static_cast<size_t>(input.nonzeros[cursor]) - lo] = 1;
      ++cursor;
    }
    conv.drive_sparse(slice, drive);
    SpikePlane s = lif_step(state, drive, p);
    for (int ci = 0; ci < conv.c_out; ++ci)
      for (int li = 0; li < input.l; ++li)
        if (s.at(ci, li)) out.set(t, ci, li);
  }
  return out;
}

// Static-input variant: every time step sees the same (C_in x L) map, so the
// spatial drive is computed once and reused across the T steps.
inline SpikeTrain conv_lif_forward_static(const Mat& input, int steps, const Conv1d& conv,
                                          const LifParams& p) {
  Mat drive = conv.drive_dense(input);
  SpikeTrain out(steps, conv.c_out, input.cols);
  LifState state(conv.c_out, input.cols);
  for (int t = 0; t < steps; ++t) {
    SpikePlane s = lif_step(state, drive, p);
    for (int ci = 0; ci < conv.c_out; ++ci)
      for (int li = 0; li < input.cols; ++li)
        if (s.at(ci, li)) out.set(t, ci, li);
  }
  return out;
}

// Integrator-only classifier head: M^t = decay*M^{t-1} + drive^t, no firing.
// `features` may be a spike train or any real tensor of the same layout;
// returns the full (T x num_classes) membrane trace.
inline Mat classifier_forward(const Tensor3& features, const Mat& weights, double decay) {
  size_t flat = static_cast<size_t>(features.c) * features.l;
  if (static_cast<size_t>(weights.rows) != flat)
    throw std::invalid_argument("classifier_forward: weight rows != flattened feature dim");
  int num_classes = weights.cols;
  Mat trace(features.t, num_classes);
  std::vector<double> m(num_classes, 0.0);
  for (int t = 0; t < features.t; ++t) {
    const double* x = &features.v[static_cast<size_t>(t) * flat];
    for (int j = 0; j < num_classes; ++j) m[j] *= decay;
    for (size_t f = 0; f < flat; ++f) {
      double xv = x[f];
      if (xv == 0.0) continue;
      const double* wrow = &weights.v[f * num_classes];
      for (int j = 0; j < num_classes; ++j) m[j] += xv * wrow[j];
    }
    for (int j = 0; j < num_classes; ++j) trace.at(t, j) = m[j];
  }
  return trace;
}

// Readout: argmax over classes of the time-summed membrane trace, ties to the
// lowest class index.
inline int predict(const Mat& trace) {
  if (trace.rows < 1 || trace.cols < 1) throw std::invalid_argument("predict: empty trace");
  int best = 0;
  double best_sum = -1.0 / 0.0;
  for (int j = 0; j < trace.cols; ++j) {
    double s = 0.0;
    for (int t = 0; t < trace.rows; ++t) s += trace.at(t, j);
    if (s > best_sum) {
      best_sum = s;
      best = j;
    }
  }
  return best;
}

}  // namespace spikegest
