#pragma once

#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "spikegest/attention.hpp"
#include "spikegest/lif.hpp"
#include "spikegest/rng.hpp"
#include "spikegest/signal.hpp"

namespace spikegest {

enum class AttentionKind : uint16_t {
  sja_channelwise = 0,
  sja_elementwise = 1,
  dense = 2,
};

inline const char* to_string(AttentionKind k) {
  switch (k) {
    case AttentionKind::sja_channelwise: return "sja_channelwise";
    case AttentionKind::sja_elementwise: return "sja_elementwise";
    case AttentionKind::dense: return "dense";
  }
  return "?";
}

inline AttentionKind attention_kind_from_string(const std::string& s) {
  if (s == "sja_channelwise") return AttentionKind::sja_channelwise;
  if (s == "sja_elementwise") return AttentionKind::sja_elementwise;
  if (s == "dense") return AttentionKind::dense;
  throw std::invalid_argument("unknown attention kind: " + s);
}

// ConvLIF encoder (C_in -> N), two feature ConvLIFs (N -> N -> 2N), three 1x1
// ConvLIF projections for Q/K/V, and a linear integrator classifier over the
// flattened (2N x L) features. Time steps equal seq_len (static current
// injection of the RMS window, rate-coded by the encoder).
struct JasnnModel {
  int in_channels = 8;
  int seq_len = 200;
  int n = 32;  // encoder output channels; feature extractor ends at 2N
  int kernel = 3;
  int num_classes = 10;
  AttentionKind attention = AttentionKind::sja_channelwise;
  bool sja_per_channel = false;
  double eps = kJaccardEps;

  Conv1d enc, f1, f2, q_proj, k_proj, v_proj;
  Mat cls_w;  // (2N * seq_len) x num_classes
  LifParams enc_p, f1_p, f2_p, q_p, k_p, v_p, cls_p;

  int feature_channels() const { return 2 * n; }
  size_t classifier_inputs() const { return static_cast<size_t>(feature_channels()) * seq_len; }

  std::vector<Conv1d*> conv_layers() {
    return {&enc, &f1, &f2, &q_proj, &k_proj, &v_proj};
  }
  std::vector<const Conv1d*> conv_layers() const {
    return {&enc, &f1, &f2, &q_proj, &k_proj, &v_proj};
  }
};

inline JasnnModel make_jasnn(int in_channels, int seq_len, int n, int kernel, int num_classes,
                             uint64_t seed, AttentionKind attention = AttentionKind::sja_channelwise) {
  JasnnModel m;
  m.in_channels = in_channels;
  m.seq_len = seq_len;
  m.n = n;
  m.kernel = kernel;
  m.num_classes = num_classes;
  m.attention = attention;
  m.enc = Conv1d(n, in_channels, kernel);
  m.f1 = Conv1d(n, n, kernel);
  m.f2 = Conv1d(2 * n, n, kernel);
  m.q_proj = Conv1d(2 * n, 2 * n, 1);
  m.k_proj = Conv1d(2 * n, 2 * n, 1);
  m.v_proj = Conv1d(2 * n, 2 * n, 1);
  m.cls_w = Mat(static_cast<int>(m.classifier_inputs()), num_classes);

  // Weights: uniform +-1/sqrt(fan_in). Biases take the positive half of that
  // range so deep layers start with healthy firing rates instead of starving.
  // The key projection reuses the query draw: attention starts near identity
  // (w ~ 1), which keeps the classifier signal alive early in training.
  Rng rng(seed);
  int li = 0;
  for (Conv1d* conv : m.conv_layers()) {
    Rng wr = rng.fork(0x77656967u, static_cast<uint64_t>(li++));
    double bound = 1.0 / std::sqrt(static_cast<double>(conv->c_in) * conv->k);
    for (double& w : conv->w) w = wr.uniform(-bound, bound);
    for (double& b : conv->b) b = wr.uniform(0.0, bound);
  }
  m.k_proj.w = m.q_proj.w;
  m.k_proj.b = m.q_proj.b;
  Rng cr = rng.fork(0x77656967u, 99);
  double bound = 1.0 / std::sqrt(static_cast<double>(m.classifier_inputs()));
  for (double& w : m.cls_w.v) w = cr.uniform(-bound, bound);
  return m;
}

inline AttentionTriplet qkv_project(const SpikeTrain& features, const JasnnModel& m) {
  AttentionTriplet t;
  t.q = conv_lif_forward(features, m.q_proj, m.q_p);
  t.k = conv_lif_forward(features, m.k_proj, m.k_p);
  t.v = conv_lif_forward(features, m.v_proj, m.v_p);
  return t;
}

// Everything a forward pass produces: the classifier membrane trace, the
// intermediate spike trains, and the attention weights actually applied.
struct ForwardResult {
  Mat trace;  // T x num_classes
  SpikeTrain enc_s, f1_s, f2_s;
  AttentionTriplet qkv;
  double attn_scalar = 0.0;        // channel-wise weight
  std::vector<double> attn_channel;  // per-channel weights (when enabled)
  Mat attn_elementwise;            // element-wise weights (C x L)
  int prediction = 0;
};

namespace detail {

inline Mat sample_as_cl(const GestureSample& g) {
  Mat x(g.channels, g.seq_len);
  for (int p = 0; p < g.seq_len; ++p)
    for (int ch = 0; ch < g.channels; ++ch) {
      float f = g.at(p, ch);
      if (!std::isfinite(f)) throw std::invalid_argument("sample features must be finite");
      x.at(ch, p) = static_cast<double>(f);
    }
  return x;
}

// Dense attention applied per time step directly to the spike planes:
// positions are the rows, channels the feature dimension.
inline Tensor3 dense_attention_on_spikes(const AttentionTriplet& in) {
  const int T = in.q.t, C = in.q.c, L = in.q.l;
  Tensor3 out(T, C, L);
  Mat qm(L, C), km(L, C), vm(L, C);
  for (int t = 0; t < T; ++t) {
    for (int ci = 0; ci < C; ++ci)
      for (int li = 0; li < L; ++li) {
        qm.at(li, ci) = in.q.at(t, ci, li);
        km.at(li, ci) = in.k.at(t, ci, li);
        vm.at(li, ci) = in.v.at(t, ci, li);
      }
    Mat o = dense_attention(qm, km, vm);
    for (int ci = 0; ci < C; ++ci)
      for (int li = 0; li < L; ++li) out.at(t, ci, li) = o.at(li, ci);
  }
  return out;
}

}  // namespace detail

inline ForwardResult jasnn_forward(const JasnnModel& m, const GestureSample& sample) {
  if (sample.channels != m.in_channels || sample.seq_len != m.seq_len)
    throw std::invalid_argument("jasnn_forward: sample shape does not match model");
  ForwardResult r;
  Mat x = detail::sample_as_cl(sample);
  const int T = m.seq_len;
  r.enc_s = conv_lif_forward_static(x, T, m.enc, m.enc_p);
  r.f1_s = conv_lif_forward(r.enc_s, m.f1, m.f1_p);
  r.f2_s = conv_lif_forward(r.f1_s, m.f2, m.f2_p);
  r.qkv = qkv_project(r.f2_s, m);

  Tensor3 attended;
  switch (m.attention) {
    case AttentionKind::sja_channelwise:
      if (m.sja_per_channel) {
        r.attn_channel = sja_per_channel_weights(r.qkv, m.eps);
        attended = sja_per_channel(r.qkv, m.eps);
      } else {
        r.attn_scalar = sja_channelwise_weight(r.qkv, m.eps);
        attended = Tensor3(T, m.feature_channels(), m.seq_len);
        for (int64_t f : r.qkv.v.nonzeros) attended.v[static_cast<size_t>(f)] = r.attn_scalar;
      }
      break;
    case AttentionKind::sja_elementwise:
      r.attn_elementwise = sja_elementwise_weights(r.qkv, m.eps);
      attended = sja_elementwise(r.qkv, m.eps);
      break;
    case AttentionKind::dense:
      attended = detail::dense_attention_on_spikes(r.qkv);
      break;
  }

  r.trace = classifier_forward(attended, m.cls_w, m.cls_p.decay);
  r.prediction = predict(r.trace);
  return r;
}

// ---- checkpoint IO: "SPKM" binary, weights as little-endian float32 ----

inline void save_model(const JasnnModel& m, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw io_error("cannot open for writing: " + path);
  os.write("SPKM", 4);
  detail::put_u16(os, 1);
  detail::put_u16(os, static_cast<uint16_t>(m.attention));
  detail::put_u16(os, m.sja_per_channel ? 1 : 0);
  detail::put_u16(os, 0);
  detail::put_u32(os, static_cast<uint32_t>(m.in_channels));
  detail::put_u32(os, static_cast<uint32_t>(m.seq_len));
  detail::put_u32(os, static_cast<uint32_t>(m.n));
  detail::put_u32(os, static_cast<uint32_t>(m.kernel));
  detail::put_u32(os, static_cast<uint32_t>(m.num_classes));
  detail::put_f64(os, m.eps);
  for (const LifParams* p : {&m.enc_p, &m.f1_p, &m.f2_p, &m.q_p, &m.k_p, &m.v_p, &m.cls_p}) {
    detail::put_f64(os, p->u_th);
    detail::put_f64(os, p->v_reset);
    detail::put_f64(os, p->decay);
    detail::put_f64(os, p->dt_ms);
    detail::put_f64(os, p->tau_ms);
  }
  for (const Conv1d* c : m.conv_layers()) {
    for (double w : c->w) detail::put_f32(os, static_cast<float>(w));
    for (double b : c->b) detail::put_f32(os, static_cast<float>(b));
  }
  for (double w : m.cls_w.v) detail::put_f32(os, static_cast<float>(w));
  if (!os) throw io_error("write failed: " + path);
}

inline JasnnModel load_model(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io_error("cannot open for reading: " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::string(magic, 4) != "SPKM")
    throw io_error("bad magic (expected SPKM): " + path);
  uint16_t version = detail::get_u16(is, "version");
  if (version != 1) throw io_error("unsupported checkpoint version " + std::to_string(version));
  uint16_t attn = detail::get_u16(is, "attention");
  if (attn > 2) throw io_error("invalid attention kind in checkpoint");
  uint16_t per_channel = detail::get_u16(is, "sja_per_channel");
  detail::get_u16(is, "reserved");
  int in_channels = static_cast<int>(detail::get_u32(is, "in_channels"));
  int seq_len = static_cast<int>(detail::get_u32(is, "seq_len"));
  int n = static_cast<int>(detail::get_u32(is, "n"));
  int kernel = static_cast<int>(detail::get_u32(is, "kernel"));
  int num_classes = static_cast<int>(detail::get_u32(is, "num_classes"));
  if (in_channels < 1 || seq_len < 1 || n < 1 || num_classes < 1 || kernel < 1 || kernel % 2 == 0)
    throw io_error("invalid architecture header");

  JasnnModel m = make_jasnn(in_channels, seq_len, n, kernel, num_classes, 0,
                            static_cast<AttentionKind>(attn));
  m.sja_per_channel = per_channel != 0;
  m.eps = detail::get_f64(is, "eps");
  for (LifParams* p : {&m.enc_p, &m.f1_p, &m.f2_p, &m.q_p, &m.k_p, &m.v_p, &m.cls_p}) {
    p->u_th = detail::get_f64(is, "u_th");
    p->v_reset = detail::get_f64(is, "v_reset");
    p->decay = detail::get_f64(is, "decay");
    p->dt_ms = detail::get_f64(is, "dt_ms");
    p->tau_ms = detail::get_f64(is, "tau_ms");
    p->validate();
  }
  for (Conv1d* c : m.conv_layers()) {
    for (double& w : c->w) w = detail::get_f32(is, "conv weights");
    for (double& b : c->b) b = detail::get_f32(is, "conv bias");
  }
  for (double& w : m.cls_w.v) w = detail::get_f32(is, "classifier weights");
  return m;
}

}  // namespace spikegest
