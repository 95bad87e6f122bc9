#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "spikegest/autograd.hpp"
#include "spikegest/model.hpp"

namespace spikegest {

// Node ids of the model parameters on a tape, in the canonical flat order.
struct TapeParams {
  struct ConvIds {
    int w = -1, b = -1;
  };
  ConvIds enc, f1, f2, q, k, v;
  int cls_w = -1;

  std::vector<int> all() const {
    return {enc.w, enc.b, f1.w, f1.b, f2.w, f2.b, q.w, q.b, k.w, k.b, v.w, v.b, cls_w};
  }
};

// Flat views of the model parameters, same order as TapeParams::all().
inline std::vector<std::pair<double*, size_t>> model_param_views(JasnnModel& m) {
  std::vector<std::pair<double*, size_t>> out;
  for (Conv1d* c : m.conv_layers()) {
    out.emplace_back(c->w.data(), c->w.size());
    out.emplace_back(c->b.data(), c->b.size());
  }
  out.emplace_back(m.cls_w.v.data(), m.cls_w.v.size());
  return out;
}

inline TapeParams add_model_params(Tape& tape, const JasnnModel& m) {
  TapeParams p;
  auto put_conv = [&](const Conv1d& c, TapeParams::ConvIds& ids) {
    ids.w = tape.leaf(c.c_out, c.c_in * c.k, c.w);
    ids.b = tape.leaf(1, c.c_out, c.b);
  };
  put_conv(m.enc, p.enc);
  put_conv(m.f1, p.f1);
  put_conv(m.f2, p.f2);
  put_conv(m.q_proj, p.q);
  put_conv(m.k_proj, p.k);
  put_conv(m.v_proj, p.v);
  p.cls_w = tape.leaf(m.cls_w.rows, m.cls_w.cols, m.cls_w.v);
  return p;
}

// Per-sample forward subgraph handles.
struct SampleForward {
  std::vector<int> trace_nodes;  // classifier membrane per step (1 x num_classes)
  int sum_node = -1;             // time-summed trace
  int prob_node = -1;            // softmax readout
  int prediction = 0;
};

namespace detail {

struct LayerSteps {
  std::vector<int> spikes;  // node id of S^t per step
};

// Unrolls one ConvLIF layer across time on the tape. `step_input` yields the
// input node for step t (constant drive input reuses one node).
inline LayerSteps unroll_conv_lif(Tape& tape, const std::function<int(int)>& step_input,
                                  const TapeParams::ConvIds& ids, int kernel, const LifParams& p,
                                  int steps) {
  LayerSteps out;
  out.spikes.reserve(steps);
  int t_prev = -1;
  for (int t = 0; t < steps; ++t) {
    int drive = tape.conv1d(step_input(t), ids.w, ids.b, kernel);
    int m = (t == 0) ? drive : tape.add(drive, t_prev);
    int s = tape.spike(m, p.u_th);
    t_prev = tape.lif_temporal(m, s, p.decay, p.v_reset);
    out.spikes.push_back(s);
  }
  return out;
}

}  // namespace detail

// Builds the full JASNN forward for one sample on the tape. The spatial input
// is injected as a constant leaf; attention follows the model's configuration.
inline SampleForward add_sample_forward(Tape& tape, const JasnnModel& m, const TapeParams& params,
                                        const GestureSample& sample) {
  if (sample.channels != m.in_channels || sample.seq_len != m.seq_len)
    throw std::invalid_argument("tape forward: sample shape does not match model");
  const int T = m.seq_len;

  Mat x = detail::sample_as_cl(sample);
  int x_id = tape.leaf(x.rows, x.cols, x.v);

  detail::LayerSteps enc = detail::unroll_conv_lif(
      tape, [&](int) { return x_id; }, params.enc, m.kernel, m.enc_p, T);
  detail::LayerSteps f1 = detail::unroll_conv_lif(
      tape, [&](int t) { return enc.spikes[t]; }, params.f1, m.kernel, m.f1_p, T);
  detail::LayerSteps f2 = detail::unroll_conv_lif(
      tape, [&](int t) { return f1.spikes[t]; }, params.f2, m.kernel, m.f2_p, T);
  detail::LayerSteps q = detail::unroll_conv_lif(
      tape, [&](int t) { return f2.spikes[t]; }, params.q, 1, m.q_p, T);
  detail::LayerSteps k = detail::unroll_conv_lif(
      tape, [&](int t) { return f2.spikes[t]; }, params.k, 1, m.k_p, T);
  detail::LayerSteps v = detail::unroll_conv_lif(
      tape, [&](int t) { return f2.spikes[t]; }, params.v, 1, m.v_p, T);

  std::vector<int> attended(T);
  switch (m.attention) {
    case AttentionKind::sja_channelwise: {
      std::vector<int> qk;
      qk.reserve(2 * static_cast<size_t>(T));
      qk.insert(qk.end(), q.spikes.begin(), q.spikes.end());
      qk.insert(qk.end(), k.spikes.begin(), k.spikes.end());
      int w = tape.sja_cw(qk, m.eps, m.sja_per_channel);
      for (int t = 0; t < T; ++t)
        attended[t] = m.sja_per_channel ? tape.scale_rows(v.spikes[t], w)
                                        : tape.scale_by(v.spikes[t], w);
      break;
    }
    case AttentionKind::sja_elementwise: {
      std::vector<int> qk;
      qk.reserve(2 * static_cast<size_t>(T));
      qk.insert(qk.end(), q.spikes.begin(), q.spikes.end());
      qk.insert(qk.end(), k.spikes.begin(), k.spikes.end());
      int w = tape.sja_ew(qk, m.eps);
      for (int t = 0; t < T; ++t) attended[t] = tape.mul(v.spikes[t], w);
      break;
    }
    case AttentionKind::dense: {
      for (int t = 0; t < T; ++t)
        attended[t] = tape.dense_attn(q.spikes[t], k.spikes[t], v.spikes[t]);
      break;
    }
  }

  SampleForward sf;
  sf.trace_nodes.reserve(T);
  int m_prev = tape.zeros(1, m.num_classes);
  for (int t = 0; t < T; ++t) {
    int drive = tape.matvec(attended[t], params.cls_w);
    m_prev = tape.leaky_step(m_prev, drive, m.cls_p.decay);
    sf.trace_nodes.push_back(m_prev);
  }
  sf.sum_node = tape.sum_many(sf.trace_nodes);
  sf.prob_node = tape.softmax(sf.sum_node);

  std::span<const double> sums = tape.value(sf.sum_node);
  int best = 0;
  for (int j = 1; j < m.num_classes; ++j)
    if (sums[static_cast<size_t>(j)] > sums[static_cast<size_t>(best)]) best = j;
  sf.prediction = best;
  return sf;
}

struct EpochMetrics {
  double mean_loss = 0.0;
  double accuracy = 0.0;
};

// Seeded shuffle split into consecutive batches; the last partial batch is
// kept. Every index appears exactly once across the batches.
inline std::vector<std::vector<size_t>> shuffled_batches(size_t n, int batch_size, uint64_t seed) {
  if (batch_size < 1) throw std::invalid_argument("shuffled_batches: batch_size must be >= 1");
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  Rng rng(seed);
  rng.shuffle(order);
  std::vector<std::vector<size_t>> batches;
  for (size_t pos = 0; pos < n; pos += static_cast<size_t>(batch_size)) {
    size_t end = std::min(n, pos + static_cast<size_t>(batch_size));
    batches.emplace_back(order.begin() + static_cast<ptrdiff_t>(pos),
                         order.begin() + static_cast<ptrdiff_t>(end));
  }
  return batches;
}

// One supervised epoch: seeded shuffle, fixed-size batches (last partial batch
// kept), per batch mean-NLL backward and one Adam step. Gradients are
// accumulated sample-by-sample, which is exact for a mean of per-sample
// losses and keeps peak memory at one tape.
inline EpochMetrics train_epoch(JasnnModel& model, const Dataset& data, AdamState& opt,
                                int batch_size, uint64_t seed) {
  if (data.samples.empty()) throw std::invalid_argument("train_epoch: empty dataset");

  auto batches = shuffled_batches(data.samples.size(), batch_size, seed);

  auto views = model_param_views(model);
  std::vector<std::vector<double>> grad_acc(views.size());
  for (size_t i = 0; i < views.size(); ++i) grad_acc[i].assign(views[i].second, 0.0);

  double loss_sum = 0.0;
  size_t correct = 0;
  for (const std::vector<size_t>& batch : batches) {
    size_t batch_n = batch.size();
    for (auto& g : grad_acc) std::fill(g.begin(), g.end(), 0.0);
    for (size_t idx : batch) {
      const GestureSample& s = data.samples[idx];
      Tape tape;
      TapeParams tp = add_model_params(tape, model);
      SampleForward sf = add_sample_forward(tape, model, tp, s);
      int loss = tape.cross_entropy(sf.sum_node, s.label);
      tape.backward(loss);
      loss_sum += tape.value(loss)[0];
      if (sf.prediction == s.label) ++correct;
      std::vector<int> pids = tp.all();
      for (size_t i = 0; i < pids.size(); ++i) {
        std::span<const double> g = tape.gradient(pids[i]);
        for (size_t j = 0; j < g.size(); ++j) grad_acc[i][j] += g[j] / static_cast<double>(batch_n);
      }
    }
    std::vector<ParamRef> refs(views.size());
    for (size_t i = 0; i < views.size(); ++i)
      refs[i] = ParamRef{views[i].first, grad_acc[i].data(), views[i].second};
    adam_step(refs, opt);
  }

  EpochMetrics m;
  m.mean_loss = loss_sum / static_cast<double>(data.samples.size());
  m.accuracy = static_cast<double>(correct) / static_cast<double>(data.samples.size());
  return m;
}

// Accuracy (and mean NLL) over a dataset using the inference path.
struct EvalMetrics {
  double accuracy = 0.0;
  double mean_loss = 0.0;
};

inline EvalMetrics evaluate(const JasnnModel& model, const Dataset& data) {
  if (data.samples.empty()) throw std::invalid_argument("evaluate: empty dataset");
  size_t correct = 0;
  double loss_sum = 0.0;
  std::vector<double> sums(model.num_classes);
  for (const GestureSample& s : data.samples) {
    ForwardResult r = jasnn_forward(model, s);
    if (r.prediction == s.label) ++correct;
    for (int j = 0; j < model.num_classes; ++j) {
      sums[j] = 0.0;
      for (int t = 0; t < r.trace.rows; ++t) sums[j] += r.trace.at(t, j);
    }
    loss_sum += nll_loss(softmax_readout(sums), s.label);
  }
  EvalMetrics m;
  m.accuracy = static_cast<double>(correct) / static_cast<double>(data.samples.size());
  m.mean_loss = loss_sum / static_cast<double>(data.samples.size());
  return m;
}

struct FitOptions {
  int epochs = 200;
  int batch_size = 32;
  double lr = 0.001;
  uint64_t seed = 42;
  bool early_stop = true;  // stop when train accuracy gains < 0.2 points over 10 epochs
};

struct FitEpochRow {
  int epoch = 0;
  double loss = 0.0;
  double accuracy = 0.0;
  double wall_seconds = 0.0;
};

using FitCallback = std::function<void(const FitEpochRow&)>;

inline AdamState fit(JasnnModel& model, const Dataset& train_set, const FitOptions& opt,
                     const FitCallback& on_epoch = nullptr) {
  AdamState adam;
  adam.lr = opt.lr;
  std::vector<double> best_acc_history;
  double best = 0.0;
  for (int e = 0; e < opt.epochs; ++e) {
    auto t0 = std::chrono::steady_clock::now();
    EpochMetrics m = train_epoch(model, train_set, adam, opt.batch_size,
                                 Rng(opt.seed).fork(0x65706f63u, static_cast<uint64_t>(e)).next_u64());
    auto t1 = std::chrono::steady_clock::now();
    best = std::max(best, m.accuracy);
    best_acc_history.push_back(best);
    if (on_epoch) {
      FitEpochRow row;
      row.epoch = e;
      row.loss = m.mean_loss;
      row.accuracy = m.accuracy;
      row.wall_seconds = std::chrono::duration<double>(t1 - t0).count();
      on_epoch(row);
    }
    if (opt.early_stop && e >= 10 &&
        best_acc_history[static_cast<size_t>(e)] - best_acc_history[static_cast<size_t>(e - 10)] < 0.002)
      break;
  }
  return adam;
}

}  // namespace spikegest
