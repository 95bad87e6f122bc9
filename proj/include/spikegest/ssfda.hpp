#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "spikegest/train.hpp"

namespace spikegest {

// One element of the membrane-potential memory list: the classifier trace of
// a target sample with scaled Gaussian noise added, plus the argmax of the
// noiseless trace cached as that sample's provisional label.
struct MemoryEntry {
  std::vector<double> trace_vector;  // flattened (T x num_classes), noisy
  int cached_argmax = 0;
  int sample_id = 0;
};

struct SsfdaConfig {
  int k_neighbors = 5;
  double explore_prob = 0.1;
  double alpha = 0.3;
  double delta = 0.1;
  int epochs = 15;
  uint64_t seed = 42;
  double lr = 1e-4;
  int batch_size = 32;
  bool k_resample = false;  // literal K pseudo-label draws averaged per sample

  void validate() const {
    if (k_neighbors < 1) throw std::invalid_argument("ssfda: K must be >= 1");
    if (explore_prob < 0.0 || explore_prob > 1.0)
      throw std::invalid_argument("ssfda: explore_prob must be in [0,1]");
    if (alpha < 0.0 || alpha > 1.0) throw std::invalid_argument("ssfda: alpha must be in [0,1]");
    if (delta < 0.0) throw std::invalid_argument("ssfda: delta must be >= 0");
    if (epochs < 1) throw std::invalid_argument("ssfda: epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("ssfda: batch_size must be >= 1");
  }
};

inline std::vector<double> flatten_trace(const Mat& trace) {
  return trace.v;
}

// Runs the frozen model over the unlabeled target set and records one noisy
// membrane trace per sample. Rebuilt from scratch every adaptation epoch.
inline std::vector<MemoryEntry> build_memory(const JasnnModel& model, const Dataset& target,
                                             double delta, uint64_t seed) {
  if (target.samples.empty()) throw std::invalid_argument("build_memory: empty dataset");
  std::vector<MemoryEntry> memory;
  memory.reserve(target.samples.size());
  Rng root(seed);
  for (size_t i = 0; i < target.samples.size(); ++i) {
    ForwardResult r = jasnn_forward(model, target.samples[i]);
    MemoryEntry e;
    e.sample_id = static_cast<int>(i);
    e.cached_argmax = r.prediction;  // argmax of the noiseless time-summed trace
    e.trace_vector = flatten_trace(r.trace);
    if (delta > 0.0) {
      Rng noise = root.fork(0x6e6f6973u, i);
      for (double& v : e.trace_vector) v += delta * noise.normal();
    }
    memory.push_back(std::move(e));
  }
  return memory;
}

// Pearson correlation; constant inputs carry no similarity information and
// return 0.
inline double pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("pearson: length mismatch");
  if (a.size() < 2) throw std::invalid_argument("pearson: need at least 2 elements");
  double ma = 0.0, mb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<double>(a.size());
  mb /= static_cast<double>(a.size());
  double num = 0.0, va = 0.0, vb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    double da = a[i] - ma, db = b[i] - mb;
    num += da * db;
    va += da * da;
    vb += db * db;
  }
  if (va == 0.0 || vb == 0.0) return 0.0;
  return num / std::sqrt(va * vb);
}

// Indices of the K memory entries most Pearson-similar to the (noiseless)
// query trace; descending score, ties broken by lower sample_id.
inline std::vector<size_t> topk_indices(std::span<const double> query,
                                        const std::vector<MemoryEntry>& memory, int k) {
  if (k < 1 || static_cast<size_t>(k) > memory.size())
    throw std::invalid_argument("topk: K must be in [1, memory size]");
  std::vector<std::pair<double, size_t>> scored(memory.size());
  for (size_t i = 0; i < memory.size(); ++i)
    scored[i] = {pearson(query, memory[i].trace_vector), i};
  std::stable_sort(scored.begin(), scored.end(), [&](const auto& x, const auto& y) {
    if (x.first != y.first) return x.first > y.first;
    return memory[x.second].sample_id < memory[y.second].sample_id;
  });
  std::vector<size_t> out(static_cast<size_t>(k));
  for (int i = 0; i < k; ++i) out[static_cast<size_t>(i)] = scored[static_cast<size_t>(i)].second;
  return out;
}

inline std::vector<MemoryEntry> topk_neighbors(std::span<const double> query,
                                               const std::vector<MemoryEntry>& memory, int k) {
  std::vector<MemoryEntry> out;
  out.reserve(static_cast<size_t>(k));
  for (size_t i : topk_indices(query, memory, k)) out.push_back(memory[i]);
  return out;
}

// Probabilistic Label Generation: the mode of the neighbors' cached labels
// with probability (1-p), a uniform draw from the label multiset with
// probability p. Mode ties resolve to the lowest class index.
inline int plg_select(const std::vector<MemoryEntry>& neighbors, double p, Rng& rng) {
  if (neighbors.empty()) throw std::invalid_argument("plg_select: empty neighbor set");
  if (rng.uniform() < p) {
    size_t pick = static_cast<size_t>(rng.uniform_int(neighbors.size()));
    return neighbors[pick].cached_argmax;
  }
  int max_label = 0;
  for (const MemoryEntry& e : neighbors) max_label = std::max(max_label, e.cached_argmax);
  std::vector<int> count(static_cast<size_t>(max_label) + 1, 0);
  for (const MemoryEntry& e : neighbors) ++count[static_cast<size_t>(e.cached_argmax)];
  int best = 0;
  for (int c = 1; c <= max_label; ++c)
    if (count[static_cast<size_t>(c)] > count[static_cast<size_t>(best)]) best = c;
  return best;
}

// Smooth NLL + KL loss value over a batch of probability rows:
//   -(1-alpha) * mean_i log p_i[label_i] + alpha * sum_c pbar_c log(C pbar_c).
inline double snll_kl_loss(const Mat& batch_probs, std::span<const int> pseudo_labels, double alpha) {
  if (alpha < 0.0 || alpha > 1.0) throw std::invalid_argument("snll_kl_loss: alpha out of range");
  if (batch_probs.rows < 1 || static_cast<size_t>(batch_probs.rows) != pseudo_labels.size())
    throw std::invalid_argument("snll_kl_loss: batch shape mismatch");
  const int n = batch_probs.rows, C = batch_probs.cols;
  double consistency = 0.0;
  std::vector<double> pbar(static_cast<size_t>(C), 0.0);
  for (int i = 0; i < n; ++i) {
    int label = pseudo_labels[static_cast<size_t>(i)];
    if (label < 0 || label >= C) throw std::invalid_argument("snll_kl_loss: label out of range");
    consistency += std::log(std::max(kProbClamp, batch_probs.at(i, label)));
    for (int c = 0; c < C; ++c) pbar[static_cast<size_t>(c)] += batch_probs.at(i, c);
  }
  consistency /= n;
  double kl = 0.0;
  for (int c = 0; c < C; ++c) {
    double p = pbar[static_cast<size_t>(c)] / n;
    kl += p * std::log(std::max(p, kProbClamp) * C);
  }
  return -(1.0 - alpha) * consistency + alpha * kl;
}

// ---- adaptation driver ----

// Tape forwards for one target batch; pseudo-labels are chosen after the
// forward pass (from the recorded traces), then the loss is appended to the
// same tape.
struct SsfdaBatchGraph {
  Tape tape;
  TapeParams params;
  std::vector<SampleForward> forwards;
  std::vector<std::vector<double>> traces;  // noiseless flattened traces
};

inline SsfdaBatchGraph build_ssfda_batch(const JasnnModel& model,
                                         const Dataset& target,
                                         std::span<const size_t> batch,
                                         SpikeForward mode = SpikeForward::heaviside) {
  SsfdaBatchGraph g;
  g.tape.spike_mode = mode;
  g.params = add_model_params(g.tape, model);
  for (size_t idx : batch) {
    SampleForward sf = add_sample_forward(g.tape, model, g.params, target.samples[idx]);
    std::vector<double> trace;
    trace.reserve(sf.trace_nodes.size() * static_cast<size_t>(model.num_classes));
    for (int node : sf.trace_nodes) {
      std::span<const double> row = g.tape.value(node);
      trace.insert(trace.end(), row.begin(), row.end());
    }
    g.traces.push_back(std::move(trace));
    g.forwards.push_back(std::move(sf));
  }
  return g;
}

// Appends Eq.-style SNLL+KL loss nodes for the chosen pseudo-labels. With
// k_resample, each sample contributes the mean over literal per-draw labels.
inline int append_ssfda_loss(SsfdaBatchGraph& g, const std::vector<std::vector<int>>& labels,
                             double alpha) {
  std::vector<int> ce_nodes, prob_nodes;
  for (size_t i = 0; i < g.forwards.size(); ++i) {
    std::vector<int> per_draw;
    for (int label : labels[i]) per_draw.push_back(g.tape.cross_entropy(g.forwards[i].sum_node, label));
    ce_nodes.push_back(per_draw.size() == 1 ? per_draw[0] : g.tape.mean_many(per_draw));
    prob_nodes.push_back(g.forwards[i].prob_node);
  }
  int consistency = g.tape.mean_many(ce_nodes);
  int pbar = g.tape.mean_vec_many(prob_nodes);
  int kl = g.tape.kl_uniform(pbar);
  return g.tape.lin2(consistency, kl, 1.0 - alpha, alpha);
}

struct AdaptEpochRow {
  int epoch = 0;
  double pseudo_label_agreement = 0.0;  // vs held-out true labels, evaluation only
  double target_accuracy = 0.0;
  double mean_loss = 0.0;
};

struct AdaptReport {
  std::vector<AdaptEpochRow> epochs;
  int memory_rebuilds = 0;
};

// Source-free adaptation: the call takes the trained model and unlabeled
// target data only. Per epoch the memory list is rebuilt with fresh traces and
// noise, pseudo-labels come from Pearson top-K + PLG, and the SNLL+KL loss is
// backpropagated through the surrogate tape. Labels in `target` are never fed
// to the loss; they only score the report's agreement column.
inline AdaptReport adapt(JasnnModel& model, const Dataset& target, const SsfdaConfig& cfg) {
  cfg.validate();
  if (target.samples.empty()) throw std::invalid_argument("adapt: empty target dataset");
  if (static_cast<size_t>(cfg.k_neighbors) > target.samples.size())
    throw std::invalid_argument("adapt: K exceeds target dataset size");

  AdaptReport report;
  AdamState opt;  // fresh optimizer state for adaptation
  opt.lr = cfg.lr;
  auto views = model_param_views(model);
  std::vector<std::vector<double>> grad_acc(views.size());
  for (size_t i = 0; i < views.size(); ++i) grad_acc[i].assign(views[i].second, 0.0);

  Rng root(cfg.seed);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<MemoryEntry> memory = build_memory(
        model, target, cfg.delta, root.fork(0x6d656d6fu, static_cast<uint64_t>(epoch)).next_u64());
    ++report.memory_rebuilds;

    auto batches = shuffled_batches(target.samples.size(), cfg.batch_size,
                                    root.fork(0x62617463u, static_cast<uint64_t>(epoch)).next_u64());
    double loss_sum = 0.0;
    size_t agree = 0, total = 0;
    for (const std::vector<size_t>& batch : batches) {
      SsfdaBatchGraph g = build_ssfda_batch(model, target, batch);
      std::vector<std::vector<int>> labels(batch.size());
      for (size_t bi = 0; bi < batch.size(); ++bi) {
        std::vector<MemoryEntry> nb = topk_neighbors(g.traces[bi], memory, cfg.k_neighbors);
        Rng lr_rng = root.fork(0x706c6762u + static_cast<uint64_t>(epoch),
                               static_cast<uint64_t>(batch[bi]));
        int draws = cfg.k_resample ? cfg.k_neighbors : 1;
        for (int d = 0; d < draws; ++d)
          labels[bi].push_back(plg_select(nb, cfg.explore_prob, lr_rng));
        if (labels[bi][0] == target.samples[batch[bi]].label) ++agree;
        ++total;
      }
      int loss = append_ssfda_loss(g, labels, cfg.alpha);
      g.tape.backward(loss);
      loss_sum += g.tape.value(loss)[0];

      std::vector<int> pids = g.params.all();
      for (size_t i = 0; i < pids.size(); ++i) {
        std::span<const double> gr = g.tape.gradient(pids[i]);
        std::copy(gr.begin(), gr.end(), grad_acc[i].begin());
      }
      std::vector<ParamRef> refs(views.size());
      for (size_t i = 0; i < views.size(); ++i)
        refs[i] = ParamRef{views[i].first, grad_acc[i].data(), views[i].second};
      adam_step(refs, opt);
    }

    AdaptEpochRow row;
    row.epoch = epoch;
    row.pseudo_label_agreement = total ? static_cast<double>(agree) / static_cast<double>(total) : 0.0;
    row.mean_loss = loss_sum / static_cast<double>(batches.size());
    row.target_accuracy = evaluate(model, target).accuracy;
    report.epochs.push_back(row);
  }
  return report;
}

}  // namespace spikegest
