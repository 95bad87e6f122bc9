#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace spikegest {

// SuperSpike surrogate: d(spike)/d(membrane) stand-in used at every Heaviside
// site during backward. Peaks at 1 when u hits the threshold.
inline double superspike_grad(double u, double v_threshold) {
  double a = 1.0 + std::fabs(u - v_threshold);
  return 1.0 / (a * a);
}

// Smooth companion whose exact derivative is superspike_grad; substituted for
// the spike nonlinearity in gradient-check mode only.
inline double fast_sigmoid(double u, double v_threshold) {
  double d = u - v_threshold;
  return d / (1.0 + std::fabs(d));
}

// Numerically stable softmax of a summed membrane trace.
inline std::vector<double> softmax_readout(std::span<const double> x) {
  if (x.empty()) throw std::invalid_argument("softmax_readout: empty input");
  double mx = x[0];
  for (double v : x) {
    if (!std::isfinite(v)) throw std::invalid_argument("softmax_readout: non-finite input");
    mx = std::max(mx, v);
  }
  std::vector<double> p(x.size());
  double z = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    p[i] = std::exp(x[i] - mx);
    z += p[i];
  }
  for (double& v : p) v /= z;
  return p;
}

constexpr double kProbClamp = 1e-12;

inline double nll_loss(std::span<const double> probabilities, int label) {
  if (label < 0 || static_cast<size_t>(label) >= probabilities.size())
    throw std::invalid_argument("nll_loss: label out of range");
  double p = probabilities[static_cast<size_t>(label)];
  p = std::min(1.0, std::max(kProbClamp, p));
  return -std::log(p);
}

// ---- reverse-mode tape ----

enum class Op : uint8_t {
  leaf,
  add,          // elementwise a + b
  mul,          // elementwise a * b
  scale_by,     // tensor * scalar node
  scale_rows,   // (C x L) tensor, row r scaled by w[r]
  conv1d,       // same-padded 1-D convolution over the position axis
  matvec,       // flattened x (1 x F) times W (F x C)
  spike,        // Heaviside (or fast_sigmoid in check mode); SuperSpike backward
  lif_temporal, // v_reset*S + decay*M*(1-S)
  leaky_step,   // decay*m_prev + drive
  sum_many,     // elementwise sum of n same-shape inputs
  softmax,
  pick_log,     // -log(clamp(p[label]))
  mean_many,    // mean of n scalars
  mean_vec_many,// elementwise mean of n same-shape vectors
  kl_uniform,   // sum_c p_c * log(C * p_c)
  cross_entropy,// logsumexp(z) - z[label]; robust fused softmax + NLL
  lin2,         // d0*a + d1*b (scalars)
  square_sum,   // sum of squares
  sja_cw,       // channel-wise Jaccard weight over 2T step planes
  sja_ew,       // element-wise Jaccard weights over 2T step planes
  dense_attn,   // per-step softmax attention over positions
};

enum class SpikeForward : uint8_t { heaviside, fast_sigmoid };

struct Node {
  Op op = Op::leaf;
  int r = 0, c = 0;  // value shape (rows x cols)
  std::vector<int> in;
  std::vector<double> val;
  std::vector<double> grad;
  double d0 = 0.0, d1 = 0.0;   // op constants (decay, v_reset, eps, ...)
  int i0 = 0, i1 = 0;          // op integers (kernel size, label, T, ...)
  std::vector<double> saved;   // extra forward state some backwards need

  size_t size() const { return val.size(); }
};

// Append-only reverse-mode tape over matrix-shaped values. Node ids only
// reference earlier nodes, so the graph is acyclic by construction; backward
// walks ids in reverse insertion order exactly once.
class Tape {
 public:
  SpikeForward spike_mode = SpikeForward::heaviside;
  std::vector<Node> nodes;
  std::vector<uint32_t> visit_count;  // per node, filled by backward

  int leaf(int r, int c, std::span<const double> data) {
    Node n;
    n.op = Op::leaf;
    n.r = r;
    n.c = c;
    if (data.size() != static_cast<size_t>(r) * c)
      throw std::invalid_argument("tape leaf: data size does not match shape");
    n.val.assign(data.begin(), data.end());
    return push(std::move(n));
  }

  int zeros(int r, int c) {
    Node n;
    n.op = Op::leaf;
    n.r = r;
    n.c = c;
    n.val.assign(static_cast<size_t>(r) * c, 0.0);
    return push(std::move(n));
  }

  int add(int a, int b) {
    const Node &na = at(a), &nb = at(b);
    require(na.r == nb.r && na.c == nb.c, "add: shape mismatch");
    Node n = make(Op::add, na.r, na.c, {a, b});
    for (size_t i = 0; i < n.size(); ++i) n.val[i] = na.val[i] + nb.val[i];
    return push(std::move(n));
  }

  int mul(int a, int b) {
    const Node &na = at(a), &nb = at(b);
    require(na.r == nb.r && na.c == nb.c, "mul: shape mismatch");
    Node n = make(Op::mul, na.r, na.c, {a, b});
    for (size_t i = 0; i < n.size(); ++i) n.val[i] = na.val[i] * nb.val[i];
    return push(std::move(n));
  }

  int scale_by(int x, int s) {
    const Node &nx = at(x), &ns = at(s);
    require(ns.size() == 1, "scale_by: scale must be scalar");
    Node n = make(Op::scale_by, nx.r, nx.c, {x, s});
    for (size_t i = 0; i < n.size(); ++i) n.val[i] = nx.val[i] * ns.val[0];
    return push(std::move(n));
  }

  int scale_rows(int x, int w) {
    const Node &nx = at(x), &nw = at(w);
    require(nw.r == 1 && nw.c == nx.r, "scale_rows: weight must be 1 x rows");
    Node n = make(Op::scale_rows, nx.r, nx.c, {x, w});
    for (int r = 0; r < nx.r; ++r)
      for (int c = 0; c < nx.c; ++c)
        n.val[static_cast<size_t>(r) * nx.c + c] =
            nx.val[static_cast<size_t>(r) * nx.c + c] * nw.val[r];
    return push(std::move(n));
  }

  // x: (C_in x L); w: (C_out x C_in*k) with kernel size k; b: (1 x C_out).
  int conv1d(int x, int w, int b, int k) {
    const Node &nx = at(x), &nw = at(w), &nb = at(b);
    require(k >= 1 && k % 2 == 1, "conv1d: kernel must be odd");
    require(nw.c == nx.r * k, "conv1d: weight cols != c_in*k");
    require(nb.r == 1 && nb.c == nw.r, "conv1d: bias shape");
    const int c_out = nw.r, c_in = nx.r, L = nx.c, off = k / 2;
    Node n = make(Op::conv1d, c_out, L, {x, w, b});
    n.i0 = k;
    for (int o = 0; o < c_out; ++o)
      for (int l = 0; l < L; ++l) {
        double acc = nb.val[o];
        for (int i = 0; i < c_in; ++i) {
          const double* wrow = &nw.val[static_cast<size_t>(o) * nw.c + static_cast<size_t>(i) * k];
          for (int dk = 0; dk < k; ++dk) {
            int src = l + dk - off;
            if (src >= 0 && src < L) acc += wrow[dk] * nx.val[static_cast<size_t>(i) * L + src];
          }
        }
        n.val[static_cast<size_t>(o) * L + l] = acc;
      }
    return push(std::move(n));
  }

  // x is used flattened row-major; w: (F x C).
  int matvec(int x, int w) {
    const Node &nx = at(x), &nw = at(w);
    require(static_cast<size_t>(nw.r) == nx.size(), "matvec: weight rows != flattened input");
    Node n = make(Op::matvec, 1, nw.c, {x, w});
    for (size_t f = 0; f < nx.size(); ++f) {
      double xv = nx.val[f];
      if (xv == 0.0) continue;
      const double* wrow = &nw.val[f * nw.c];
      for (int j = 0; j < nw.c; ++j) n.val[j] += xv * wrow[j];
    }
    return push(std::move(n));
  }

  int spike(int m, double u_th) {
    const Node& nm = at(m);
    Node n = make(Op::spike, nm.r, nm.c, {m});
    n.d0 = u_th;
    if (spike_mode == SpikeForward::heaviside) {
      for (size_t i = 0; i < n.size(); ++i) n.val[i] = nm.val[i] >= u_th ? 1.0 : 0.0;
    } else {
      for (size_t i = 0; i < n.size(); ++i) n.val[i] = fast_sigmoid(nm.val[i], u_th);
    }
    return push(std::move(n));
  }

  int lif_temporal(int m, int s, double decay, double v_reset) {
    const Node &nm = at(m), &ns = at(s);
    require(nm.r == ns.r && nm.c == ns.c, "lif_temporal: shape mismatch");
    Node n = make(Op::lif_temporal, nm.r, nm.c, {m, s});
    n.d0 = decay;
    n.d1 = v_reset;
    for (size_t i = 0; i < n.size(); ++i)
      n.val[i] = v_reset * ns.val[i] + decay * nm.val[i] * (1.0 - ns.val[i]);
    return push(std::move(n));
  }

  int leaky_step(int m_prev, int drive, double decay) {
    const Node &np = at(m_prev), &nd = at(drive);
    require(np.r == nd.r && np.c == nd.c, "leaky_step: shape mismatch");
    Node n = make(Op::leaky_step, np.r, np.c, {m_prev, drive});
    n.d0 = decay;
    for (size_t i = 0; i < n.size(); ++i) n.val[i] = decay * np.val[i] + nd.val[i];
    return push(std::move(n));
  }

  int sum_many(std::span<const int> ids) {
    require(!ids.empty(), "sum_many: no inputs");
    const Node& n0 = at(ids[0]);
    Node n = make(Op::sum_many, n0.r, n0.c, {});
    n.in.assign(ids.begin(), ids.end());
    for (int id : ids) {
      const Node& ni = at(id);
      require(ni.r == n0.r && ni.c == n0.c, "sum_many: shape mismatch");
      for (size_t i = 0; i < n.size(); ++i) n.val[i] += ni.val[i];
    }
    return push(std::move(n));
  }

  int softmax(int x) {
    const Node& nx = at(x);
    require(nx.r == 1, "softmax: expects a row vector");
    Node n = make(Op::softmax, 1, nx.c, {x});
    n.val = softmax_readout(nx.val);
    return push(std::move(n));
  }

  int pick_log(int probs, int label) {
    const Node& np = at(probs);
    require(label >= 0 && label < np.c && np.r == 1, "pick_log: label out of range");
    Node n = make(Op::pick_log, 1, 1, {probs});
    n.i0 = label;
    double p = std::min(1.0, std::max(kProbClamp, np.val[label]));
    n.val[0] = -std::log(p);
    return push(std::move(n));
  }

  // -log softmax(z)[label], fused for a gradient (softmax - onehot) that stays
  // informative even when the softmax saturates.
  int cross_entropy(int logits, int label) {
    const Node& nz = at(logits);
    require(label >= 0 && label < nz.c && nz.r == 1, "cross_entropy: label out of range");
    Node n = make(Op::cross_entropy, 1, 1, {logits});
    n.i0 = label;
    n.saved = softmax_readout(nz.val);
    double mx = nz.val[0];
    for (double v : nz.val) mx = std::max(mx, v);
    double z = 0.0;
    for (double v : nz.val) z += std::exp(v - mx);
    n.val[0] = mx + std::log(z) - nz.val[label];
    return push(std::move(n));
  }

  int mean_many(std::span<const int> ids) {
    require(!ids.empty(), "mean_many: no inputs");
    Node n = make(Op::mean_many, 1, 1, {});
    n.in.assign(ids.begin(), ids.end());
    for (int id : ids) {
      require(at(id).size() == 1, "mean_many: inputs must be scalars");
      n.val[0] += at(id).val[0];
    }
    n.val[0] /= static_cast<double>(ids.size());
    return push(std::move(n));
  }

  int mean_vec_many(std::span<const int> ids) {
    require(!ids.empty(), "mean_vec_many: no inputs");
    const Node& n0 = at(ids[0]);
    Node n = make(Op::mean_vec_many, n0.r, n0.c, {});
    n.in.assign(ids.begin(), ids.end());
    for (int id : ids) {
      const Node& ni = at(id);
      require(ni.r == n0.r && ni.c == n0.c, "mean_vec_many: shape mismatch");
      for (size_t i = 0; i < n.size(); ++i) n.val[i] += ni.val[i];
    }
    for (double& v : n.val) v /= static_cast<double>(ids.size());
    return push(std::move(n));
  }

  int kl_uniform(int pbar) {
    const Node& np = at(pbar);
    require(np.r == 1 && np.c >= 1, "kl_uniform: expects a row vector");
    Node n = make(Op::kl_uniform, 1, 1, {pbar});
    double s = 0.0;
    for (int c = 0; c < np.c; ++c) {
      double p = std::max(np.val[c], kProbClamp);
      s += np.val[c] * std::log(p * np.c);
    }
    n.val[0] = s;
    return push(std::move(n));
  }

  int lin2(int a, int b, double ca, double cb) {
    require(at(a).size() == 1 && at(b).size() == 1, "lin2: scalars expected");
    Node n = make(Op::lin2, 1, 1, {a, b});
    n.d0 = ca;
    n.d1 = cb;
    n.val[0] = ca * at(a).val[0] + cb * at(b).val[0];
    return push(std::move(n));
  }

  int square_sum(int x) {
    Node n = make(Op::square_sum, 1, 1, {x});
    for (double v : at(x).val) n.val[0] += v * v;
    return push(std::move(n));
  }

  // Channel-wise Jaccard attention weight over T step planes of Q and K.
  // `ids` holds [q_0..q_{T-1}, k_0..k_{T-1}]. On binary planes min(q,k) = q*k
  // and max(q,k) = q + k - q*k; those smooth forms define the backward.
  // per_channel yields one weight per plane row instead of a global scalar.
  int sja_cw(std::span<const int> ids, double eps, bool per_channel) {
    require(ids.size() >= 2 && ids.size() % 2 == 0, "sja_cw: needs q and k step lists");
    const int T = static_cast<int>(ids.size() / 2);
    const Node& q0 = at(ids[0]);
    const int C = q0.r, L = q0.c;
    Node n = make(Op::sja_cw, 1, per_channel ? C : 1, {});
    n.in.assign(ids.begin(), ids.end());
    n.i0 = T;
    n.i1 = per_channel ? 1 : 0;
    n.d0 = eps;
    std::vector<double> num(per_channel ? C : 1, 0.0), den(per_channel ? C : 1, 0.0);
    for (int t = 0; t < T; ++t) {
      const Node &nq = at(ids[t]), &nk = at(ids[T + t]);
      require(nq.r == C && nq.c == L && nk.r == C && nk.c == L, "sja_cw: shape mismatch");
      for (int r = 0; r < C; ++r) {
        size_t base = static_cast<size_t>(r) * L;
        double ni = 0.0, di = 0.0;
        for (int l = 0; l < L; ++l) {
          double q = nq.val[base + l], k = nk.val[base + l];
          double inter = q * k;
          ni += inter;
          di += q + k - inter;
        }
        size_t slot = per_channel ? static_cast<size_t>(r) : 0;
        num[slot] += ni;
        den[slot] += di;
      }
    }
    n.saved.resize(num.size() * 2);
    for (size_t i = 0; i < num.size(); ++i) {
      double d = den[i] + eps;
      n.saved[2 * i] = num[i];
      n.saved[2 * i + 1] = d;
      n.val[i] = num[i] / d;
    }
    return push(std::move(n));
  }

  // Element-wise variant: a (C x L) weight per position from Jaccard over the
  // time axis. Same input layout as sja_cw.
  int sja_ew(std::span<const int> ids, double eps) {
    require(ids.size() >= 2 && ids.size() % 2 == 0, "sja_ew: needs q and k step lists");
    const int T = static_cast<int>(ids.size() / 2);
    const Node& q0 = at(ids[0]);
    const int C = q0.r, L = q0.c;
    Node n = make(Op::sja_ew, C, L, {});
    n.in.assign(ids.begin(), ids.end());
    n.i0 = T;
    n.d0 = eps;
    const size_t plane = static_cast<size_t>(C) * L;
    std::vector<double> num(plane, 0.0), den(plane, 0.0);
    for (int t = 0; t < T; ++t) {
      const Node &nq = at(ids[t]), &nk = at(ids[T + t]);
      require(nq.r == C && nq.c == L && nk.r == C && nk.c == L, "sja_ew: shape mismatch");
      for (size_t i = 0; i < plane; ++i) {
        double q = nq.val[i], k = nk.val[i];
        double inter = q * k;
        num[i] += inter;
        den[i] += q + k - inter;
      }
    }
    n.saved.resize(plane * 2);
    for (size_t i = 0; i < plane; ++i) {
      double d = den[i] + eps;
      n.saved[i] = num[i];
      n.saved[plane + i] = d;
      n.val[i] = num[i] / d;
    }
    return push(std::move(n));
  }

  // Per-step softmax attention directly over the (C x L) planes: positions are
  // the rows, channels the feature dimension.
  int dense_attn(int q, int k, int v) {
    const Node &nq = at(q), &nk = at(k), &nv = at(v);
    require(nq.r == nk.r && nq.c == nk.c && nq.r == nv.r && nq.c == nv.c,
            "dense_attn: shape mismatch");
    const int C = nq.r, L = nq.c;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(C));
    Node n = make(Op::dense_attn, C, L, {q, k, v});
    n.saved.assign(static_cast<size_t>(L) * L, 0.0);  // row-softmax probabilities
    std::vector<double> row(L);
    for (int i = 0; i < L; ++i) {
      for (int j = 0; j < L; ++j) {
        double acc = 0.0;
        for (int c = 0; c < C; ++c)
          acc += nq.val[static_cast<size_t>(c) * L + i] * nk.val[static_cast<size_t>(c) * L + j];
        row[j] = acc * inv_sqrt;
      }
      double mx = row[0];
      for (int j = 1; j < L; ++j) mx = std::max(mx, row[j]);
      double z = 0.0;
      for (int j = 0; j < L; ++j) {
        row[j] = std::exp(row[j] - mx);
        z += row[j];
      }
      double* prow = &n.saved[static_cast<size_t>(i) * L];
      for (int j = 0; j < L; ++j) prow[j] = row[j] / z;
      for (int c = 0; c < C; ++c) {
        double acc = 0.0;
        const double* vrow = &nv.val[static_cast<size_t>(c) * L];
        for (int j = 0; j < L; ++j) acc += prow[j] * vrow[j];
        n.val[static_cast<size_t>(c) * L + i] = acc;
      }
    }
    return push(std::move(n));
  }

  const Node& at(int id) const {
    if (id < 0 || static_cast<size_t>(id) >= nodes.size())
      throw std::logic_error("tape: node id out of range");
    return nodes[static_cast<size_t>(id)];
  }

  std::span<const double> value(int id) const { return at(id).val; }
  std::span<const double> gradient(int id) const {
    const Node& n = at(id);
    if (n.grad.empty()) throw std::logic_error("tape: backward has not run");
    return n.grad;
  }

  // Reverse traversal from the scalar loss node, chain rule at every node.
  void backward(int loss) {
    if (loss < 0 || static_cast<size_t>(loss) >= nodes.size())
      throw std::logic_error("backward before forward: no such node");
    if (nodes[static_cast<size_t>(loss)].size() != 1)
      throw std::logic_error("backward: loss node must be scalar");
    for (Node& n : nodes) n.grad.assign(n.size(), 0.0);
    visit_count.assign(nodes.size(), 0);
    nodes[static_cast<size_t>(loss)].grad[0] = 1.0;
    for (int id = loss; id >= 0; --id) {
      ++visit_count[static_cast<size_t>(id)];
      propagate(nodes[static_cast<size_t>(id)]);
    }
  }

 private:
  Node make(Op op, int r, int c, std::initializer_list<int> in) {
    Node n;
    n.op = op;
    n.r = r;
    n.c = c;
    n.in.assign(in.begin(), in.end());
    for (int id : n.in) (void)at(id);
    n.val.assign(static_cast<size_t>(r) * c, 0.0);
    return n;
  }

  int push(Node&& n) {
    nodes.push_back(std::move(n));
    return static_cast<int>(nodes.size()) - 1;
  }

  static void require(bool ok, const char* msg) {
    if (!ok) throw std::invalid_argument(msg);
  }

  Node& mut(int id) { return nodes[static_cast<size_t>(id)]; }

  void propagate(Node& n) {
    const std::vector<double>& g = n.grad;
    switch (n.op) {
      case Op::leaf:
        break;
      case Op::add: {
        Node &a = mut(n.in[0]), &b = mut(n.in[1]);
        for (size_t i = 0; i < g.size(); ++i) {
          a.grad[i] += g[i];
          b.grad[i] += g[i];
        }
        break;
      }
      case Op::mul: {
        Node &a = mut(n.in[0]), &b = mut(n.in[1]);
        for (size_t i = 0; i < g.size(); ++i) {
          a.grad[i] += g[i] * b.val[i];
          b.grad[i] += g[i] * a.val[i];
        }
        break;
      }
      case Op::scale_by: {
        Node &x = mut(n.in[0]), &s = mut(n.in[1]);
        double sv = s.val[0];
        double acc = 0.0;
        for (size_t i = 0; i < g.size(); ++i) {
          x.grad[i] += g[i] * sv;
          acc += g[i] * x.val[i];
        }
        s.grad[0] += acc;
        break;
      }
      case Op::scale_rows: {
        Node &x = mut(n.in[0]), &w = mut(n.in[1]);
        for (int r = 0; r < n.r; ++r) {
          double wr = w.val[r];
          double acc = 0.0;
          size_t base = static_cast<size_t>(r) * n.c;
          for (int c = 0; c < n.c; ++c) {
            x.grad[base + c] += g[base + c] * wr;
            acc += g[base + c] * x.val[base + c];
          }
          w.grad[r] += acc;
        }
        break;
      }
      case Op::conv1d: {
        Node &x = mut(n.in[0]), &w = mut(n.in[1]), &b = mut(n.in[2]);
        const int k = n.i0, off = k / 2, c_out = n.r, L = n.c, c_in = x.r;
        for (int o = 0; o < c_out; ++o) {
          const double* grow = &g[static_cast<size_t>(o) * L];
          double bacc = 0.0;
          for (int l = 0; l < L; ++l) bacc += grow[l];
          b.grad[o] += bacc;
          for (int i = 0; i < c_in; ++i) {
            const double* wrow = &w.val[static_cast<size_t>(o) * w.c + static_cast<size_t>(i) * k];
            double* gwrow = &w.grad[static_cast<size_t>(o) * w.c + static_cast<size_t>(i) * k];
            const double* xrow = &x.val[static_cast<size_t>(i) * L];
            double* gxrow = &x.grad[static_cast<size_t>(i) * L];
            for (int dk = 0; dk < k; ++dk) {
              int shift = dk - off;
              int lo = std::max(0, -shift), hi = std::min(L, L - shift);
              double wacc = 0.0;
              for (int l = lo; l < hi; ++l) {
                gxrow[l + shift] += wrow[dk] * grow[l];
                wacc += xrow[l + shift] * grow[l];
              }
              gwrow[dk] += wacc;
            }
          }
        }
        break;
      }
      case Op::matvec: {
        Node &x = mut(n.in[0]), &w = mut(n.in[1]);
        const int C = n.c;
        for (size_t f = 0; f < x.val.size(); ++f) {
          const double* wrow = &w.val[f * C];
          double* gwrow = &w.grad[f * C];
          double xv = x.val[f];
          double acc = 0.0;
          for (int j = 0; j < C; ++j) {
            acc += wrow[j] * g[j];
            gwrow[j] += xv * g[j];
          }
          x.grad[f] += acc;
        }
        break;
      }
      case Op::spike: {
        Node& m = mut(n.in[0]);
        for (size_t i = 0; i < g.size(); ++i)
          m.grad[i] += g[i] * superspike_grad(m.val[i], n.d0);
        break;
      }
      case Op::lif_temporal: {
        Node &m = mut(n.in[0]), &s = mut(n.in[1]);
        const double decay = n.d0, v_reset = n.d1;
        for (size_t i = 0; i < g.size(); ++i) {
          m.grad[i] += g[i] * decay * (1.0 - s.val[i]);
          s.grad[i] += g[i] * (v_reset - decay * m.val[i]);
        }
        break;
      }
      case Op::leaky_step: {
        Node &mp = mut(n.in[0]), &d = mut(n.in[1]);
        for (size_t i = 0; i < g.size(); ++i) {
          mp.grad[i] += g[i] * n.d0;
          d.grad[i] += g[i];
        }
        break;
      }
      case Op::sum_many: {
        for (int id : n.in) {
          Node& x = mut(id);
          for (size_t i = 0; i < g.size(); ++i) x.grad[i] += g[i];
        }
        break;
      }
      case Op::softmax: {
        Node& x = mut(n.in[0]);
        double dot = 0.0;
        for (size_t i = 0; i < g.size(); ++i) dot += g[i] * n.val[i];
        for (size_t i = 0; i < g.size(); ++i) x.grad[i] += n.val[i] * (g[i] - dot);
        break;
      }
      case Op::pick_log: {
        Node& p = mut(n.in[0]);
        double pv = p.val[n.i0];
        if (pv > kProbClamp) p.grad[n.i0] += -g[0] / std::min(1.0, pv);
        break;
      }
      case Op::cross_entropy: {
        Node& z = mut(n.in[0]);
        for (int c = 0; c < z.c; ++c)
          z.grad[c] += g[0] * (n.saved[static_cast<size_t>(c)] - (c == n.i0 ? 1.0 : 0.0));
        break;
      }
      case Op::mean_many: {
        double share = g[0] / static_cast<double>(n.in.size());
        for (int id : n.in) mut(id).grad[0] += share;
        break;
      }
      case Op::mean_vec_many: {
        double inv = 1.0 / static_cast<double>(n.in.size());
        for (int id : n.in) {
          Node& x = mut(id);
          for (size_t i = 0; i < g.size(); ++i) x.grad[i] += g[i] * inv;
        }
        break;
      }
      case Op::kl_uniform: {
        Node& p = mut(n.in[0]);
        for (int c = 0; c < p.c; ++c) {
          double pv = std::max(p.val[c], kProbClamp);
          p.grad[c] += g[0] * (std::log(pv * p.c) + (p.val[c] > kProbClamp ? 1.0 : 0.0));
        }
        break;
      }
      case Op::lin2: {
        mut(n.in[0]).grad[0] += g[0] * n.d0;
        mut(n.in[1]).grad[0] += g[0] * n.d1;
        break;
      }
      case Op::square_sum: {
        Node& x = mut(n.in[0]);
        for (size_t i = 0; i < x.val.size(); ++i) x.grad[i] += 2.0 * x.val[i] * g[0];
        break;
      }
      case Op::sja_cw: {
        const int T = n.i0;
        const bool per_channel = n.i1 != 0;
        const Node& q0 = nodes[static_cast<size_t>(n.in[0])];
        const int C = q0.r, L = q0.c;
        for (int t = 0; t < T; ++t) {
          Node &q = mut(n.in[t]), &k = mut(n.in[T + t]);
          for (int r = 0; r < C; ++r) {
            size_t slot = per_channel ? static_cast<size_t>(r) : 0;
            double num = n.saved[2 * slot], den = n.saved[2 * slot + 1];
            double gw = g[slot];
            if (gw == 0.0) continue;
            double inv_d2 = 1.0 / (den * den);
            size_t base = static_cast<size_t>(r) * L;
            for (int l = 0; l < L; ++l) {
              double qv = q.val[base + l], kv = k.val[base + l];
              q.grad[base + l] += gw * (kv * den - num * (1.0 - kv)) * inv_d2;
              k.grad[base + l] += gw * (qv * den - num * (1.0 - qv)) * inv_d2;
            }
          }
        }
        break;
      }
      case Op::sja_ew: {
        const int T = n.i0;
        const size_t plane = static_cast<size_t>(n.r) * n.c;
        for (int t = 0; t < T; ++t) {
          Node &q = mut(n.in[t]), &k = mut(n.in[T + t]);
          for (size_t i = 0; i < plane; ++i) {
            double gw = g[i];
            if (gw == 0.0) continue;
            double num = n.saved[i], den = n.saved[plane + i];
            double inv_d2 = 1.0 / (den * den);
            double qv = q.val[i], kv = k.val[i];
            q.grad[i] += gw * (kv * den - num * (1.0 - kv)) * inv_d2;
            k.grad[i] += gw * (qv * den - num * (1.0 - qv)) * inv_d2;
          }
        }
        break;
      }
      case Op::dense_attn: {
        Node &q = mut(n.in[0]), &k = mut(n.in[1]), &v = mut(n.in[2]);
        const int C = n.r, L = n.c;
        const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(C));
        std::vector<double> gp(L), gs(L);
        for (int i = 0; i < L; ++i) {
          const double* prow = &n.saved[static_cast<size_t>(i) * L];
          // dL/dP[i,j] and v's gradient share the same loops.
          double pdot = 0.0;
          for (int j = 0; j < L; ++j) {
            double acc = 0.0;
            for (int c = 0; c < C; ++c)
              acc += v.val[static_cast<size_t>(c) * L + j] * g[static_cast<size_t>(c) * L + i];
            gp[j] = acc;
            pdot += prow[j] * acc;
            for (int c = 0; c < C; ++c)
              v.grad[static_cast<size_t>(c) * L + j] +=
                  prow[j] * g[static_cast<size_t>(c) * L + i];
          }
          for (int j = 0; j < L; ++j) gs[j] = prow[j] * (gp[j] - pdot) * inv_sqrt;
          for (int j = 0; j < L; ++j) {
            if (gs[j] == 0.0) continue;
            for (int c = 0; c < C; ++c) {
              q.grad[static_cast<size_t>(c) * L + i] += gs[j] * k.val[static_cast<size_t>(c) * L + j];
              k.grad[static_cast<size_t>(c) * L + j] += gs[j] * q.val[static_cast<size_t>(c) * L + i];
            }
          }
        }
        break;
      }
    }
  }
};

// ---- Adam ----

struct ParamRef {
  double* value = nullptr;
  const double* grad = nullptr;
  size_t size = 0;
};

struct AdamState {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_hat = 1e-8;
  int64_t step_count = 0;
  std::vector<std::vector<double>> m, v;
};

inline void adam_step(std::span<const ParamRef> params, AdamState& st) {
  if (st.m.empty()) {
    st.m.resize(params.size());
    st.v.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
      st.m[i].assign(params[i].size, 0.0);
      st.v[i].assign(params[i].size, 0.0);
    }
  }
  if (st.m.size() != params.size()) throw std::invalid_argument("adam_step: parameter count changed");
  st.step_count += 1;
  const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step_count));
  const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step_count));
  for (size_t i = 0; i < params.size(); ++i) {
    if (st.m[i].size() != params[i].size) throw std::invalid_argument("adam_step: shape mismatch");
    double* p = params[i].value;
    const double* g = params[i].grad;
    for (size_t j = 0; j < params[i].size; ++j) {
      double mj = st.m[i][j] = st.beta1 * st.m[i][j] + (1.0 - st.beta1) * g[j];
      double vj = st.v[i][j] = st.beta2 * st.v[i][j] + (1.0 - st.beta2) * g[j] * g[j];
      p[j] -= st.lr * (mj / bc1) / (std::sqrt(vj / bc2) + st.eps_hat);
    }
  }
}

}  // namespace spikegest
