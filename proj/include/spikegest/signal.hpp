#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "spikegest/rng.hpp"
#include "spikegest/tensor.hpp"

namespace spikegest {

// Raw multichannel signal, millivolt-scale arbitrary units.
struct RawRecording {
  Mat samples;  // num_samples x num_channels
  int sample_rate_hz = 2000;

  int num_samples() const { return samples.rows; }
  int channel_count() const { return samples.cols; }
};

// One RMS feature window with its gesture label and posture/domain id.
// Features are stored as float32 so that dataset files round-trip exactly.
struct GestureSample {
  int seq_len = 0;
  int channels = 0;
  std::vector<float> features;  // seq_len x channels, row-major, all >= 0
  int label = 0;
  int domain_id = 0;

  float at(int pos, int ch) const { return features[static_cast<size_t>(pos) * channels + ch]; }
  float& at(int pos, int ch) { return features[static_cast<size_t>(pos) * channels + ch]; }
};

struct Dataset {
  int num_classes = 0;
  int seq_len = 0;
  int channels = 0;
  std::vector<GestureSample> samples;
};

struct SynthSpec {
  int num_classes = 10;
  int num_domains = 3;
  int samples_per_class_per_domain = 20;
  int seq_len = 200;
  int channel_count = 8;
  double noise_std = 0.1;
  double domain_mixing_strength = 0.5;
  uint64_t seed = 42;

  void validate() const {
    if (num_classes < 1 || num_domains < 1 || samples_per_class_per_domain < 1 ||
        seq_len < 1 || channel_count < 1)
      throw std::invalid_argument("synth spec: all counts must be >= 1");
    if (noise_std < 0.0) throw std::invalid_argument("synth spec: noise_std must be >= 0");
    if (domain_mixing_strength < 0.0 || domain_mixing_strength > 1.0)
      throw std::invalid_argument("synth spec: domain_mixing_strength must be in [0,1]");
  }
};

// sqrt((1/N) * sum x_i^2)
inline double rms(std::span<const double> window) {
  if (window.empty()) throw std::invalid_argument("rms: empty window");
  double acc = 0.0;
  for (double x : window) {
    if (!std::isfinite(x)) throw std::invalid_argument("rms: non-finite sample");
    acc += x * x;
  }
  return std::sqrt(acc / static_cast<double>(window.size()));
}

// Per-channel RMS over a sliding window. Output row count is
// floor((num_samples - window) / step) + 1.
inline Mat sliding_rms(const RawRecording& rec, int window_len_samples, int step_samples) {
  int n = rec.num_samples();
  int ch = rec.channel_count();
  if (window_len_samples < 1 || window_len_samples > n)
    throw std::invalid_argument("sliding_rms: window longer than recording");
  if (step_samples < 1) throw std::invalid_argument("sliding_rms: step must be >= 1");
  int out_len = (n - window_len_samples) / step_samples + 1;
  Mat out(out_len, ch);
  for (int c = 0; c < ch; ++c) {
    // Running sum of squares, advanced by step.
    for (int w = 0; w < out_len; ++w) {
      int start = w * step_samples;
      double acc = 0.0;
      for (int i = 0; i < window_len_samples; ++i) {
        double x = rec.samples.at(start + i, c);
        if (!std::isfinite(x)) throw std::invalid_argument("sliding_rms: non-finite sample");
        acc += x * x;
      }
      out.at(w, c) = std::sqrt(acc / window_len_samples);
    }
  }
  return out;
}

// Fixed-length windows with fractional overlap; hop is floored, minimum 1.
inline std::vector<Mat> segment(const Mat& features, int window_len, double overlap_fraction) {
  if (window_len < 1 || window_len > features.rows)
    throw std::invalid_argument("segment: feature sequence shorter than window");
  if (overlap_fraction < 0.0 || overlap_fraction >= 1.0)
    throw std::invalid_argument("segment: overlap_fraction must be in [0,1)");
  int hop = static_cast<int>(window_len * (1.0 - overlap_fraction));
  if (hop < 1) hop = 1;
  std::vector<Mat> blocks;
  for (int start = 0; start + window_len <= features.rows; start += hop) {
    Mat b(window_len, features.cols);
    for (int r = 0; r < window_len; ++r)
      for (int c = 0; c < features.cols; ++c) b.at(r, c) = features.at(start + r, c);
    blocks.push_back(std::move(b));
  }
  return blocks;
}

namespace detail {

// Smooth non-negative per-channel envelope from a low-order cosine mixture,
// normalized to mean 1 over positions so classes differ in where the energy
// sits rather than in per-channel totals.
inline std::vector<double> class_envelope(Rng& rng, int seq_len) {
  constexpr int kOrder = 3;
  double a0 = rng.uniform(0.8, 1.2);
  double amp[kOrder], phase[kOrder];
  int freq[kOrder];
  for (int k = 0; k < kOrder; ++k) {
    amp[k] = rng.uniform(0.25, 0.9);
    phase[k] = rng.uniform(0.0, 6.283185307179586);
    freq[k] = 1 + static_cast<int>(rng.uniform_int(4));
  }
  std::vector<double> env(seq_len);
  double mean = 0.0;
  for (int p = 0; p < seq_len; ++p) {
    double x = a0;
    for (int k = 0; k < kOrder; ++k)
      x += amp[k] * std::cos(6.283185307179586 * freq[k] * p / seq_len + phase[k]);
    env[p] = std::fabs(x);
    mean += env[p];
  }
  mean /= seq_len;
  if (mean < 1e-9) mean = 1e-9;
  for (double& e : env) e /= mean;
  return env;
}

// M_d = (1-s)*I + s*P_d with P_d a seeded random derangement-style
// permutation matrix; rows stay nonnegative and sum to 1, so the mix is
// doubly substochastic. A single permutation keeps the shift sharp, the way a
// posture change rotates which electrodes see which muscles.
inline Mat domain_mixing_matrix(uint64_t seed, int domain, int channels, double strength) {
  Mat m(channels, channels);
  for (int i = 0; i < channels; ++i) m.at(i, i) = 1.0 - strength;
  if (strength == 0.0 || domain == 0) {
    if (domain == 0)
      for (int i = 0; i < channels; ++i) m.at(i, i) = 1.0;
    return m;
  }
  Rng rng = Rng(seed).fork(0x646f6d61u, static_cast<uint64_t>(domain));
  std::vector<int> perm(channels);
  for (int attempt = 0; attempt < 64; ++attempt) {
    for (int i = 0; i < channels; ++i) perm[i] = i;
    rng.shuffle(perm);
    int fixed = 0;
    for (int i = 0; i < channels; ++i) fixed += perm[i] == i;
    if (fixed == 0 || channels < 2) break;  // avoid near-identity draws
  }
  for (int i = 0; i < channels; ++i) m.at(i, perm[i]) += strength;
  return m;
}

}  // namespace detail

// Deterministic synthetic dataset: class identity is a per-channel amplitude
// envelope over the window; domain d != 0 mixes channels with a fixed seeded
// matrix, shifting the marginal distribution without touching labels.
inline Dataset synth_generate(const SynthSpec& spec) {
  spec.validate();
  Dataset ds;
  ds.num_classes = spec.num_classes;
  ds.seq_len = spec.seq_len;
  ds.channels = spec.channel_count;

  Rng root(spec.seed);

  // Class templates: envelope per (class, channel).
  std::vector<std::vector<std::vector<double>>> tmpl(spec.num_classes);
  for (int c = 0; c < spec.num_classes; ++c) {
    tmpl[c].resize(spec.channel_count);
    for (int ch = 0; ch < spec.channel_count; ++ch) {
      Rng trng = root.fork(0x74656d70u + static_cast<uint64_t>(c), static_cast<uint64_t>(ch));
      tmpl[c][ch] = detail::class_envelope(trng, spec.seq_len);
    }
  }

  std::vector<Mat> mix(spec.num_domains);
  for (int d = 0; d < spec.num_domains; ++d)
    mix[d] = detail::domain_mixing_matrix(spec.seed, d, spec.channel_count,
                                          spec.domain_mixing_strength);

  std::vector<double> raw(spec.channel_count);
  for (int d = 0; d < spec.num_domains; ++d) {
    for (int c = 0; c < spec.num_classes; ++c) {
      for (int s = 0; s < spec.samples_per_class_per_domain; ++s) {
        Rng srng = root.fork(0x73616d70u + static_cast<uint64_t>(d) * 7919u + c,
                             static_cast<uint64_t>(s));
        GestureSample g;
        g.seq_len = spec.seq_len;
        g.channels = spec.channel_count;
        g.label = c;
        g.domain_id = d;
        g.features.resize(static_cast<size_t>(spec.seq_len) * spec.channel_count);
        const Mat& m = mix[d];
        for (int p = 0; p < spec.seq_len; ++p) {
          for (int ch = 0; ch < spec.channel_count; ++ch)
            raw[ch] = std::max(0.0, tmpl[c][ch][p] + spec.noise_std * srng.normal());
          for (int ch = 0; ch < spec.channel_count; ++ch) {
            double acc = 0.0;
            for (int j = 0; j < spec.channel_count; ++j) acc += m.at(ch, j) * raw[j];
            g.at(p, ch) = static_cast<float>(acc);
          }
        }
        ds.samples.push_back(std::move(g));
      }
    }
  }
  return ds;
}

// Stratified split by (label, domain_id): the first floor(frac * group size)
// samples of each seeded in-group shuffle go to the first part.
struct SplitResult {
  Dataset first, second;
  std::vector<size_t> first_ids, second_ids;  // indices into the source dataset
};

inline SplitResult split_stratified(const Dataset& ds, double frac, uint64_t seed) {
  if (frac < 0.0 || frac > 1.0) throw std::invalid_argument("split: frac must be in [0,1]");
  SplitResult out;
  out.first.num_classes = out.second.num_classes = ds.num_classes;
  out.first.seq_len = out.second.seq_len = ds.seq_len;
  out.first.channels = out.second.channels = ds.channels;

  std::vector<std::vector<size_t>> groups;
  std::vector<std::pair<int, int>> keys;
  for (size_t i = 0; i < ds.samples.size(); ++i) {
    std::pair<int, int> key{ds.samples[i].label, ds.samples[i].domain_id};
    size_t gi = 0;
    for (; gi < keys.size(); ++gi)
      if (keys[gi] == key) break;
    if (gi == keys.size()) {
      keys.push_back(key);
      groups.emplace_back();
    }
    groups[gi].push_back(i);
  }
  Rng rng(seed);
  for (size_t gi = 0; gi < groups.size(); ++gi) {
    Rng grng = rng.fork(0x73706c69u, gi);
    grng.shuffle(groups[gi]);
    size_t take = static_cast<size_t>(frac * static_cast<double>(groups[gi].size()));
    for (size_t j = 0; j < groups[gi].size(); ++j) {
      if (j < take) {
        out.first.samples.push_back(ds.samples[groups[gi][j]]);
        out.first_ids.push_back(groups[gi][j]);
      } else {
        out.second.samples.push_back(ds.samples[groups[gi][j]]);
        out.second_ids.push_back(groups[gi][j]);
      }
    }
  }
  return out;
}

inline Dataset filter_domain(const Dataset& ds, int domain_id) {
  Dataset out;
  out.num_classes = ds.num_classes;
  out.seq_len = ds.seq_len;
  out.channels = ds.channels;
  for (const GestureSample& g : ds.samples)
    if (g.domain_id == domain_id) out.samples.push_back(g);
  return out;
}

// ---- dataset file IO: "SPKG" self-describing binary ----

class io_error : public std::runtime_error {
 public:
  explicit io_error(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {

inline void put_u16(std::ostream& os, uint16_t v) {
  char b[2] = {static_cast<char>(v & 0xff), static_cast<char>(v >> 8)};
  os.write(b, 2);
}
inline void put_u32(std::ostream& os, uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 4);
}
inline void put_f32(std::ostream& os, float f) {
  uint32_t u;
  static_assert(sizeof(u) == sizeof(f));
  __builtin_memcpy(&u, &f, 4);
  put_u32(os, u);
}
inline void put_f64(std::ostream& os, double d) {
  uint64_t u;
  __builtin_memcpy(&u, &d, 8);
  put_u32(os, static_cast<uint32_t>(u & 0xffffffffull));
  put_u32(os, static_cast<uint32_t>(u >> 32));
}

inline uint16_t get_u16(std::istream& is, const char* field) {
  unsigned char b[2];
  if (!is.read(reinterpret_cast<char*>(b), 2)) throw io_error(std::string("truncated file reading ") + field);
  return static_cast<uint16_t>(b[0] | (b[1] << 8));
}
inline uint32_t get_u32(std::istream& is, const char* field) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw io_error(std::string("truncated file reading ") + field);
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
  return v;
}
inline float get_f32(std::istream& is, const char* field) {
  uint32_t u = get_u32(is, field);
  float f;
  __builtin_memcpy(&f, &u, 4);
  return f;
}
inline double get_f64(std::istream& is, const char* field) {
  uint64_t lo = get_u32(is, field);
  uint64_t hi = get_u32(is, field);
  uint64_t u = lo | (hi << 32);
  double d;
  __builtin_memcpy(&d, &u, 8);
  return d;
}

}  // namespace detail

inline void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw io_error("cannot open for writing: " + path);
  os.write("SPKG", 4);
  detail::put_u16(os, 1);  // version
  detail::put_u16(os, 0);  // reserved
  detail::put_u32(os, static_cast<uint32_t>(ds.samples.size()));
  detail::put_u32(os, static_cast<uint32_t>(ds.seq_len));
  detail::put_u32(os, static_cast<uint32_t>(ds.channels));
  detail::put_u32(os, static_cast<uint32_t>(ds.num_classes));
  for (const GestureSample& g : ds.samples)
    for (float f : g.features) detail::put_f32(os, f);
  for (const GestureSample& g : ds.samples) detail::put_u16(os, static_cast<uint16_t>(g.label));
  for (const GestureSample& g : ds.samples) detail::put_u16(os, static_cast<uint16_t>(g.domain_id));
  if (!os) throw io_error("write failed: " + path);
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io_error("cannot open for reading: " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::string(magic, 4) != "SPKG")
    throw io_error("bad magic (expected SPKG): " + path);
  uint16_t version = detail::get_u16(is, "version");
  if (version != 1) throw io_error("unsupported version " + std::to_string(version));
  detail::get_u16(is, "reserved");
  uint32_t n = detail::get_u32(is, "num_samples");
  uint32_t seq_len = detail::get_u32(is, "seq_len");
  uint32_t channels = detail::get_u32(is, "channels");
  uint32_t num_classes = detail::get_u32(is, "num_classes");
  if (seq_len < 1) throw io_error("invalid seq_len in header");
  if (channels < 1) throw io_error("invalid channels in header");
  if (num_classes < 1) throw io_error("invalid num_classes in header");

  Dataset ds;
  ds.num_classes = static_cast<int>(num_classes);
  ds.seq_len = static_cast<int>(seq_len);
  ds.channels = static_cast<int>(channels);
  ds.samples.resize(n);
  for (uint32_t i = 0; i < n; ++i) {
    GestureSample& g = ds.samples[i];
    g.seq_len = ds.seq_len;
    g.channels = ds.channels;
    g.features.resize(static_cast<size_t>(seq_len) * channels);
    for (float& f : g.features) {
      f = detail::get_f32(is, "features");
      if (!std::isfinite(f)) throw io_error("non-finite value in features");
    }
  }
  for (uint32_t i = 0; i < n; ++i) {
    uint16_t label = detail::get_u16(is, "label");
    if (label >= num_classes)
      throw io_error("label " + std::to_string(label) + " out of range (num_classes=" +
                     std::to_string(num_classes) + ")");
    ds.samples[i].label = label;
  }
  for (uint32_t i = 0; i < n; ++i) ds.samples[i].domain_id = detail::get_u16(is, "domain_id");
  return ds;
}

// Debug export: one row per sample, flattened features then label and domain.
inline void export_dataset_csv(const Dataset& ds, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw io_error("cannot open for writing: " + path);
  for (const GestureSample& g : ds.samples) {
    char buf[32];
    for (float f : g.features) {
      std::snprintf(buf, sizeof buf, "%.9g,", static_cast<double>(f));
      os << buf;
    }
    os << g.label << ',' << g.domain_id << '\n';
  }
  if (!os) throw io_error("write failed: " + path);
}

}  // namespace spikegest
