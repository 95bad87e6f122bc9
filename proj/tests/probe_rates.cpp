// Scratch probe: does class information survive each layer's spike rates?
// Nearest-class-mean accuracy on time-summed spike counts, leave-one-in.
#include <cstdio>
#include <vector>

#include "spikegest/train.hpp"

using namespace spikegest;

namespace {

std::vector<double> rates(const SpikeTrain& s) {
  std::vector<double> r(static_cast<size_t>(s.c) * s.l, 0.0);
  const size_t plane = r.size();
  for (int64_t f : s.nonzeros) r[static_cast<size_t>(f) % plane] += 1.0;
  return r;
}

double ncm_accuracy(const std::vector<std::vector<double>>& feats, const std::vector<int>& labels,
                    int classes) {
  size_t dim = feats[0].size();
  std::vector<std::vector<double>> mean(static_cast<size_t>(classes), std::vector<double>(dim, 0.0));
  std::vector<int> count(static_cast<size_t>(classes), 0);
  for (size_t i = 0; i < feats.size(); ++i) {
    for (size_t d = 0; d < dim; ++d) mean[labels[i]][d] += feats[i][d];
    ++count[labels[i]];
  }
  for (int c = 0; c < classes; ++c)
    for (size_t d = 0; d < dim; ++d) mean[c][d] /= std::max(1, count[c]);
  int correct = 0;
  for (size_t i = 0; i < feats.size(); ++i) {
    int best = 0;
    double best_d = 1e300;
    for (int c = 0; c < classes; ++c) {
      double dist = 0.0;
      for (size_t d = 0; d < dim; ++d) {
        double diff = feats[i][d] - mean[c][d];
        dist += diff * diff;
      }
      if (dist < best_d) {
        best_d = dist;
        best = c;
      }
    }
    if (best == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / feats.size();
}

}  // namespace

int main(int argc, char** argv) {
  int n = argc > 1 ? std::atoi(argv[1]) : 16;
  int seq_len = argc > 2 ? std::atoi(argv[2]) : 32;
  double bias_shift = argc > 3 ? std::atof(argv[3]) : 0.0;
  uint64_t model_seed = argc > 4 ? std::strtoull(argv[4], nullptr, 10) : 12345;

  SynthSpec spec;
  spec.num_classes = 10;
  spec.num_domains = 1;
  spec.samples_per_class_per_domain = 12;
  spec.seq_len = seq_len;
  spec.channel_count = 8;
  spec.noise_std = 0.1;
  spec.seed = 1;
  Dataset ds = synth_generate(spec);

  JasnnModel m = make_jasnn(8, seq_len, n, 3, 10, model_seed);
  for (Conv1d* c : m.conv_layers())
    for (double& b : c->b) b += bias_shift;

  std::vector<std::vector<double>> enc_r, f1_r, f2_r, v_r, raw_r;
  std::vector<int> labels;
  for (const GestureSample& g : ds.samples) {
    ForwardResult r = jasnn_forward(m, g);
    enc_r.push_back(rates(r.enc_s));
    f1_r.push_back(rates(r.f1_s));
    f2_r.push_back(rates(r.f2_s));
    v_r.push_back(rates(r.qkv.v));
    std::vector<double> raw(g.features.begin(), g.features.end());
    raw_r.push_back(raw);
    labels.push_back(g.label);
  }
  std::printf("bias=%.2f seed=%llu\n", bias_shift, (unsigned long long)model_seed);
  std::printf("raw NCM: %.3f\n", ncm_accuracy(raw_r, labels, 10));
  std::printf("enc NCM: %.3f (density %.3f)\n", ncm_accuracy(enc_r, labels, 10),
              jasnn_forward(m, ds.samples[0]).enc_s.density());
  std::printf("f1  NCM: %.3f\n", ncm_accuracy(f1_r, labels, 10));
  std::printf("f2  NCM: %.3f\n", ncm_accuracy(f2_r, labels, 10));
  std::printf("v   NCM: %.3f\n", ncm_accuracy(v_r, labels, 10));
  return 0;
}
