// Scratch probe: spike densities per layer and a short training run.
#include <cstdio>

#include "spikegest/train.hpp"

using namespace spikegest;

int main(int argc, char** argv) {
  int n = argc > 1 ? std::atoi(argv[1]) : 16;
  int seq_len = argc > 2 ? std::atoi(argv[2]) : 32;
  int classes = argc > 3 ? std::atoi(argv[3]) : 10;
  int per_class = argc > 4 ? std::atoi(argv[4]) : 8;
  int epochs = argc > 5 ? std::atoi(argv[5]) : 8;
  double lr = argc > 6 ? std::atof(argv[6]) : 0.002;

  SynthSpec spec;
  spec.num_classes = classes;
  spec.num_domains = 1;
  spec.samples_per_class_per_domain = per_class;
  spec.seq_len = seq_len;
  spec.channel_count = 8;
  spec.noise_std = 0.1;
  spec.seed = 1;
  Dataset ds = synth_generate(spec);

  double bias_shift = argc > 7 ? std::atof(argv[7]) : 0.0;
  bool share_qk = argc > 8 && std::atoi(argv[8]) != 0;
  JasnnModel m = make_jasnn(8, seq_len, n, 3, classes, 12345);
  for (Conv1d* c : m.conv_layers())
    for (double& b : c->b) b += bias_shift;
  if (share_qk) {
    m.k_proj.w = m.q_proj.w;
    m.k_proj.b = m.q_proj.b;
  }
  for (int i = 0; i < 3; ++i) {
    ForwardResult r = jasnn_forward(m, ds.samples[static_cast<size_t>(i * 3)]);
    std::printf("sample %d: enc %.4f f1 %.4f f2 %.4f q %.4f k %.4f v %.4f w=%.4f pred=%d\n", i,
                r.enc_s.density(), r.f1_s.density(), r.f2_s.density(), r.qkv.q.density(),
                r.qkv.k.density(), r.qkv.v.density(), r.attn_scalar, r.prediction);
  }

  AdamState opt;
  opt.lr = lr;
  for (int e = 0; e < epochs; ++e) {
    auto t0 = std::chrono::steady_clock::now();
    EpochMetrics em = train_epoch(m, ds, opt, 16, 1000 + static_cast<uint64_t>(e));
    auto dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("epoch %d loss %.4f acc %.3f (%.2fs)\n", e, em.mean_loss, em.accuracy, dt);
  }
  ForwardResult r = jasnn_forward(m, ds.samples[0]);
  std::printf("after: enc %.4f f1 %.4f f2 %.4f v %.4f w=%.4f\n", r.enc_s.density(),
              r.f1_s.density(), r.f2_s.density(), r.qkv.v.density(), r.attn_scalar);
  return 0;
}
