// Scratch probe: criterion-5 style run. Source model on domain 0, adaptation
// on unlabeled domain 1, PLG vs PL vs NPL improvements.
#include <cstdio>

#include "spikegest/ssfda.hpp"

using namespace spikegest;

int main(int argc, char** argv) {
  int n = argc > 1 ? std::atoi(argv[1]) : 16;
  int seq_len = argc > 2 ? std::atoi(argv[2]) : 32;
  int per_class = argc > 3 ? std::atoi(argv[3]) : 20;
  int src_epochs = argc > 4 ? std::atoi(argv[4]) : 30;
  int adapt_epochs = argc > 5 ? std::atoi(argv[5]) : 15;
  int seeds = argc > 6 ? std::atoi(argv[6]) : 1;
  double adapt_lr = argc > 7 ? std::atof(argv[7]) : 1e-4;

  double mean_gain[3] = {0, 0, 0};
  for (int trial = 0; trial < seeds; ++trial) {
    uint64_t seed = 100 + static_cast<uint64_t>(trial);
    SynthSpec spec;
    spec.num_classes = 10;
    spec.num_domains = 2;
    spec.samples_per_class_per_domain = per_class;
    spec.seq_len = seq_len;
    spec.channel_count = 8;
    spec.noise_std = 0.1;
    spec.domain_mixing_strength = 0.5;
    spec.seed = seed;
    Dataset ds = synth_generate(spec);
    Dataset source_all = filter_domain(ds, 0);
    Dataset target = filter_domain(ds, 1);
    SplitResult split = split_stratified(source_all, 0.7, seed);

    auto t0 = std::chrono::steady_clock::now();
    JasnnModel model = make_jasnn(8, seq_len, n, 3, 10, seed * 977 + 13);
    FitOptions opt;
    opt.epochs = src_epochs;
    opt.batch_size = 32;
    opt.lr = 0.005;
    opt.seed = seed;
    fit(model, split.first, opt);
    double src_test = evaluate(model, split.second).accuracy;
    double tgt_before = evaluate(model, target).accuracy;
    double fit_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    std::printf("seed %llu: src test %.3f | target before %.3f (fit %.0fs)\n",
                (unsigned long long)seed, src_test, tgt_before, fit_s);

    const char* names[3] = {"PLG", "PL ", "NPL"};
    double probs[3] = {0.1, 0.0, 1.0};
    for (int v = 0; v < 3; ++v) {
      JasnnModel adapted = model;
      SsfdaConfig cfg;
      cfg.k_neighbors = 5;
      cfg.explore_prob = probs[v];
      cfg.alpha = 0.3;
      cfg.delta = 0.1;
      cfg.epochs = adapt_epochs;
      cfg.seed = seed * 3 + 17;
      cfg.lr = adapt_lr;
      cfg.batch_size = 16;
      auto a0 = std::chrono::steady_clock::now();
      AdaptReport rep = adapt(adapted, target, cfg);
      double after = evaluate(adapted, target).accuracy;
      double adapt_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - a0).count();
      mean_gain[v] += (after - tgt_before) * 100.0;
      std::printf("  %s: after %.3f (gain %+5.1f pts) agree0 %.3f agreeN %.3f (%.0fs)\n", names[v],
                  after, (after - tgt_before) * 100.0, rep.epochs.front().pseudo_label_agreement,
                  rep.epochs.back().pseudo_label_agreement, adapt_s);
    }
  }
  std::printf("mean gains over %d seeds: PLG %+.2f PL %+.2f NPL %+.2f\n", seeds,
              mean_gain[0] / seeds, mean_gain[1] / seeds, mean_gain[2] / seeds);
  return 0;
}
