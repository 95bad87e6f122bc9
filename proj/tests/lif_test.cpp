#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "spikegest/lif.hpp"
#include "spikegest/model.hpp"

using namespace spikegest;

namespace {

LifParams default_params() { return LifParams::from_decay(1.0, 0.0, 0.9); }

}  // namespace

TEST_CASE("lif params keep the decay identity") {
  LifParams p = default_params();
  CHECK(std::fabs(p.decay - std::exp(-p.dt_ms / p.tau_ms)) < 1e-12);
  CHECK_THROWS_AS(LifParams::from_decay(0.0, 1.0, 0.9), std::invalid_argument);  // u_th <= v_reset
  LifParams bad = p;
  bad.tau_ms *= 2.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("lif_step follows the iterative update") {
  LifParams p = default_params();

  // Hand evaluation: suprathreshold drive fires and resets.
  {
    LifState st(1, 1);
    Mat drive(1, 1, 1.5);
    SpikePlane s = lif_step(st, drive, p);
    CHECK(s.at(0, 0) == 1);
    CHECK(st.membrane.at(0, 0) == 1.5);
    CHECK(st.temporal.at(0, 0) == 0.0);
  }
  // Subthreshold drive decays: T = 0.9 * 0.5.
  {
    LifState st(1, 1);
    Mat drive(1, 1, 0.5);
    SpikePlane s = lif_step(st, drive, p);
    CHECK(s.at(0, 0) == 0);
    CHECK(st.temporal.at(0, 0) == Catch::Approx(0.45).epsilon(1e-12));
  }
  // Rest is a fixed point.
  {
    LifState st(1, 1);
    Mat drive(1, 1, 0.0);
    SpikePlane s = lif_step(st, drive, p);
    CHECK(s.at(0, 0) == 0);
    CHECK(st.temporal.at(0, 0) == 0.0);
  }
}

TEST_CASE("lif_step rejects bad inputs") {
  LifParams p = default_params();
  LifState st(2, 3);
  CHECK_THROWS_AS(lif_step(st, Mat(3, 2), p), std::invalid_argument);
  Mat bad(2, 3);
  bad.at(0, 0) = std::nan("");
  CHECK_THROWS_AS(lif_step(st, bad, p), std::invalid_argument);
}

TEST_CASE("subthreshold charge decays geometrically") {
  LifParams p = default_params();
  LifState st(1, 1);
  Mat charge(1, 1, 0.8);
  lif_step(st, charge, p);
  double expected = 0.9 * 0.8;
  Mat zero(1, 1, 0.0);
  for (int t = 1; t <= 40; ++t) {
    lif_step(st, zero, p);
    expected *= p.decay;
    CHECK(st.temporal.at(0, 0) == Catch::Approx(expected).margin(1e-9));
  }
}

TEST_CASE("firing resets the temporal state to v_reset exactly") {
  LifParams p = LifParams::from_decay(1.0, 0.25, 0.8);
  Rng rng(5);
  LifState st(4, 4);
  for (int t = 0; t < 50; ++t) {
    Mat drive(4, 4);
    for (double& d : drive.v) d = rng.uniform(-0.5, 1.5);
    SpikePlane s = lif_step(st, drive, p);
    for (size_t i = 0; i < s.v.size(); ++i)
      if (s.v[i]) CHECK(st.temporal.v[i] == 0.25);
  }
}

TEST_CASE("single-neuron spiking is monotone in the drive") {
  LifParams p = default_params();
  Rng rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    double base = rng.uniform(-1.0, 2.0);
    double larger = base + rng.uniform(0.0, 1.0);
    LifState a(1, 1), b(1, 1);
    double t_prev = rng.uniform(0.0, 0.9);
    a.temporal.at(0, 0) = t_prev;
    b.temporal.at(0, 0) = t_prev;
    Mat da(1, 1, base), db(1, 1, larger);
    int sa = lif_step(a, da, p).at(0, 0);
    int sb = lif_step(b, db, p).at(0, 0);
    CHECK(sb >= sa);
  }
}

TEST_CASE("conv_lif_forward rest propagation and shape contract") {
  Conv1d conv(32, 8, 3);
  LifParams p = default_params();
  Tensor3 zeros(16, 8, 200);
  SpikeTrain out = conv_lif_forward(zeros, conv, p);
  CHECK(out.t == 16);
  CHECK(out.c == 32);
  CHECK(out.l == 200);
  CHECK(out.nonzeros.empty());
}

TEST_CASE("conv_lif_forward matches a hand lif_step chain") {
  // Identity kernel (k=1) with weight 2.0: a unit input at t=0 crosses the
  // threshold immediately and nowhere else.
  Conv1d conv(1, 1, 1);
  conv.wt(0, 0, 0) = 2.0;
  LifParams p = default_params();
  Tensor3 input(4, 1, 5);
  input.at(0, 0, 2) = 1.0;
  SpikeTrain out = conv_lif_forward(input, conv, p);
  REQUIRE(out.nonzeros.size() == 1);
  CHECK(out.at(0, 0, 2) == 1);
}

TEST_CASE("sparse and dense conv_lif paths agree") {
  Rng rng(31);
  Conv1d conv(6, 4, 3);
  for (double& w : conv.w) w = rng.uniform(-0.8, 0.8);
  for (double& b : conv.b) b = rng.uniform(-0.2, 0.2);
  LifParams p = default_params();

  SpikeTrain spikes(10, 4, 16);
  for (int t = 0; t < 10; ++t)
    for (int c = 0; c < 4; ++c)
      for (int l = 0; l < 16; ++l)
        if (rng.uniform() < 0.2) spikes.set(t, c, l);

  Tensor3 dense(10, 4, 16);
  for (size_t i = 0; i < spikes.bits.size(); ++i) dense.v[i] = spikes.bits[i];

  SpikeTrain a = conv_lif_forward(spikes, conv, p);
  SpikeTrain b = conv_lif_forward(dense, conv, p);
  CHECK(a.bits == b.bits);
}

TEST_CASE("binary purity of produced spike trains") {
  Rng rng(77);
  Conv1d conv(5, 3, 3);
  for (double& w : conv.w) w = rng.uniform(-1.0, 1.0);
  LifParams p = default_params();
  Tensor3 input(12, 3, 20);
  for (double& x : input.v) x = rng.uniform(0.0, 1.5);
  SpikeTrain out = conv_lif_forward(input, conv, p);
  for (uint8_t b : out.bits) CHECK((b == 0 || b == 1));
  CHECK(out.density() >= 0.0);
  CHECK(out.density() <= 1.0);
}

TEST_CASE("classifier_forward integrates without firing") {
  // Zero weights: trace stays zero.
  {
    Tensor3 feats(5, 2, 3);
    for (double& f : feats.v) f = 1.0;
    Mat w(6, 4);
    Mat trace = classifier_forward(feats, w, 0.9);
    for (double v : trace.v) CHECK(v == 0.0);
  }
  // Constant unit drive, one class: geometric partial sums 1, 1.9, 2.71, ...
  {
    Tensor3 feats(3, 1, 1);
    for (double& f : feats.v) f = 1.0;
    Mat w(1, 1);
    w.at(0, 0) = 1.0;
    Mat trace = classifier_forward(feats, w, 0.9);
    CHECK(trace.at(0, 0) == Catch::Approx(1.0));
    CHECK(trace.at(1, 0) == Catch::Approx(1.9));
    CHECK(trace.at(2, 0) == Catch::Approx(2.71));
  }
  Tensor3 feats(2, 2, 2);
  CHECK_THROWS_AS(classifier_forward(feats, Mat(3, 2), 0.9), std::invalid_argument);
}

TEST_CASE("classifier trace stays finite for bounded weights") {
  Rng rng(3);
  Tensor3 feats(1000, 2, 4);
  for (double& f : feats.v) f = rng.uniform() < 0.3 ? 1.0 : 0.0;
  Mat w(8, 3);
  for (double& x : w.v) x = rng.uniform(-2.0, 2.0);
  Mat trace = classifier_forward(feats, w, 0.95);
  CHECK(trace.finite());
}

TEST_CASE("predict takes the argmax of the time-summed trace") {
  Mat trace(3, 4);
  trace.at(0, 3) = 5.0;
  trace.at(2, 3) = 1.0;
  trace.at(1, 1) = 4.0;
  CHECK(predict(trace) == 3);

  Mat zeros(4, 3);
  CHECK(predict(zeros) == 0);

  Mat tie(1, 2);
  tie.at(0, 0) = 5.0;
  tie.at(0, 1) = 5.0;
  CHECK(predict(tie) == 0);
}

TEST_CASE("predict is invariant under strictly increasing transforms") {
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    Mat trace(1, 6);
    for (double& v : trace.v) v = rng.uniform(-4.0, 4.0);
    int base = predict(trace);
    Mat warped(1, 6);
    for (int j = 0; j < 6; ++j) warped.at(0, j) = std::exp(0.5 * trace.at(0, j)) + 2.0;
    CHECK(predict(warped) == base);
  }
}

TEST_CASE("jasnn_forward propagates rest and keeps the shape contract") {
  JasnnModel m = make_jasnn(4, 12, 6, 3, 5, 2024);
  GestureSample zero;
  zero.seq_len = 12;
  zero.channels = 4;
  zero.features.assign(48, 0.0f);
  zero.label = 0;

  // Zero input with zero temporal state: spikes depend only on the bias.
  for (Conv1d* c : m.conv_layers()) std::fill(c->b.begin(), c->b.end(), 0.0);
  ForwardResult r = jasnn_forward(m, zero);
  CHECK(r.trace.rows == 12);
  CHECK(r.trace.cols == 5);
  for (double v : r.trace.v) CHECK(v == 0.0);
  CHECK(r.prediction == 0);
  CHECK(r.enc_s.nonzeros.empty());
}

TEST_CASE("jasnn_forward is deterministic") {
  JasnnModel m = make_jasnn(3, 10, 4, 3, 4, 99);
  SynthSpec spec;
  spec.num_classes = 4;
  spec.num_domains = 1;
  spec.samples_per_class_per_domain = 1;
  spec.seq_len = 10;
  spec.channel_count = 3;
  Dataset ds = synth_generate(spec);
  ForwardResult a = jasnn_forward(m, ds.samples[0]);
  ForwardResult b = jasnn_forward(m, ds.samples[0]);
  CHECK(a.trace.v == b.trace.v);
  CHECK(a.prediction == b.prediction);
  CHECK(a.f2_s.bits == b.f2_s.bits);
}

TEST_CASE("model checkpoints round-trip") {
  JasnnModel m = make_jasnn(8, 20, 4, 3, 10, 31337);
  m.attention = AttentionKind::sja_channelwise;
  auto dir = std::filesystem::temp_directory_path() / "spikegest_lif_test";
  std::filesystem::create_directories(dir);
  auto path = (dir / "model.spkm").string();
  save_model(m, path);
  JasnnModel back = load_model(path);
  CHECK(back.n == m.n);
  CHECK(back.seq_len == m.seq_len);
  CHECK(back.num_classes == m.num_classes);
  CHECK(back.attention == m.attention);
  // float32 storage: loaded weights equal the truncated originals
  for (size_t i = 0; i < m.enc.w.size(); ++i)
    CHECK(back.enc.w[i] == static_cast<double>(static_cast<float>(m.enc.w[i])));
  // a second save/load cycle is exact
  save_model(back, path);
  JasnnModel again = load_model(path);
  CHECK(again.cls_w.v == back.cls_w.v);
}
