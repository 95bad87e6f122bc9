#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "spikegest/signal.hpp"

using namespace spikegest;

namespace {

std::filesystem::path temp_file(const char* name) {
  auto dir = std::filesystem::temp_directory_path() / "spikegest_signal_test";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("rms matches direct evaluation") {
  // Oracle: sqrt((1/N) sum x^2) computed by hand for the fixed cases.
  std::vector<double> w{3.0, 4.0};
  CHECK(rms(w) == Catch::Approx(std::sqrt(12.5)).epsilon(1e-12));
  CHECK(rms(w) == Catch::Approx(3.535534).margin(1e-6));

  std::vector<double> zeros{0.0, 0.0, 0.0};
  CHECK(rms(zeros) == 0.0);

  for (double c : {-2.5, 0.75, 7.0}) {
    std::vector<double> constant(5, c);
    CHECK(rms(constant) == Catch::Approx(std::fabs(c)).epsilon(1e-12));
  }
}

TEST_CASE("rms rejects empty and non-finite windows") {
  std::vector<double> empty;
  CHECK_THROWS_AS(rms(empty), std::invalid_argument);
  std::vector<double> bad{1.0, std::nan("")};
  CHECK_THROWS_AS(rms(bad), std::invalid_argument);
}

TEST_CASE("rms is invariant under sign flip and permutation") {
  Rng rng(123);
  for (int trial = 0; trial < 50; ++trial) {
    size_t n = 1 + rng.uniform_int(20);
    std::vector<double> w(n);
    for (double& x : w) x = rng.uniform(-3.0, 3.0);
    double base = rms(w);

    std::vector<double> flipped = w;
    for (double& x : flipped) x = -x;
    CHECK(rms(flipped) == Catch::Approx(base).epsilon(1e-12));

    std::vector<double> perm = w;
    rng.shuffle(perm);
    CHECK(rms(perm) == Catch::Approx(base).margin(1e-12));
  }
}

TEST_CASE("sliding_rms output length follows the count formula") {
  RawRecording rec;
  rec.samples = Mat(400, 2);
  for (int i = 0; i < 400; ++i)
    for (int c = 0; c < 2; ++c) rec.samples.at(i, c) = std::sin(0.01 * i + c);
  Mat out = sliding_rms(rec, 200, 1);
  // Oracle: floor((num_samples - window)/step) + 1.
  CHECK(out.rows == (400 - 200) / 1 + 1);
  CHECK(out.rows == 201);
  CHECK(out.cols == 2);

  Mat strided = sliding_rms(rec, 200, 7);
  CHECK(strided.rows == (400 - 200) / 7 + 1);
}

TEST_CASE("sliding_rms of a constant recording is constant") {
  RawRecording rec;
  rec.samples = Mat(300, 3, 1.0);
  Mat out = sliding_rms(rec, 50, 5);
  for (double v : out.v) CHECK(v == Catch::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("sliding_rms rejects windows longer than the recording") {
  RawRecording rec;
  rec.samples = Mat(199, 1, 0.5);
  CHECK_THROWS_AS(sliding_rms(rec, 200, 1), std::invalid_argument);
}

TEST_CASE("segment hop arithmetic") {
  Mat feats(300, 4);
  for (int r = 0; r < 300; ++r)
    for (int c = 0; c < 4; ++c) feats.at(r, c) = r * 10.0 + c;

  auto one = segment(Mat(200, 4, 1.0), 200, 0.5);
  CHECK(one.size() == 1);

  auto blocks = segment(feats, 200, 0.5);
  REQUIRE(blocks.size() == 2);
  CHECK(blocks[0].at(0, 0) == 0.0);
  CHECK(blocks[1].at(0, 0) == 100 * 10.0);  // second window starts at row 100
  for (const Mat& b : blocks) CHECK(b.rows == 200);

  CHECK_THROWS_AS(segment(Mat(199, 4), 200, 0.5), std::invalid_argument);
}

TEST_CASE("segment starts are strictly increasing and tile with the hop") {
  Mat feats(512, 1);
  for (int r = 0; r < 512; ++r) feats.at(r, 0) = r;
  for (double overlap : {0.0, 0.25, 0.5, 0.9}) {
    auto blocks = segment(feats, 64, overlap);
    int hop = std::max(1, static_cast<int>(64 * (1.0 - overlap)));
    REQUIRE(!blocks.empty());
    for (size_t i = 0; i < blocks.size(); ++i)
      CHECK(blocks[i].at(0, 0) == static_cast<double>(i * hop));
  }
}

TEST_CASE("synth_generate produces the requested counts") {
  SynthSpec spec;
  spec.num_classes = 10;
  spec.num_domains = 3;
  spec.samples_per_class_per_domain = 20;
  spec.seq_len = 40;
  spec.channel_count = 8;
  Dataset ds = synth_generate(spec);
  REQUIRE(ds.samples.size() == 600);
  std::vector<int> per_class(10, 0);
  for (const GestureSample& g : ds.samples) {
    ++per_class[g.label];
    CHECK(g.domain_id < 3);
    for (float f : g.features) {
      CHECK(f >= 0.0f);
      CHECK(std::isfinite(f));
    }
  }
  for (int c = 0; c < 10; ++c) CHECK(per_class[c] == 60);
}

TEST_CASE("synth_generate is deterministic in the seed") {
  SynthSpec spec;
  spec.num_classes = 3;
  spec.num_domains = 2;
  spec.samples_per_class_per_domain = 4;
  spec.seq_len = 16;
  spec.seed = 777;
  Dataset a = synth_generate(spec);
  Dataset b = synth_generate(spec);
  REQUIRE(a.samples.size() == b.samples.size());
  for (size_t i = 0; i < a.samples.size(); ++i) {
    CHECK(a.samples[i].label == b.samples[i].label);
    CHECK(a.samples[i].features == b.samples[i].features);
  }
}

TEST_CASE("zero mixing strength leaves domains identically distributed") {
  SynthSpec spec;
  spec.num_classes = 2;
  spec.num_domains = 2;
  spec.samples_per_class_per_domain = 30;
  spec.seq_len = 24;
  spec.domain_mixing_strength = 0.0;
  Dataset ds = synth_generate(spec);
  // Same class, same within-domain sample index: only the noise stream
  // differs, so per-class/channel means must agree closely.
  for (int cls = 0; cls < 2; ++cls) {
    for (int ch = 0; ch < spec.channel_count; ++ch) {
      double mean[2] = {0.0, 0.0};
      int count[2] = {0, 0};
      for (const GestureSample& g : ds.samples) {
        if (g.label != cls) continue;
        for (int p = 0; p < g.seq_len; ++p) mean[g.domain_id] += g.at(p, ch);
        ++count[g.domain_id];
      }
      mean[0] /= count[0] * spec.seq_len;
      mean[1] /= count[1] * spec.seq_len;
      CHECK(std::fabs(mean[0] - mean[1]) < 0.05);
    }
  }
}

TEST_CASE("positive mixing strength shifts per-channel means") {
  SynthSpec spec;
  spec.num_classes = 4;
  spec.num_domains = 2;
  spec.samples_per_class_per_domain = 25;
  spec.seq_len = 32;
  spec.domain_mixing_strength = 0.5;
  spec.noise_std = 0.05;
  Dataset ds = synth_generate(spec);
  double max_shift = 0.0;
  for (int cls = 0; cls < spec.num_classes; ++cls) {
    for (int ch = 0; ch < spec.channel_count; ++ch) {
      for (int p = 0; p < spec.seq_len; ++p) {
        double mean[2] = {0.0, 0.0};
        int count[2] = {0, 0};
        for (const GestureSample& g : ds.samples) {
          if (g.label != cls) continue;
          mean[g.domain_id] += g.at(p, ch);
          ++count[g.domain_id];
        }
        max_shift = std::max(max_shift, std::fabs(mean[0] / count[0] - mean[1] / count[1]));
      }
    }
  }
  CHECK(max_shift > 0.1);
}

TEST_CASE("dataset round-trip is lossless") {
  SynthSpec spec;
  spec.num_classes = 10;
  spec.num_domains = 3;
  spec.samples_per_class_per_domain = 20;
  spec.seq_len = 12;
  Dataset ds = synth_generate(spec);
  auto path = temp_file("roundtrip.spkg");
  save_dataset(ds, path.string());
  Dataset back = load_dataset(path.string());
  REQUIRE(back.samples.size() == ds.samples.size());
  CHECK(back.num_classes == ds.num_classes);
  CHECK(back.seq_len == ds.seq_len);
  CHECK(back.channels == ds.channels);
  for (size_t i = 0; i < ds.samples.size(); ++i) {
    CHECK(back.samples[i].features == ds.samples[i].features);
    CHECK(back.samples[i].label == ds.samples[i].label);
    CHECK(back.samples[i].domain_id == ds.samples[i].domain_id);
  }
}

TEST_CASE("load rejects truncated files") {
  SynthSpec spec;
  spec.num_classes = 2;
  spec.num_domains = 1;
  spec.samples_per_class_per_domain = 3;
  spec.seq_len = 8;
  Dataset ds = synth_generate(spec);
  auto path = temp_file("truncated.spkg");
  save_dataset(ds, path.string());
  auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size - 7);
  CHECK_THROWS_AS(load_dataset(path.string()), io_error);
}

TEST_CASE("load rejects out-of-range labels") {
  Dataset ds;
  ds.num_classes = 2;
  ds.seq_len = 4;
  ds.channels = 1;
  GestureSample g;
  g.seq_len = 4;
  g.channels = 1;
  g.features = {0.1f, 0.2f, 0.3f, 0.4f};
  g.label = 5;  // out of range on purpose; save does not validate
  ds.samples.push_back(g);
  auto path = temp_file("badlabel.spkg");
  save_dataset(ds, path.string());
  CHECK_THROWS_WITH(load_dataset(path.string()), Catch::Matchers::ContainsSubstring("label"));
}

TEST_CASE("load rejects wrong magic") {
  auto path = temp_file("notspkg.bin");
  std::ofstream os(path, std::ios::binary);
  os << "JUNKJUNKJUNK";
  os.close();
  CHECK_THROWS_WITH(load_dataset(path.string()), Catch::Matchers::ContainsSubstring("magic"));
}

TEST_CASE("csv export writes one row per sample") {
  SynthSpec spec;
  spec.num_classes = 2;
  spec.num_domains = 1;
  spec.samples_per_class_per_domain = 5;
  spec.seq_len = 6;
  Dataset ds = synth_generate(spec);
  auto path = temp_file("export.csv");
  export_dataset_csv(ds, path.string());
  std::ifstream is(path);
  std::string line;
  int rows = 0;
  while (std::getline(is, line)) ++rows;
  CHECK(rows == static_cast<int>(ds.samples.size()));
}
