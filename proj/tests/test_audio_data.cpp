#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "audiocil/audio_data.hpp"
#include "audiocil/memory.hpp"
#include "support.hpp"

#include <complex>
#include <fstream>
#include <set>

using namespace audiocil;
namespace fs = std::filesystem;

namespace {

AudioClip tone(double hz, double seconds, double sr = 16000.0, double amp = 0.5) {
  AudioClip c;
  c.id = "tone";
  c.sample_rate = sr;
  c.samples.resize(static_cast<std::size_t>(std::lround(seconds * sr)));
  for (std::size_t n = 0; n < c.samples.size(); ++n) c.samples[n] = amp * std::sin(2 * M_PI * hz * static_cast<double>(n) / sr);
  return c;
}

// Reference log-mel: direct DFT per frame and an independently written HTK
// triangular filterbank.
std::vector<double> reference_logmel(const std::vector<double>& wave, const FeatureConfig& cfg, std::size_t& frames) {
  const std::size_t half = cfg.n_fft / 2;
  std::vector<double> padded(wave.size() + 2 * half, 0.0);
  for (std::size_t i = 0; i < wave.size(); ++i) padded[i + half] = wave[i];
  frames = wave.size() / cfg.hop + 1;
  const std::size_t bins = cfg.n_fft / 2 + 1;
  auto mel = [](double f) { return 2595.0 * std::log10(1.0 + f / 700.0); };
  auto inv = [](double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); };
  std::vector<double> edges;
  for (std::size_t i = 0; i < cfg.n_mels + 2; ++i) {
    edges.push_back(inv(mel(cfg.sample_rate / 2) * static_cast<double>(i) / static_cast<double>(cfg.n_mels + 1)));
  }
  std::vector<double> out(cfg.n_mels * frames);
  for (std::size_t t = 0; t < frames; ++t) {
    std::vector<double> power(bins);
    for (std::size_t k = 0; k < bins; ++k) {
      std::complex<double> acc = 0;
      for (std::size_t n = 0; n < cfg.n_fft; ++n) {
        const double w = 0.5 * (1 - std::cos(2 * M_PI * static_cast<double>(n) / static_cast<double>(cfg.n_fft)));
        const std::size_t idx = t * cfg.hop + n;
        const double x = idx < padded.size() ? padded[idx] : 0.0;
        acc += w * x * std::polar(1.0, -2 * M_PI * static_cast<double>(k * n) / static_cast<double>(cfg.n_fft));
      }
      power[k] = std::norm(acc);
    }
    for (std::size_t m = 0; m < cfg.n_mels; ++m) {
      double e = 0.0;
      for (std::size_t k = 0; k < bins; ++k) {
        const double f = static_cast<double>(k) * cfg.sample_rate / static_cast<double>(cfg.n_fft);
        double w = 0.0;
        if (f > edges[m] && f <= edges[m + 1]) w = (f - edges[m]) / (edges[m + 1] - edges[m]);
        else if (f > edges[m + 1] && f < edges[m + 2]) w = (edges[m + 2] - f) / (edges[m + 2] - edges[m + 1]);
        e += w * power[k];
      }
      out[m * frames + t] = std::log(std::max(e, cfg.floor_epsilon));
    }
  }
  return out;
}

void write_manifest(const fs::path& dir, std::size_t classes, std::size_t per_class) {
  std::ofstream m(dir / "manifest.csv");
  m << "id,path,label,split\n";
  fs::create_directories(dir / "audio");
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t k = 0; k < per_class; ++k) {
      const std::string id = "k" + std::to_string(c) + "_" + std::to_string(k);
      const auto clip = tone(300.0 + 50.0 * static_cast<double>(c), 0.1, 8000.0);
      write_wav(dir / "audio" / (id + ".wav"), clip.samples, 8000.0);
      m << id << ",audio/" << id << ".wav,\"label, " << c << "\"," << (k % 2 == 0 ? "train" : "test") << "\n";
    }
  }
}

}  // namespace

TEST_CASE("WAV round trip preserves samples to 16-bit precision") {
  const auto dir = testing::temp_dir("wav");
  const auto clip = tone(1000.0, 0.05, 22050.0);
  write_wav(dir / "x.wav", clip.samples, 22050.0);
  const auto back = read_wav(dir / "x.wav");
  CHECK(back.sample_rate == 22050.0);
  REQUIRE(back.samples.size() == clip.samples.size());
  for (std::size_t i = 0; i < clip.samples.size(); ++i) CHECK(std::abs(back.samples[i] - clip.samples[i]) < 1.0 / 32767);
}

TEST_CASE("corrupt WAV is reported with its path") {
  const auto dir = testing::temp_dir("badwav");
  std::ofstream(dir / "bad.wav") << "definitely not RIFF";
  try {
    read_wav(dir / "bad.wav");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kCorruptData);
    CHECK(std::string(e.what()).find("bad.wav") != std::string::npos);
  }
}

TEST_CASE("manifest loading selects the split and infers the class set") {
  const auto dir = testing::temp_dir("manifest");
  write_manifest(dir, 3, 4);
  const auto train = load_dataset("synthetic", dir / "manifest.csv", Split::kTrain);
  CHECK(train.size() == 6);
  CHECK(train.class_set().size() == 3);
  CHECK(train.class_set()[0] == "label, 0");
  const auto test = load_dataset("synthetic", dir / "manifest.csv", Split::kTest);
  std::set<std::string> train_ids, test_ids;
  for (const auto& it : train.items()) train_ids.insert(it.id);
  for (const auto& it : test.items()) CHECK(train_ids.count(it.id) == 0);
  const auto clip = train.load(train.items()[0]);
  CHECK(clip.sample_rate == 8000.0);
  CHECK(clip.label == "label, 0");
}

TEST_CASE("manifest of 100 classes x 2 rows loads as ls-100") {
  const auto dir = testing::temp_dir("ls100");
  write_manifest(dir, 100, 2);
  const auto ds = load_dataset("ls-100", dir / "manifest.csv", Split::kTrain);
  CHECK(ds.class_set().size() == 100);
}

TEST_CASE("ls-100 rejects a manifest without 100 classes") {
  const auto dir = testing::temp_dir("ls-few");
  write_manifest(dir, 3, 2);
  CHECK_THROWS_AS(load_dataset("ls-100", dir / "manifest.csv", Split::kTrain), Error);
}

TEST_CASE("unknown dataset name lists the registry") {
  try {
    load_dataset("ls-101", "nowhere.csv", Split::kTrain);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kUnknownRegistryKey);
    const std::string msg = e.what();
    for (const char* name : {"ls-100", "nsynth-100", "synthetic"}) CHECK(msg.find(name) != std::string::npos);
  }
}

TEST_CASE("missing audio file is named in the error") {
  const auto dir = testing::temp_dir("missing");
  std::ofstream(dir / "manifest.csv") << "id,path,label,split\na,audio/ghost.wav,x,train\n";
  try {
    load_dataset("synthetic", dir / "manifest.csv", Split::kTrain);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("ghost.wav") != std::string::npos);
  }
}

TEST_CASE("empty split is an error") {
  const auto dir = testing::temp_dir("emptysplit");
  write_manifest(dir, 2, 1);  // every row lands in train
  CHECK_THROWS_AS(load_dataset("synthetic", dir / "manifest.csv", Split::kTest), Error);
}

TEST_CASE("silence maps to log(floor_epsilon) everywhere") {
  AudioClip c;
  c.id = "silence";
  c.samples.assign(16000, 0.0);
  const FeatureConfig cfg;
  const auto f = extract_logmel(c, cfg);
  for (double v : f.values) CHECK(v == std::log(cfg.floor_epsilon));
}

TEST_CASE("one second at 16 kHz gives a 64 x 101 tensor") {
  const auto f = extract_logmel(tone(500, 1.0), FeatureConfig{});
  CHECK(f.n_mels == 64);
  CHECK(f.n_frames == 101);
  CHECK(f.values.size() == 64 * 101);
  CHECK(f.config_hash == FeatureConfig{}.hash());
}

TEST_CASE("log-mel matches an independent DFT implementation") {
  FeatureConfig cfg;
  cfg.n_fft = 64;
  cfg.hop = 32;
  cfg.n_mels = 12;
  cfg.sample_rate = 8000;
  cfg.clip_seconds = 0.05;
  Rng rng(3);
  AudioClip c;
  c.id = "noise";
  c.sample_rate = 8000;
  for (int i = 0; i < 400; ++i) c.samples.push_back(0.3 * rng.normal());
  const auto f = extract_logmel(c, cfg);
  std::size_t frames = 0;
  const auto ref = reference_logmel(c.samples, cfg, frames);
  REQUIRE(f.n_frames == frames);
  for (std::size_t i = 0; i < ref.size(); ++i) CHECK(f.values[i] == doctest::Approx(ref[i]).epsilon(1e-9));
}

TEST_CASE("440 Hz tone peaks in the mel bin whose center is nearest 440 Hz") {
  const FeatureConfig cfg;
  const auto centers = mel_center_frequencies(cfg);
  std::size_t nearest = 0;
  for (std::size_t m = 1; m < centers.size(); ++m) {
    if (std::abs(centers[m] - 440) < std::abs(centers[nearest] - 440)) nearest = m;
  }
  const auto f = extract_logmel(tone(440, 1.0), cfg);
  for (std::size_t t = 0; t < f.n_frames; ++t) {
    std::size_t best = 0;
    for (std::size_t m = 1; m < f.n_mels; ++m) {
      if (f.at(m, t) > f.at(best, t)) best = m;
    }
    CHECK(best == nearest);
  }
}

TEST_CASE("extraction errors") {
  AudioClip short_clip = tone(440, 0.01);
  CHECK_THROWS_AS(extract_logmel(short_clip, FeatureConfig{}), Error);
  AudioClip nan_clip = tone(440, 0.5);
  nan_clip.samples[10] = std::nan("");
  try {
    extract_logmel(nan_clip, FeatureConfig{});
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kCorruptData);
  }
}

TEST_CASE("features are finite and floored, resampled input gives the target frame count") {
  const auto f = extract_logmel(tone(700, 1.0, 44100.0), FeatureConfig{});
  CHECK(f.n_frames == 101);
  for (double v : f.values) {
    CHECK(std::isfinite(v));
    CHECK(v >= std::log(1e-10));
  }
}

TEST_CASE("synthetic generator: counts, labels, determinism, disjoint splits") {
  const auto a = generate_synthetic(10, 20, 5, Split::kTrain);
  CHECK(a.size() == 200);
  std::map<Label, int> counts;
  for (const auto& it : a.items()) ++counts[it.label];
  CHECK(counts.size() == 10);
  for (const auto& [l, n] : counts) CHECK(n == 20);
  const auto b = generate_synthetic(10, 20, 5, Split::kTrain);
  CHECK(a.items()[17].clip->samples == b.items()[17].clip->samples);
  const auto t = generate_synthetic(10, 20, 5, Split::kTest);
  CHECK(a.items()[0].id != t.items()[0].id);
  CHECK(a.items()[0].clip->samples != t.items()[0].clip->samples);
  CHECK_THROWS_AS(generate_synthetic(1, 5, 1, Split::kTrain), Error);
}

TEST_CASE("nearest-class-mean probe on synthetic log-mel features exceeds 90%") {
  testing::SyntheticFixture fx(10, 10, 10);
  auto flat = [](const FeatureTensor& f) { return Eigen::Map<const Vector>(f.values.data(), static_cast<Eigen::Index>(f.values.size())); };
  std::map<Label, Vector> sums;
  std::map<Label, int> counts;
  for (const auto& it : fx.train.items()) {
    const Vector v = flat(fx.train_features.get(it.id));
    if (!sums.count(it.label)) sums[it.label] = Vector::Zero(v.size());
    sums[it.label] += v;
    ++counts[it.label];
  }
  int hits = 0;
  for (const auto& it : fx.test.items()) {
    const Vector v = flat(fx.test_features.get(it.id));
    Label best;
    double best_d = 1e300;
    for (const auto& [label, s] : sums) {
      const double d = (v - s / counts[label]).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = label;
      }
    }
    hits += best == it.label;
  }
  CHECK(static_cast<double>(hits) / static_cast<double>(fx.test.size()) >= 0.9);
}

TEST_CASE("feature cache round trip returns identical tensors") {
  const auto dir = testing::temp_dir("cache");
  const auto ds = generate_synthetic(2, 2, 1, Split::kTrain, 16000.0, 0.5);
  FeatureStore first(ds, testing::small_features(), dir);
  const auto a = first.get(ds.items()[1].id);
  FeatureStore second(ds, testing::small_features(), dir);
  const auto b = second.get(ds.items()[1].id);
  CHECK(a.values == b.values);
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir)) files += e.is_regular_file();
  CHECK(files >= 1);
}

TEST_CASE("feature extraction is deterministic") {
  const auto ds = generate_synthetic(2, 1, 9, Split::kTrain);
  const auto a = extract_logmel(*ds.items()[0].clip, FeatureConfig{});
  const auto b = extract_logmel(*ds.items()[0].clip, FeatureConfig{});
  CHECK(a.values == b.values);
}
