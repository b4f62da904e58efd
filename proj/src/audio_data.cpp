#include "audiocil/audio_data.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <complex>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

namespace audiocil {

namespace fs = std::filesystem;

std::string to_string(Split split) { return split == Split::kTrain ? "train" : "test"; }

Split parse_split(const std::string& text) {
  if (text == "train") return Split::kTrain;
  if (text == "test") return Split::kTest;
  fail(ErrorCode::kInvalidArgument, "unknown split '" + text + "' (expected train or test)");
}

Dataset::Dataset(std::string name, Split split, std::vector<DatasetItem> items)
    : name_(std::move(name)), split_(split), items_(std::move(items)) {
  std::set<Label> seen;
  for (std::size_t i = 0; i < items_.size(); ++i) {
    const auto& it = items_[i];
    if (!by_id_.emplace(it.id, i).second) {
      fail(ErrorCode::kDuplicateLabel, "duplicate clip id '" + it.id + "' in dataset " + name_);
    }
    if (seen.insert(it.label).second) class_set_.push_back(it.label);
  }
}

const DatasetItem& Dataset::item(const std::string& id) const {
  auto found = by_id_.find(id);
  if (found == by_id_.end()) fail(ErrorCode::kOutOfRange, "no clip with id '" + id + "' in dataset " + name_);
  return items_[found->second];
}

AudioClip Dataset::load(const DatasetItem& item) const {
  if (item.clip) return *item.clip;
  AudioClip clip = read_wav(item.path);
  clip.id = item.id;
  clip.label = item.label;
  return clip;
}

const std::vector<DatasetInfo>& dataset_registry() {
  static const std::vector<DatasetInfo> registry = {
      {"ls-100", "100-class LibriSpeech speaker subset, read from a CSV manifest", 100},
      {"nsynth-100", "100-class NSynth instrument subset, read from a CSV manifest", 100},
      {"synthetic", "seeded harmonic-tone corpus generated in memory (or any-size manifest)", std::nullopt},
  };
  return registry;
}

namespace {

const DatasetInfo& lookup_dataset(const std::string& name) {
  for (const auto& info : dataset_registry()) {
    if (info.key == name) return info;
  }
  std::string known;
  for (const auto& info : dataset_registry()) known += (known.empty() ? "" : ", ") + info.key;
  fail(ErrorCode::kUnknownRegistryKey, "unknown dataset '" + name + "'; registered datasets: {" + known + "}");
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

std::string trim(std::string s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\t')) s.pop_back();
  std::size_t start = 0;
  while (start < s.size() && (s[start] == ' ' || s[start] == '\t')) ++start;
  return s.substr(start);
}

struct WavFormat {
  int channels = 0;
  double sample_rate = 0;
  int bits = 0;
  std::size_t data_offset = 0;
  std::size_t data_bytes = 0;
};

std::uint32_t le32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
std::uint16_t le16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

WavFormat parse_wav_header(const std::vector<unsigned char>& bytes, const fs::path& path) {
  auto corrupt = [&](const std::string& why) -> void {
    fail(ErrorCode::kCorruptData, "corrupt WAV file " + path.string() + ": " + why);
  };
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    corrupt("missing RIFF/WAVE header");
  }
  WavFormat fmt;
  bool have_fmt = false;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::uint32_t size = le32(bytes.data() + pos + 4);
    const std::size_t body = pos + 8;
    if (std::memcmp(bytes.data() + pos, "fmt ", 4) == 0) {
      if (size < 16 || body + 16 > bytes.size()) corrupt("truncated fmt chunk");
      const std::uint16_t tag = le16(bytes.data() + body);
      fmt.channels = le16(bytes.data() + body + 2);
      fmt.sample_rate = le32(bytes.data() + body + 4);
      fmt.bits = le16(bytes.data() + body + 14);
      if (tag != 1 && tag != 0xFFFE) corrupt("not PCM (format tag " + std::to_string(tag) + ")");
      have_fmt = true;
    } else if (std::memcmp(bytes.data() + pos, "data", 4) == 0) {
      if (!have_fmt) corrupt("data chunk before fmt chunk");
      fmt.data_offset = body;
      fmt.data_bytes = std::min<std::size_t>(size, bytes.size() - body);
      if (fmt.bits != 16) corrupt("expected 16-bit samples, found " + std::to_string(fmt.bits));
      if (fmt.channels <= 0 || fmt.sample_rate <= 0) corrupt("invalid channel count or sample rate");
      if (fmt.data_bytes < static_cast<std::size_t>(2 * fmt.channels)) corrupt("empty data chunk");
      return fmt;
    }
    pos = body + size + (size & 1u);
  }
  corrupt("no data chunk");
  return fmt;
}

std::vector<unsigned char> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open audio file " + path.string());
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

AudioClip read_wav(const fs::path& path) {
  const auto bytes = read_file(path);
  const WavFormat fmt = parse_wav_header(bytes, path);
  const std::size_t frames = fmt.data_bytes / (2 * static_cast<std::size_t>(fmt.channels));
  AudioClip clip;
  clip.sample_rate = fmt.sample_rate;
  clip.samples.resize(frames);
  const unsigned char* p = bytes.data() + fmt.data_offset;
  for (std::size_t f = 0; f < frames; ++f) {
    double acc = 0.0;
    for (int c = 0; c < fmt.channels; ++c) {
      const auto v = static_cast<std::int16_t>(le16(p));
      acc += v / 32768.0;
      p += 2;
    }
    clip.samples[f] = acc / fmt.channels;
  }
  return clip;
}

void write_wav(const fs::path& path, const std::vector<double>& samples, double sample_rate) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  auto put32 = [&](std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
  };
  auto put16 = [&](std::uint16_t v) {
    const unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
    out.write(reinterpret_cast<const char*>(b), 2);
  };
  const auto rate = static_cast<std::uint32_t>(std::lround(sample_rate));
  const auto data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
  out.write("RIFF", 4);
  put32(36 + data_bytes);
  out.write("WAVEfmt ", 8);
  put32(16);
  put16(1);
  put16(1);
  put32(rate);
  put32(rate * 2);
  put16(2);
  put16(16);
  out.write("data", 4);
  put32(data_bytes);
  for (double s : samples) {
    const double clamped = std::clamp(s, -1.0, 32767.0 / 32768.0);
    put16(static_cast<std::uint16_t>(static_cast<std::int16_t>(std::lround(clamped * 32768.0))));
  }
}

Dataset load_dataset(const std::string& name, const fs::path& manifest_path, Split split) {
  const DatasetInfo& info = lookup_dataset(name);
  std::ifstream in(manifest_path);
  if (!in) fail(ErrorCode::kIo, "cannot open manifest " + manifest_path.string());
  std::string line;
  if (!std::getline(in, line)) fail(ErrorCode::kCorruptData, "empty manifest " + manifest_path.string());
  const auto header = split_csv_line(trim(line));
  const std::vector<std::string> expected = {"id", "path", "label", "split"};
  if (header.size() != expected.size() || !std::equal(header.begin(), header.end(), expected.begin(),
                                                      [](const std::string& a, const std::string& b) { return trim(a) == b; })) {
    fail(ErrorCode::kCorruptData, "manifest " + manifest_path.string() + " must start with header id,path,label,split");
  }
  const fs::path base = manifest_path.parent_path();
  std::vector<DatasetItem> items;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    line = trim(line);
    if (line.empty()) continue;
    const auto cols = split_csv_line(line);
    if (cols.size() != 4) {
      fail(ErrorCode::kCorruptData,
           "manifest " + manifest_path.string() + " row " + std::to_string(row) + ": expected 4 columns");
    }
    if (parse_split(trim(cols[3])) != split) continue;
    DatasetItem item;
    item.id = trim(cols[0]);
    item.path = base / trim(cols[1]);
    item.label = trim(cols[2]);
    if (item.id.empty() || item.label.empty()) {
      fail(ErrorCode::kCorruptData,
           "manifest " + manifest_path.string() + " row " + std::to_string(row) + ": empty id or label");
    }
    if (!fs::exists(item.path)) fail(ErrorCode::kIo, "audio file not found: " + item.path.string());
    {
      std::ifstream probe(item.path, std::ios::binary);
      std::vector<unsigned char> head(4096);
      probe.read(reinterpret_cast<char*>(head.data()), static_cast<std::streamsize>(head.size()));
      head.resize(static_cast<std::size_t>(probe.gcount()));
      // Header-only probe: the data chunk may extend past the bytes read.
      if (head.size() < 44) fail(ErrorCode::kCorruptData, "corrupt WAV file " + item.path.string() + ": too short");
      parse_wav_header(head, item.path);
    }
    items.push_back(std::move(item));
  }
  if (items.empty()) {
    fail(ErrorCode::kInsufficientData,
         "manifest " + manifest_path.string() + " has no rows for split " + to_string(split));
  }
  Dataset ds(name, split, std::move(items));
  if (info.expected_classes && ds.class_set().size() != *info.expected_classes) {
    fail(ErrorCode::kCorruptData, "dataset " + name + " expects " + std::to_string(*info.expected_classes) +
                                      " classes but manifest has " + std::to_string(ds.class_set().size()));
  }
  return ds;
}

Dataset generate_synthetic(std::size_t num_classes, std::size_t per_class, std::uint64_t seed, Split split,
                           double sample_rate, double seconds) {
  if (num_classes < 2) fail(ErrorCode::kInvalidArgument, "synthetic dataset needs at least 2 classes");
  if (per_class == 0) fail(ErrorCode::kInvalidArgument, "synthetic dataset needs at least 1 clip per class");
  const auto length = static_cast<std::size_t>(std::lround(sample_rate * seconds));
  const std::string split_name = to_string(split);
  std::vector<DatasetItem> items;
  items.reserve(num_classes * per_class);
  for (std::size_t c = 0; c < num_classes; ++c) {
    const double f0 = 200.0 + 100.0 * static_cast<double>(c);
    for (std::size_t k = 0; k < per_class; ++k) {
      char id[64];
      std::snprintf(id, sizeof id, "syn-%s-c%zu-%04zu", split_name.c_str(), c, k);
      Rng rng(derive_seed(seed, std::string("synthetic/") + id));
      auto clip = std::make_shared<AudioClip>();
      clip->id = id;
      clip->label = "c" + std::to_string(c);
      clip->sample_rate = sample_rate;
      clip->samples.resize(length);
      const double amp[3] = {0.5, 0.25, 0.125};
      double phase[3];
      for (double& p : phase) p = rng.uniform(0.0, 2.0 * M_PI);
      for (std::size_t n = 0; n < length; ++n) {
        const double t = static_cast<double>(n) / sample_rate;
        double v = 0.0;
        for (int h = 0; h < 3; ++h) v += amp[h] * std::sin(2.0 * M_PI * f0 * (h + 1) * t + phase[h]);
        v += 0.05 * rng.normal();
        clip->samples[n] = std::clamp(v, -1.0, 1.0);
      }
      items.push_back({clip->id, clip->label, {}, std::move(clip)});
    }
  }
  return Dataset("synthetic", split, std::move(items));
}

std::string FeatureConfig::hash() const {
  char buf[256];
  std::snprintf(buf, sizeof buf, "logmel|%.17g|%zu|%zu|%zu|%.17g|%.17g", sample_rate, n_fft, hop, n_mels,
                floor_epsilon, clip_seconds);
  return fnv1a_hex(buf);
}

void FeatureConfig::validate() const {
  if (!(sample_rate > 0) || n_fft == 0 || hop == 0 || n_mels == 0 || !(floor_epsilon > 0) || !(clip_seconds > 0)) {
    fail(ErrorCode::kInvalidArgument, "feature config values must be positive");
  }
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

namespace {
std::vector<double> mel_points_hz(const FeatureConfig& cfg) {
  const double top = hz_to_mel(cfg.sample_rate / 2.0);
  std::vector<double> pts(cfg.n_mels + 2);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    pts[i] = mel_to_hz(top * static_cast<double>(i) / static_cast<double>(cfg.n_mels + 1));
  }
  return pts;
}
}  // namespace

std::vector<double> mel_center_frequencies(const FeatureConfig& cfg) {
  auto pts = mel_points_hz(cfg);
  return {pts.begin() + 1, pts.end() - 1};
}

RowMatrix mel_filterbank(const FeatureConfig& cfg) {
  const std::size_t n_freqs = cfg.n_fft / 2 + 1;
  const auto pts = mel_points_hz(cfg);
  RowMatrix fb = RowMatrix::Zero(static_cast<Eigen::Index>(cfg.n_mels), static_cast<Eigen::Index>(n_freqs));
  for (std::size_t k = 0; k < n_freqs; ++k) {
    const double f = (cfg.sample_rate / 2.0) * static_cast<double>(k) / static_cast<double>(n_freqs - 1);
    for (std::size_t m = 0; m < cfg.n_mels; ++m) {
      const double down = (f - pts[m]) / (pts[m + 1] - pts[m]);
      const double up = (pts[m + 2] - f) / (pts[m + 2] - pts[m + 1]);
      fb(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k)) = std::max(0.0, std::min(down, up));
    }
  }
  return fb;
}

std::vector<double> resample_linear(const std::vector<double>& samples, double from_rate, double to_rate) {
  if (from_rate == to_rate || samples.empty()) return samples;
  const auto out_len = static_cast<std::size_t>(
      std::max<long>(1, std::lround(static_cast<double>(samples.size()) * to_rate / from_rate)));
  std::vector<double> out(out_len);
  const double step = from_rate / to_rate;
  for (std::size_t i = 0; i < out_len; ++i) {
    const double pos = static_cast<double>(i) * step;
    const auto lo = static_cast<std::size_t>(pos);
    if (lo + 1 >= samples.size()) {
      out[i] = samples.back();
    } else {
      const double frac = pos - static_cast<double>(lo);
      out[i] = samples[lo] * (1.0 - frac) + samples[lo + 1] * frac;
    }
  }
  return out;
}

FeatureTensor extract_logmel(const AudioClip& clip, const FeatureConfig& cfg) {
  cfg.validate();
  if (clip.samples.empty()) fail(ErrorCode::kInvalidArgument, "clip '" + clip.id + "' has an empty waveform");
  if (!(clip.sample_rate > 0)) fail(ErrorCode::kInvalidArgument, "clip '" + clip.id + "' has a non-positive sample rate");
  for (double s : clip.samples) {
    if (!std::isfinite(s)) fail(ErrorCode::kCorruptData, "clip '" + clip.id + "' contains NaN or infinite samples");
  }
  std::vector<double> wave = resample_linear(clip.samples, clip.sample_rate, cfg.sample_rate);
  if (wave.size() < cfg.n_fft) {
    fail(ErrorCode::kInsufficientData, "clip '" + clip.id + "' is shorter than one analysis window (" +
                                           std::to_string(wave.size()) + " < " + std::to_string(cfg.n_fft) + " samples)");
  }
  const auto target = static_cast<std::size_t>(std::lround(cfg.clip_seconds * cfg.sample_rate));
  std::vector<double> fixed(target, 0.0);
  if (wave.size() >= target) {
    const std::size_t offset = (wave.size() - target) / 2;
    std::copy_n(wave.begin() + static_cast<std::ptrdiff_t>(offset), target, fixed.begin());
  } else {
    const std::size_t offset = (target - wave.size()) / 2;
    std::copy(wave.begin(), wave.end(), fixed.begin() + static_cast<std::ptrdiff_t>(offset));
  }

  const std::size_t half = cfg.n_fft / 2;
  std::vector<double> padded(target + 2 * half, 0.0);
  std::copy(fixed.begin(), fixed.end(), padded.begin() + static_cast<std::ptrdiff_t>(half));
  const std::size_t n_frames = 1 + target / cfg.hop;
  const std::size_t n_freqs = cfg.n_fft / 2 + 1;

  std::vector<double> window(cfg.n_fft);
  for (std::size_t n = 0; n < cfg.n_fft; ++n) {
    window[n] = 0.5 - 0.5 * std::cos(2.0 * M_PI * static_cast<double>(n) / static_cast<double>(cfg.n_fft));
  }
  const RowMatrix fb = mel_filterbank(cfg);

  Eigen::FFT<double> fft;
  std::vector<double> frame(cfg.n_fft);
  std::vector<std::complex<double>> spectrum;
  RowMatrix power(static_cast<Eigen::Index>(n_freqs), static_cast<Eigen::Index>(n_frames));
  for (std::size_t t = 0; t < n_frames; ++t) {
    const std::size_t start = t * cfg.hop;
    for (std::size_t n = 0; n < cfg.n_fft; ++n) {
      frame[n] = start + n < padded.size() ? padded[start + n] * window[n] : 0.0;
    }
    fft.fwd(spectrum, frame);
    for (std::size_t k = 0; k < n_freqs; ++k) {
      power(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(t)) = std::norm(spectrum[k]);
    }
  }
  const RowMatrix mel = fb * power;

  FeatureTensor out;
  out.n_mels = cfg.n_mels;
  out.n_frames = n_frames;
  out.config_hash = cfg.hash();
  out.values.resize(cfg.n_mels * n_frames);
  for (std::size_t m = 0; m < cfg.n_mels; ++m) {
    for (std::size_t t = 0; t < n_frames; ++t) {
      out.values[m * n_frames + t] =
          std::log(std::max(mel(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(t)), cfg.floor_epsilon));
    }
  }
  return out;
}

FeatureStore::FeatureStore(const Dataset& dataset, FeatureConfig cfg, std::optional<fs::path> cache_dir)
    : dataset_(&dataset), cfg_(cfg), hash_(cfg.hash()), cache_dir_(std::move(cache_dir)) {
  cfg_.validate();
  if (!cache_dir_) cache_dir_ = cache_from_env();
}

std::optional<fs::path> FeatureStore::cache_from_env() {
  const char* dir = std::getenv("AUDIOCIL_CACHE");
  if (dir == nullptr || *dir == '\0') return std::nullopt;
  return fs::path(dir);
}

fs::path FeatureStore::cache_path(const std::string& id) const {
  std::string safe;
  for (char c : id) safe += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.') ? c : '_';
  return *cache_dir_ / hash_ / (safe + "-" + fnv1a_hex(id).substr(0, 8) + ".bin");
}

const FeatureTensor& FeatureStore::get(const std::string& id) {
  if (auto found = memo_.find(id); found != memo_.end()) return found->second;
  FeatureTensor tensor;
  bool loaded = false;
  if (cache_dir_) {
    std::ifstream in(cache_path(id), std::ios::binary);
    std::uint64_t dims[2];
    if (in && in.read(reinterpret_cast<char*>(dims), sizeof dims)) {
      tensor.n_mels = dims[0];
      tensor.n_frames = dims[1];
      tensor.values.resize(dims[0] * dims[1]);
      tensor.config_hash = hash_;
      loaded = static_cast<bool>(
          in.read(reinterpret_cast<char*>(tensor.values.data()),
                  static_cast<std::streamsize>(tensor.values.size() * sizeof(double))));
    }
  }
  if (!loaded) {
    tensor = extract_logmel(dataset_->load(dataset_->item(id)), cfg_);
    if (cache_dir_) {
      const fs::path path = cache_path(id);
      std::error_code ec;
      fs::create_directories(path.parent_path(), ec);
      std::ofstream out(path, std::ios::binary);
      const std::uint64_t dims[2] = {tensor.n_mels, tensor.n_frames};
      out.write(reinterpret_cast<const char*>(dims), sizeof dims);
      out.write(reinterpret_cast<const char*>(tensor.values.data()),
                static_cast<std::streamsize>(tensor.values.size() * sizeof(double)));
    }
  }
  return memo_.emplace(id, std::move(tensor)).first->second;
}

}  // namespace audiocil
