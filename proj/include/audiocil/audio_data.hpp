#pragma once

#include "audiocil/common.hpp"

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace audiocil {

enum class Split { kTrain, kTest };

std::string to_string(Split split);
Split parse_split(const std::string& text);

struct AudioClip {
  std::string id;
  std::vector<double> samples;  // amplitude in [-1, 1]
  double sample_rate = 16000.0;
  Label label;
};

// A dataset row. In-memory clips (synthetic) carry their waveform; manifest
// rows are decoded from `path` on demand.
struct DatasetItem {
  std::string id;
  Label label;
  std::filesystem::path path;
  std::shared_ptr<const AudioClip> clip;
};

class Dataset {
 public:
  Dataset(std::string name, Split split, std::vector<DatasetItem> items);

  const std::string& name() const { return name_; }
  Split split() const { return split_; }
  const std::vector<DatasetItem>& items() const { return items_; }
  // Labels in order of first appearance.
  const std::vector<Label>& class_set() const { return class_set_; }
  std::size_t size() const { return items_.size(); }

  const DatasetItem& item(const std::string& id) const;
  AudioClip load(const DatasetItem& item) const;

 private:
  std::string name_;
  Split split_;
  std::vector<DatasetItem> items_;
  std::vector<Label> class_set_;
  std::map<std::string, std::size_t> by_id_;
};

struct DatasetInfo {
  std::string key;
  std::string description;
  std::optional<std::size_t> expected_classes;
};

const std::vector<DatasetInfo>& dataset_registry();

/// Loads the rows of `split` from a CSV manifest with header
/// `id,path,label,split`. Paths resolve relative to the manifest's directory.
/// Every referenced WAV must exist and carry a readable PCM header.
Dataset load_dataset(const std::string& name, const std::filesystem::path& manifest_path, Split split);

/// Deterministic tonal dataset: class c is a fundamental at 200 + 100c Hz with
/// two harmonics plus Gaussian noise (sigma 0.05). Train and test draw from
/// disjoint seed streams.
Dataset generate_synthetic(std::size_t num_classes, std::size_t per_class, std::uint64_t seed, Split split,
                           double sample_rate = 16000.0, double seconds = 1.0);

// 16-bit PCM WAV. Multi-channel input is averaged to mono.
AudioClip read_wav(const std::filesystem::path& path);
void write_wav(const std::filesystem::path& path, const std::vector<double>& samples, double sample_rate);

struct FeatureConfig {
  double sample_rate = 16000.0;
  std::size_t n_fft = 400;
  std::size_t hop = 160;
  std::size_t n_mels = 64;
  double floor_epsilon = 1e-10;
  double clip_seconds = 1.0;

  std::string hash() const;
  void validate() const;
};

struct FeatureTensor {
  std::size_t n_mels = 0;
  std::size_t n_frames = 0;
  std::vector<double> values;  // n_mels x n_frames, row-major
  std::string config_hash;

  double at(std::size_t mel, std::size_t frame) const { return values[mel * n_frames + frame]; }
};

// Triangular HTK-mel filterbank over the rfft bins, n_mels x (n_fft/2 + 1).
RowMatrix mel_filterbank(const FeatureConfig& cfg);
// Center frequency (Hz) of each mel filter.
std::vector<double> mel_center_frequencies(const FeatureConfig& cfg);

double hz_to_mel(double hz);
double mel_to_hz(double mel);

std::vector<double> resample_linear(const std::vector<double>& samples, double from_rate, double to_rate);

/// Log of the mel-filtered power spectrogram with centered (zero padded)
/// framing and a periodic Hann window. The clip is resampled to
/// cfg.sample_rate, then center padded or truncated to cfg.clip_seconds.
FeatureTensor extract_logmel(const AudioClip& clip, const FeatureConfig& cfg);

/// Memoizing feature provider for one dataset. When a cache directory is
/// given (or AUDIOCIL_CACHE is set) tensors persist under
/// <dir>/<config_hash>/<clip id>.bin.
class FeatureStore {
 public:
  FeatureStore(const Dataset& dataset, FeatureConfig cfg,
               std::optional<std::filesystem::path> cache_dir = std::nullopt);

  const FeatureTensor& get(const std::string& id);
  const Dataset& dataset() const { return *dataset_; }
  const FeatureConfig& config() const { return cfg_; }

  static std::optional<std::filesystem::path> cache_from_env();

 private:
  std::filesystem::path cache_path(const std::string& id) const;

  const Dataset* dataset_;
  FeatureConfig cfg_;
  std::string hash_;
  std::optional<std::filesystem::path> cache_dir_;
  std::map<std::string, FeatureTensor> memo_;
};

}  // namespace audiocil
