#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ssigan/signal.hpp"

namespace ssigan {

enum class ClassLabel : int { kControl = 0, kDengue = 1, kZika = 2 };
constexpr int kNumClasses = 3;

const char* class_name(int label);
int class_from_name(const std::string& name);

struct SplitSpec {
  double test_fraction = 0.2;
  double labeled_fraction = 0.03;
  double validation_fraction = 0.01;
  std::uint64_t seed = 0;
};

// Disjoint index sets over a SpikeWindowSet.
struct DatasetSplits {
  std::vector<std::int64_t> test;
  std::vector<std::int64_t> labeled_train;
  std::vector<std::int64_t> validation;
  std::vector<std::int64_t> unlabeled_train;
};

DatasetSplits split_dataset(std::int64_t count, const SplitSpec& spec);

struct SyntheticClassProfile {
  double spike_rate_hz = 20.0;
  double amplitude_mean_uv = 40.0;
  double amplitude_sd_uv = 5.0;
  int spike_width_samples = 8;
  double polarity_bias = 0.0;  // -1 all negative-first .. +1 all positive-first
  double noise_sd_uv = 5.0;
};

// Three well-separated default profiles, one per class.
std::vector<SyntheticClassProfile> default_class_profiles();

// 60-channel Gaussian background noise plus Poisson-timed biphasic spikes.
RawRecording generate_synthetic_recording(const SyntheticClassProfile& profile,
                                          double duration_s,
                                          std::uint64_t seed,
                                          std::int64_t channels = 60,
                                          double sampling_rate_hz = 30000.0);

// Full synthetic pipeline: generate one recording per class, filter,
// threshold, segment, label, concatenate, normalize. n_windows is the total
// across the three classes.
SpikeWindowSet make_synthetic_dataset(std::int64_t n_windows,
                                      std::uint64_t seed,
                                      const std::vector<SyntheticClassProfile>&
                                          profiles = default_class_profiles());

// Window-set binary format: magic+version header, u64 dims, f32 payload,
// optional u8 label block, f64 scale/threshold footer. Little-endian.
void save_window_set(const SpikeWindowSet& set, const std::string& path);
SpikeWindowSet load_window_set(const std::string& path);

// Raw recording: f32 little-endian time-major matrix plus a key=value
// sidecar (<path>.meta) carrying sampling_rate_hz, channel_count, units and
// an optional class label.
void save_recording(const RawRecording& recording, const std::string& path,
                    int label = -1);
RawRecording load_recording(const std::string& path, int* label = nullptr);

// Splits as a plain text file, one line per partition.
void save_splits(const DatasetSplits& splits, const std::string& path);
DatasetSplits load_splits(const std::string& path);

}  // namespace ssigan
