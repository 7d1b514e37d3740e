#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "doctest.h"
#include "ssigan/dataio.hpp"
#include "ssigan/rng.hpp"
#include "ssigan/signal.hpp"

using namespace ssigan;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

// distinct supra-threshold clusters on one channel, separated by >= gap
// zero samples
std::int64_t count_events(const RawRecording& rec, std::int64_t channel,
                          std::int64_t gap) {
  std::int64_t events = 0;
  std::int64_t last_active = -gap - 1;
  for (std::int64_t t = 0; t < rec.time_steps; ++t) {
    if (rec.at(t, channel) != 0.0) {
      if (t - last_active > gap) ++events;
      last_active = t;
    }
  }
  return events;
}

}  // namespace

TEST_CASE("class labels map to names and back") {
  CHECK(std::string(class_name(0)) == "control");
  CHECK(std::string(class_name(1)) == "dengue");
  CHECK(std::string(class_name(2)) == "zika");
  for (int c = 0; c < kNumClasses; ++c)
    CHECK(class_from_name(class_name(c)) == c);
  CHECK(class_from_name("ct") == 0);
  CHECK(class_from_name("dn") == 1);
  CHECK(class_from_name("zk") == 2);
  CHECK_THROWS_AS(class_from_name("measles"), std::invalid_argument);
}

TEST_CASE("default split counts at N = 1000") {
  SplitSpec spec;
  spec.seed = 3;
  DatasetSplits s = split_dataset(1000, spec);
  CHECK(s.test.size() == 200);
  CHECK(s.labeled_train.size() == 23);
  CHECK(s.validation.size() == 1);
  CHECK(s.unlabeled_train.size() == 776);
}

TEST_CASE("default split counts at the full-scale design size") {
  SplitSpec spec;
  spec.seed = 11;
  DatasetSplits s = split_dataset(15728580, spec);
  CHECK(s.test.size() == 3145716);
  CHECK(s.validation.size() == 3775);
  CHECK(s.labeled_train.size() == 377486 - 3775);
  CHECK(s.unlabeled_train.size() ==
        15728580 - 3145716 - 377486);
}

TEST_CASE("splits are seed-deterministic") {
  SplitSpec spec;
  spec.seed = 99;
  DatasetSplits a = split_dataset(500, spec);
  DatasetSplits b = split_dataset(500, spec);
  CHECK(a.test == b.test);
  CHECK(a.labeled_train == b.labeled_train);
  CHECK(a.validation == b.validation);
  CHECK(a.unlabeled_train == b.unlabeled_train);
  spec.seed = 100;
  DatasetSplits c = split_dataset(500, spec);
  CHECK(a.test != c.test);
}

TEST_CASE("split partitions are disjoint and exhaustive") {
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    for (std::int64_t n : {200, 1000, 4097}) {
      SplitSpec spec;
      spec.seed = seed;
      DatasetSplits s = split_dataset(n, spec);
      std::vector<int> seen(n, 0);
      for (const auto* part :
           {&s.test, &s.labeled_train, &s.validation, &s.unlabeled_train})
        for (std::int64_t i : *part) {
          REQUIRE(i >= 0);
          REQUIRE(i < n);
          ++seen[i];
        }
      for (int count : seen) CHECK(count == 1);
    }
  }
}

TEST_CASE("infeasible splits name the empty partition") {
  SplitSpec spec;
  // N = 40: labeled pool rounds to 1, validation floor takes it, so
  // labeled_train would be empty
  CHECK_THROWS_WITH_AS(split_dataset(40, spec),
                       doctest::Contains("labeled_train"),
                       std::invalid_argument);
  SplitSpec bad;
  bad.test_fraction = 1.5;
  CHECK_THROWS_AS(split_dataset(1000, bad), std::invalid_argument);
  bad = SplitSpec{};
  bad.labeled_fraction = 0.0;
  CHECK_THROWS_AS(split_dataset(1000, bad), std::invalid_argument);
}

TEST_CASE("labeled pool composition stays near class prevalence over seeds") {
  // balanced three-class labels on 300 indices; across many seeds each class
  // should take roughly a third of the labeled pool
  const std::int64_t n = 300;
  std::vector<int> labels(n);
  for (std::int64_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % 3);
  std::int64_t counts[3] = {0, 0, 0};
  std::int64_t total = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    SplitSpec spec;
    spec.seed = seed;
    DatasetSplits s = split_dataset(n, spec);
    for (std::int64_t i : s.labeled_train) {
      ++counts[labels[i]];
      ++total;
    }
  }
  for (int c = 0; c < 3; ++c) {
    const double frac = static_cast<double>(counts[c]) / total;
    CHECK(frac > 0.25);
    CHECK(frac < 0.42);
  }
}

TEST_CASE("synthetic recordings are seed-deterministic") {
  SyntheticClassProfile p;
  RawRecording a = generate_synthetic_recording(p, 0.05, 42, 8);
  RawRecording b = generate_synthetic_recording(p, 0.05, 42, 8);
  CHECK(a.samples == b.samples);
  RawRecording c = generate_synthetic_recording(p, 0.05, 43, 8);
  CHECK(a.samples != c.samples);
  CHECK(a.time_steps == 1500);
  CHECK(a.channels == 8);
  CHECK_THROWS_AS(generate_synthetic_recording(p, 0.0, 1), std::invalid_argument);
  CHECK_THROWS_AS(generate_synthetic_recording(p, -1.0, 1),
                  std::invalid_argument);
}

TEST_CASE("spike-free noise vanishes after filtering and thresholding") {
  SyntheticClassProfile p;
  p.spike_rate_hz = 0.0;
  p.noise_sd_uv = 5.0;
  RawRecording rec = generate_synthetic_recording(p, 1.0, 7, 12);
  FilterCoefficients coeffs = design_highpass_butterworth({700.0, 4, 30000.0});
  RawRecording filtered = apply_filter(coeffs, rec);
  RawRecording kept = extract_spikes(filtered, 10.0);
  std::int64_t nonzero = 0;
  for (double v : kept.samples) nonzero += v != 0.0;
  const double fraction =
      static_cast<double>(nonzero) / static_cast<double>(kept.samples.size());
  CHECK(fraction < 1e-4);
}

TEST_CASE("spike counts track the Poisson rate") {
  SyntheticClassProfile p;
  p.spike_rate_hz = 50.0;
  p.amplitude_mean_uv = 40.0;
  p.amplitude_sd_uv = 4.0;
  const double duration = 2.0;
  RawRecording rec = generate_synthetic_recording(p, duration, 21, 6);
  FilterCoefficients coeffs = design_highpass_butterworth({700.0, 4, 30000.0});
  RawRecording kept = extract_spikes(apply_filter(coeffs, rec), 10.0);
  const double expected = p.spike_rate_hz * duration;
  double total = 0.0;
  for (std::int64_t c = 0; c < kept.channels; ++c) {
    const double events = static_cast<double>(count_events(kept, c, 30));
    // single channels carry Poisson noise plus merged near-coincident
    // spikes; keep a loose per-channel band and a tight one on the mean
    CHECK(events > 0.6 * expected);
    CHECK(events < 1.4 * expected);
    total += events;
  }
  const double mean = total / static_cast<double>(kept.channels);
  CHECK(mean > 0.8 * expected);
  CHECK(mean < 1.2 * expected);
}

TEST_CASE("window sets round-trip through the binary format") {
  Rng rng(4);
  SpikeWindowSet set;
  set.count = 5;
  set.window_len = 100;
  set.channels = 60;
  set.data.resize(5 * 100 * 60);
  // float payload: store float-representable values so the round trip is
  // bit-exact
  for (double& v : set.data)
    v = static_cast<double>(static_cast<float>(rng.normal(0.0, 1.0)));
  set.labels = {0, 1, 2, -1, 1};
  set.scale_uv = 37.5;
  set.threshold_uv = 10.0;
  const std::string path = temp_path("ssigan_test_ws.bin");
  save_window_set(set, path);
  SpikeWindowSet loaded = load_window_set(path);
  CHECK(loaded.count == set.count);
  CHECK(loaded.window_len == set.window_len);
  CHECK(loaded.channels == set.channels);
  CHECK(loaded.data == set.data);
  CHECK(loaded.labels == set.labels);
  CHECK(loaded.scale_uv == set.scale_uv);
  CHECK(loaded.threshold_uv == set.threshold_uv);
  // header 40 bytes + float payload + one label byte per window + 16-byte
  // scale/threshold footer
  CHECK(std::filesystem::file_size(path) ==
        40 + 5 * 100 * 60 * 4 + 5 + 16);
  std::remove(path.c_str());
}

TEST_CASE("unlabeled window sets omit the label block") {
  SpikeWindowSet set;
  set.count = 2;
  set.window_len = 10;
  set.channels = 3;
  set.data.assign(2 * 10 * 3, 0.25);
  const std::string path = temp_path("ssigan_test_ws_nolabel.bin");
  save_window_set(set, path);
  CHECK(std::filesystem::file_size(path) == 40 + 2 * 10 * 3 * 4 + 16);
  SpikeWindowSet loaded = load_window_set(path);
  CHECK(loaded.labels.empty());
  CHECK(loaded.data == set.data);
  std::remove(path.c_str());
}

TEST_CASE("malformed window-set files are rejected") {
  const std::string path = temp_path("ssigan_test_ws_bad.bin");
  {
    std::ofstream os(path, std::ios::binary);
  }
  CHECK_THROWS_AS(load_window_set(path), std::runtime_error);
  {
    std::ofstream os(path, std::ios::binary);
    os << "NOTMAGIC and some trailing bytes";
  }
  CHECK_THROWS_AS(load_window_set(path), std::runtime_error);
  // valid header but truncated payload
  SpikeWindowSet set;
  set.count = 2;
  set.window_len = 10;
  set.channels = 3;
  set.data.assign(2 * 10 * 3, 1.0);
  save_window_set(set, path);
  std::filesystem::resize_file(path, 50);
  CHECK_THROWS_AS(load_window_set(path), std::runtime_error);
  CHECK_THROWS_AS(load_window_set(temp_path("ssigan_missing.bin")),
                  std::runtime_error);
  std::remove(path.c_str());
}

TEST_CASE("recordings round-trip with their sidecar metadata") {
  Rng rng(8);
  RawRecording rec;
  rec.time_steps = 120;
  rec.channels = 4;
  rec.sampling_rate_hz = 30000.0;
  rec.samples.resize(120 * 4);
  for (double& v : rec.samples)
    v = static_cast<double>(static_cast<float>(rng.normal(0.0, 10.0)));
  const std::string path = temp_path("ssigan_test_rec.bin");
  save_recording(rec, path, 2);
  int label = -1;
  RawRecording loaded = load_recording(path, &label);
  CHECK(label == 2);
  CHECK(loaded.time_steps == rec.time_steps);
  CHECK(loaded.channels == rec.channels);
  CHECK(loaded.sampling_rate_hz == rec.sampling_rate_hz);
  CHECK(loaded.samples == rec.samples);
  // unlabeled save leaves the label untouched at -1
  save_recording(rec, path);
  label = -1;
  loaded = load_recording(path, &label);
  CHECK(label == -1);
  std::remove(path.c_str());
  std::remove((path + ".meta").c_str());
}

TEST_CASE("split files round-trip") {
  SplitSpec spec;
  spec.seed = 17;
  DatasetSplits s = split_dataset(400, spec);
  const std::string path = temp_path("ssigan_test_splits.txt");
  save_splits(s, path);
  DatasetSplits loaded = load_splits(path);
  CHECK(loaded.test == s.test);
  CHECK(loaded.labeled_train == s.labeled_train);
  CHECK(loaded.validation == s.validation);
  CHECK(loaded.unlabeled_train == s.unlabeled_train);
  std::remove(path.c_str());
}

TEST_CASE("the synthetic dataset is labeled, balanced and normalized") {
  SpikeWindowSet set = make_synthetic_dataset(30, 5);
  CHECK(set.count == 30);
  CHECK(set.window_len == 100);
  CHECK(set.channels == 60);
  CHECK(set.normalized());
  CHECK(set.scale_uv > 0.0);
  CHECK(set.threshold_uv == 10.0);
  std::int64_t per_class[3] = {0, 0, 0};
  for (int l : set.labels) {
    REQUIRE(l >= 0);
    REQUIRE(l < 3);
    ++per_class[l];
  }
  for (std::int64_t n : per_class) CHECK(n == 10);
  double max_abs = 0.0;
  for (double v : set.data) max_abs = std::max(max_abs, std::abs(v));
  CHECK(max_abs <= 1.0);
  CHECK(max_abs == 1.0);  // max-abs normalization always hits the boundary
  CHECK_THROWS_AS(make_synthetic_dataset(2, 1), std::invalid_argument);
}

TEST_CASE("class profiles produce separable activity levels") {
  // guard against degenerate synthetic data: mean rectified activity per
  // window must order the classes and a nearest-centroid rule on that single
  // feature must beat chance by a wide margin
  SpikeWindowSet set = make_synthetic_dataset(90, 12);
  std::vector<double> activity(set.count, 0.0);
  for (std::int64_t i = 0; i < set.count; ++i) {
    const double* w = set.window(i);
    double acc = 0.0;
    for (std::int64_t j = 0; j < set.window_len * set.channels; ++j)
      acc += std::abs(w[j]);
    activity[i] = acc / (set.window_len * set.channels);
  }
  double centroid[3] = {0, 0, 0};
  std::int64_t n_class[3] = {0, 0, 0};
  for (std::int64_t i = 0; i < set.count; ++i) {
    centroid[set.labels[i]] += activity[i];
    ++n_class[set.labels[i]];
  }
  for (int c = 0; c < 3; ++c) centroid[c] /= n_class[c];
  CHECK(centroid[0] < centroid[1]);
  CHECK(centroid[1] < centroid[2]);
  std::int64_t correct = 0;
  for (std::int64_t i = 0; i < set.count; ++i) {
    int best = 0;
    for (int c = 1; c < 3; ++c)
      if (std::abs(activity[i] - centroid[c]) <
          std::abs(activity[i] - centroid[best]))
        best = c;
    correct += best == set.labels[i];
  }
  CHECK(static_cast<double>(correct) / set.count > 0.8);
}
