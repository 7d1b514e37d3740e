#include "ssigan/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "ssigan/rng.hpp"

namespace ssigan {

namespace {

constexpr char kWindowSetMagic[8] = {'S', 'S', 'G', 'W', 'S', 'E', 'T', '1'};
constexpr std::uint32_t kWindowSetVersion = 1;

std::int64_t round_half_away(double v) {
  return static_cast<std::int64_t>(v >= 0 ? std::floor(v + 0.5)
                                          : std::ceil(v - 0.5));
}

template <typename T>
void write_raw(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void read_raw(std::istream& is, T& v, const char* what) {
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is)
    throw std::runtime_error(std::string("window set: truncated payload (") +
                             what + ")");
}

}  // namespace

const char* class_name(int label) {
  switch (label) {
    case 0: return "control";
    case 1: return "dengue";
    case 2: return "zika";
    default: return "unlabeled";
  }
}

int class_from_name(const std::string& name) {
  if (name == "control" || name == "ct") return 0;
  if (name == "dengue" || name == "dn") return 1;
  if (name == "zika" || name == "zk") return 2;
  throw std::invalid_argument("unknown class name: " + name);
}

DatasetSplits split_dataset(std::int64_t count, const SplitSpec& spec) {
  if (spec.test_fraction <= 0.0 || spec.test_fraction >= 1.0 ||
      spec.labeled_fraction <= 0.0 || spec.labeled_fraction > 1.0 ||
      spec.validation_fraction <= 0.0 || spec.validation_fraction >= 1.0)
    throw std::invalid_argument("split spec: fraction out of range");

  const std::int64_t n_test = round_half_away(spec.test_fraction * count);
  const std::int64_t pool =
      round_half_away(spec.labeled_fraction * (count - n_test));
  const std::int64_t n_val =
      std::max<std::int64_t>(1, round_half_away(spec.validation_fraction * pool));
  const std::int64_t n_labeled = pool - n_val;
  const std::int64_t n_unlabeled = count - n_test - pool;

  auto require = [](std::int64_t n, const char* name) {
    if (n < 1)
      throw std::invalid_argument(std::string("split infeasible: partition '") +
                                  name + "' would be empty");
  };
  require(n_test, "test");
  require(n_labeled, "labeled_train");
  require(n_val, "validation");
  require(n_unlabeled, "unlabeled_train");

  std::vector<std::int64_t> idx(count);
  for (std::int64_t i = 0; i < count; ++i) idx[i] = i;
  Rng rng(spec.seed);
  for (std::int64_t i = count - 1; i > 0; --i)
    std::swap(idx[i], idx[rng.uniform_index(i + 1)]);

  DatasetSplits out;
  auto it = idx.begin();
  out.test.assign(it, it + n_test);
  it += n_test;
  out.validation.assign(it, it + n_val);
  it += n_val;
  out.labeled_train.assign(it, it + n_labeled);
  it += n_labeled;
  out.unlabeled_train.assign(it, idx.end());
  return out;
}

std::vector<SyntheticClassProfile> default_class_profiles() {
  // Rates/amplitudes chosen far apart so a desk-scale classifier has signal.
  SyntheticClassProfile control{3.0, 20.0, 3.0, 6, 0.8, 5.0};
  SyntheticClassProfile dengue{30.0, 50.0, 5.0, 10, 0.0, 5.0};
  SyntheticClassProfile zika{120.0, 100.0, 8.0, 16, -0.8, 5.0};
  return {control, dengue, zika};
}

RawRecording generate_synthetic_recording(const SyntheticClassProfile& profile,
                                          double duration_s,
                                          std::uint64_t seed,
                                          std::int64_t channels,
                                          double sampling_rate_hz) {
  if (!(duration_s > 0.0))
    throw std::invalid_argument("synthetic recording: non-positive duration");
  const std::int64_t t_total =
      static_cast<std::int64_t>(std::llround(duration_s * sampling_rate_hz));
  if (t_total < 100)
    throw std::invalid_argument(
        "synthetic recording: duration too short for one window");
  RawRecording rec;
  rec.time_steps = t_total;
  rec.channels = channels;
  rec.sampling_rate_hz = sampling_rate_hz;
  rec.samples.assign(static_cast<std::size_t>(t_total * channels), 0.0);

  Rng rng(seed);
  // Background noise is LFP-like: low-frequency dominated, so the 700 Hz
  // high-pass genuinely suppresses it. One-pole smoothing of white noise
  // concentrates the power below ~100 Hz; the gain factor restores the
  // requested stationary standard deviation.
  const double a = 0.98;
  const double gain = std::sqrt((1.0 + a) / (1.0 - a));
  for (std::int64_t c = 0; c < channels; ++c) {
    double state = 0.0;
    for (std::int64_t t = 0; t < t_total; ++t) {
      state = a * state + (1.0 - a) * rng.normal(0.0, profile.noise_sd_uv);
      rec.at(t, c) = gain * state;
    }
  }

  if (profile.spike_rate_hz > 0.0) {
    const int w = std::max(2, profile.spike_width_samples);
    for (std::int64_t c = 0; c < channels; ++c) {
      double t_event = rng.exponential(profile.spike_rate_hz);
      while (t_event * sampling_rate_hz < t_total) {
        const std::int64_t start =
            static_cast<std::int64_t>(t_event * sampling_rate_hz);
        double amp = rng.normal(profile.amplitude_mean_uv,
                                profile.amplitude_sd_uv);
        amp = std::max(amp, 0.25 * profile.amplitude_mean_uv);
        const double sign =
            rng.uniform() < 0.5 * (1.0 + profile.polarity_bias) ? 1.0 : -1.0;
        // biphasic lobe: one full sine period across the spike width
        for (int i = 0; i < w; ++i) {
          const std::int64_t t = start + i;
          if (t >= t_total) break;
          rec.at(t, c) +=
              sign * amp * std::sin(2.0 * 3.14159265358979323846 * i / w);
        }
        t_event += rng.exponential(profile.spike_rate_hz);
      }
    }
  }
  return rec;
}

SpikeWindowSet make_synthetic_dataset(
    std::int64_t n_windows, std::uint64_t seed,
    const std::vector<SyntheticClassProfile>& profiles) {
  if (profiles.size() != kNumClasses)
    throw std::invalid_argument("make_synthetic_dataset: need 3 profiles");
  if (n_windows < kNumClasses)
    throw std::invalid_argument("make_synthetic_dataset: too few windows");
  const FilterSpec fspec;
  const FilterCoefficients coeffs = design_highpass_butterworth(fspec);
  const double threshold = 10.0;

  SpikeWindowSet all;
  all.count = 0;
  all.threshold_uv = threshold;
  for (int cls = 0; cls < kNumClasses; ++cls) {
    std::int64_t n_c = n_windows / kNumClasses;
    if (cls < n_windows % kNumClasses) ++n_c;
    const double duration = n_c * 100.0 / fspec.sampling_rate_hz;
    RawRecording rec = generate_synthetic_recording(
        profiles[cls], duration, Rng::derive(seed, cls));
    rec = apply_filter(coeffs, rec);
    rec = extract_spikes(rec, threshold);
    SpikeWindowSet set = segment_windows(rec, 100);
    all.window_len = set.window_len;
    all.channels = set.channels;
    all.data.insert(all.data.end(), set.data.begin(), set.data.end());
    all.labels.insert(all.labels.end(), set.count, cls);
    all.count += set.count;
  }
  return normalize_windows(all);
}

void save_window_set(const SpikeWindowSet& set, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os.write(kWindowSetMagic, 8);
  write_raw(os, kWindowSetVersion);
  const std::uint32_t flags = set.labels.empty() ? 0u : 1u;
  write_raw(os, flags);
  write_raw(os, static_cast<std::uint64_t>(set.count));
  write_raw(os, static_cast<std::uint64_t>(set.window_len));
  write_raw(os, static_cast<std::uint64_t>(set.channels));
  for (double v : set.data) write_raw(os, static_cast<float>(v));
  if (flags & 1u)
    for (int l : set.labels)
      write_raw(os, static_cast<std::uint8_t>(l < 0 ? 255 : l));
  write_raw(os, set.scale_uv);
  write_raw(os, set.threshold_uv);
  if (!os) throw std::runtime_error("write failed: " + path);
}

SpikeWindowSet load_window_set(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kWindowSetMagic, 8) != 0)
    throw std::runtime_error("window set: bad magic in " + path);
  std::uint32_t version = 0, flags = 0;
  read_raw(is, version, "version");
  if (version != kWindowSetVersion)
    throw std::runtime_error("window set: unsupported version " +
                             std::to_string(version));
  read_raw(is, flags, "flags");
  std::uint64_t count = 0, window_len = 0, channels = 0;
  read_raw(is, count, "count");
  read_raw(is, window_len, "window length");
  read_raw(is, channels, "channels");
  SpikeWindowSet set;
  set.count = static_cast<std::int64_t>(count);
  set.window_len = static_cast<std::int64_t>(window_len);
  set.channels = static_cast<std::int64_t>(channels);
  set.data.resize(count * window_len * channels);
  for (double& v : set.data) {
    float f;
    read_raw(is, f, "samples");
    v = f;
  }
  if (flags & 1u) {
    set.labels.resize(count);
    for (int& l : set.labels) {
      std::uint8_t b;
      read_raw(is, b, "labels");
      l = b == 255 ? -1 : b;
    }
  }
  read_raw(is, set.scale_uv, "scale");
  read_raw(is, set.threshold_uv, "threshold");
  return set;
}

void save_recording(const RawRecording& recording, const std::string& path,
                    int label) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  for (double v : recording.samples) write_raw(os, static_cast<float>(v));
  if (!os) throw std::runtime_error("write failed: " + path);
  std::ofstream meta(path + ".meta");
  meta << "sampling_rate_hz=" << recording.sampling_rate_hz << "\n"
       << "channel_count=" << recording.channels << "\n"
       << "time_steps=" << recording.time_steps << "\n"
       << "units=uV\n";
  if (label >= 0) meta << "label=" << class_name(label) << "\n";
  if (!meta) throw std::runtime_error("write failed: " + path + ".meta");
}

RawRecording load_recording(const std::string& path, int* label) {
  std::ifstream meta(path + ".meta");
  if (!meta) throw std::runtime_error("cannot open sidecar: " + path + ".meta");
  RawRecording rec;
  if (label) *label = -1;
  std::string line;
  while (std::getline(meta, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (key == "sampling_rate_hz") rec.sampling_rate_hz = std::stod(value);
    else if (key == "channel_count") rec.channels = std::stoll(value);
    else if (key == "time_steps") rec.time_steps = std::stoll(value);
    else if (key == "label" && label) *label = class_from_name(value);
  }
  if (rec.channels < 1 || rec.time_steps < 1 || rec.sampling_rate_hz <= 0)
    throw std::runtime_error("invalid sidecar metadata: " + path + ".meta");
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path);
  rec.samples.resize(rec.time_steps * rec.channels);
  for (double& v : rec.samples) {
    float f;
    is.read(reinterpret_cast<char*>(&f), sizeof(f));
    if (!is) throw std::runtime_error("recording: truncated payload in " + path);
    v = f;
  }
  return rec;
}

void save_splits(const DatasetSplits& splits, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  auto line = [&os](const char* name, const std::vector<std::int64_t>& v) {
    os << name;
    for (auto i : v) os << ' ' << i;
    os << '\n';
  };
  line("test", splits.test);
  line("labeled_train", splits.labeled_train);
  line("validation", splits.validation);
  line("unlabeled_train", splits.unlabeled_train);
  if (!os) throw std::runtime_error("write failed: " + path);
}

DatasetSplits load_splits(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open: " + path);
  DatasetSplits out;
  std::string line;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::string name;
    ls >> name;
    std::vector<std::int64_t>* dst = nullptr;
    if (name == "test") dst = &out.test;
    else if (name == "labeled_train") dst = &out.labeled_train;
    else if (name == "validation") dst = &out.validation;
    else if (name == "unlabeled_train") dst = &out.unlabeled_train;
    else throw std::runtime_error("splits file: unknown partition '" + name +
                                  "'");
    std::int64_t v;
    while (ls >> v) dst->push_back(v);
  }
  return out;
}

}  // namespace ssigan
