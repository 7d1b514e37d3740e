#pragma once

#include <complex>
#include <cstdint>
#include <vector>

namespace ssigan {

// Multi-channel voltage trace in microvolts, time-major storage
// (samples[t * channels + c]).
struct RawRecording {
  std::vector<double> samples;
  std::int64_t time_steps = 0;
  std::int64_t channels = 0;
  double sampling_rate_hz = 0.0;

  double& at(std::int64_t t, std::int64_t c) {
    return samples[t * channels + c];
  }
  double at(std::int64_t t, std::int64_t c) const {
    return samples[t * channels + c];
  }
  void validate() const;
};

struct FilterSpec {
  double cutoff_hz = 700.0;
  int order = 4;
  double sampling_rate_hz = 30000.0;
};

// Digital IIR coefficients in z^-1, denominator normalized to a[0] = 1.
struct FilterCoefficients {
  std::vector<double> numerator;
  std::vector<double> denominator;
};

// N windows of window_len x channels, optionally labeled. scale_uv = 1 means
// the set is still in raw microvolts.
struct SpikeWindowSet {
  std::vector<double> data;  // [count * window_len * channels]
  std::int64_t count = 0;
  std::int64_t window_len = 100;
  std::int64_t channels = 60;
  std::vector<int> labels;  // per-window, -1 = unlabeled; empty = none at all
  double scale_uv = 1.0;
  double threshold_uv = 0.0;

  double* window(std::int64_t i) { return data.data() + i * window_len * channels; }
  const double* window(std::int64_t i) const {
    return data.data() + i * window_len * channels;
  }
  bool normalized() const { return scale_uv != 1.0; }
};

// Stable high-pass Butterworth via bilinear transform with frequency
// pre-warping. Throws std::invalid_argument for cutoff >= Nyquist or
// order < 1.
FilterCoefficients design_highpass_butterworth(const FilterSpec& spec);

// Complex frequency response H(e^{j 2 pi f / fs}).
std::complex<double> filter_response(const FilterCoefficients& coeffs,
                                     double freq_hz, double sampling_rate_hz);

// Poles of the denominator polynomial (for stability checks).
std::vector<std::complex<double>> filter_poles(const FilterCoefficients& c);

// Causal per-channel direct-form II transposed filtering, zero initial
// conditions. Throws std::invalid_argument naming the index of the first
// non-finite sample.
RawRecording apply_filter(const FilterCoefficients& coeffs,
                          const RawRecording& recording);

// 2 x round(mean(noise stds)), round half away from zero.
double compute_threshold(const std::vector<double>& noise_stds_uv);

// Keeps elements with |v| strictly greater than the threshold, zeroes the
// rest.
RawRecording extract_spikes(const RawRecording& recording,
                            double threshold_uv);

// Non-overlapping windows of window_len samples; trailing remainder
// discarded. Output is unlabeled and un-normalized.
SpikeWindowSet segment_windows(const RawRecording& recording,
                               std::int64_t window_len = 100);

// Divides by the max absolute value so every element lands in [-1, 1];
// records the scale for inversion.
SpikeWindowSet normalize_windows(const SpikeWindowSet& set);

}  // namespace ssigan
