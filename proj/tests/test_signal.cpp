#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <complex>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "ssigan/rng.hpp"
#include "ssigan/signal.hpp"

using namespace ssigan;

namespace {

RawRecording make_recording(std::int64_t time_steps, std::int64_t channels,
                            double fs = 30000.0) {
  RawRecording r;
  r.time_steps = time_steps;
  r.channels = channels;
  r.sampling_rate_hz = fs;
  r.samples.assign(time_steps * channels, 0.0);
  return r;
}

// analytic magnitude of the bilinear-transform Butterworth high-pass with
// frequency pre-warping: 1 / sqrt(1 + (tan(pi fc/fs) / tan(pi f/fs))^(2n))
double analytic_highpass_mag(double f, double fc, double fs, int order) {
  const double ratio = std::tan(M_PI * fc / fs) / std::tan(M_PI * f / fs);
  return 1.0 / std::sqrt(1.0 + std::pow(ratio, 2.0 * order));
}

}  // namespace

TEST_CASE("butterworth design hits -3 dB at the cutoff") {
  FilterSpec spec;  // 700 Hz, order 4, 30 kHz
  FilterCoefficients c = design_highpass_butterworth(spec);
  const double mag = std::abs(filter_response(c, 700.0, 30000.0));
  CHECK(mag == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(0.005));
  const double db = 20.0 * std::log10(mag);
  CHECK(std::abs(db + 3.0103) < 0.05);
}

TEST_CASE("butterworth design rejects DC completely") {
  for (double cutoff : {200.0, 700.0, 5000.0}) {
    for (int order : {1, 2, 4, 6}) {
      FilterCoefficients c =
          design_highpass_butterworth({cutoff, order, 30000.0});
      CHECK(std::abs(filter_response(c, 0.0, 30000.0)) < 1e-12);
    }
  }
}

TEST_CASE("stopband attenuation matches the analytic prewarped magnitude") {
  FilterCoefficients c = design_highpass_butterworth({700.0, 4, 30000.0});
  const double mag = std::abs(filter_response(c, 70.0, 30000.0));
  const double expected = analytic_highpass_mag(70.0, 700.0, 30000.0, 4);
  CHECK(mag == doctest::Approx(expected).epsilon(1e-6));
  CHECK(20.0 * std::log10(mag) <= -78.0);
  // a couple more frequencies against the same closed form
  for (double f : {100.0, 350.0, 1400.0, 7000.0}) {
    CHECK(std::abs(filter_response(c, f, 30000.0)) ==
          doctest::Approx(analytic_highpass_mag(f, 700.0, 30000.0, 4))
              .epsilon(1e-6));
  }
}

TEST_CASE("invalid filter specs are rejected") {
  CHECK_THROWS_AS(design_highpass_butterworth({15000.0, 4, 30000.0}),
                  std::invalid_argument);
  CHECK_THROWS_AS(design_highpass_butterworth({16000.0, 4, 30000.0}),
                  std::invalid_argument);
  CHECK_THROWS_AS(design_highpass_butterworth({700.0, 0, 30000.0}),
                  std::invalid_argument);
  CHECK_THROWS_AS(design_highpass_butterworth({700.0, -1, 30000.0}),
                  std::invalid_argument);
}

TEST_CASE("all poles stay inside the unit circle across the valid domain") {
  Rng rng(41);
  for (int trial = 0; trial < 50; ++trial) {
    const double fs = 30000.0;
    const double cutoff = 50.0 + rng.uniform() * (fs / 2.0 - 100.0);
    const int order = 1 + static_cast<int>(rng.uniform() * 8.0);
    FilterCoefficients c = design_highpass_butterworth({cutoff, order, fs});
    for (const std::complex<double>& p : filter_poles(c))
      CHECK(std::abs(p) < 1.0);
    CHECK(std::abs(filter_response(c, 0.0, fs)) < 1e-12);
  }
}

TEST_CASE("magnitude response is non-decreasing up to Nyquist") {
  FilterCoefficients c = design_highpass_butterworth({700.0, 4, 30000.0});
  double prev = 0.0;
  for (int i = 1; i <= 256; ++i) {
    const double f = 15000.0 * i / 257.0;
    const double mag = std::abs(filter_response(c, f, 30000.0));
    CHECK(mag >= prev - 1e-12);
    prev = mag;
  }
}

TEST_CASE("filtering an all-zero signal yields all zeros") {
  FilterCoefficients c = design_highpass_butterworth({700.0, 4, 30000.0});
  RawRecording r = make_recording(500, 3);
  RawRecording out = apply_filter(c, r);
  for (double v : out.samples) CHECK(v == 0.0);
}

TEST_CASE("a constant input decays to zero") {
  FilterCoefficients c = design_highpass_butterworth({700.0, 4, 30000.0});
  RawRecording r = make_recording(3000, 2);
  for (double& v : r.samples) v = 5.0;
  RawRecording out = apply_filter(c, r);
  for (std::int64_t t = 2000; t < 3000; ++t)
    for (std::int64_t ch = 0; ch < 2; ++ch)
      CHECK(std::abs(out.at(t, ch)) < 1e-6);
}

TEST_CASE("impulse response matches direct difference-equation evaluation") {
  FilterCoefficients c = design_highpass_butterworth({700.0, 4, 30000.0});
  const std::int64_t n = 400;
  RawRecording r = make_recording(n, 1);
  r.at(0, 0) = 1.0;
  RawRecording out = apply_filter(c, r);
  // independent oracle: y[t] = sum b[k] x[t-k] - sum a[k] y[t-k], a[0] = 1
  std::vector<double> x(n, 0.0), y(n, 0.0);
  x[0] = 1.0;
  for (std::int64_t t = 0; t < n; ++t) {
    double acc = 0.0;
    for (std::size_t k = 0; k < c.numerator.size(); ++k)
      if (t >= static_cast<std::int64_t>(k)) acc += c.numerator[k] * x[t - k];
    for (std::size_t k = 1; k < c.denominator.size(); ++k)
      if (t >= static_cast<std::int64_t>(k)) acc -= c.denominator[k] * y[t - k];
    y[t] = acc;
  }
  for (std::int64_t t = 0; t < n; ++t)
    CHECK(std::abs(out.at(t, 0) - y[t]) < 1e-12);
}

TEST_CASE("non-finite samples are rejected with their index") {
  FilterCoefficients c = design_highpass_butterworth({700.0, 4, 30000.0});
  RawRecording r = make_recording(10, 2);
  r.samples[7] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_WITH_AS(apply_filter(c, r),
                       doctest::Contains("index 7"), std::invalid_argument);
}

TEST_CASE("threshold is twice the rounded mean of the noise stds") {
  CHECK(compute_threshold({6.1, 4.08, 5.44}) == 10.0);
  CHECK(compute_threshold({1.0}) == 2.0);
  CHECK(compute_threshold({2.4, 2.4, 2.6}) == 4.0);
  // rounding is half away from zero
  CHECK(compute_threshold({2.5, 2.5}) == 6.0);
  CHECK(compute_threshold({1.5}) == 4.0);
  CHECK_THROWS_AS(compute_threshold({}), std::invalid_argument);
  CHECK_THROWS_AS(compute_threshold({3.0, -1.0}), std::invalid_argument);
}

TEST_CASE("spike extraction keeps strictly supra-threshold elements") {
  RawRecording r = make_recording(5, 1);
  const double vals[] = {5.0, -12.0, 11.0, 0.0, 10.0};
  for (int t = 0; t < 5; ++t) r.at(t, 0) = vals[t];
  RawRecording out = extract_spikes(r, 10.0);
  const double want[] = {0.0, -12.0, 11.0, 0.0, 0.0};
  for (int t = 0; t < 5; ++t) CHECK(out.at(t, 0) == want[t]);

  RawRecording zeros = make_recording(20, 4);
  RawRecording zout = extract_spikes(zeros, 10.0);
  for (double v : zout.samples) CHECK(v == 0.0);

  CHECK_THROWS_AS(extract_spikes(r, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(extract_spikes(r, -3.0), std::invalid_argument);
}

TEST_CASE("extraction agrees with an independent elementwise scan") {
  Rng rng(77);
  RawRecording r = make_recording(300, 6);
  for (double& v : r.samples) v = rng.normal(0.0, 12.0);
  const double t = 10.0;
  RawRecording out = extract_spikes(r, t);
  std::int64_t nonzero_out = 0, nonzero_expected = 0;
  for (std::size_t i = 0; i < r.samples.size(); ++i) {
    const double expected = std::abs(r.samples[i]) > t ? r.samples[i] : 0.0;
    CHECK(out.samples[i] == expected);
    nonzero_out += out.samples[i] != 0.0;
    nonzero_expected += std::abs(r.samples[i]) > t;
  }
  CHECK(nonzero_out == nonzero_expected);
  // idempotence
  RawRecording twice = extract_spikes(out, t);
  for (std::size_t i = 0; i < out.samples.size(); ++i)
    CHECK(twice.samples[i] == out.samples[i]);
}

TEST_CASE("segmentation floors the window count and discards the tail") {
  Rng rng(5);
  RawRecording r = make_recording(250, 3);
  for (double& v : r.samples) v = rng.normal(0.0, 1.0);
  SpikeWindowSet set = segment_windows(r, 100);
  CHECK(set.count == 2);
  CHECK(set.window_len == 100);
  CHECK(set.channels == 3);
  // partition: the emitted windows reproduce the first 200 samples exactly
  for (std::int64_t i = 0; i < 200 * 3; ++i)
    CHECK(set.data[i] == r.samples[i]);
  CHECK(static_cast<std::int64_t>(set.data.size()) == 2 * 100 * 3);
}

TEST_CASE("a recording of exactly one window length is the identity case") {
  Rng rng(6);
  RawRecording r = make_recording(100, 60);
  for (double& v : r.samples) v = rng.normal(0.0, 1.0);
  SpikeWindowSet set = segment_windows(r, 100);
  CHECK(set.count == 1);
  for (std::size_t i = 0; i < r.samples.size(); ++i)
    CHECK(set.data[i] == r.samples[i]);
}

TEST_CASE("segmentation of a full-length recording") {
  RawRecording r = make_recording(1048572, 1);
  SpikeWindowSet set = segment_windows(r, 100);
  CHECK(set.count == 10485);
}

TEST_CASE("too-short recordings are rejected") {
  RawRecording r = make_recording(99, 60);
  CHECK_THROWS_AS(segment_windows(r, 100), std::invalid_argument);
  CHECK_THROWS_AS(segment_windows(r, 0), std::invalid_argument);
}

TEST_CASE("normalization maps by the max absolute value") {
  SpikeWindowSet set;
  set.count = 1;
  set.window_len = 2;
  set.channels = 2;
  set.data = {25.0, -50.0, 0.0, 12.5};
  SpikeWindowSet out = normalize_windows(set);
  CHECK(out.scale_uv == 50.0);
  CHECK(out.data[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(out.data[1] == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(out.data[3] == doctest::Approx(0.25).epsilon(1e-15));
  for (double v : out.data) {
    CHECK(v >= -1.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("normalizing a unit-scale set leaves the values unchanged") {
  SpikeWindowSet set;
  set.count = 1;
  set.window_len = 1;
  set.channels = 3;
  set.data = {0.5, -1.0, 0.25};
  SpikeWindowSet out = normalize_windows(set);
  for (std::size_t i = 0; i < set.data.size(); ++i)
    CHECK(out.data[i] == set.data[i]);
}

TEST_CASE("normalize then denormalize round-trips") {
  Rng rng(9);
  SpikeWindowSet set;
  set.count = 4;
  set.window_len = 10;
  set.channels = 6;
  set.data.resize(4 * 10 * 6);
  for (double& v : set.data) v = rng.normal(0.0, 20.0);
  SpikeWindowSet norm = normalize_windows(set);
  for (std::size_t i = 0; i < set.data.size(); ++i)
    CHECK(std::abs(norm.data[i] * norm.scale_uv - set.data[i]) < 1e-12);
}

TEST_CASE("an all-zero set has no usable scale") {
  SpikeWindowSet set;
  set.count = 1;
  set.window_len = 2;
  set.channels = 2;
  set.data = {0.0, 0.0, 0.0, 0.0};
  CHECK_THROWS_AS(normalize_windows(set), std::invalid_argument);
}
