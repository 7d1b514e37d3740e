#include "ssigan/signal.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace ssigan {

namespace {
constexpr double kPi = 3.14159265358979323846;

// Expand prod_k (1 - r_k z^-1) into real coefficients. Roots must come in
// conjugate pairs (or be real) for the imaginary parts to cancel.
std::vector<double> poly_from_roots(
    const std::vector<std::complex<double>>& roots) {
  std::vector<std::complex<double>> c{1.0};
  for (const auto& r : roots) {
    c.push_back(0.0);
    for (std::size_t i = c.size() - 1; i >= 1; --i) c[i] -= r * c[i - 1];
  }
  std::vector<double> out(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) out[i] = c[i].real();
  return out;
}

}  // namespace

void RawRecording::validate() const {
  if (time_steps < 1 || channels < 1)
    throw std::invalid_argument("recording: empty dimensions");
  if (sampling_rate_hz <= 0.0)
    throw std::invalid_argument("recording: non-positive sampling rate");
  if (samples.size() != static_cast<std::size_t>(time_steps * channels))
    throw std::invalid_argument("recording: sample buffer size mismatch");
  for (std::size_t i = 0; i < samples.size(); ++i)
    if (!std::isfinite(samples[i]))
      throw std::invalid_argument("recording: non-finite sample at index " +
                                  std::to_string(i));
}

FilterCoefficients design_highpass_butterworth(const FilterSpec& spec) {
  if (spec.order < 1)
    throw std::invalid_argument("filter spec: order " +
                                std::to_string(spec.order) + " < 1");
  if (spec.sampling_rate_hz <= 0.0)
    throw std::invalid_argument("filter spec: non-positive sampling rate");
  if (spec.cutoff_hz <= 0.0 ||
      spec.cutoff_hz >= spec.sampling_rate_hz / 2.0)
    throw std::invalid_argument(
        "filter spec: cutoff " + std::to_string(spec.cutoff_hz) +
        " Hz outside (0, Nyquist) for fs = " +
        std::to_string(spec.sampling_rate_hz) + " Hz");

  const int n = spec.order;
  // Pre-warped analog cutoff for the bilinear transform s = (1-z^-1)/(1+z^-1).
  const double warped = std::tan(kPi * spec.cutoff_hz / spec.sampling_rate_hz);

  std::vector<std::complex<double>> zpoles;
  for (int k = 0; k < n; ++k) {
    const double theta = kPi * (2.0 * k + n + 1.0) / (2.0 * n);
    const std::complex<double> lp_pole(std::cos(theta), std::sin(theta));
    // Low-pass prototype -> high-pass: s -> warped / s.
    const std::complex<double> hp_pole = warped / lp_pole;
    zpoles.push_back((1.0 + hp_pole) / (1.0 - hp_pole));
  }

  FilterCoefficients out;
  out.denominator = poly_from_roots(zpoles);
  // All N zeros sit at z = 1 (DC).
  std::vector<std::complex<double>> zzeros(n, std::complex<double>(1.0, 0.0));
  out.numerator = poly_from_roots(zzeros);

  // Normalize gain to exactly 1 at Nyquist (z = -1).
  double num_at = 0.0, den_at = 0.0;
  double sign = 1.0;
  for (std::size_t i = 0; i < out.numerator.size(); ++i, sign = -sign)
    num_at += sign * out.numerator[i];
  sign = 1.0;
  for (std::size_t i = 0; i < out.denominator.size(); ++i, sign = -sign)
    den_at += sign * out.denominator[i];
  const double g = den_at / num_at;
  for (double& b : out.numerator) b *= g;
  // Pin the DC zero exactly: gain rounding leaves a ~1e-13 residual in the
  // coefficient sum, and the poles near z = 1 amplify it at DC. A couple of
  // correction passes drive num(1) to exactly zero.
  for (int pass = 0; pass < 3; ++pass) {
    double s = 0.0;
    for (double b : out.numerator) s += b;
    out.numerator.back() -= s;
  }
  return out;
}

std::complex<double> filter_response(const FilterCoefficients& coeffs,
                                     double freq_hz, double sampling_rate_hz) {
  const double omega = 2.0 * kPi * freq_hz / sampling_rate_hz;
  const std::complex<double> zinv = std::polar(1.0, -omega);
  std::complex<double> num = 0.0, den = 0.0, zp = 1.0;
  const std::size_t terms =
      std::max(coeffs.numerator.size(), coeffs.denominator.size());
  for (std::size_t i = 0; i < terms; ++i) {
    if (i < coeffs.numerator.size()) num += coeffs.numerator[i] * zp;
    if (i < coeffs.denominator.size()) den += coeffs.denominator[i] * zp;
    zp *= zinv;
  }
  return num / den;
}

std::vector<std::complex<double>> filter_poles(const FilterCoefficients& c) {
  // Roots of a[0] z^m + a[1] z^(m-1) + ... via the companion-matrix power
  // iteration is overkill here; Durand-Kerner on the reversed polynomial is
  // compact and plenty for order <= 16.
  const std::size_t m = c.denominator.size() - 1;
  std::vector<std::complex<double>> coeff(m + 1);
  for (std::size_t i = 0; i <= m; ++i) coeff[i] = c.denominator[i];
  std::vector<std::complex<double>> roots(m);
  for (std::size_t i = 0; i < m; ++i)
    roots[i] = std::polar(0.7, 2.0 * kPi * i / m + 0.5);
  auto eval = [&](std::complex<double> z) {
    std::complex<double> v = 0.0;
    for (std::size_t i = 0; i <= m; ++i) v = v * z + coeff[i];
    return v;
  };
  for (int iter = 0; iter < 300; ++iter) {
    double shift = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      std::complex<double> denom = coeff[0];
      for (std::size_t j = 0; j < m; ++j)
        if (j != i) denom *= roots[i] - roots[j];
      const std::complex<double> delta = eval(roots[i]) / denom;
      roots[i] -= delta;
      shift = std::max(shift, std::abs(delta));
    }
    if (shift < 1e-14) break;
  }
  return roots;
}

RawRecording apply_filter(const FilterCoefficients& coeffs,
                          const RawRecording& recording) {
  if (recording.time_steps < 1 || recording.channels < 1)
    throw std::invalid_argument("apply_filter: empty recording");
  for (std::size_t i = 0; i < recording.samples.size(); ++i)
    if (!std::isfinite(recording.samples[i]))
      throw std::invalid_argument("apply_filter: non-finite sample at index " +
                                  std::to_string(i));
  const std::vector<double>& b = coeffs.numerator;
  const std::vector<double>& a = coeffs.denominator;
  const std::size_t order = std::max(b.size(), a.size()) - 1;

  RawRecording out = recording;
  std::vector<double> state(order);
  for (std::int64_t c = 0; c < recording.channels; ++c) {
    std::fill(state.begin(), state.end(), 0.0);
    for (std::int64_t t = 0; t < recording.time_steps; ++t) {
      const double x = recording.at(t, c);
      const double y = b[0] * x + state[0];
      for (std::size_t i = 0; i < order; ++i) {
        const double next = (i + 1 < order) ? state[i + 1] : 0.0;
        const double bi = (i + 1 < b.size()) ? b[i + 1] : 0.0;
        const double ai = (i + 1 < a.size()) ? a[i + 1] : 0.0;
        state[i] = next + bi * x - ai * y;
      }
      out.at(t, c) = y;
    }
  }
  return out;
}

double compute_threshold(const std::vector<double>& noise_stds_uv) {
  if (noise_stds_uv.empty())
    throw std::invalid_argument("compute_threshold: empty noise std list");
  for (double v : noise_stds_uv)
    if (!(v > 0.0) || !std::isfinite(v))
      throw std::invalid_argument("compute_threshold: non-positive std " +
                                  std::to_string(v));
  const double mean =
      std::accumulate(noise_stds_uv.begin(), noise_stds_uv.end(), 0.0) /
      noise_stds_uv.size();
  // half away from zero
  const double rounded = std::floor(mean + 0.5);
  return 2.0 * rounded;
}

RawRecording extract_spikes(const RawRecording& recording,
                            double threshold_uv) {
  if (!(threshold_uv > 0.0))
    throw std::invalid_argument("extract_spikes: non-positive threshold");
  RawRecording out = recording;
  for (double& v : out.samples)
    if (std::abs(v) <= threshold_uv) v = 0.0;
  return out;
}

SpikeWindowSet segment_windows(const RawRecording& recording,
                               std::int64_t window_len) {
  if (window_len < 1)
    throw std::invalid_argument("segment_windows: window length < 1");
  if (recording.time_steps < window_len)
    throw std::invalid_argument(
        "segment_windows: recording of " +
        std::to_string(recording.time_steps) +
        " samples shorter than window length " + std::to_string(window_len));
  SpikeWindowSet set;
  set.window_len = window_len;
  set.channels = recording.channels;
  set.count = recording.time_steps / window_len;
  set.data.assign(recording.samples.begin(),
                  recording.samples.begin() +
                      set.count * window_len * recording.channels);
  return set;
}

SpikeWindowSet normalize_windows(const SpikeWindowSet& set) {
  double max_abs = 0.0;
  for (double v : set.data) max_abs = std::max(max_abs, std::abs(v));
  if (max_abs == 0.0)
    throw std::invalid_argument(
        "normalize_windows: all-zero set has a degenerate scale");
  SpikeWindowSet out = set;
  for (double& v : out.data) v /= max_abs;
  out.scale_uv = max_abs;
  return out;
}

}  // namespace ssigan
