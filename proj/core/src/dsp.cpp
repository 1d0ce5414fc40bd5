#include "needle/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace needle::dsp {

void FilterSpec::validate() const {
  if (order < 1) throw std::invalid_argument("filter order must be >= 1");
  if (!(sample_rate_hz > 0.0)) throw std::invalid_argument("filter sample rate must be positive");
  if (!(cutoff_hz > 0.0)) throw std::invalid_argument("filter cutoff must be positive");
  const double nyquist = sample_rate_hz / 2.0;
  if (cutoff_hz >= nyquist) {
    std::ostringstream msg;
    msg << "filter cutoff " << cutoff_hz << " Hz is at or above Nyquist (" << nyquist
        << " Hz at " << sample_rate_hz
        << " Hz sampling); a low-pass with its cutoff at Nyquist, such as 10 Hz at 20 Hz, "
           "is degenerate. Use a cutoff strictly below Nyquist, e.g. 5 Hz.";
    throw std::invalid_argument(msg.str());
  }
}

BiquadCascade::BiquadCascade(std::vector<Biquad> sections, double sample_rate_hz)
    : sections_(std::move(sections)), sample_rate_hz_(sample_rate_hz) {
  reset();
}

double BiquadCascade::step(double sample) {
  if (!std::isfinite(sample)) throw std::invalid_argument("non-finite filter input sample");
  double y = sample;
  for (auto& s : sections_) y = s.step(y);
  return y;
}

void BiquadCascade::reset() {
  for (auto& s : sections_) s.s1 = s.s2 = 0.0;
}

std::vector<double> BiquadCascade::apply(std::span<const double> signal) const {
  BiquadCascade fresh = *this;
  fresh.reset();
  std::vector<double> out(signal.size());
  for (std::size_t i = 0; i < signal.size(); ++i) {
    if (!std::isfinite(signal[i])) {
      throw std::invalid_argument("non-finite filter input at index " + std::to_string(i));
    }
    out[i] = fresh.step(signal[i]);
  }
  return out;
}

std::complex<double> BiquadCascade::response(double frequency_hz) const {
  const double w = 2.0 * std::numbers::pi * frequency_hz / sample_rate_hz_;
  const std::complex<double> z1 = std::polar(1.0, -w);  // z^-1
  const std::complex<double> z2 = z1 * z1;
  std::complex<double> h = 1.0;
  for (const auto& s : sections_) {
    h *= (s.b0 + s.b1 * z1 + s.b2 * z2) / (1.0 + s.a1 * z1 + s.a2 * z2);
  }
  return h;
}

std::vector<std::complex<double>> BiquadCascade::poles() const {
  std::vector<std::complex<double>> out;
  for (const auto& s : sections_) {
    if (s.a2 == 0.0) {
      out.emplace_back(-s.a1, 0.0);
      continue;
    }
    // roots of z^2 + a1 z + a2
    const std::complex<double> disc = std::sqrt(std::complex<double>(s.a1 * s.a1 - 4.0 * s.a2));
    out.push_back((-s.a1 + disc) / 2.0);
    out.push_back((-s.a1 - disc) / 2.0);
  }
  return out;
}

double BiquadCascade::leading_gain() const {
  double g = 1.0;
  for (const auto& s : sections_) g *= s.b0;
  return g;
}

std::string BiquadCascade::coefficient_table() const {
  std::ostringstream out;
  out << "# section b0 b1 b2 a1 a2 (denominator 1 + a1 z^-1 + a2 z^-2)\n";
  char line[256];
  for (std::size_t i = 0; i < sections_.size(); ++i) {
    const auto& s = sections_[i];
    std::snprintf(line, sizeof line, "%zu %.17g %.17g %.17g %.17g %.17g\n", i, s.b0, s.b1, s.b2,
                  s.a1, s.a2);
    out << line;
  }
  return out.str();
}

BiquadCascade design_butterworth(const FilterSpec& spec) {
  spec.validate();
  const int n = spec.order;
  const double fs = spec.sample_rate_hz;
  const double warped = 2.0 * fs * std::tan(std::numbers::pi * spec.cutoff_hz / fs);
  const auto to_digital = [&](std::complex<double> analog) {
    const std::complex<double> s = analog * warped;
    return (2.0 * fs + s) / (2.0 * fs - s);
  };

  std::vector<Biquad> sections;
  // Prototype poles sit at angles pi(2k+n-1)/(2n), k = 1..n; k and n+1-k are
  // conjugates, so the upper half suffices.
  for (int k = 1; k <= n / 2; ++k) {
    const double angle = std::numbers::pi * (2.0 * k + n - 1) / (2.0 * n);
    const std::complex<double> z = to_digital(std::polar(1.0, angle));
    Biquad b;
    b.a1 = -2.0 * z.real();
    b.a2 = std::norm(z);
    const double g = (1.0 + b.a1 + b.a2) / 4.0;
    b.b0 = g;
    b.b1 = 2.0 * g;
    b.b2 = g;
    sections.push_back(b);
  }
  if (n % 2 == 1) {
    const double z = to_digital({-1.0, 0.0}).real();
    Biquad b;
    b.a1 = -z;
    const double g = (1.0 + b.a1) / 2.0;
    b.b0 = g;
    b.b1 = g;
    sections.push_back(b);
  }
  // Low-Q sections first keeps intermediate gain peaks small.
  std::stable_sort(sections.begin(), sections.end(),
                   [](const Biquad& l, const Biquad& r) { return l.a2 < r.a2; });
  return BiquadCascade(std::move(sections), fs);
}

}  // namespace needle::dsp
