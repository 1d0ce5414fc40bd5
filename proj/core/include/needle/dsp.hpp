#pragma once

#include <complex>
#include <span>
#include <string>
#include <vector>

namespace needle::dsp {

struct FilterSpec {
  int order = 6;
  double cutoff_hz = 5.0;
  double sample_rate_hz = 20.0;

  /// Requires order >= 1 and 0 < cutoff_hz < sample_rate_hz / 2.
  void validate() const;
};

/// One second-order section, transposed direct form II. First-order sections
/// carry b2 = a2 = 0.
struct Biquad {
  double b0 = 1.0, b1 = 0.0, b2 = 0.0;
  double a1 = 0.0, a2 = 0.0;
  double s1 = 0.0, s2 = 0.0;

  double step(double x) {
    const double y = b0 * x + s1;
    s1 = b1 * x - a1 * y + s2;
    s2 = b2 * x - a2 * y;
    return y;
  }
};

/// Stateful cascade of sections. One instance filters one stream.
class BiquadCascade {
 public:
  BiquadCascade() = default;
  BiquadCascade(std::vector<Biquad> sections, double sample_rate_hz);

  /// Advances the running state by one sample. Throws std::invalid_argument
  /// for a non-finite sample without touching the state.
  double step(double sample);

  /// Zeroes every delay register.
  void reset();

  /// Filters `signal` from zero state; the cascade's own state is untouched.
  /// Identical to folding step() over the signal on a reset copy.
  std::vector<double> apply(std::span<const double> signal) const;

  std::complex<double> response(double frequency_hz) const;
  std::vector<std::complex<double>> poles() const;

  /// Output of the first step() from zero state per unit input.
  double leading_gain() const;

  const std::vector<Biquad>& sections() const { return sections_; }
  double sample_rate_hz() const { return sample_rate_hz_; }

  /// Human-readable coefficient dump, one row per section.
  std::string coefficient_table() const;

 private:
  std::vector<Biquad> sections_;
  double sample_rate_hz_ = 1.0;
};

/// Digital Butterworth low-pass via pre-warped bilinear transform, realized as
/// second-order sections with unity DC gain each.
BiquadCascade design_butterworth(const FilterSpec& spec);

}  // namespace needle::dsp
