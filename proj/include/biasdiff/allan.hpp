#pragma once

// Allan-variance noise calibration and the best-of-K random-walk oracle.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "biasdiff/geometry.hpp"
#include "biasdiff/imu_model.hpp"
#include "biasdiff/integrator.hpp"

namespace biasdiff {

struct Window;

struct AllanCurve {
  std::vector<double> taus;               // s, strictly increasing
  std::vector<std::vector<double>> adev;  // [axis][tau]

  std::size_t axes() const { return adev.size(); }
};

// Roughly log-spaced averaging times in [lo, hi], per_decade points per decade.
std::vector<double> log_taus(double lo, double hi, int per_decade);

// Overlapping Allan deviation of a uniformly sampled rate signal. Each tau is
// rounded to a whole number of samples; duplicates after rounding are merged.
// Throws ConfigError when a tau needs more than half the series.
AllanCurve allan_deviation(std::span<const double> signal, double rate_hz, std::span<const double> taus);
AllanCurve allan_deviation(std::span<const Vec3d> signal, double rate_hz, std::span<const double> taus);

// CSV columns: tau, adev_0, adev_1, ...
void write_allan_csv(const std::string& path, const AllanCurve& curve);

struct TauBand {
  double lo = 0.0;
  double hi = 0.0;
};

struct StaticCheck {
  double window_s = 1.0;
  double gyro_tol = 0.05;  // rad/s, change between consecutive window means
  double accel_tol = 0.3;  // m/s^2
};

struct AllanFitConfig {
  TauBand white_band{0.01, 1.0};  // slope -1/2
  TauBand walk_band{100.0, 1000.0};  // slope +1/2
  int taus_per_decade = 10;
  double min_duration_s = 200.0;
  double max_white_slope_dev = 0.15;  // |fitted slope + 1/2| in the white band
  double walk_significance = 2.0;     // K is zeroed below this many standard errors
  StaticCheck static_check;
};

struct NoiseFit {
  NoiseParams params;
  AllanCurve gyro;
  AllanCurve accel;
  Vec3d sigma_g_axes = Vec3d::Zero();
  Vec3d sigma_a_axes = Vec3d::Zero();
  Vec3d eta_g_axes = Vec3d::Zero();
  Vec3d eta_a_axes = Vec3d::Zero();
};

// Throws DataError when consecutive window means of gyro or accel differ by
// more than the tolerances allow.
void require_static(std::span<const ImuSample> samples, const StaticCheck& check = {});

// Sample rate from the median timestamp spacing. Throws DataError on fewer
// than two samples or non-increasing time.
double sample_rate(std::span<const ImuSample> samples);

// White-noise density from the -1/2 band and rate random walk from the +1/2
// band (after removing the fitted white part), per axis, averaged across axes.
NoiseFit fit_noise(std::span<const ImuSample> imu_static, const AllanFitConfig& cfg = {});
NoiseParams fit_noise_params(std::span<const ImuSample> imu_static, const AllanFitConfig& cfg = {});

// Mean gyro reading, and mean accel reading minus the gravity reaction. With a
// known attitude the reaction is C(q)(-g); otherwise its direction is taken
// from the mean accel itself, so only the magnitude mismatch is attributed to
// bias.
BiasState initial_bias_estimate(std::span<const ImuSample> imu_static, std::optional<Quatd> attitude = std::nullopt,
                                const ImuIntrinsics& intr = {}, const StaticCheck& check = {});

struct OracleResult {
  BiasTrack bias;
  NavState final_state;
  int index = 0;
  double position_error = 0.0;     // m
  double orientation_error = 0.0;  // rad
};

struct OracleCandidate {
  double position_error = 0.0;
  double orientation_error = 0.0;
};

// Draws K random-walk continuations from the window's ground-truth initial
// bias, integrates the window with each, and keeps the one whose final state
// is closest to ground truth: position error first, then orientation error,
// then candidate index. Uses ground truth for selection by design.
OracleResult random_walk_oracle(const Window& window, const NoiseParams& noise, int K, Rng& rng,
                                const ImuIntrinsics& intr = {}, std::vector<OracleCandidate>* candidates = nullptr);

}  // namespace biasdiff
