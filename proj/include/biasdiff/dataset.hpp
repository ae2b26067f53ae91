#pragma once

// Synthetic sequence generation, EuRoC ASL ingestion, bias interpolation to
// IMU rate and windowing.

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "biasdiff/geometry.hpp"
#include "biasdiff/imu_model.hpp"
#include "biasdiff/integrator.hpp"

namespace biasdiff {

// Per-sensor bias process: turn-on offset + random walk + first-order
// Gauss-Markov + linear ramp, evaluated independently per axis.
struct SensorBiasConfig {
  Vec3d initial_mean = Vec3d::Zero();
  Vec3d initial_std = Vec3d::Zero();
  Vec3d rw_rate = Vec3d::Zero();  // units/s/sqrt(Hz)
  double gm_tau = 1.0;            // s
  Vec3d gm_sigma = Vec3d::Zero();  // stationary std
  Vec3d ramp_rate = Vec3d::Zero();  // units/s
};

struct BiasProcessConfig {
  SensorBiasConfig gyro;
  SensorBiasConfig accel;

  void validate() const;
};

struct Sinusoid {
  double amplitude = 0.0;
  double freq_hz = 0.0;
  double phase = 0.0;
};

// Settings for drawing a random smooth trajectory.
struct MotionConfig {
  int components = 3;  // sinusoids per channel
  Vec3d position_amplitude = Vec3d::Zero();  // m, per axis
  Vec3d angle_amplitude = Vec3d::Zero();     // rad, (roll, pitch, yaw)
  double min_freq_hz = 0.2;
  double max_freq_hz = 1.0;
  bool random_heading = true;

  // Stop-and-go: the sinusoid clock runs only during go phases, which start
  // and end with ramps whose clock acceleration is a raised cosine, so jerk
  // stays continuous and the platform is exactly at rest between go phases.
  // Off while stop_max_s is 0.
  double go_min_s = 1.0;
  double go_max_s = 2.0;
  double stop_min_s = 0.0;
  double stop_max_s = 0.0;
  double ramp_s = 0.2;

  void validate() const;
};

struct MotionPoint {
  Quatd q;
  Vec3d p, v, a_G, omega_I;
};

// Closed-form trajectory: each position axis and each ZYX Euler angle is a
// sum of sinusoids; attitude R_GI = Rz(yaw) Ry(pitch) Rx(roll).
struct MotionModel {
  std::array<std::vector<Sinusoid>, 3> position;
  std::array<std::vector<Sinusoid>, 3> angles;  // roll, pitch, yaw
  double heading = 0.0;                          // constant yaw offset

  // Clock warp s(t) for stop-and-go; no gates means s = t. Each gate holds
  // from t0 to the next gate's t0, the last one indefinitely.
  enum class GateKind { stop, ramp_up, go, ramp_down };
  struct Gate {
    double t0 = 0.0;
    double s0 = 0.0;  // clock value at t0
    GateKind kind = GateKind::go;
  };
  struct Clock {
    double s = 0.0, rate = 1.0, accel = 0.0;
  };
  std::vector<Gate> gates;
  double ramp_s = 0.0;

  Clock clock(double t) const;
  MotionPoint evaluate(double t) const;
  // Gates are drawn to cover [0, duration] when stop-and-go is on.
  static MotionModel draw(const MotionConfig& cfg, Rng& rng, double duration = 0.0);
};

struct TrajectorySamples {
  std::vector<NavState> states;
  std::vector<Vec3d> omega_I;
  std::vector<Vec3d> a_G;
};

struct SequenceMeta {
  std::string name;
  double rate_hz = 200.0;
  std::string source = "synthetic";  // synthetic | ingested
  std::int64_t t0_ns = 0;            // absolute time of t = 0
};

// Samples, ground-truth states and ground-truth bias share timestamps.
struct Sequence {
  std::vector<ImuSample> samples;
  std::vector<NavState> gt_states;
  BiasTrack gt_bias;
  SequenceMeta meta;

  std::size_t size() const { return samples.size(); }
};

struct Window {
  std::vector<ImuSample> samples;
  BiasTrack gt_bias;
  NavState init_state;
  NavState final_state;
  int sequence_id = 0;
  int window_index = 0;

  std::size_t size() const { return samples.size(); }
};

// Sample timestamps for a synthetic sequence. Built from an integer
// nanosecond period so CSV round trips are exact.
std::vector<double> sample_times(double duration, double rate_hz);

BiasTrack generate_bias_track(const BiasProcessConfig& cfg, double rate_hz, double duration, Rng& rng);
BiasTrack generate_bias_track(const BiasProcessConfig& cfg, std::span<const double> times, Rng& rng);

TrajectorySamples generate_trajectory(const MotionConfig& cfg, double duration, double rate_hz, Rng& rng);
TrajectorySamples sample_motion(const MotionModel& model, std::span<const double> times);

Sequence synthesize_sequence(const MotionConfig& motion, const BiasProcessConfig& bias, const NoiseParams& noise,
                             const ImuIntrinsics& intr, double duration, double rate_hz, std::uint64_t seed,
                             const std::string& name = "synthetic");

// Reads <dir>/imu0/data.csv and <dir>/state_groundtruth_estimate0/data.csv.
Sequence load_euroc(const std::filesystem::path& dir);
// Writes the same layout; ground-truth rows are stamped at IMU times.
void write_euroc(const std::filesystem::path& dir, const Sequence& seq);

// Sidecar bias CSV: t, bgx, bgy, bgz, bax, bay, baz (t in sequence seconds).
void write_bias_csv(std::ostream& os, const BiasTrack& track);
void write_bias_csv(const std::filesystem::path& path, const BiasTrack& track);
BiasTrack read_bias_csv(const std::filesystem::path& path);

// Per-axis linear interpolation; queries outside the track hold the end value.
BiasTrack interpolate_bias(const BiasTrack& track, std::span<const double> times);

// Windows of `duration` seconds advancing by duration * (1 - overlap);
// a trailing remainder shorter than one window is dropped.
std::vector<Window> make_windows(const Sequence& seq, double duration = 1.0, double overlap = 0.5,
                                 int sequence_id = 0);

// Reproducible per-window stream seed.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);
std::uint64_t window_seed(std::uint64_t global_seed, int sequence_id, int window_index);

}  // namespace biasdiff
