#pragma once

// Sensor error models for a 6-axis IMU.
//
//   a_m = C(q) (a_G - g) + b_a + n_a
//   w_m = T_g w_I + T_s f_I + b_g + n_g
//
// where f_I = C(q)(a_G - g) is the specific force in the IMU frame. The
// g-sensitivity term is read as acting on f_I; specific_force() is the only
// place that choice is encoded.

#include <random>
#include <vector>

#include "biasdiff/geometry.hpp"

namespace biasdiff {

struct ImuSample {
  double t = 0.0;  // s
  Vec3d omega_m = Vec3d::Zero();  // rad/s
  Vec3d accel_m = Vec3d::Zero();  // m/s^2
};

struct BiasState {
  Vec3d b_g = Vec3d::Zero();  // rad/s
  Vec3d b_a = Vec3d::Zero();  // m/s^2
};

struct ImuIntrinsics {
  Mat3d T_g = Mat3d::Identity();
  Mat3d T_s = Mat3d::Zero();  // rad/s per m/s^2
  Vec3d gravity = Vec3d(0.0, 0.0, -9.81);  // in {G}, z up

  // Throws ConfigError when T_g is singular.
  void validate() const;
};

// Continuous-time densities; discrete draws use density / sqrt(dt).
struct NoiseParams {
  double sigma_g = 0.0;  // rad/s/sqrt(Hz)
  double sigma_a = 0.0;  // m/s^2/sqrt(Hz)
  double eta_g = 0.0;    // rad/s^2/sqrt(Hz)
  double eta_a = 0.0;    // m/s^3/sqrt(Hz)
};

// Time-indexed bias sequence, at IMU rate for ground truth and predictions.
struct BiasTrack {
  std::vector<double> t;
  std::vector<Vec3d> b_g;
  std::vector<Vec3d> b_a;

  std::size_t size() const { return t.size(); }
  bool empty() const { return t.empty(); }
  BiasState at(std::size_t i) const { return {b_g[i], b_a[i]}; }
  void push_back(double time, const BiasState& b) {
    t.push_back(time);
    b_g.push_back(b.b_g);
    b_a.push_back(b.b_a);
  }
  // Throws DataError on length mismatch or non-increasing timestamps.
  void validate() const;
};

inline Vec3d specific_force(const Quatd& q, const Vec3d& a_G, const Vec3d& gravity) {
  return quat_to_rot(q) * (a_G - gravity);
}

using Rng = std::mt19937_64;

inline Vec3d gaussian_vec3(Rng& rng, double stddev) {
  std::normal_distribution<double> n(0.0, 1.0);
  const double x = n(rng);
  const double y = n(rng);
  const double z = n(rng);
  return Vec3d(x, y, z) * stddev;
}

// Corrupt the true motion (q, a_G, omega_I) with the sensor model. The sample
// time is left at zero; the caller stamps it.
ImuSample synthesize_sample(const Quatd& q, const Vec3d& a_G, const Vec3d& omega_I, const BiasState& bias,
                            const ImuIntrinsics& intr, const NoiseParams& noise, double dt, Rng& rng);

struct CorrectedImu {
  Vec3d omega;  // rad/s, {I}
  Vec3d accel;  // specific force, m/s^2, {I}
};

// Invert the deterministic part of the sensor model.
CorrectedImu correct(const ImuSample& sample, const BiasState& bias, const ImuIntrinsics& intr);

}  // namespace biasdiff
