#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "biasdiff/geometry.hpp"
#include "biasdiff/imu_model.hpp"

namespace biasdiff {

struct NavState {
  Quatd q;  // {G} -> {I}
  Vec3d p = Vec3d::Zero();  // m, {G}
  Vec3d v = Vec3d::Zero();  // m/s, {G}
  double t = 0.0;
};

struct Trajectory {
  std::vector<NavState> states;

  const NavState& back() const { return states.back(); }
  std::size_t size() const { return states.size(); }
};

struct Window;

// Strapdown integration over the samples, starting from init (which is taken
// to hold at samples.front().t). Each sample is corrected with its own bias;
// rates and specific forces between samples come from a cubic through the
// four nearest corrected samples. Attitude advances with the closed-form
// quaternion step over a fourth-order rotation vector, velocity and position
// with Simpson's rule on the gravity-compensated global acceleration.
// Returns one state per sample.
Trajectory integrate(const NavState& init, std::span<const ImuSample> samples, const BiasTrack& bias,
                     const ImuIntrinsics& intr = {});
Trajectory integrate(const NavState& init, std::span<const ImuSample> samples, const BiasState& bias,
                     const ImuIntrinsics& intr = {});

// Integrates a window from its ground-truth initial state with the given bias
// track, which must carry the window's sample timestamps.
std::pair<Trajectory, NavState> integrate_window(const Window& window, const BiasTrack& predicted_bias,
                                                 const ImuIntrinsics& intr = {});

// CSV columns: t, px, py, pz, qx, qy, qz, qw, vx, vy, vz
void write_trajectory_csv(std::ostream& os, const Trajectory& traj);
void write_trajectory_csv(const std::string& path, const Trajectory& traj);

}  // namespace biasdiff
