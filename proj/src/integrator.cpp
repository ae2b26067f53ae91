#include "biasdiff/integrator.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>

#include "biasdiff/dataset.hpp"
#include "biasdiff/errors.hpp"

namespace biasdiff {

namespace {

// Lagrange weights for nodes at offsets (-1, 0, 1, 2) evaluated at x.
Eigen::Vector4d cubic_weights(double x) {
  const double a = x + 1, b = x, c = x - 1, d = x - 2;
  return Eigen::Vector4d(-b * c * d / 6.0, a * c * d / 2.0, -a * b * d / 2.0, a * b * c / 6.0);
}

struct Interpolant {
  const std::vector<CorrectedImu>& c;

  // Corrected rate and specific force at fractional sample position k + x,
  // x in [0, 1], from a cubic through four neighbouring samples.
  CorrectedImu at(std::size_t k, double x) const {
    const std::size_t n = c.size();
    if (n < 4) {
      return {c[k].omega + x * (c[k + 1].omega - c[k].omega), c[k].accel + x * (c[k + 1].accel - c[k].accel)};
    }
    std::size_t first = k == 0 ? 0 : k - 1;
    if (first + 3 >= n) first = n - 4;
    const Eigen::Vector4d w = cubic_weights(static_cast<double>(k) + x - static_cast<double>(first) - 1.0);
    CorrectedImu out{Vec3d::Zero(), Vec3d::Zero()};
    for (int j = 0; j < 4; ++j) {
      out.omega += w[j] * c[first + j].omega;
      out.accel += w[j] * c[first + j].accel;
    }
    return out;
  }
};

// Fourth-order rotation vector over [0, h] from rates at 0, h/2 and h.
Vec3d magnus(const Vec3d& w0, const Vec3d& wm, const Vec3d& w1, double h) {
  return h / 6.0 * (w0 + 4.0 * wm + w1) + h * h / 12.0 * w0.cross(w1);
}

template <typename BiasAt>
Trajectory integrate_impl(const NavState& init, std::span<const ImuSample> samples, BiasAt bias_at,
                          const ImuIntrinsics& intr) {
  if (samples.empty()) throw DataError("integrate: no IMU samples");
  for (std::size_t k = 1; k < samples.size(); ++k) {
    if (!(samples[k].t > samples[k - 1].t)) {
      throw DataError("integrate: timestamps not strictly increasing at sample " + std::to_string(k));
    }
  }

  std::vector<CorrectedImu> corrected;
  corrected.reserve(samples.size());
  for (std::size_t k = 0; k < samples.size(); ++k) corrected.push_back(correct(samples[k], bias_at(k), intr));
  const Interpolant in{corrected};

  Trajectory traj;
  traj.states.reserve(samples.size());
  NavState s = init;
  s.q = init.q.normalized();
  s.t = samples.front().t;
  traj.states.push_back(s);

  const Vec3d& g = intr.gravity;
  for (std::size_t k = 0; k + 1 < samples.size(); ++k) {
    const double h = samples[k + 1].t - samples[k].t;
    const CorrectedImu c0 = corrected[k];
    const CorrectedImu cq = in.at(k, 0.25);
    const CorrectedImu cm = in.at(k, 0.5);
    const CorrectedImu c1 = corrected[k + 1];

    const Quatd qm = quat_step(s.q, Vec3d(magnus(c0.omega, cq.omega, cm.omega, 0.5 * h) / (0.5 * h)), 0.5 * h);
    const Quatd q1 = quat_step(s.q, Vec3d(magnus(c0.omega, cm.omega, c1.omega, h) / h), h);

    const Vec3d a0 = quat_to_rot(s.q).transpose() * c0.accel + g;
    const Vec3d am = quat_to_rot(qm).transpose() * cm.accel + g;
    const Vec3d a1 = quat_to_rot(q1).transpose() * c1.accel + g;

    s.p += s.v * h + h * h / 6.0 * (a0 + 2.0 * am);
    s.v += h / 6.0 * (a0 + 4.0 * am + a1);
    s.q = q1;
    s.t = samples[k + 1].t;
    traj.states.push_back(s);
  }
  return traj;
}

}  // namespace

Trajectory integrate(const NavState& init, std::span<const ImuSample> samples, const BiasTrack& bias,
                     const ImuIntrinsics& intr) {
  if (bias.size() != samples.size()) {
    throw DataError("integrate: bias track has " + std::to_string(bias.size()) + " entries for " +
                    std::to_string(samples.size()) + " samples");
  }
  for (std::size_t k = 0; k < samples.size(); ++k) {
    if (std::abs(bias.t[k] - samples[k].t) > 1e-9) {
      throw DataError("integrate: bias timestamp mismatch at sample " + std::to_string(k));
    }
  }
  return integrate_impl(init, samples, [&](std::size_t k) { return bias.at(k); }, intr);
}

Trajectory integrate(const NavState& init, std::span<const ImuSample> samples, const BiasState& bias,
                     const ImuIntrinsics& intr) {
  return integrate_impl(init, samples, [&](std::size_t) { return bias; }, intr);
}

std::pair<Trajectory, NavState> integrate_window(const Window& window, const BiasTrack& predicted_bias,
                                                 const ImuIntrinsics& intr) {
  Trajectory traj = integrate(window.init_state, window.samples, predicted_bias, intr);
  NavState last = traj.back();
  return {std::move(traj), last};
}

void write_trajectory_csv(std::ostream& os, const Trajectory& traj) {
  os << "t,px,py,pz,qx,qy,qz,qw,vx,vy,vz\n";
  char buf[512];
  for (const auto& s : traj.states) {
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", s.t,
                  s.p.x(), s.p.y(), s.p.z(), s.q.x(), s.q.y(), s.q.z(), s.q.w(), s.v.x(), s.v.y(), s.v.z());
    os << buf;
  }
}

void write_trajectory_csv(const std::string& path, const Trajectory& traj) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot open " + path + " for writing");
  write_trajectory_csv(f, traj);
}

}  // namespace biasdiff
