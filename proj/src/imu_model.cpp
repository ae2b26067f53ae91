#include "biasdiff/imu_model.hpp"

#include <cmath>
#include <string>

#include "biasdiff/errors.hpp"

namespace biasdiff {

void ImuIntrinsics::validate() const {
  const double det = T_g.determinant();
  if (!std::isfinite(det) || std::abs(det) < 1e-12) {
    throw ConfigError("gyro shape matrix T_g is singular");
  }
}

void BiasTrack::validate() const {
  if (b_g.size() != t.size() || b_a.size() != t.size()) {
    throw DataError("bias track arrays differ in length");
  }
  for (std::size_t i = 1; i < t.size(); ++i) {
    if (!(t[i] > t[i - 1])) {
      throw DataError("bias track timestamps not strictly increasing at index " + std::to_string(i));
    }
  }
}

ImuSample synthesize_sample(const Quatd& q, const Vec3d& a_G, const Vec3d& omega_I, const BiasState& bias,
                            const ImuIntrinsics& intr, const NoiseParams& noise, double dt, Rng& rng) {
  if (!(dt > 0.0)) throw ConfigError("synthesize_sample: dt must be positive");
  const Vec3d f_I = specific_force(q, a_G, intr.gravity);
  const double sd = 1.0 / std::sqrt(dt);
  // Draw gyro noise first, then accel, so streams stay aligned across configs.
  const Vec3d n_g = gaussian_vec3(rng, noise.sigma_g * sd);
  const Vec3d n_a = gaussian_vec3(rng, noise.sigma_a * sd);

  ImuSample s;
  s.omega_m = intr.T_g * omega_I + intr.T_s * f_I + bias.b_g + n_g;
  s.accel_m = f_I + bias.b_a + n_a;
  return s;
}

CorrectedImu correct(const ImuSample& sample, const BiasState& bias, const ImuIntrinsics& intr) {
  CorrectedImu out;
  out.accel = sample.accel_m - bias.b_a;
  if (intr.T_g.isIdentity(0.0) && intr.T_s.isZero(0.0)) {
    out.omega = sample.omega_m - bias.b_g;
    return out;
  }
  intr.validate();
  out.omega = intr.T_g.partialPivLu().solve(sample.omega_m - bias.b_g - intr.T_s * out.accel);
  return out;
}

}  // namespace biasdiff
