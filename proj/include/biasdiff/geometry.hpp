#pragma once

// Rotation algebra for the strapdown model.
//
// Convention (JPL / Trawny): a UnitQuaternion q = (x, y, z, w), scalar last,
// represents the rotation from the global frame {G} into the IMU frame {I}.
// quat_to_rot(q) returns C such that v_I = C * v_G, with
//
//   C(q) = (2w^2 - 1) I - 2w [v x] + 2 v v^T,     v = (x, y, z)
//
// and the kinematics q' = 1/2 Omega(omega) q, which corresponds to
// C' = -[omega x] C. A Hamilton quaternion with the same four components
// describes C^T, so EuRoC's body-to-world q_WB maps onto this type
// component-for-component.

#include <cmath>
#include <stdexcept>
#include <type_traits>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace biasdiff {

template <typename Scalar>
using Vec3 = Eigen::Matrix<Scalar, 3, 1>;
template <typename Scalar>
using Mat3 = Eigen::Matrix<Scalar, 3, 3>;
template <typename Scalar>
using Mat4 = Eigen::Matrix<Scalar, 4, 4>;

using Vec3d = Vec3<double>;
using Mat3d = Mat3<double>;

template <typename Scalar>
class UnitQuaternion {
 public:
  using Coeffs = Eigen::Matrix<Scalar, 4, 1>;

  UnitQuaternion() : coeffs_(0, 0, 0, 1) {}
  // Stores the components as given. Use normalized() to project onto S^3.
  UnitQuaternion(Scalar x, Scalar y, Scalar z, Scalar w) : coeffs_(x, y, z, w) {}
  explicit UnitQuaternion(const Coeffs& xyzw) : coeffs_(xyzw) {}

  static UnitQuaternion identity() { return {}; }

  Scalar x() const { return coeffs_[0]; }
  Scalar y() const { return coeffs_[1]; }
  Scalar z() const { return coeffs_[2]; }
  Scalar w() const { return coeffs_[3]; }
  Vec3<Scalar> vec() const { return coeffs_.template head<3>(); }
  const Coeffs& coeffs() const { return coeffs_; }
  Scalar norm() const { return coeffs_.norm(); }

  UnitQuaternion normalized() const { return UnitQuaternion(Coeffs(coeffs_ / coeffs_.norm())); }

  template <typename Other>
  UnitQuaternion<Other> cast() const {
    return UnitQuaternion<Other>(coeffs_.template cast<Other>());
  }

 private:
  Coeffs coeffs_;
};

using Quatd = UnitQuaternion<double>;

template <typename Scalar>
Mat3<Scalar> skew(const Vec3<Scalar>& w) {
  Mat3<Scalar> m;
  m << Scalar(0), -w.z(), w.y(),
       w.z(), Scalar(0), -w.x(),
       -w.y(), w.x(), Scalar(0);
  return m;
}

template <typename Scalar>
Mat4<Scalar> omega_matrix(const Vec3<Scalar>& w) {
  Mat4<Scalar> m;
  m.template topLeftCorner<3, 3>() = -skew(w);
  m.template topRightCorner<3, 1>() = w;
  m.template bottomLeftCorner<1, 3>() = -w.transpose();
  m(3, 3) = Scalar(0);
  return m;
}

template <typename Scalar>
Mat3<Scalar> quat_to_rot(const UnitQuaternion<Scalar>& q) {
  using std::abs;
  if (abs(q.norm() - Scalar(1)) > Scalar(1e-6)) {
    throw std::invalid_argument("quat_to_rot: quaternion is not unit norm");
  }
  const Vec3<Scalar> v = q.vec();
  const Scalar w = q.w();
  return (Scalar(2) * w * w - Scalar(1)) * Mat3<Scalar>::Identity() - Scalar(2) * w * skew(v) +
         Scalar(2) * v * v.transpose();
}

// Inverse of quat_to_rot. The returned quaternion has w >= 0.
template <typename Scalar>
UnitQuaternion<Scalar> rot_to_quat(const Mat3<Scalar>& C) {
  // Eigen builds Hamilton quaternions; the Hamilton quaternion of C^T carries
  // the same components as the JPL quaternion of C.
  Eigen::Quaternion<Scalar> h(Mat3<Scalar>(C.transpose()));
  h.normalize();
  UnitQuaternion<Scalar> q(h.x(), h.y(), h.z(), h.w());
  if (q.w() < Scalar(0)) q = UnitQuaternion<Scalar>(typename UnitQuaternion<Scalar>::Coeffs(-q.coeffs()));
  return q;
}

// Closed-form propagation of q' = 1/2 Omega(omega) q over dt with omega held
// constant: q <- (cos(|w|dt/2) I + sin(|w|dt/2)/|w| Omega(w)) q, renormalized.
template <typename Scalar>
UnitQuaternion<Scalar> quat_step(const UnitQuaternion<Scalar>& q, const std::type_identity_t<Vec3<Scalar>>& omega,
                                 std::type_identity_t<Scalar> dt) {
  using std::cos;
  using std::sin;
  using std::sqrt;
  const Scalar n = omega.norm();
  const Scalar half = Scalar(0.5) * n * dt;
  Scalar c = cos(half);
  Scalar s_over_n;
  if (half < Scalar(1e-6)) {
    // sin(h)/|w| with h = |w|dt/2, series to keep precision near zero rate.
    s_over_n = Scalar(0.5) * dt * (Scalar(1) - half * half / Scalar(6));
  } else {
    s_over_n = sin(half) / n;
  }
  const Eigen::Matrix<Scalar, 4, 1> next =
      c * q.coeffs() + s_over_n * (omega_matrix(omega) * q.coeffs());
  return UnitQuaternion<Scalar>(next).normalized();
}

// Rotation matrix of angle |phi| about phi/|phi| (active, right-handed).
template <typename Scalar>
Mat3<Scalar> axis_angle_matrix(const Vec3<Scalar>& phi) {
  return Eigen::AngleAxis<Scalar>(phi.norm(), phi.norm() > Scalar(0) ? Vec3<Scalar>(phi.normalized())
                                                                    : Vec3<Scalar>::UnitX())
      .toRotationMatrix();
}

// Geodesic angle (rad) of the rotation Ra^T Rb, in [0, pi].
template <typename Scalar>
Scalar rotation_angle_between(const Mat3<Scalar>& Ra, const Mat3<Scalar>& Rb) {
  using std::atan2;
  const Mat3<Scalar> d = Ra.transpose() * Rb;
  const Vec3<Scalar> s(d(2, 1) - d(1, 2), d(0, 2) - d(2, 0), d(1, 0) - d(0, 1));
  const Scalar cos_part = (d.trace() - Scalar(1)) / Scalar(2);
  return atan2(Scalar(0.5) * s.norm(), cos_part);
}

template <typename Scalar>
Scalar rotation_angle(const Mat3<Scalar>& R) {
  return rotation_angle_between<Scalar>(Mat3<Scalar>::Identity(), R);
}

// Normalized linear interpolation on the shorter arc.
template <typename Scalar>
UnitQuaternion<Scalar> quat_slerp(const UnitQuaternion<Scalar>& a, UnitQuaternion<Scalar> b, Scalar s) {
  using Coeffs = typename UnitQuaternion<Scalar>::Coeffs;
  Coeffs qb = b.coeffs();
  Scalar d = a.coeffs().dot(qb);
  if (d < Scalar(0)) {
    qb = -qb;
    d = -d;
  }
  if (d > Scalar(0.9995)) {
    return UnitQuaternion<Scalar>(Coeffs(a.coeffs() + s * (qb - a.coeffs()))).normalized();
  }
  const Scalar theta = std::acos(d);
  const Scalar sa = std::sin((Scalar(1) - s) * theta) / std::sin(theta);
  const Scalar sb = std::sin(s * theta) / std::sin(theta);
  return UnitQuaternion<Scalar>(Coeffs(sa * a.coeffs() + sb * qb)).normalized();
}

}  // namespace biasdiff
