#include <cmath>
#include <numbers>
#include <random>

#include "biasdiff/geometry.hpp"
#include "doctest.h"

using namespace biasdiff;

namespace {

Quatd random_quat(std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  return Quatd(n(rng), n(rng), n(rng), n(rng)).normalized();
}

Vec3d random_vec(std::mt19937_64& rng, double scale) {
  std::uniform_real_distribution<double> u(-scale, scale);
  return Vec3d(u(rng), u(rng), u(rng));
}

}  // namespace

TEST_CASE("skew matches the printed cross-product matrix") {
  Mat3d expected;
  expected << 0, -1, 0, 1, 0, 0, 0, 0, 0;
  CHECK(skew<double>(Vec3d(0, 0, 1)) == expected);
  CHECK(skew<double>(Vec3d::Zero()).isZero(0.0));
  const Vec3d r = skew<double>(Vec3d(1, 2, 3)) * Vec3d(4, 5, 6);
  CHECK(r == Vec3d(-3, 6, -3));
}

TEST_CASE("skew is anti-commutative in its arguments") {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 100; ++i) {
    const Vec3d a = random_vec(rng, 5), b = random_vec(rng, 5);
    CHECK((skew(a) * b + skew(b) * a).norm() < 1e-12);
    CHECK((skew(a) * b - a.cross(b)).norm() < 1e-12);
  }
}

TEST_CASE("omega matrix layout") {
  CHECK(omega_matrix<double>(Vec3d::Zero()).isZero(0.0));
  const Mat4<double> m = omega_matrix<double>(Vec3d(0, 0, 1));
  CHECK(m.row(3) == Eigen::RowVector4d(0, 0, -1, 0));
  CHECK(m.col(3).head<3>() == Vec3d(0, 0, 1));
  std::mt19937_64 rng(5);
  for (int i = 0; i < 20; ++i) {
    const Mat4<double> o = omega_matrix(random_vec(rng, 3));
    CHECK((o + o.transpose()).isZero(0.0));
  }
}

TEST_CASE("quat_to_rot basics") {
  CHECK(quat_to_rot(Quatd::identity()).isIdentity(0.0));

  const double s = std::sin(std::numbers::pi / 4), c = std::cos(std::numbers::pi / 4);
  const Mat3d C = quat_to_rot(Quatd(0, 0, s, c));
  // {G} -> {I} for a frame yawed +90 deg: the global x axis reads as -y.
  CHECK((C * Vec3d(1, 0, 0) - Vec3d(0, -1, 0)).norm() < 1e-15);

  std::mt19937_64 rng(7);
  for (int i = 0; i < 100; ++i) {
    const Quatd q = random_quat(rng);
    const Mat3d R = quat_to_rot(q);
    CHECK((R * R.transpose() - Mat3d::Identity()).norm() < 1e-12);
    CHECK(R.determinant() == doctest::Approx(1.0).epsilon(1e-12));
    const Quatd neg(Quatd::Coeffs(-q.coeffs()));
    CHECK((quat_to_rot(neg) - R).norm() < 1e-15);
    CHECK((quat_to_rot(rot_to_quat(R)) - R).norm() < 1e-12);
  }
  CHECK_THROWS(quat_to_rot(Quatd(0, 0, 0, 1.01)));
}

TEST_CASE("quat_step") {
  std::mt19937_64 rng(11);
  const Quatd q0 = random_quat(rng);
  const Quatd same = quat_step(q0, Vec3d::Zero(), 0.01);
  CHECK((same.coeffs() - q0.coeffs()).norm() < 1e-15);

  const Quatd yaw = quat_step(Quatd::identity(), Vec3d(0, 0, std::numbers::pi / 2), 1.0);
  CHECK(rotation_angle(quat_to_rot(yaw)) == doctest::Approx(std::numbers::pi / 2).epsilon(1e-12));
  CHECK((quat_to_rot(yaw) * Vec3d(1, 0, 0) - Vec3d(0, -1, 0)).norm() < 1e-9);

  for (int i = 0; i < 50; ++i) {
    const Quatd q = random_quat(rng);
    const Vec3d w = random_vec(rng, 4);
    const double dt = 0.02;
    const Quatd one = quat_step(q, w, dt);
    const Quatd two = quat_step(quat_step(q, w, dt / 2), w, dt / 2);
    CHECK((quat_to_rot(one) - quat_to_rot(two)).norm() < 1e-12);
  }
}

TEST_CASE("quat_step agrees with the axis-angle rotation of the IMU frame") {
  std::mt19937_64 rng(13);
  for (int i = 0; i < 200; ++i) {
    const Quatd q = random_quat(rng);
    const Vec3d w = random_vec(rng, 10);
    const double dt = 0.099 / std::max(1e-9, w.norm()) * std::uniform_real_distribution<double>(0, 1)(rng);
    // C' = -[w x] C, so C(t+dt) = exp(-[w dt x]) C(t).
    const Mat3d expected = axis_angle_matrix(Vec3d(-w * dt)) * quat_to_rot(q);
    CHECK((quat_to_rot(quat_step(q, w, dt)) - expected).norm() < 1e-9);
  }
}

TEST_CASE("quat_step keeps unit norm over a million steps") {
  std::mt19937_64 rng(17);
  Quatd q = random_quat(rng);
  double worst = 0;
  for (int i = 0; i < 1000000; ++i) {
    q = quat_step(q, random_vec(rng, 3), 0.005);
    worst = std::max(worst, std::abs(q.norm() - 1.0));
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("rotation_angle_between is small-angle accurate") {
  const Mat3d a = axis_angle_matrix(Vec3d(0.3, -0.2, 0.1));
  const Mat3d b = a * axis_angle_matrix(Vec3d(0, 0, 1e-7));
  CHECK(rotation_angle_between(a, b) == doctest::Approx(1e-7).epsilon(1e-6));
  CHECK(rotation_angle_between(a, a) == 0.0);
}
