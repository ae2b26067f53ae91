#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>

#include "biasdiff/dataset.hpp"
#include "biasdiff/errors.hpp"
#include "doctest.h"

using namespace biasdiff;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("biasdiff_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

MotionConfig lively_motion() {
  MotionConfig m;
  m.position_amplitude = Vec3d(0.5, 0.4, 0.2);
  m.angle_amplitude = Vec3d(0.2, 0.2, 0.7);
  m.min_freq_hz = 0.3;
  m.max_freq_hz = 1.5;
  return m;
}

BiasProcessConfig busy_bias() {
  BiasProcessConfig b;
  b.gyro.initial_mean = Vec3d(0.01, -0.02, 0.005);
  b.gyro.initial_std = Vec3d::Constant(0.003);
  b.gyro.rw_rate = Vec3d::Constant(2e-4);
  b.gyro.gm_sigma = Vec3d::Constant(5e-4);
  b.gyro.gm_tau = 5.0;
  b.accel.initial_mean = Vec3d(0.1, 0.05, -0.08);
  b.accel.initial_std = Vec3d::Constant(0.03);
  b.accel.rw_rate = Vec3d::Constant(3e-3);
  b.accel.ramp_rate = Vec3d(1e-3, 0, 0);
  return b;
}

}  // namespace

TEST_CASE("random-walk bias spreads as eta * sqrt(T)") {
  BiasProcessConfig cfg;
  cfg.gyro.rw_rate = Vec3d::Constant(0.02);
  const double T = 1.0;
  Rng rng(123);
  double s2 = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const BiasTrack tr = generate_bias_track(cfg, 200.0, T, rng);
    const double d = tr.b_g.back().x() - tr.b_g.front().x();
    s2 += d * d;
  }
  CHECK(std::sqrt(s2 / n) == doctest::Approx(0.02 * std::sqrt(T)).epsilon(0.05));
}

TEST_CASE("bias track degenerate and ramp cases") {
  Rng rng(1);
  const BiasTrack zero = generate_bias_track(BiasProcessConfig{}, 200.0, 2.0, rng);
  for (std::size_t k = 0; k < zero.size(); ++k) {
    CHECK(zero.b_g[k].isZero(0.0));
    CHECK(zero.b_a[k].isZero(0.0));
  }

  BiasProcessConfig ramp;
  ramp.gyro.ramp_rate = Vec3d(1e-4, 0, 0);
  const BiasTrack r = generate_bias_track(ramp, 200.0, 10.0, rng);
  CHECK(r.t.back() == doctest::Approx(10.0).epsilon(1e-15));
  CHECK(std::abs(r.b_g.back().x() - r.b_g.front().x() - 1e-3) < 1e-15);

  BiasProcessConfig bad;
  bad.accel.gm_sigma = Vec3d::Constant(1.0);
  bad.accel.gm_tau = 0.0;
  CHECK_THROWS_AS(generate_bias_track(bad, 200.0, 1.0, rng), ConfigError);
  CHECK_THROWS_AS(generate_bias_track(BiasProcessConfig{}, 1.0, 1.0, rng), ConfigError);
}

TEST_CASE("zero-amplitude motion is stationary") {
  MotionConfig cfg;
  Rng rng(3);
  const TrajectorySamples tr = generate_trajectory(cfg, 2.0, 100.0, rng);
  for (std::size_t k = 0; k < tr.states.size(); ++k) {
    CHECK(tr.states[k].v.isZero(0.0));
    CHECK(tr.a_G[k].isZero(0.0));
    CHECK(tr.omega_I[k].isZero(0.0));
  }
  CHECK_THROWS_AS(generate_trajectory(cfg, 1.0, 20.0, rng), ConfigError);
}

TEST_CASE("single sinusoid derivatives are analytic") {
  MotionModel m;
  const double A = 0.7, f = 1.3;
  m.position[0] = {{A, f, 0.0}};
  const auto times = sample_times(3.0, 200.0);
  const TrajectorySamples tr = sample_motion(m, times);
  for (std::size_t k = 0; k < times.size(); ++k) {
    const double w = 2 * std::numbers::pi * f;
    CHECK(std::abs(tr.a_G[k].x() + A * w * w * std::sin(w * times[k])) < 1e-12);
  }
}

TEST_CASE("returned derivatives match finite differences") {
  Rng rng(21);
  const MotionModel m = MotionModel::draw(lively_motion(), rng);
  for (double h : {1e-3, 5e-4}) {
    double worst_v = 0, worst_w = 0;
    for (double t = 0.1; t < 5.0; t += 0.37) {
      const MotionPoint a = m.evaluate(t - h), b = m.evaluate(t + h), c = m.evaluate(t);
      worst_v = std::max(worst_v, ((b.p - a.p) / (2 * h) - c.v).norm());
      // C' = -[w x] C
      const Mat3d dC = (quat_to_rot(b.q) - quat_to_rot(a.q)) / (2 * h);
      worst_w = std::max(worst_w, (dC + skew(c.omega_I) * quat_to_rot(c.q)).norm());
    }
    MESSAGE("h=" << h << " v err " << worst_v << " omega err " << worst_w);
    CHECK(worst_v < 100 * h * h);
    CHECK(worst_w < 100 * h * h);
  }
}

MotionConfig stop_and_go() {
  MotionConfig m;
  m.position_amplitude = Vec3d(1.0, 1.0, 0.0);
  m.angle_amplitude = Vec3d(0.0, 0.0, 1.0);
  m.min_freq_hz = 0.1;
  m.max_freq_hz = 0.5;
  m.go_min_s = 0.6;
  m.go_max_s = 1.5;
  m.stop_min_s = 0.2;
  m.stop_max_s = 0.8;
  m.ramp_s = 0.2;
  return m;
}

TEST_CASE("stop-and-go phases are exactly at rest and start and end smoothly") {
  Rng rng(5);
  const MotionModel m = MotionModel::draw(stop_and_go(), rng, 30.0);
  REQUIRE(m.gates.size() > 20);
  CHECK(m.gates.back().kind == MotionModel::GateKind::stop);
  CHECK(m.evaluate(31.0).v.norm() == 0.0);
  int stops = 0;
  for (std::size_t k = 0; k + 1 < m.gates.size(); ++k) {
    const auto& g = m.gates[k];
    CHECK(m.gates[k + 1].t0 >= g.t0);
    // clock continuous across every boundary
    CHECK(std::abs(m.clock(m.gates[k + 1].t0 - 1e-9).s - m.gates[k + 1].s0) < 1e-8);
    if (g.kind != MotionModel::GateKind::stop || m.gates[k + 1].t0 - g.t0 < 1e-6) continue;
    ++stops;
    const MotionPoint p = m.evaluate(0.5 * (g.t0 + m.gates[k + 1].t0));
    CHECK(p.v.norm() == 0.0);
    CHECK(p.a_G.norm() == 0.0);
    CHECK(p.omega_I.norm() == 0.0);
  }
  CHECK(stops > 10);

  // planar motion keeps gravity on the body z axis
  const MotionPoint p = m.evaluate(12.3);
  CHECK(std::abs(quat_to_rot(p.q).row(2).head<2>().norm()) < 1e-12);
}

TEST_CASE("stop-and-go derivatives match finite differences through the ramps") {
  Rng rng(6);
  const MotionModel m = MotionModel::draw(stop_and_go(), rng, 20.0);
  const double h = 1e-4;
  double worst_v = 0, worst_a = 0, worst_w = 0, worst_s = 0;
  for (double t = 0.05; t < 20.0; t += 0.0137) {
    const MotionPoint a = m.evaluate(t - h), b = m.evaluate(t + h), c = m.evaluate(t);
    worst_v = std::max(worst_v, ((b.p - a.p) / (2 * h) - c.v).norm());
    worst_a = std::max(worst_a, ((b.v - a.v) / (2 * h) - c.a_G).norm());
    const Mat3d dC = (quat_to_rot(b.q) - quat_to_rot(a.q)) / (2 * h);
    worst_w = std::max(worst_w, (dC + skew(c.omega_I) * quat_to_rot(c.q)).norm());
    worst_s = std::max(worst_s, std::abs((m.clock(t + h).s - m.clock(t - h).s) / (2 * h) - m.clock(t).rate));
  }
  MESSAGE("v " << worst_v << " a " << worst_a << " omega " << worst_w << " clock " << worst_s);
  CHECK(worst_v < 1e-6);
  CHECK(worst_a < 1e-4);
  CHECK(worst_w < 1e-6);
  CHECK(worst_s < 1e-6);
}

TEST_CASE("stop-and-go config validation and default off") {
  MotionConfig bad = stop_and_go();
  bad.go_min_s = 0.3;  // shorter than two ramps
  Rng rng(1);
  CHECK_THROWS_AS(MotionModel::draw(bad, rng, 5.0), ConfigError);
  bad = stop_and_go();
  bad.stop_min_s = 1.0;
  CHECK_THROWS_AS(MotionModel::draw(bad, rng, 5.0), ConfigError);
  CHECK(MotionModel::draw(lively_motion(), rng, 5.0).gates.empty());
}

TEST_CASE("stop-and-go sequences round trip through the integrator") {
  const Sequence clean = synthesize_sequence(stop_and_go(), BiasProcessConfig{}, {}, {}, 10.0, 100, 4);
  double worst = 0;
  for (const Window& w : make_windows(clean, 1.0, 0.5)) {
    const Trajectory tr = integrate(w.init_state, w.samples, BiasState{});
    worst = std::max(worst, (tr.back().p - w.final_state.p).norm());
  }
  MESSAGE("worst 1 s position error " << worst);
  CHECK(worst < 1e-4);
}

TEST_CASE("synthesize_sequence is deterministic and consistent with the integrator") {
  const Sequence a = synthesize_sequence(lively_motion(), busy_bias(), NoiseParams{1e-3, 1e-2, 0, 0}, {}, 3.0, 200, 7);
  const Sequence b = synthesize_sequence(lively_motion(), busy_bias(), NoiseParams{1e-3, 1e-2, 0, 0}, {}, 3.0, 200, 7);
  REQUIRE(a.size() == b.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    CHECK(a.samples[k].omega_m == b.samples[k].omega_m);
    CHECK(a.samples[k].accel_m == b.samples[k].accel_m);
    CHECK(a.gt_bias.b_a[k] == b.gt_bias.b_a[k]);
  }

  MotionConfig gentle = lively_motion();
  gentle.max_freq_hz = 0.8;
  const Sequence clean = synthesize_sequence(gentle, BiasProcessConfig{}, {}, {}, 1.0, 200, 8);
  const Trajectory tr = integrate(clean.gt_states.front(), clean.samples, BiasState{});
  CHECK((tr.back().p - clean.gt_states.back().p).norm() < 1e-6);

  const Sequence biased = synthesize_sequence(gentle, busy_bias(), {}, {}, 1.0, 200, 8);
  const Trajectory tb = integrate(biased.gt_states.front(), biased.samples, biased.gt_bias);
  CHECK((tb.back().p - biased.gt_states.back().p).norm() < 1e-6);
  CHECK((tb.back().p - tr.back().p).norm() < 1e-12);
}

TEST_CASE("interpolate_bias") {
  BiasTrack tr;
  tr.push_back(0.0, {Vec3d(0, 1, 2), Vec3d(3, 4, 5)});
  tr.push_back(0.1, {Vec3d(1, 1, 0), Vec3d(5, 4, 3)});
  tr.push_back(0.3, {Vec3d(2, 0, 0), Vec3d(0, 0, 0)});

  const std::vector<double> nodes = {0.0, 0.1, 0.3};
  const BiasTrack at_nodes = interpolate_bias(tr, nodes);
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(at_nodes.b_g[k] == tr.b_g[k]);
    CHECK(at_nodes.b_a[k] == tr.b_a[k]);
  }
  const std::vector<double> mid = {0.05};
  CHECK((interpolate_bias(tr, mid).b_g[0] - Vec3d(0.5, 1, 1)).norm() < 1e-15);
  const std::vector<double> outside = {-1.0, 5.0};
  const BiasTrack clamped = interpolate_bias(tr, outside);
  CHECK(clamped.b_g[0] == tr.b_g[0]);
  CHECK(clamped.b_a[1] == tr.b_a[2]);

  // A track that is linear in time is reproduced exactly anywhere.
  const Vec3d slope(0.01, -0.02, 0.03), off(1, 2, 3);
  BiasTrack lin;
  for (int k = 0; k < 21; ++k) {
    const double t = 0.2 * k;
    lin.push_back(t, {off + slope * t, -off + 2 * slope * t});
  }
  std::vector<double> q;
  for (double t = 0.0; t <= 4.0; t += 0.0137) q.push_back(t);
  const BiasTrack li = interpolate_bias(lin, q);
  double max_step = 0;
  for (std::size_t k = 0; k < q.size(); ++k) {
    CHECK((li.b_g[k] - (off + slope * q[k])).norm() < 1e-12);
    CHECK((li.b_a[k] - (-off + 2 * slope * q[k])).norm() < 1e-12);
    if (k > 0) max_step = std::max(max_step, (li.b_a[k] - li.b_a[k - 1]).cwiseAbs().maxCoeff());
  }
  CHECK(max_step <= 2 * 0.03 * 0.0137 + 1e-12);

  BiasTrack single;
  single.push_back(0.0, {});
  CHECK_THROWS_AS(interpolate_bias(single, q), DataError);
}

TEST_CASE("make_windows counts and index arithmetic") {
  const Sequence seq = synthesize_sequence(lively_motion(), busy_bias(), {}, {}, 10.0, 200, 3);
  const auto w = make_windows(seq, 1.0, 0.5);
  CHECK(w.size() == 19);
  for (const auto& x : w) CHECK(x.size() == 200);
  for (std::size_t i = 1; i < w.size(); ++i) {
    // Successor starts stride samples later and shares W - stride samples.
    CHECK(w[i].samples[0].t == w[i - 1].samples[100].t);
    CHECK(w[i].samples[99].t == w[i - 1].samples[199].t);
  }
  CHECK(w[3].init_state.t == w[3].samples.front().t);
  CHECK(w[3].final_state.t == w[3].samples.back().t);
  CHECK(std::abs((w[3].samples.back().t - w[3].samples.front().t) - 1.0) <= 1.0 / 200 + 1e-12);

  CHECK(make_windows(seq, 1.0, 0.0).size() == 10);
  CHECK_THROWS_AS(make_windows(seq, 1.0, 0.96), ConfigError);
  CHECK_THROWS_AS(make_windows(seq, 1.0, -0.1), ConfigError);
  CHECK_THROWS_AS(make_windows(seq, 20.0, 0.5), DataError);
}

TEST_CASE("window seeds are reproducible and distinct") {
  std::set<std::uint64_t> seen;
  for (int s = 0; s < 10; ++s)
    for (int w = 0; w < 100; ++w) seen.insert(window_seed(42, s, w));
  CHECK(seen.size() == 1000);
  CHECK(window_seed(42, 3, 7) == window_seed(42, 3, 7));
  CHECK(window_seed(42, 3, 7) != window_seed(43, 3, 7));
}

TEST_CASE("load_euroc parses ASL rows") {
  const fs::path dir = scratch_dir("euroc_parse") / "MH_01";
  fs::create_directories(dir / "imu0");
  fs::create_directories(dir / "state_groundtruth_estimate0");
  {
    std::ofstream f(dir / "imu0" / "data.csv");
    f << "#timestamp [ns],w_RS_S_x [rad s^-1],w_RS_S_y [rad s^-1],w_RS_S_z [rad s^-1],a_RS_S_x [m s^-2],"
         "a_RS_S_y [m s^-2],a_RS_S_z [m s^-2]\n";
    f << "1403636579758555392,-0.099134701513277898,0.14032447186034408,0.029322243061940043,"
         "8.1476917083333333,-0.37592158333333331,-2.4026292499999999\n";
    f << "1403636579763555584,-0.099134701513277898,0.14660765716752704,0.029321234375,"
         "8.033280791666666,-0.40861041666666664,-2.4026292499999999\n";
  }
  {
    std::ofstream f(dir / "state_groundtruth_estimate0" / "data.csv");
    f << "#timestamp, p_RS_R_x [m], ...\n";
    f << "1403636579758555392,4.688,-1.786,0.783,0.534,-0.153,-0.827,-0.082,-0.027,0.033,-0.800,-0.003,0.021,0.078,"
         "-0.025,0.136,0.075\n";
    f << "1403636579763555584,4.688,-1.786,0.783,0.534,-0.153,-0.827,-0.082,-0.027,0.033,-0.800,-0.003,0.021,0.078,"
         "-0.025,0.136,0.077\n";
  }
  const Sequence seq = load_euroc(dir);
  REQUIRE(seq.size() == 2);
  CHECK(seq.meta.t0_ns == 1403636579758555392LL);
  CHECK(seq.samples[0].t == 0.0);
  CHECK(std::llround(seq.samples[1].t * 1e9) == 5000192);
  CHECK(seq.samples[0].omega_m == Vec3d(-0.099134701513277898, 0.14032447186034408, 0.029322243061940043));
  CHECK(seq.samples[0].accel_m == Vec3d(8.1476917083333333, -0.37592158333333331, -2.4026292499999999));
  CHECK(seq.gt_bias.b_a[1].z() == 0.077);
  CHECK(seq.gt_states[0].q.w() == doctest::Approx(0.534 / std::sqrt(0.534 * 0.534 + 0.153 * 0.153 + 0.827 * 0.827 +
                                                                     0.082 * 0.082)));
}

TEST_CASE("load_euroc errors") {
  const fs::path dir = scratch_dir("euroc_errors");
  fs::create_directories(dir / "imu0");
  fs::create_directories(dir / "state_groundtruth_estimate0");
  {
    std::ofstream f(dir / "imu0" / "data.csv");
    f << "#timestamp\n1403636579758555392,0,0,0,0,0,9.8\n";
  }
  { std::ofstream f(dir / "state_groundtruth_estimate0" / "data.csv"); }
  CHECK_THROWS_WITH_AS(load_euroc(dir), doctest::Contains("empty overlap"), DataError);

  {
    std::ofstream f(dir / "imu0" / "data.csv");
    f << "#timestamp\n1403636579758555392,0,0,0,0,0,9.8\n1403636579763555584,0,zero,0,0,0,9.8\n";
  }
  CHECK_THROWS_WITH_AS(load_euroc(dir), doctest::Contains("data.csv:3"), DataError);
  CHECK_THROWS_AS(load_euroc(dir / "missing"), DataError);
}

TEST_CASE("ASL round trip is lossless") {
  const Sequence seq =
      synthesize_sequence(lively_motion(), busy_bias(), NoiseParams{1e-3, 1e-2, 1e-5, 1e-4}, {}, 2.0, 200, 11, "rt");
  const fs::path dir = scratch_dir("roundtrip") / "rt";
  write_euroc(dir, seq);
  write_bias_csv(dir / "bias.csv", seq.gt_bias);
  const Sequence back = load_euroc(dir);
  REQUIRE(back.size() == seq.size());
  for (std::size_t k = 0; k < seq.size(); ++k) {
    CHECK(back.samples[k].t == seq.samples[k].t);
    CHECK(back.samples[k].omega_m == seq.samples[k].omega_m);
    CHECK(back.samples[k].accel_m == seq.samples[k].accel_m);
    CHECK(back.gt_states[k].p == seq.gt_states[k].p);
    CHECK(back.gt_states[k].v == seq.gt_states[k].v);
    CHECK(back.gt_states[k].q.coeffs() == seq.gt_states[k].q.coeffs());
    CHECK(back.gt_bias.b_g[k] == seq.gt_bias.b_g[k]);
    CHECK(back.gt_bias.b_a[k] == seq.gt_bias.b_a[k]);
  }
  CHECK(back.meta.rate_hz == 200.0);

  const BiasTrack side = read_bias_csv(dir / "bias.csv");
  CHECK(side.t == seq.gt_bias.t);
  CHECK(side.b_g == seq.gt_bias.b_g);
  CHECK(side.b_a == seq.gt_bias.b_a);
}
