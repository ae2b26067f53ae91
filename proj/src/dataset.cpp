#include "biasdiff/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <ostream>

#include "biasdiff/errors.hpp"
#include "csv.hpp"

namespace biasdiff {

namespace fs = std::filesystem;

void BiasProcessConfig::validate() const {
  for (const SensorBiasConfig* s : {&gyro, &accel}) {
    if ((s->initial_std.array() < 0).any() || (s->rw_rate.array() < 0).any() || (s->gm_sigma.array() < 0).any()) {
      throw ConfigError("bias process magnitudes must be non-negative");
    }
    if ((s->gm_sigma.array() > 0).any() && !(s->gm_tau > 0)) {
      throw ConfigError("Gauss-Markov time constant must be positive");
    }
  }
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  // splitmix64 finalizer over a combined word.
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t window_seed(std::uint64_t global_seed, int sequence_id, int window_index) {
  return mix_seed(mix_seed(global_seed, static_cast<std::uint64_t>(sequence_id)),
                  static_cast<std::uint64_t>(window_index));
}

std::vector<double> sample_times(double duration, double rate_hz) {
  if (!(rate_hz > 0) || !(duration > 0)) throw ConfigError("sample_times: rate and duration must be positive");
  const auto period_ns = static_cast<std::int64_t>(std::llround(1e9 / rate_hz));
  const auto n = static_cast<std::size_t>(std::llround(duration * rate_hz)) + 1;
  std::vector<double> t(n);
  for (std::size_t k = 0; k < n; ++k) t[k] = static_cast<double>(static_cast<std::int64_t>(k) * period_ns) * 1e-9;
  return t;
}

// ---------------------------------------------------------------------------
// Bias processes

namespace {

struct AxisProcess {
  Vec3d rw = Vec3d::Zero();
  Vec3d gm = Vec3d::Zero();
};

Vec3d draw_normal(Rng& rng) { return gaussian_vec3(rng, 1.0); }

}  // namespace

BiasTrack generate_bias_track(const BiasProcessConfig& cfg, std::span<const double> times, Rng& rng) {
  cfg.validate();
  if (times.size() < 2) throw ConfigError("generate_bias_track: need at least two samples");

  const SensorBiasConfig* sensors[2] = {&cfg.gyro, &cfg.accel};
  Vec3d b0[2];
  AxisProcess proc[2];
  for (int s = 0; s < 2; ++s) {
    b0[s] = sensors[s]->initial_mean + sensors[s]->initial_std.cwiseProduct(draw_normal(rng));
    proc[s].gm = sensors[s]->gm_sigma.cwiseProduct(draw_normal(rng));
  }

  BiasTrack track;
  track.t.reserve(times.size());
  track.b_g.reserve(times.size());
  track.b_a.reserve(times.size());
  for (std::size_t k = 0; k < times.size(); ++k) {
    if (k > 0) {
      const double dt = times[k] - times[k - 1];
      for (int s = 0; s < 2; ++s) {
        const SensorBiasConfig& c = *sensors[s];
        proc[s].rw += c.rw_rate.cwiseProduct(draw_normal(rng)) * std::sqrt(dt);
        const double phi = c.gm_tau > 0 ? std::exp(-dt / c.gm_tau) : 0.0;
        proc[s].gm = phi * proc[s].gm + std::sqrt(1.0 - phi * phi) * c.gm_sigma.cwiseProduct(draw_normal(rng));
      }
    }
    const double elapsed = times[k] - times[0];
    BiasState b;
    b.b_g = b0[0] + proc[0].rw + proc[0].gm + cfg.gyro.ramp_rate * elapsed;
    b.b_a = b0[1] + proc[1].rw + proc[1].gm + cfg.accel.ramp_rate * elapsed;
    track.push_back(times[k], b);
  }
  return track;
}

BiasTrack generate_bias_track(const BiasProcessConfig& cfg, double rate_hz, double duration, Rng& rng) {
  if (duration * rate_hz < 2) throw ConfigError("generate_bias_track: duration * rate must be >= 2");
  const std::vector<double> t = sample_times(duration, rate_hz);
  return generate_bias_track(cfg, t, rng);
}

// ---------------------------------------------------------------------------
// Trajectories

namespace {

struct Channel {
  double value = 0, rate = 0, accel = 0;
};

Channel eval_channel(const std::vector<Sinusoid>& comps, double t) {
  Channel c;
  for (const auto& s : comps) {
    const double w = 2.0 * std::numbers::pi * s.freq_hz;
    const double arg = w * t + s.phase;
    const double sn = std::sin(arg);
    const double cs = std::cos(arg);
    c.value += s.amplitude * sn;
    c.rate += s.amplitude * w * cs;
    c.accel -= s.amplitude * w * w * sn;
  }
  return c;
}

}  // namespace

MotionModel::Clock MotionModel::clock(double t) const {
  if (gates.empty()) return {t, 1.0, 0.0};
  auto it = std::upper_bound(gates.begin(), gates.end(), t, [](double x, const Gate& g) { return x < g.t0; });
  if (it != gates.begin()) --it;
  const Gate& g = *it;
  const double pi = std::numbers::pi;
  const double dt = std::max(0.0, t - g.t0);
  const double u = ramp_s > 0 ? std::min(1.0, dt / ramp_s) : 1.0;
  switch (g.kind) {
    case GateKind::stop:
      return {g.s0, 0.0, 0.0};
    case GateKind::ramp_up: {
      // speed u - sin(2 pi u)/(2 pi): zero rate, accel and jerk at both ends
      const double c = std::cos(2 * pi * u);
      return {g.s0 + ramp_s * (0.5 * u * u + (c - 1) / (4 * pi * pi)), u - std::sin(2 * pi * u) / (2 * pi),
              (1 - c) / ramp_s};
    }
    case GateKind::ramp_down: {
      const double c = std::cos(2 * pi * u);
      return {g.s0 + ramp_s * (u - 0.5 * u * u - (c - 1) / (4 * pi * pi)), 1 - u + std::sin(2 * pi * u) / (2 * pi),
              -(1 - c) / ramp_s};
    }
    case GateKind::go:
      break;
  }
  return {g.s0 + dt, 1.0, 0.0};
}

MotionPoint MotionModel::evaluate(double t) const {
  // chain rule through the clock: d/dt = s' d/ds, d2/dt2 = s'^2 d2/ds2 + s'' d/ds
  const Clock k = clock(t);
  MotionPoint m;
  for (int i = 0; i < 3; ++i) {
    const Channel c = eval_channel(position[i], k.s);
    m.p[i] = c.value;
    m.v[i] = c.rate * k.rate;
    m.a_G[i] = c.accel * k.rate * k.rate + c.rate * k.accel;
  }
  Channel roll = eval_channel(angles[0], k.s);
  Channel pitch = eval_channel(angles[1], k.s);
  Channel yaw = eval_channel(angles[2], k.s);
  roll.rate *= k.rate;
  pitch.rate *= k.rate;
  yaw.rate *= k.rate;
  yaw.value += heading;

  const Mat3d R_GI = (Eigen::AngleAxisd(yaw.value, Vec3d::UnitZ()) * Eigen::AngleAxisd(pitch.value, Vec3d::UnitY()) *
                      Eigen::AngleAxisd(roll.value, Vec3d::UnitX()))
                         .toRotationMatrix();
  m.q = rot_to_quat<double>(R_GI.transpose());

  const double sr = std::sin(roll.value), cr = std::cos(roll.value);
  const double sp = std::sin(pitch.value), cp = std::cos(pitch.value);
  m.omega_I = Vec3d(roll.rate - yaw.rate * sp, pitch.rate * cr + yaw.rate * sr * cp,
                    -pitch.rate * sr + yaw.rate * cr * cp);
  return m;
}

void MotionConfig::validate() const {
  if (components < 0 || min_freq_hz < 0 || max_freq_hz < min_freq_hz) {
    throw ConfigError("motion config: invalid component count or frequency band");
  }
  if (stop_max_s > 0) {
    if (!(ramp_s > 0) || go_min_s < 2 * ramp_s || go_max_s < go_min_s || stop_min_s < 0 || stop_max_s < stop_min_s) {
      throw ConfigError("motion config: stop-and-go needs ramp > 0, 2 ramp <= go_min <= go_max, 0 <= stop_min <= stop_max");
    }
  }
}

MotionModel MotionModel::draw(const MotionConfig& cfg, Rng& rng, double duration) {
  cfg.validate();
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  MotionModel m;
  auto fill = [&](std::vector<Sinusoid>& comps, double amp) {
    for (int k = 0; k < cfg.components; ++k) {
      Sinusoid s;
      s.amplitude = amp * (0.5 + 0.5 * unit(rng)) / cfg.components;
      s.freq_hz = cfg.min_freq_hz + (cfg.max_freq_hz - cfg.min_freq_hz) * unit(rng);
      s.phase = 2.0 * std::numbers::pi * unit(rng);
      if (amp > 0) comps.push_back(s);
    }
  };
  for (int i = 0; i < 3; ++i) fill(m.position[i], cfg.position_amplitude[i]);
  for (int i = 0; i < 3; ++i) fill(m.angles[i], cfg.angle_amplitude[i]);
  m.heading = cfg.random_heading ? std::numbers::pi * (2.0 * unit(rng) - 1.0) : 0.0;

  if (cfg.stop_max_s > 0) {
    auto between = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
    const double r = cfg.ramp_s;
    m.ramp_s = r;
    double t = 0, s = 0;
    // starts at rest, ends with a stop that holds forever
    m.gates.push_back({t, s, GateKind::stop});
    t += between(0.0, cfg.stop_max_s);
    while (t <= duration) {
      const double go = between(cfg.go_min_s, cfg.go_max_s);
      m.gates.push_back({t, s, GateKind::ramp_up});
      t += r;
      s += 0.5 * r;
      m.gates.push_back({t, s, GateKind::go});
      t += go - 2 * r;
      s += go - 2 * r;
      m.gates.push_back({t, s, GateKind::ramp_down});
      t += r;
      s += 0.5 * r;
      m.gates.push_back({t, s, GateKind::stop});
      t += between(cfg.stop_min_s, cfg.stop_max_s);
    }
  }
  return m;
}

TrajectorySamples sample_motion(const MotionModel& model, std::span<const double> times) {
  TrajectorySamples out;
  out.states.reserve(times.size());
  out.omega_I.reserve(times.size());
  out.a_G.reserve(times.size());
  for (double t : times) {
    const MotionPoint m = model.evaluate(t);
    out.states.push_back(NavState{m.q, m.p, m.v, t});
    out.omega_I.push_back(m.omega_I);
    out.a_G.push_back(m.a_G);
  }
  return out;
}

TrajectorySamples generate_trajectory(const MotionConfig& cfg, double duration, double rate_hz, Rng& rng) {
  if (rate_hz < 50.0) throw ConfigError("generate_trajectory: rate must be at least 50 Hz");
  const MotionModel model = MotionModel::draw(cfg, rng, duration);
  const std::vector<double> t = sample_times(duration, rate_hz);
  return sample_motion(model, t);
}

Sequence synthesize_sequence(const MotionConfig& motion, const BiasProcessConfig& bias, const NoiseParams& noise,
                             const ImuIntrinsics& intr, double duration, double rate_hz, std::uint64_t seed,
                             const std::string& name) {
  Rng traj_rng(mix_seed(seed, 1));
  Rng bias_rng(mix_seed(seed, 2));
  Rng noise_rng(mix_seed(seed, 3));

  TrajectorySamples traj = generate_trajectory(motion, duration, rate_hz, traj_rng);
  const std::vector<double> times = sample_times(duration, rate_hz);

  Sequence seq;
  seq.gt_bias = generate_bias_track(bias, times, bias_rng);
  seq.meta.name = name;
  seq.meta.rate_hz = rate_hz;
  seq.meta.source = "synthetic";
  seq.samples.reserve(times.size());
  const double dt = 1.0 / rate_hz;
  for (std::size_t k = 0; k < times.size(); ++k) {
    ImuSample s = synthesize_sample(traj.states[k].q, traj.a_G[k], traj.omega_I[k], seq.gt_bias.at(k), intr, noise,
                                    dt, noise_rng);
    s.t = times[k];
    seq.samples.push_back(s);
  }
  seq.gt_states = std::move(traj.states);
  return seq;
}

// ---------------------------------------------------------------------------
// Interpolation and windows

BiasTrack interpolate_bias(const BiasTrack& track, std::span<const double> times) {
  if (track.size() < 2) throw DataError("interpolate_bias: track needs at least two points");
  track.validate();
  BiasTrack out;
  out.t.reserve(times.size());
  out.b_g.reserve(times.size());
  out.b_a.reserve(times.size());
  for (double q : times) {
    if (q <= track.t.front()) {
      out.push_back(q, track.at(0));
      continue;
    }
    if (q >= track.t.back()) {
      out.push_back(q, track.at(track.size() - 1));
      continue;
    }
    const auto it = std::upper_bound(track.t.begin(), track.t.end(), q);
    const auto i = static_cast<std::size_t>(it - track.t.begin()) - 1;
    const double s = (q - track.t[i]) / (track.t[i + 1] - track.t[i]);
    BiasState b;
    b.b_g = track.b_g[i] + s * (track.b_g[i + 1] - track.b_g[i]);
    b.b_a = track.b_a[i] + s * (track.b_a[i + 1] - track.b_a[i]);
    out.push_back(q, b);
  }
  return out;
}

std::vector<Window> make_windows(const Sequence& seq, double duration, double overlap, int sequence_id) {
  if (!(overlap >= 0.0 && overlap <= 0.95)) throw ConfigError("make_windows: overlap must lie in [0, 0.95]");
  if (!(duration > 0)) throw ConfigError("make_windows: duration must be positive");
  const auto W = static_cast<std::size_t>(std::llround(duration * seq.meta.rate_hz));
  const auto stride = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(W * (1.0 - overlap))));
  if (W < 2 || seq.size() < W) throw DataError("make_windows: sequence '" + seq.meta.name + "' shorter than a window");
  if (seq.gt_states.size() != seq.size() || seq.gt_bias.size() != seq.size()) {
    throw DataError("make_windows: ground truth not aligned with samples");
  }

  std::vector<Window> out;
  const std::size_t count = (seq.size() - W) / stride + 1;
  out.reserve(count);
  for (std::size_t w = 0; w < count; ++w) {
    const std::size_t s = w * stride;
    Window win;
    win.samples.assign(seq.samples.begin() + s, seq.samples.begin() + s + W);
    win.gt_bias.t.assign(seq.gt_bias.t.begin() + s, seq.gt_bias.t.begin() + s + W);
    win.gt_bias.b_g.assign(seq.gt_bias.b_g.begin() + s, seq.gt_bias.b_g.begin() + s + W);
    win.gt_bias.b_a.assign(seq.gt_bias.b_a.begin() + s, seq.gt_bias.b_a.begin() + s + W);
    win.init_state = seq.gt_states[s];
    win.final_state = seq.gt_states[s + W - 1];
    win.sequence_id = sequence_id;
    win.window_index = static_cast<int>(w);
    out.push_back(std::move(win));
  }
  return out;
}

// ---------------------------------------------------------------------------
// EuRoC ASL CSV

namespace {

struct GtRow {
  double t = 0.0;
  Vec3d p, v;
  Quatd q;
  BiasState b;
};

NavState interpolate_state(const std::vector<GtRow>& gt, double q) {
  auto to_state = [](const GtRow& r) { return NavState{r.q, r.p, r.v, r.t}; };
  if (q <= gt.front().t) return to_state(gt.front());
  if (q >= gt.back().t) return to_state(gt.back());
  const auto it = std::upper_bound(gt.begin(), gt.end(), q, [](double v, const GtRow& r) { return v < r.t; });
  const auto i = static_cast<std::size_t>(it - gt.begin()) - 1;
  const double s = (q - gt[i].t) / (gt[i + 1].t - gt[i].t);
  if (s == 0.0) return to_state(gt[i]);
  NavState st;
  st.p = gt[i].p + s * (gt[i + 1].p - gt[i].p);
  st.v = gt[i].v + s * (gt[i + 1].v - gt[i].v);
  st.q = quat_slerp(gt[i].q, gt[i + 1].q, s);
  return st;
}

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::int64_t to_ns(std::int64_t t0_ns, double t) { return t0_ns + std::llround(t * 1e9); }

}  // namespace

Sequence load_euroc(const fs::path& dir) {
  const fs::path imu_path = dir / "imu0" / "data.csv";
  const fs::path gt_path = dir / "state_groundtruth_estimate0" / "data.csv";
  const auto imu_rows = csv::read_rows(imu_path);
  const auto gt_rows = csv::read_rows(gt_path);

  std::vector<std::int64_t> imu_ns;
  std::vector<ImuSample> imu;
  imu_ns.reserve(imu_rows.size());
  imu.reserve(imu_rows.size());
  for (const auto& r : imu_rows) {
    csv::expect_columns(r, 7, imu_path);
    imu_ns.push_back(csv::to_int64(r.fields[0], imu_path, r.line));
    ImuSample s;
    for (int i = 0; i < 3; ++i) s.omega_m[i] = csv::to_double(r.fields[1 + i], imu_path, r.line);
    for (int i = 0; i < 3; ++i) s.accel_m[i] = csv::to_double(r.fields[4 + i], imu_path, r.line);
    if (imu_ns.size() > 1 && imu_ns.back() <= imu_ns[imu_ns.size() - 2]) {
      throw DataError(csv::where(imu_path, r.line) + ": timestamps not strictly increasing");
    }
    imu.push_back(s);
  }

  std::vector<std::int64_t> gt_ns;
  std::vector<GtRow> gt_raw;
  for (const auto& r : gt_rows) {
    csv::expect_columns(r, 17, gt_path);
    gt_ns.push_back(csv::to_int64(r.fields[0], gt_path, r.line));
    double f[16];
    for (int i = 0; i < 16; ++i) f[i] = csv::to_double(r.fields[1 + i], gt_path, r.line);
    GtRow g;
    g.p = Vec3d(f[0], f[1], f[2]);
    // ASL stores the Hamilton body-to-world quaternion as (w, x, y, z); its
    // components equal the JPL world-to-body quaternion used here.
    g.q = Quatd(f[4], f[5], f[6], f[3]);
    if (std::abs(g.q.norm() - 1.0) > 1e-6) g.q = g.q.normalized();
    g.v = Vec3d(f[7], f[8], f[9]);
    g.b.b_g = Vec3d(f[10], f[11], f[12]);
    g.b.b_a = Vec3d(f[13], f[14], f[15]);
    if (gt_ns.size() > 1 && gt_ns.back() <= gt_ns[gt_ns.size() - 2]) {
      throw DataError(csv::where(gt_path, r.line) + ": timestamps not strictly increasing");
    }
    gt_raw.push_back(g);
  }

  if (imu.empty() || gt_raw.empty()) throw DataError("load_euroc: empty overlap between IMU and ground truth");
  const std::int64_t lo = std::max(imu_ns.front(), gt_ns.front());
  const std::int64_t hi = std::min(imu_ns.back(), gt_ns.back());
  std::size_t first = 0;
  while (first < imu_ns.size() && imu_ns[first] < lo) ++first;
  std::size_t last = first;
  while (last < imu_ns.size() && imu_ns[last] <= hi) ++last;
  if (lo > hi || last - first < 1) throw DataError("load_euroc: empty overlap between IMU and ground truth");

  Sequence seq;
  seq.meta.name = dir.filename().string();
  if (seq.meta.name.empty()) seq.meta.name = dir.parent_path().filename().string();
  seq.meta.source = "ingested";
  seq.meta.t0_ns = imu_ns[first];
  for (std::size_t k = first; k < last; ++k) {
    ImuSample s = imu[k];
    s.t = static_cast<double>(imu_ns[k] - seq.meta.t0_ns) * 1e-9;
    seq.samples.push_back(s);
  }
  for (std::size_t k = 0; k < gt_raw.size(); ++k) gt_raw[k].t = static_cast<double>(gt_ns[k] - seq.meta.t0_ns) * 1e-9;

  std::vector<double> times;
  times.reserve(seq.samples.size());
  for (const auto& s : seq.samples) times.push_back(s.t);

  seq.gt_states.reserve(times.size());
  for (double t : times) {
    NavState st = interpolate_state(gt_raw, t);
    st.t = t;
    seq.gt_states.push_back(st);
  }
  BiasTrack native;
  for (const auto& g : gt_raw) native.push_back(g.t, g.b);
  if (native.size() >= 2) {
    seq.gt_bias = interpolate_bias(native, times);
  } else {
    for (double t : times) seq.gt_bias.push_back(t, native.at(0));
  }

  if (times.size() >= 2) {
    std::vector<double> dts;
    for (std::size_t k = 1; k < times.size(); ++k) dts.push_back(times[k] - times[k - 1]);
    std::nth_element(dts.begin(), dts.begin() + dts.size() / 2, dts.end());
    seq.meta.rate_hz = std::round(1.0 / dts[dts.size() / 2]);
  }
  return seq;
}

void write_euroc(const fs::path& dir, const Sequence& seq) {
  fs::create_directories(dir / "imu0");
  fs::create_directories(dir / "state_groundtruth_estimate0");
  {
    std::ofstream f(dir / "imu0" / "data.csv");
    if (!f) throw DataError("cannot write " + (dir / "imu0" / "data.csv").string());
    f << "#timestamp [ns],w_RS_S_x [rad s^-1],w_RS_S_y [rad s^-1],w_RS_S_z [rad s^-1],"
         "a_RS_S_x [m s^-2],a_RS_S_y [m s^-2],a_RS_S_z [m s^-2]\n";
    for (const auto& s : seq.samples) {
      f << to_ns(seq.meta.t0_ns, s.t);
      for (int i = 0; i < 3; ++i) f << ',' << fmt17(s.omega_m[i]);
      for (int i = 0; i < 3; ++i) f << ',' << fmt17(s.accel_m[i]);
      f << '\n';
    }
  }
  {
    std::ofstream f(dir / "state_groundtruth_estimate0" / "data.csv");
    if (!f) throw DataError("cannot write ground truth for " + dir.string());
    f << "#timestamp, p_RS_R_x [m], p_RS_R_y [m], p_RS_R_z [m], q_RS_w [], q_RS_x [], q_RS_y [], q_RS_z [], "
         "v_RS_R_x [m s^-1], v_RS_R_y [m s^-1], v_RS_R_z [m s^-1], b_w_RS_S_x [rad s^-1], b_w_RS_S_y [rad s^-1], "
         "b_w_RS_S_z [rad s^-1], b_a_RS_S_x [m s^-2], b_a_RS_S_y [m s^-2], b_a_RS_S_z [m s^-2]\n";
    for (std::size_t k = 0; k < seq.gt_states.size(); ++k) {
      const NavState& s = seq.gt_states[k];
      f << to_ns(seq.meta.t0_ns, s.t);
      for (int i = 0; i < 3; ++i) f << ',' << fmt17(s.p[i]);
      f << ',' << fmt17(s.q.w()) << ',' << fmt17(s.q.x()) << ',' << fmt17(s.q.y()) << ',' << fmt17(s.q.z());
      for (int i = 0; i < 3; ++i) f << ',' << fmt17(s.v[i]);
      for (int i = 0; i < 3; ++i) f << ',' << fmt17(seq.gt_bias.b_g[k][i]);
      for (int i = 0; i < 3; ++i) f << ',' << fmt17(seq.gt_bias.b_a[k][i]);
      f << '\n';
    }
  }
}

void write_bias_csv(std::ostream& os, const BiasTrack& track) {
  os << "t,bgx,bgy,bgz,bax,bay,baz\n";
  for (std::size_t k = 0; k < track.size(); ++k) {
    os << fmt17(track.t[k]);
    for (int i = 0; i < 3; ++i) os << ',' << fmt17(track.b_g[k][i]);
    for (int i = 0; i < 3; ++i) os << ',' << fmt17(track.b_a[k][i]);
    os << '\n';
  }
}

void write_bias_csv(const fs::path& path, const BiasTrack& track) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw DataError("cannot write " + path.string());
  write_bias_csv(f, track);
}

BiasTrack read_bias_csv(const fs::path& path) {
  BiasTrack track;
  for (const auto& r : csv::read_rows(path)) {
    csv::expect_columns(r, 7, path);
    double f[7];
    for (int i = 0; i < 7; ++i) f[i] = csv::to_double(r.fields[i], path, r.line);
    track.push_back(f[0], BiasState{Vec3d(f[1], f[2], f[3]), Vec3d(f[4], f[5], f[6])});
  }
  track.validate();
  return track;
}

}  // namespace biasdiff
