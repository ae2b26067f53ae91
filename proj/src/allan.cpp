#include "biasdiff/allan.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <tuple>

#include "biasdiff/dataset.hpp"
#include "biasdiff/errors.hpp"

namespace biasdiff {

std::vector<double> log_taus(double lo, double hi, int per_decade) {
  if (!(lo > 0) || !(hi >= lo) || per_decade < 1) throw ConfigError("log_taus: need 0 < lo <= hi, per_decade >= 1");
  std::vector<double> out;
  const double step = 1.0 / per_decade;
  const double l0 = std::log10(lo), l1 = std::log10(hi);
  for (int i = 0;; ++i) {
    const double l = l0 + i * step;
    if (l > l1 + 1e-12) break;
    out.push_back(std::pow(10.0, l));
  }
  if (out.back() < hi * (1 - 1e-12)) out.push_back(hi);
  return out;
}

namespace {

std::vector<std::size_t> cluster_sizes(std::size_t n, double rate_hz, std::span<const double> taus) {
  if (!(rate_hz > 0)) throw ConfigError("allan_deviation: rate must be positive");
  std::vector<std::size_t> ms;
  for (double tau : taus) {
    const auto m = static_cast<std::size_t>(std::max(1.0, std::round(tau * rate_hz)));
    if (2 * m > n) {
      throw ConfigError("allan_deviation: tau " + std::to_string(tau) + " s needs " + std::to_string(2 * m) +
                        " samples, series has " + std::to_string(n));
    }
    ms.push_back(m);
  }
  std::sort(ms.begin(), ms.end());
  ms.erase(std::unique(ms.begin(), ms.end()), ms.end());
  return ms;
}

// theta_k = sum of the first k samples times tau0; sigma^2(m tau0) =
// sum (theta_{k+2m} - 2 theta_{k+m} + theta_k)^2 / (2 tau^2 (N - 2m + 1)).
std::vector<double> adev_axis(const std::vector<double>& theta, double tau0, const std::vector<std::size_t>& ms) {
  const std::size_t n = theta.size() - 1;
  std::vector<double> out;
  out.reserve(ms.size());
  for (std::size_t m : ms) {
    const std::size_t terms = n - 2 * m + 1;
    double acc = 0.0;
    for (std::size_t k = 0; k < terms; ++k) {
      const double d = theta[k + 2 * m] - 2.0 * theta[k + m] + theta[k];
      acc += d * d;
    }
    const double tau = static_cast<double>(m) * tau0;
    out.push_back(std::sqrt(acc / (2.0 * tau * tau * static_cast<double>(terms))));
  }
  return out;
}

// Removing the first sample keeps theta small over long series and leaves a
// constant signal exactly zero.
std::vector<double> integrate_rate(std::span<const double> y, double tau0) {
  const double mean = y.front();
  std::vector<double> theta(y.size() + 1, 0.0);
  for (std::size_t k = 0; k < y.size(); ++k) theta[k + 1] = theta[k] + (y[k] - mean) * tau0;
  return theta;
}

}  // namespace

AllanCurve allan_deviation(std::span<const double> signal, double rate_hz, std::span<const double> taus) {
  const auto ms = cluster_sizes(signal.size(), rate_hz, taus);
  AllanCurve c;
  for (std::size_t m : ms) c.taus.push_back(static_cast<double>(m) / rate_hz);
  c.adev.push_back(adev_axis(integrate_rate(signal, 1.0 / rate_hz), 1.0 / rate_hz, ms));
  return c;
}

AllanCurve allan_deviation(std::span<const Vec3d> signal, double rate_hz, std::span<const double> taus) {
  const auto ms = cluster_sizes(signal.size(), rate_hz, taus);
  AllanCurve c;
  for (std::size_t m : ms) c.taus.push_back(static_cast<double>(m) / rate_hz);
  std::vector<double> axis(signal.size());
  for (int a = 0; a < 3; ++a) {
    for (std::size_t k = 0; k < signal.size(); ++k) axis[k] = signal[k][a];
    c.adev.push_back(adev_axis(integrate_rate(axis, 1.0 / rate_hz), 1.0 / rate_hz, ms));
  }
  return c;
}

void write_allan_csv(const std::string& path, const AllanCurve& curve) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot open " + path + " for writing");
  f << "tau";
  for (std::size_t a = 0; a < curve.axes(); ++a) f << ",adev_" << a;
  f << "\n";
  char buf[64];
  for (std::size_t i = 0; i < curve.taus.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g", curve.taus[i]);
    f << buf;
    for (std::size_t a = 0; a < curve.axes(); ++a) {
      std::snprintf(buf, sizeof(buf), ",%.17g", curve.adev[a][i]);
      f << buf;
    }
    f << "\n";
  }
}

double sample_rate(std::span<const ImuSample> samples) {
  if (samples.size() < 2) throw DataError("need at least two IMU samples");
  std::vector<double> dt(samples.size() - 1);
  for (std::size_t k = 1; k < samples.size(); ++k) {
    dt[k - 1] = samples[k].t - samples[k - 1].t;
    if (!(dt[k - 1] > 0)) throw DataError("IMU timestamps not strictly increasing at sample " + std::to_string(k));
  }
  auto mid = dt.begin() + static_cast<std::ptrdiff_t>(dt.size() / 2);
  std::nth_element(dt.begin(), mid, dt.end());
  return 1.0 / *mid;
}

// Consecutive window means are compared so slow bias drift over long static
// recordings is not mistaken for motion.
void require_static(std::span<const ImuSample> samples, const StaticCheck& check) {
  const double rate = sample_rate(samples);
  const auto w = static_cast<std::size_t>(std::max(1.0, std::round(check.window_s * rate)));
  Vec3d prev_g, prev_a;
  for (std::size_t start = 0; start + w <= samples.size(); start += w) {
    Vec3d wg = Vec3d::Zero(), wa = Vec3d::Zero();
    for (std::size_t k = start; k < start + w; ++k) {
      wg += samples[k].omega_m;
      wa += samples[k].accel_m;
    }
    wg /= static_cast<double>(w);
    wa /= static_cast<double>(w);
    if (start > 0 &&
        ((wg - prev_g).cwiseAbs().maxCoeff() > check.gyro_tol || (wa - prev_a).cwiseAbs().maxCoeff() > check.accel_tol)) {
      char buf[160];
      std::snprintf(buf, sizeof(buf), "input is not static: motion detected near t = %.3f s", samples[start].t);
      throw DataError(buf);
    }
    prev_g = wg;
    prev_a = wa;
  }
}

namespace {

struct AxisFit {
  double N = 0.0;
  double K = 0.0;
};

AxisFit fit_axis(const std::vector<double>& taus, const std::vector<double>& adev, std::size_t n_samples,
                 double rate_hz, const AllanFitConfig& cfg, const char* label) {
  // White band: free slope for the quality check, fixed -1/2 slope for N.
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < taus.size(); ++i) {
    if (taus[i] >= cfg.white_band.lo * (1 - 1e-9) && taus[i] <= cfg.white_band.hi * (1 + 1e-9) && adev[i] > 0) {
      lx.push_back(std::log(taus[i]));
      ly.push_back(std::log(adev[i]));
    }
  }
  if (lx.size() < 2) throw DataError(std::string(label) + ": too few Allan points in the white-noise band");
  const double n = static_cast<double>(lx.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    mx += lx[i];
    my += ly[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
  }
  const double slope = sxx > 0 ? sxy / sxx : 0.0;
  if (std::abs(slope + 0.5) > cfg.max_white_slope_dev) {
    char buf[200];
    std::snprintf(buf, sizeof(buf), "%s: no -1/2 slope region (fitted slope %.3f)", label, slope);
    throw DataError(buf);
  }
  AxisFit fit;
  fit.N = std::exp(my + 0.5 * mx);

  // Joint weighted least squares of sigma^2 = N^2/tau + K^2 tau/3 over the
  // whole span from the white band to the walk band. It is linear in
  // (N^2, K^2); var(sigma^2) ~ 2 model^2 / edf with edf ~ (n - 2m) / m.
  struct Pt {
    double tau, s2, edf;
  };
  std::vector<Pt> pts;
  bool walk_covered = false;
  for (std::size_t i = 0; i < taus.size(); ++i) {
    if (taus[i] >= cfg.white_band.lo * (1 - 1e-9) && taus[i] <= cfg.walk_band.hi * (1 + 1e-9)) {
      const double m = std::round(taus[i] * rate_hz);
      pts.push_back({taus[i], adev[i] * adev[i], (static_cast<double>(n_samples) - 2 * m) / m});
      if (taus[i] >= cfg.walk_band.lo * (1 - 1e-9)) walk_covered = true;
    }
  }
  if (!walk_covered) throw DataError(std::string(label) + ": series too short for the random-walk band");

  double n2 = fit.N * fit.N, k2 = 0.0;
  for (int pass = 0; pass < 4; ++pass) {
    Eigen::Matrix2d A = Eigen::Matrix2d::Zero();
    Eigen::Vector2d rhs = Eigen::Vector2d::Zero();
    for (const auto& p : pts) {
      const double model = pass == 0 ? p.s2 : n2 / p.tau + std::max(k2, 0.0) * p.tau / 3.0;
      const double w = p.edf / (2.0 * model * model);
      const Eigen::Vector2d x(1.0 / p.tau, p.tau / 3.0);
      A += w * x * x.transpose();
      rhs += w * p.s2 * x;
    }
    const Eigen::Vector2d sol = A.ldlt().solve(rhs);
    if (sol[0] > 0) n2 = sol[0];
    k2 = sol[1];
    if (pass == 3) {
      const double se = std::sqrt(A.inverse()(1, 1));
      fit.N = std::sqrt(n2);
      fit.K = k2 > cfg.walk_significance * se ? std::sqrt(k2) : 0.0;
    }
  }
  return fit;
}

}  // namespace

NoiseFit fit_noise(std::span<const ImuSample> imu, const AllanFitConfig& cfg) {
  const double rate = sample_rate(imu);
  const double duration = imu.back().t - imu.front().t;
  if (duration < cfg.min_duration_s) {
    throw DataError("fit_noise_params: static series is " + std::to_string(duration) + " s, need at least " +
                    std::to_string(cfg.min_duration_s) + " s");
  }
  require_static(imu, cfg.static_check);

  const double max_tau = std::min(cfg.walk_band.hi, 0.5 * static_cast<double>(imu.size()) / rate);
  std::vector<double> taus = log_taus(std::min(cfg.white_band.lo, max_tau), max_tau, cfg.taus_per_decade);
  for (double t : {cfg.white_band.lo, cfg.white_band.hi, cfg.walk_band.lo}) {
    if (t <= max_tau) taus.push_back(t);
  }
  std::sort(taus.begin(), taus.end());

  std::vector<Vec3d> g(imu.size()), a(imu.size());
  for (std::size_t k = 0; k < imu.size(); ++k) {
    g[k] = imu[k].omega_m;
    a[k] = imu[k].accel_m;
  }
  NoiseFit out;
  out.gyro = allan_deviation(std::span<const Vec3d>(g), rate, taus);
  out.accel = allan_deviation(std::span<const Vec3d>(a), rate, taus);
  for (int ax = 0; ax < 3; ++ax) {
    const AxisFit fg = fit_axis(out.gyro.taus, out.gyro.adev[ax], imu.size(), rate, cfg, "gyro");
    const AxisFit fa = fit_axis(out.accel.taus, out.accel.adev[ax], imu.size(), rate, cfg, "accel");
    out.sigma_g_axes[ax] = fg.N;
    out.eta_g_axes[ax] = fg.K;
    out.sigma_a_axes[ax] = fa.N;
    out.eta_a_axes[ax] = fa.K;
  }
  out.params.sigma_g = out.sigma_g_axes.mean();
  out.params.eta_g = out.eta_g_axes.mean();
  out.params.sigma_a = out.sigma_a_axes.mean();
  out.params.eta_a = out.eta_a_axes.mean();
  return out;
}

NoiseParams fit_noise_params(std::span<const ImuSample> imu_static, const AllanFitConfig& cfg) {
  return fit_noise(imu_static, cfg).params;
}

BiasState initial_bias_estimate(std::span<const ImuSample> imu, std::optional<Quatd> attitude,
                                const ImuIntrinsics& intr, const StaticCheck& check) {
  if (imu.empty()) throw DataError("initial_bias_estimate: no samples");
  if (imu.size() >= 2) require_static(imu, check);
  Vec3d mg = Vec3d::Zero(), ma = Vec3d::Zero();
  for (const auto& s : imu) {
    mg += s.omega_m;
    ma += s.accel_m;
  }
  mg /= static_cast<double>(imu.size());
  ma /= static_cast<double>(imu.size());
  BiasState b;
  b.b_g = mg;
  if (attitude) {
    b.b_a = ma - quat_to_rot(attitude->normalized()) * (-intr.gravity);
  } else {
    if (!(ma.norm() > 0)) throw DataError("initial_bias_estimate: zero mean accel, gravity direction unknown");
    b.b_a = ma - intr.gravity.norm() * ma.normalized();
  }
  return b;
}

OracleResult random_walk_oracle(const Window& window, const NoiseParams& noise, int K, Rng& rng,
                                const ImuIntrinsics& intr, std::vector<OracleCandidate>* candidates) {
  if (K < 1) throw ConfigError("random_walk_oracle: K must be >= 1");
  if (window.gt_bias.size() != window.samples.size() || window.samples.empty()) {
    throw DataError("random_walk_oracle: window ground-truth bias does not match its samples");
  }
  const std::size_t n = window.samples.size();
  const Mat3d C_gt = quat_to_rot(window.final_state.q);

  OracleResult best;
  bool have = false;
  if (candidates) candidates->clear();
  BiasTrack track;
  for (int c = 0; c < K; ++c) {
    track = BiasTrack{};
    track.t.reserve(n);
    track.b_g.reserve(n);
    track.b_a.reserve(n);
    BiasState b = window.gt_bias.at(0);
    track.push_back(window.samples[0].t, b);
    for (std::size_t k = 1; k < n; ++k) {
      const double sq = std::sqrt(window.samples[k].t - window.samples[k - 1].t);
      b.b_g += gaussian_vec3(rng, noise.eta_g * sq);
      b.b_a += gaussian_vec3(rng, noise.eta_a * sq);
      track.push_back(window.samples[k].t, b);
    }
    auto [traj, last] = integrate_window(window, track, intr);
    const double pe = (last.p - window.final_state.p).norm();
    const double oe = rotation_angle_between<double>(C_gt, quat_to_rot(last.q));
    if (candidates) candidates->push_back({pe, oe});
    if (!have || std::tie(pe, oe) < std::tie(best.position_error, best.orientation_error)) {
      best.bias = track;
      best.final_state = last;
      best.index = c;
      best.position_error = pe;
      best.orientation_error = oe;
      have = true;
    }
  }
  return best;
}

}  // namespace biasdiff
