#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "biasdiff/dataset.hpp"
#include "biasdiff/diffusion.hpp"
#include "biasdiff/errors.hpp"
#include "doctest.h"

using namespace biasdiff;
using ad::Matrix;

namespace {

struct Moments {
  double mean = 0, var = 0;
};

Moments moments(const Matrix<double>& m) {
  Moments r;
  r.mean = m.mean();
  r.var = (m.array() - r.mean).square().sum() / static_cast<double>(m.size() - 1);
  return r;
}

// For x0 ~ N(0, 1) every marginal x_t is N(0, 1), so E[eps | x_t] is linear.
EpsFn<double> gaussian_oracle(const DiffusionSchedule& s) {
  return [&s](const Matrix<double>& x, int t) -> Matrix<double> { return std::sqrt(1.0 - s.alpha_bar[t]) * x; };
}

NetworkConfig small_net(ModelKind kind = ModelKind::diffusion) {
  NetworkConfig c;
  c.kind = kind;
  c.window = 20;
  c.encoder.widths = {8, 8};
  c.encoder.kernel = 3;
  c.encoder.feature_dim = 8;
  c.denoiser.fused_dim = 16;
  c.denoiser.hidden = 24;
  c.denoiser.cells = 1;
  c.denoiser.embed_dim = 16;
  c.denoiser.diffusion_steps = 1000;
  return c;
}

// 200 windows of 0.2 s at 100 Hz from a handful of sequences.
std::vector<Window> small_windows(std::uint64_t seed) {
  MotionConfig m;
  m.position_amplitude = Vec3d(0.5, 0.4, 0.2);
  m.angle_amplitude = Vec3d(0.2, 0.2, 0.7);
  m.min_freq_hz = 0.3;
  m.max_freq_hz = 1.5;
  BiasProcessConfig b;
  b.gyro.initial_std = Vec3d::Constant(0.01);
  b.gyro.rw_rate = Vec3d::Constant(2e-4);
  b.accel.initial_std = Vec3d::Constant(0.1);
  b.accel.rw_rate = Vec3d::Constant(3e-3);
  const NoiseParams noise{1.7e-4, 2e-3, 1.9e-5, 3e-3};
  std::vector<Window> out;
  for (int k = 0; k < 4; ++k) {
    const Sequence seq = synthesize_sequence(m, b, noise, ImuIntrinsics{}, 10.0, 100.0, seed + k);
    auto w = make_windows(seq, 0.2, 0.0, k);
    out.insert(out.end(), w.begin(), w.end());
  }
  out.resize(200);
  return out;
}

double bias_rmse(const BiasTrack& a, const BiasTrack& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    s += (a.b_g[i] - b.b_g[i]).squaredNorm() + (a.b_a[i] - b.b_a[i]).squaredNorm();
  }
  return std::sqrt(s / (6.0 * static_cast<double>(a.size())));
}

}  // namespace

TEST_CASE("schedule endpoints and spacing") {
  const auto s = build_schedule();
  CHECK(s.T == 1000);
  CHECK(s.beta[1] == doctest::Approx(1e-4).epsilon(1e-12));
  CHECK(s.beta[1000] == doctest::Approx(0.02).epsilon(1e-12));
  CHECK(s.alpha_bar[1] == doctest::Approx(0.9999).epsilon(1e-12));
  CHECK(s.beta[500] == doctest::Approx(1e-4 + (499.0 / 999.0) * 0.0199).epsilon(1e-12));
  CHECK(s.beta[500] == doctest::Approx(0.010040).epsilon(1e-4));
}

TEST_CASE("schedule identities hold at every step") {
  const auto s = build_schedule();
  double prod = 1.0;
  for (int t = 1; t <= s.T; ++t) {
    prod *= 1.0 - s.beta[t];
    CHECK(std::abs(s.alpha_bar[t] - prod) <= 1e-12);
    CHECK(s.alpha[t] == doctest::Approx(1.0 - s.beta[t]));
    CHECK(s.gamma[t] == doctest::Approx(s.beta[t] / std::sqrt(1.0 - s.alpha_bar[t])));
    CHECK(s.sigma[t] == doctest::Approx(std::sqrt(s.beta[t])));
    CHECK(s.beta[t] > 0.0);
    CHECK(s.beta[t] < 1.0);
    CHECK(s.alpha_bar[t] > 0.0);
    CHECK(s.alpha_bar[t] < 1.0);
    if (t > 1) {
      CHECK(s.beta[t] > s.beta[t - 1]);
      CHECK(s.alpha_bar[t] < s.alpha_bar[t - 1]);
      const double snr = s.alpha_bar[t] / (1.0 - s.alpha_bar[t]);
      const double prev = s.alpha_bar[t - 1] / (1.0 - s.alpha_bar[t - 1]);
      CHECK(snr < prev);
    }
  }
}

TEST_CASE("schedule rejects bad bounds") {
  CHECK_THROWS_AS(build_schedule(0), ConfigError);
  CHECK_THROWS_AS(build_schedule(10, 0.0, 0.02), ConfigError);
  CHECK_THROWS_AS(build_schedule(10, 0.03, 0.02), ConfigError);
  CHECK_THROWS_AS(build_schedule(10, 1e-4, 1.0), ConfigError);
}

TEST_CASE("forward jump special cases and errors") {
  const auto s = build_schedule();
  Rng rng(1);
  const Matrix<double> x0 = standard_normal<double>(20, 6, rng);
  const Matrix<double> eps = standard_normal<double>(20, 6, rng);
  const Matrix<double> zero = Matrix<double>::Zero(20, 6);
  for (int t : {1, 250, 1000}) {
    CHECK((forward_diffuse(x0, t, zero, s) - std::sqrt(s.alpha_bar[t]) * x0).norm() < 1e-14);
    CHECK((forward_diffuse(zero, t, eps, s) - std::sqrt(1.0 - s.alpha_bar[t]) * eps).norm() < 1e-14);
  }
  CHECK_THROWS_AS(forward_diffuse(x0, 0, eps, s), ConfigError);
  CHECK_THROWS_AS(forward_diffuse(x0, 1001, eps, s), ConfigError);
  CHECK_THROWS_AS(forward_diffuse<double>(x0, 5, Matrix<double>::Zero(20, 5), s), ShapeError);
}

TEST_CASE("stepwise forward process matches the closed-form jump") {
  const auto s = build_schedule();
  Rng rng(7);
  const Eigen::Index n = 100000;
  for (int t : {10, 100, 500, 1000}) {
    // x0 = 0 checks the variance, x0 = 1 the mean
    Matrix<double> x = Matrix<double>::Zero(n, 1);
    Matrix<double> y = Matrix<double>::Ones(n, 1);
    for (int k = 1; k <= t; ++k) {
      x = forward_step<double>(x, k, standard_normal<double>(n, 1, rng), s);
      y = forward_step<double>(y, k, standard_normal<double>(n, 1, rng), s);
    }
    const double var = 1.0 - s.alpha_bar[t];
    CHECK(moments(x).var == doctest::Approx(var).epsilon(0.02));
    CHECK(moments(y).var == doctest::Approx(var).epsilon(0.02));
    CHECK(moments(y).mean == doctest::Approx(std::sqrt(s.alpha_bar[t])).epsilon(0.02));

    const Matrix<double> jump = forward_diffuse<double>(Matrix<double>::Zero(n, 1), t, standard_normal<double>(n, 1, rng), s);
    CHECK(moments(jump).var == doctest::Approx(moments(x).var).epsilon(0.02));
  }
}

TEST_CASE("single-step schedule inverts a known corruption") {
  const auto s = build_schedule(1, 1e-4, 1e-4);
  Rng rng(3);
  const Matrix<double> x0 = standard_normal<double>(50, 6, rng);
  const Matrix<double> eps = standard_normal<double>(50, 6, rng);
  const Matrix<double> x1 = forward_diffuse(x0, 1, eps, s);
  const EpsFn<double> perfect = [&](const Matrix<double>&, int) { return eps; };
  Rng unused(0);
  const Matrix<double> rec = ddpm_sample(perfect, x1, s, unused);
  CHECK((rec - x0).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("DDPM with the Gaussian oracle returns standard normal samples") {
  const auto s = build_schedule();
  Rng rng(11);
  const Matrix<double> x_T = standard_normal<double>(10000, 1, rng);
  const Moments m = moments(ddpm_sample(gaussian_oracle(s), x_T, s, rng));
  CHECK(std::abs(m.mean) < 0.05);
  CHECK(std::sqrt(m.var) >= 0.93);
  CHECK(std::sqrt(m.var) <= 1.07);
}

TEST_CASE("DDIM with the Gaussian oracle agrees with the DDPM statistics") {
  const auto s = build_schedule();
  for (int steps : {25, 1000}) {
    CAPTURE(steps);
    Rng rng(12);
    const Matrix<double> x_T = standard_normal<double>(10000, 1, rng);
    const Moments m = moments(ddim_sample(gaussian_oracle(s), x_T, s, steps, DdimSpacing::angular));
    CHECK(std::abs(m.mean) < 0.05);
    CHECK(std::sqrt(m.var) >= 0.93);
    CHECK(std::sqrt(m.var) <= 1.07);
  }
}

// Each oracle DDIM step maps x to (sqrt(ab' ab) + sqrt((1-ab')(1-ab))) x and
// the last one to sqrt(ab_1) x.
static double oracle_shrink(const DiffusionSchedule& s, const std::vector<int>& ts) {
  double f = std::sqrt(s.alpha_bar[ts.front()]);
  for (std::size_t k = 1; k < ts.size(); ++k) {
    const double a = s.alpha_bar[ts[k]], b = s.alpha_bar[ts[k - 1]];
    f *= std::sqrt(a * b) + std::sqrt((1 - a) * (1 - b));
  }
  return f;
}

TEST_CASE("oracle DDIM output is x_T times the closed-form shrink") {
  const auto s = build_schedule();
  Rng rng(13);
  const Matrix<double> x_T = standard_normal<double>(100, 1, rng);
  for (auto sp : {DdimSpacing::uniform, DdimSpacing::angular}) {
    const double f = oracle_shrink(s, ddim_timesteps(s, 25, sp));
    CHECK((ddim_sample(gaussian_oracle(s), x_T, s, 25, sp) - f * x_T).cwiseAbs().maxCoeff() < 1e-12);
  }
  // evenly spaced steps over-shrink at 25 steps; even angles do not
  CHECK(oracle_shrink(s, ddim_timesteps(s, 25, DdimSpacing::uniform)) == doctest::Approx(0.92665).epsilon(1e-4));
  CHECK(oracle_shrink(s, ddim_timesteps(s, 25, DdimSpacing::angular)) > 0.95);
}

TEST_CASE("samplers are deterministic given the seed or x_T") {
  const auto s = build_schedule(100);
  const EpsFn<double> f = [](const Matrix<double>& x, int t) -> Matrix<double> { return 0.5 * x.array().sin() + 1e-3 * t; };
  Rng a(5), b(5);
  const Matrix<double> xa = standard_normal<double>(30, 6, a);
  const Matrix<double> xb = standard_normal<double>(30, 6, b);
  CHECK(ddpm_sample(f, xa, s, a) == ddpm_sample(f, xb, s, b));
  CHECK(ddim_sample(f, xa, s, 25) == ddim_sample(f, xa, s, 25));
}

TEST_CASE("one DDIM step with a perfect noise model recovers x0") {
  const auto s = build_schedule();
  Rng rng(4);
  const Matrix<double> x0 = standard_normal<double>(40, 6, rng);
  const Matrix<double> eps = standard_normal<double>(40, 6, rng);
  const Matrix<double> x_T = forward_diffuse(x0, s.T, eps, s);
  const EpsFn<double> perfect = [&](const Matrix<double>&, int) { return eps; };
  CHECK((ddim_sample(perfect, x_T, s, 1) - x0).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("clipped DDIM keeps x0 in bounds and is a no-op for in-range estimates") {
  const auto s = build_schedule();
  Rng rng(9);
  const Matrix<double> x_T = standard_normal<double>(40, 6, rng);
  // a noise model that is badly off at every step
  const EpsFn<double> wild = [](const Matrix<double>& x, int) -> Matrix<double> { return -3.0 * x; };
  const Matrix<double> raw = ddim_sample(wild, x_T, s, 25);
  CHECK(raw.cwiseAbs().maxCoeff() > 100.0);
  CHECK(ddim_sample(wild, x_T, s, 25, DdimSpacing::angular, 4.0).cwiseAbs().maxCoeff() <= 4.0);

  const Matrix<double> x0 = 0.5 * standard_normal<double>(40, 6, rng).array().tanh().matrix();
  const Matrix<double> eps = standard_normal<double>(40, 6, rng);
  const EpsFn<double> perfect = [&](const Matrix<double>&, int) { return eps; };
  const Matrix<double> xt = forward_diffuse(x0, s.T, eps, s);
  CHECK((ddim_sample(perfect, xt, s, 1, DdimSpacing::angular, 4.0) - x0).cwiseAbs().maxCoeff() < 1e-9);
  CHECK_THROWS_AS(ddim_sample(perfect, xt, s, 1, DdimSpacing::angular, -1.0), ConfigError);
}

TEST_CASE("DDIM timesteps span 1..T without repeats") {
  const auto s = build_schedule();
  const auto uni = ddim_timesteps(s, 25, DdimSpacing::uniform);
  CHECK(uni[1] == 43);  // round(1 + 999/24)
  for (auto sp : {DdimSpacing::uniform, DdimSpacing::angular}) {
    for (int steps : {2, 25, 400, 999, 1000}) {
      CAPTURE(steps);
      const auto ts = ddim_timesteps(s, steps, sp);
      REQUIRE(ts.size() == static_cast<std::size_t>(steps));
      CHECK(ts.front() == 1);
      CHECK(ts.back() == 1000);
      CHECK(std::adjacent_find(ts.begin(), ts.end(), std::greater_equal<int>()) == ts.end());
    }
    CHECK(ddim_timesteps(s, 1, sp) == std::vector<int>{1000});
    CHECK_THROWS_AS(ddim_timesteps(s, 0, sp), ConfigError);
    CHECK_THROWS_AS(ddim_timesteps(s, 1001, sp), ConfigError);
  }
  // angular steps land on the nearest angle to the even grid
  const auto ang = ddim_timesteps(s, 25, DdimSpacing::angular);
  const auto theta = [&](int t) { return std::acos(std::sqrt(s.alpha_bar[t])); };
  for (int i = 1; i < 24; ++i) {
    const double target = theta(1) + (theta(1000) - theta(1)) * i / 24.0;
    CHECK(std::abs(theta(ang[i]) - target) <= std::abs(theta(ang[i] + 1) - target));
    CHECK(std::abs(theta(ang[i]) - target) <= std::abs(theta(ang[i] - 1) - target));
  }
}

TEST_CASE("train_epoch errors and the zero-predictor loss") {
  const auto s = build_schedule();
  const auto windows = small_windows(100);
  const Normalizer norm = Normalizer::fit(windows);
  const TrainingSet data = TrainingSet::prepare(windows, norm);
  BiasNet<float> net(small_net(), 1);
  ad::AdamState<float> opt;
  Rng rng(2);
  CHECK_THROWS_AS(train_epoch(net, TrainingSet{}, s, opt, rng, 16), DataError);

  for (auto& p : net.params().tensors) p.mutable_value().setZero();
  opt.cfg.lr = 0.0;
  const double loss = train_epoch(net, data, s, opt, rng, 16);
  CHECK(loss == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("training beats the zero predictor and sampling contracts hold") {
  const auto s = build_schedule();
  const auto windows = small_windows(200);
  const Normalizer norm = Normalizer::fit(windows);
  const TrainingSet data = TrainingSet::prepare(windows, norm);
  BiasNet<float> net(small_net(), 3);
  ad::AdamState<float> opt;
  opt.cfg.lr = 2e-3;
  Rng rng(9);
  double loss = 0;
  for (int e = 0; e < 50; ++e) loss = train_epoch(net, data, s, opt, rng, 32);
  CHECK(loss < 0.9);

  const auto held = small_windows(900);
  std::vector<PredictRequest> req;
  for (const auto& w : held) req.push_back({&w, window_seed(42, w.sequence_id, w.window_index)});

  const auto single = predict_bias(net, norm, s, req);
  const auto one = predict_bias(net, norm, s, req, PredictMode::mean_of_n, 1);
  const auto chunked = predict_bias(net, norm, s, req, PredictMode::single, 1, 25, 7);
  REQUIRE(single.size() == held.size());
  double worst = 0;
  for (std::size_t k = 0; k < held.size(); ++k) {
    CHECK(single[k].t == one[k].t);
    CHECK(single[k].b_g == one[k].b_g);
    CHECK(single[k].b_a == one[k].b_a);
    for (std::size_t i = 0; i < held[k].size(); ++i) {
      CHECK(single[k].t[i] == held[k].samples[i].t);
      CHECK(std::isfinite(single[k].b_a[i].norm()));
      worst = std::max(worst, (single[k].b_g[i] - chunked[k].b_g[i]).norm());
    }
  }
  CHECK(worst < 1e-6);

  const auto mean8 = predict_bias(net, norm, s, req, PredictMode::mean_of_n, 8);
  double e1 = 0, e8 = 0;
  for (std::size_t k = 0; k < held.size(); ++k) {
    e1 += bias_rmse(single[k], held[k].gt_bias);
    e8 += bias_rmse(mean8[k], held[k].gt_bias);
  }
  MESSAGE("mean bias RMSE single " << e1 / held.size() << " mean_of_8 " << e8 / held.size());
  CHECK(e8 <= e1);

  CHECK_THROWS_AS(predict_bias(net, norm, s, req, PredictMode::single, 2), ConfigError);
  CHECK_THROWS_AS(predict_bias(net, norm, s, req, PredictMode::mean_of_n, 0), ConfigError);
}

TEST_CASE("regression training and prediction") {
  const auto s = build_schedule();
  const auto windows = small_windows(300);
  const Normalizer norm = Normalizer::fit(windows);
  const TrainingSet data = TrainingSet::prepare(windows, norm);
  BiasNet<float> net(small_net(ModelKind::regression), 5);
  ad::AdamState<float> opt;
  opt.cfg.lr = 2e-3;
  Rng rng(1);
  const double first = train_epoch(net, data, s, opt, rng, 32);
  double last = first;
  for (int e = 0; e < 20; ++e) last = train_epoch(net, data, s, opt, rng, 32);
  CHECK(last < first);

  std::vector<const Window*> ptrs;
  for (const auto& w : windows) ptrs.push_back(&w);
  const auto pred = predict_regression(net, norm, ptrs);
  REQUIRE(pred.size() == windows.size());
  CHECK(pred[3].size() == windows[3].size());
  CHECK_THROWS_AS(predict_bias(net, norm, s, std::span<const PredictRequest>{}), ConfigError);
}
