#include "biasdiff/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "biasdiff/dataset.hpp"
#include "biasdiff/errors.hpp"

namespace biasdiff {

using ad::Matrix;
using ad::Tensor;

DiffusionSchedule build_schedule(int T, double beta_1, double beta_T) {
  if (T < 1) throw ConfigError("diffusion schedule needs T >= 1, got " + std::to_string(T));
  if (!(beta_1 > 0.0) || !(beta_T < 1.0) || beta_1 > beta_T) {
    throw ConfigError("diffusion betas must satisfy 0 < beta_1 <= beta_T < 1");
  }
  DiffusionSchedule s;
  s.T = T;
  const auto n = static_cast<std::size_t>(T) + 1;
  s.beta.assign(n, 0.0);
  s.alpha.assign(n, 1.0);
  s.alpha_bar.assign(n, 1.0);
  s.gamma.assign(n, 0.0);
  s.sigma.assign(n, 0.0);
  double prod = 1.0;
  for (int t = 1; t <= T; ++t) {
    const double b = T == 1 ? beta_1 : beta_1 + (beta_T - beta_1) * (t - 1) / (T - 1);
    prod *= 1.0 - b;
    s.beta[t] = b;
    s.alpha[t] = 1.0 - b;
    s.alpha_bar[t] = prod;
    s.gamma[t] = b / std::sqrt(1.0 - prod);
    s.sigma[t] = std::sqrt(b);
  }
  return s;
}

namespace {

void check_step(const DiffusionSchedule& s, int t) {
  if (t < 1 || t > s.T) {
    throw ConfigError("diffusion step " + std::to_string(t) + " outside [1, " + std::to_string(s.T) + "]");
  }
}

}  // namespace

template <typename S>
Matrix<S> forward_diffuse(const Matrix<S>& x0, int t, const Matrix<S>& eps, const DiffusionSchedule& s) {
  check_step(s, t);
  if (x0.rows() != eps.rows() || x0.cols() != eps.cols()) throw ShapeError("forward_diffuse: x0 and eps differ in shape");
  const auto a = static_cast<S>(std::sqrt(s.alpha_bar[t]));
  const auto b = static_cast<S>(std::sqrt(1.0 - s.alpha_bar[t]));
  return a * x0 + b * eps;
}

template <typename S>
Matrix<S> forward_step(const Matrix<S>& x_prev, int t, const Matrix<S>& eps, const DiffusionSchedule& s) {
  check_step(s, t);
  if (x_prev.rows() != eps.rows() || x_prev.cols() != eps.cols()) throw ShapeError("forward_step: shape mismatch");
  return static_cast<S>(std::sqrt(s.alpha[t])) * x_prev + static_cast<S>(s.sigma[t]) * eps;
}

template <typename S>
Matrix<S> standard_normal(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  std::normal_distribution<double> n01;
  Matrix<S> m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = static_cast<S>(n01(rng));
  return m;
}

template <typename S>
Matrix<S> ddpm_sample(const EpsFn<S>& eps, Matrix<S> x, const DiffusionSchedule& s, Rng& rng) {
  for (int t = s.T; t >= 1; --t) {
    const Matrix<S> e = eps(x, t);
    if (e.rows() != x.rows() || e.cols() != x.cols()) throw ShapeError("ddpm_sample: eps shape differs from latent");
    x = (x - static_cast<S>(s.gamma[t]) * e) / static_cast<S>(std::sqrt(s.alpha[t]));
    if (t > 1) x += static_cast<S>(s.sigma[t]) * standard_normal<S>(x.rows(), x.cols(), rng);
  }
  return x;
}

std::vector<int> ddim_timesteps(const DiffusionSchedule& s, int steps, DdimSpacing spacing) {
  const int T = s.T;
  if (steps < 1 || steps > T) {
    throw ConfigError("ddim steps must be in [1, " + std::to_string(T) + "], got " + std::to_string(steps));
  }
  if (steps == 1) return {T};
  std::vector<int> ts(static_cast<std::size_t>(steps));
  if (spacing == DdimSpacing::uniform) {
    for (int i = 0; i < steps; ++i) {
      ts[i] = static_cast<int>(std::lround(1.0 + static_cast<double>(T - 1) * i / (steps - 1)));
    }
    return ts;
  }
  std::vector<double> theta(static_cast<std::size_t>(T) + 1, 0.0);
  for (int t = 1; t <= T; ++t) theta[t] = std::acos(std::sqrt(s.alpha_bar[t]));
  for (int i = 0; i < steps; ++i) {
    const double target = theta[1] + (theta[T] - theta[1]) * i / (steps - 1);
    const auto it = std::lower_bound(theta.begin() + 1, theta.end(), target);
    int t = it == theta.end() ? T : static_cast<int>(it - theta.begin());
    if (t > 1 && target - theta[t - 1] < theta[t] - target) --t;
    ts[i] = t;
  }
  // crowded ends can round onto the same step
  ts.front() = 1;
  ts.back() = T;
  for (int i = 1; i < steps; ++i) ts[i] = std::max(ts[i], ts[i - 1] + 1);
  for (int i = steps - 2; i >= 0; --i) ts[i] = std::min(ts[i], ts[i + 1] - 1);
  return ts;
}

template <typename S>
Matrix<S> ddim_sample(const EpsFn<S>& eps, Matrix<S> x, const DiffusionSchedule& s, int steps, DdimSpacing spacing,
                      double clip) {
  if (clip < 0.0) throw ConfigError("ddim_sample: clip must be >= 0");
  const auto ts = ddim_timesteps(s, steps, spacing);
  for (std::size_t k = ts.size(); k-- > 0;) {
    const int t = ts[k];
    Matrix<S> e = eps(x, t);
    if (e.rows() != x.rows() || e.cols() != x.cols()) throw ShapeError("ddim_sample: eps shape differs from latent");
    const double ab = s.alpha_bar[t];
    Matrix<S> x0 = (x - static_cast<S>(std::sqrt(1.0 - ab)) * e) / static_cast<S>(std::sqrt(ab));
    if (clip > 0.0) {
      x0 = x0.cwiseMax(static_cast<S>(-clip)).cwiseMin(static_cast<S>(clip));
      e = (x - static_cast<S>(std::sqrt(ab)) * x0) / static_cast<S>(std::sqrt(1.0 - ab));
    }
    if (k == 0) return x0;
    const double ab_prev = s.alpha_bar[ts[k - 1]];
    x = static_cast<S>(std::sqrt(ab_prev)) * x0 + static_cast<S>(std::sqrt(1.0 - ab_prev)) * e;
  }
  return x;
}

template Matrix<float> forward_diffuse<float>(const Matrix<float>&, int, const Matrix<float>&, const DiffusionSchedule&);
template Matrix<double> forward_diffuse<double>(const Matrix<double>&, int, const Matrix<double>&,
                                                const DiffusionSchedule&);
template Matrix<float> forward_step<float>(const Matrix<float>&, int, const Matrix<float>&, const DiffusionSchedule&);
template Matrix<double> forward_step<double>(const Matrix<double>&, int, const Matrix<double>&, const DiffusionSchedule&);
template Matrix<float> standard_normal<float>(Eigen::Index, Eigen::Index, Rng&);
template Matrix<double> standard_normal<double>(Eigen::Index, Eigen::Index, Rng&);
template Matrix<float> ddpm_sample<float>(const EpsFn<float>&, Matrix<float>, const DiffusionSchedule&, Rng&);
template Matrix<double> ddpm_sample<double>(const EpsFn<double>&, Matrix<double>, const DiffusionSchedule&, Rng&);
template Matrix<float> ddim_sample<float>(const EpsFn<float>&, Matrix<float>, const DiffusionSchedule&, int,
                                          DdimSpacing, double);
template Matrix<double> ddim_sample<double>(const EpsFn<double>&, Matrix<double>, const DiffusionSchedule&, int,
                                            DdimSpacing, double);

TrainingSet TrainingSet::prepare(std::span<const Window> windows, const Normalizer& norm) {
  TrainingSet set;
  if (windows.empty()) return set;
  set.window = static_cast<int>(windows.front().size());
  set.imu.reserve(windows.size());
  set.bias.reserve(windows.size());
  for (const Window& w : windows) {
    const Window* p = &w;
    std::span<const Window* const> one(&p, 1);
    if (static_cast<int>(w.size()) != set.window) throw DataError("training set: windows differ in length");
    set.imu.push_back(imu_batch<float>(one, norm));
    set.bias.push_back(bias_batch<float>(one, norm));
  }
  return set;
}

namespace {

// Stacks the listed windows time-major.
Matrix<float> gather(const std::vector<Matrix<float>>& src, std::span<const std::size_t> idx, int W) {
  const auto B = static_cast<Eigen::Index>(idx.size());
  Matrix<float> m(W * B, 6);
  for (Eigen::Index j = 0; j < B; ++j) {
    const Matrix<float>& w = src[idx[j]];
    for (Eigen::Index i = 0; i < W; ++i) m.row(i * B + j) = w.row(i);
  }
  return m;
}

// Time mean of a (W*B) x C batch, B x C.
Matrix<float> window_mean(const Matrix<float>& m, Eigen::Index W) {
  const Eigen::Index B = m.rows() / W;
  Matrix<float> out = Matrix<float>::Zero(B, m.cols());
  for (Eigen::Index i = 0; i < W; ++i) out += m.middleRows(i * B, B);
  return out / static_cast<float>(W);
}

}  // namespace

double train_epoch(BiasNet<float>& net, const TrainingSet& data, const DiffusionSchedule& s,
                   ad::AdamState<float>& opt, Rng& rng, int batch_size) {
  if (data.size() == 0) throw DataError("train_epoch: empty training set");
  if (batch_size < 1) throw ConfigError("train_epoch: batch size must be positive");
  const auto& cfg = net.config();
  if (data.window != cfg.window) {
    throw DataError("train_epoch: windows have " + std::to_string(data.window) + " samples, network expects " +
                    std::to_string(cfg.window));
  }
  const bool diffusion = cfg.kind == ModelKind::diffusion;
  if (diffusion && s.T != cfg.denoiser.diffusion_steps) throw ConfigError("train_epoch: schedule T differs from network");

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);

  auto& params = net.params().tensors;
  for (auto& p : params) p.set_requires_grad(true);
  std::uniform_int_distribution<int> pick_t(1, std::max(1, s.T));
  const int W = data.window;

  double total = 0.0;
  int batches = 0;
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(batch_size));
    std::span<const std::size_t> idx(order.data() + start, end - start);
    const auto B = static_cast<Eigen::Index>(idx.size());

    Matrix<float> x0 = gather(data.bias, idx, W);
    if (!cfg.denoiser.sequence_latent) x0 = window_mean(x0, W);
    const Tensor<float> imu(gather(data.imu, idx, W));

    ad::Tape<float> tape;
    const Tensor<float> cond = net.encode(imu);
    Tensor<float> loss;
    if (diffusion) {
      std::vector<int> ts(static_cast<std::size_t>(B));
      for (auto& t : ts) t = pick_t(rng);
      const Matrix<float> eps = standard_normal<float>(x0.rows(), x0.cols(), rng);
      Matrix<float> x_t(x0.rows(), x0.cols());
      const Eigen::Index per = x0.rows() / B;  // W for sequences, 1 for vectors
      for (Eigen::Index i = 0; i < per; ++i) {
        for (Eigen::Index j = 0; j < B; ++j) {
          const int t = ts[j];
          const auto a = static_cast<float>(std::sqrt(s.alpha_bar[t]));
          const auto b = static_cast<float>(std::sqrt(1.0 - s.alpha_bar[t]));
          x_t.row(i * B + j) = a * x0.row(i * B + j) + b * eps.row(i * B + j);
        }
      }
      loss = ad::mse_loss(net.denoise(Tensor<float>(std::move(x_t)), ts, cond), Tensor<float>(eps));
    } else {
      Tensor<float> pred = net.regress(cond);
      loss = ad::mse_loss(pred, Tensor<float>(std::move(x0)));
    }
    tape.backward(loss);
    ad::adam_step(std::span<Tensor<float>>(params), opt);
    for (auto& p : params) p.zero_grad();
    total += static_cast<double>(loss.item());
    ++batches;
  }
  for (auto& p : params) p.set_requires_grad(false);
  return total / batches;
}

namespace {

std::vector<double> window_times(const Window& w) {
  std::vector<double> ts(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) ts[i] = w.samples[i].t;
  return ts;
}

// Spreads a B x 6 vector latent over W steps.
Matrix<float> broadcast_latent(const Matrix<float>& v, Eigen::Index W) {
  const Eigen::Index B = v.rows();
  Matrix<float> m(W * B, v.cols());
  for (Eigen::Index i = 0; i < W; ++i) m.middleRows(i * B, B) = v;
  return m;
}

}  // namespace

std::vector<BiasTrack> predict_bias(const BiasNet<float>& net, const Normalizer& norm, const DiffusionSchedule& s,
                                    std::span<const PredictRequest> requests, PredictMode mode, int n, int ddim_steps,
                                    std::size_t chunk, DdimSpacing spacing, double clip) {
  const auto& cfg = net.config();
  if (cfg.kind != ModelKind::diffusion) throw ConfigError("predict_bias needs a diffusion network");
  if (mode == PredictMode::single && n != 1) throw ConfigError("single prediction draws exactly one sample");
  if (n < 1) throw ConfigError("mean_of_n needs n >= 1");
  if (chunk == 0) throw ConfigError("predict_bias: chunk must be positive");
  ddim_timesteps(s, ddim_steps, spacing);

  const Eigen::Index W = cfg.window;
  const bool seq = cfg.denoiser.sequence_latent;
  std::vector<BiasTrack> out;
  out.reserve(requests.size());
  for (std::size_t start = 0; start < requests.size(); start += chunk) {
    const std::size_t end = std::min(requests.size(), start + chunk);
    const auto B = static_cast<Eigen::Index>(end - start);
    std::vector<const Window*> wins;
    std::vector<Rng> rngs;
    for (std::size_t k = start; k < end; ++k) {
      if (requests[k].window == nullptr) throw DataError("predict_bias: null window");
      if (static_cast<Eigen::Index>(requests[k].window->size()) != W) {
        throw DataError("predict_bias: window length differs from the network window");
      }
      wins.push_back(requests[k].window);
      rngs.emplace_back(requests[k].seed);
    }
    const Tensor<float> cond = net.encode(Tensor<float>(imu_batch<float>(wins, norm)));
    const EpsFn<float> eps = [&](const Matrix<float>& x, int t) {
      const std::vector<int> ts(static_cast<std::size_t>(B), t);
      return net.denoise(Tensor<float>(x), ts, cond).value();
    };

    const Eigen::Index per = seq ? W : 1;
    Matrix<float> acc = Matrix<float>::Zero(per * B, 6);
    for (int draw = 0; draw < n; ++draw) {
      Matrix<float> x_T(per * B, 6);
      for (Eigen::Index j = 0; j < B; ++j) {
        const Matrix<float> z = standard_normal<float>(per, 6, rngs[j]);
        for (Eigen::Index i = 0; i < per; ++i) x_T.row(i * B + j) = z.row(i);
      }
      acc += ddim_sample<float>(eps, std::move(x_T), s, ddim_steps, spacing, clip);
    }
    acc /= static_cast<float>(n);
    if (!seq) acc = broadcast_latent(acc, W);
    for (Eigen::Index j = 0; j < B; ++j) {
      out.push_back(unbatch_bias<float>(acc, j, B, norm, window_times(*wins[j])));
    }
  }
  return out;
}

std::vector<BiasTrack> predict_regression(const BiasNet<float>& net, const Normalizer& norm,
                                          std::span<const Window* const> windows, std::size_t chunk) {
  const auto& cfg = net.config();
  if (cfg.kind != ModelKind::regression) throw ConfigError("predict_regression needs a regression network");
  if (chunk == 0) throw ConfigError("predict_regression: chunk must be positive");
  const Eigen::Index W = cfg.window;
  std::vector<BiasTrack> out;
  out.reserve(windows.size());
  for (std::size_t start = 0; start < windows.size(); start += chunk) {
    const std::size_t end = std::min(windows.size(), start + chunk);
    std::span<const Window* const> part = windows.subspan(start, end - start);
    const auto B = static_cast<Eigen::Index>(part.size());
    Matrix<float> pred = net.regress(net.encode(Tensor<float>(imu_batch<float>(part, norm)))).value();
    if (!cfg.denoiser.sequence_latent) pred = broadcast_latent(pred, W);
    for (Eigen::Index j = 0; j < B; ++j) out.push_back(unbatch_bias<float>(pred, j, B, norm, window_times(*part[j])));
  }
  return out;
}

}  // namespace biasdiff
