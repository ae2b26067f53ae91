#pragma once

// DDPM forward process, training objective, ancestral and DDIM samplers.
//
// Arrays in DiffusionSchedule are indexed by step t = 1..T; index 0 is unused.

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "biasdiff/autodiff.hpp"
#include "biasdiff/imu_model.hpp"
#include "biasdiff/networks.hpp"

namespace biasdiff {

struct Window;

struct DiffusionSchedule {
  int T = 0;
  std::vector<double> beta, alpha, alpha_bar, gamma, sigma;
};

// Linear betas; gamma = beta / sqrt(1 - alpha_bar), sigma = sqrt(beta).
DiffusionSchedule build_schedule(int T = 1000, double beta_1 = 1e-4, double beta_T = 0.02);

// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps.
template <typename S>
ad::Matrix<S> forward_diffuse(const ad::Matrix<S>& x0, int t, const ad::Matrix<S>& eps, const DiffusionSchedule& s);

// One forward step x_t = sqrt(1 - beta_t) x_{t-1} + sqrt(beta_t) eps.
template <typename S>
ad::Matrix<S> forward_step(const ad::Matrix<S>& x_prev, int t, const ad::Matrix<S>& eps, const DiffusionSchedule& s);

template <typename S>
ad::Matrix<S> standard_normal(Eigen::Index rows, Eigen::Index cols, Rng& rng);

// Predicted noise for a latent at step t.
template <typename S>
using EpsFn = std::function<ad::Matrix<S>(const ad::Matrix<S>& x_t, int t)>;

// Ancestral sampling from x_T: x_{t-1} = (x_t - gamma_t eps)/sqrt(alpha_t) +
// sigma_t z, without z at t = 1.
template <typename S>
ad::Matrix<S> ddpm_sample(const EpsFn<S>& eps, ad::Matrix<S> x_T, const DiffusionSchedule& s, Rng& rng);

// uniform: t_i = round(1 + (T-1) i / (steps-1)).
// angular: t_i nearest to evenly spaced theta = acos(sqrt(alpha_bar)) between
// theta_1 and theta_T. With an exact noise model on Gaussian data every DDIM
// step shrinks the latent by cos(delta theta), so even angles keep the total
// shrink smallest.
enum class DdimSpacing { uniform, angular };

// Ascending, distinct, always ending at T and starting at 1 when steps > 1;
// {T} for a single step. Throws ConfigError when steps < 1 or steps > T.
std::vector<int> ddim_timesteps(const DiffusionSchedule& s, int steps, DdimSpacing spacing = DdimSpacing::angular);

// Deterministic DDIM (eta = 0) from x_T over ddim_timesteps(s, steps, spacing).
// clip > 0 bounds each x0 estimate to [-clip, clip] and re-derives eps from
// it, so a poor eps at high noise cannot blow up the sample. 0 disables.
template <typename S>
ad::Matrix<S> ddim_sample(const EpsFn<S>& eps, ad::Matrix<S> x_T, const DiffusionSchedule& s, int steps,
                          DdimSpacing spacing = DdimSpacing::angular, double clip = 0.0);

// Windows normalized once up front, W x 6 each.
struct TrainingSet {
  int window = 0;
  std::vector<ad::Matrix<float>> imu;
  std::vector<ad::Matrix<float>> bias;

  static TrainingSet prepare(std::span<const Window> windows, const Normalizer& norm);
  std::size_t size() const { return imu.size(); }
};

// One pass over the shuffled set in mini-batches. Diffusion: per example t
// uniform in [1, T] and eps ~ N(0, I), Adam on MSE(eps, eps_hat). Regression:
// Adam on MSE(bias_hat, bias). Returns the mean batch loss. Throws DataError
// on an empty set.
double train_epoch(BiasNet<float>& net, const TrainingSet& data, const DiffusionSchedule& s,
                   ad::AdamState<float>& opt, Rng& rng, int batch_size);

enum class PredictMode { single, mean_of_n };

// x0 clip for bias sampling, in normalized units.
inline constexpr double kBiasClip = 4.0;

struct PredictRequest {
  const Window* window = nullptr;
  std::uint64_t seed = 0;  // drives x_T for this window alone
};

// Diffusion bias predictions, one per request, each aligned to its window's
// timestamps. x_T for a request is drawn from its own seed, so results do
// not depend on batching. mean_of_n averages n DDIM samples drawn in sequence
// from that seed. Throws ConfigError for mean_of_n with n < 1 or single with
// n != 1.
std::vector<BiasTrack> predict_bias(const BiasNet<float>& net, const Normalizer& norm, const DiffusionSchedule& s,
                                    std::span<const PredictRequest> requests, PredictMode mode = PredictMode::single,
                                    int n = 1, int ddim_steps = 25, std::size_t chunk = 256,
                                    DdimSpacing spacing = DdimSpacing::angular, double clip = kBiasClip);

// Regression baseline predictions.
std::vector<BiasTrack> predict_regression(const BiasNet<float>& net, const Normalizer& norm,
                                          std::span<const Window* const> windows, std::size_t chunk = 256);

}  // namespace biasdiff
