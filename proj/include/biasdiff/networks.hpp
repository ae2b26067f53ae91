#pragma once

// IMU encoder (causal TCN), conditional GRU denoiser, direct-regression head
// and checkpoint persistence.
//
// All sequence tensors are time-major, (W*B) x C: rows [i*B, (i+1)*B) hold
// step i of the B windows in a batch.

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "biasdiff/autodiff.hpp"
#include "biasdiff/imu_model.hpp"

namespace biasdiff {

struct Window;

struct EncoderConfig {
  int input_channels = 6;
  std::vector<int> widths{64, 128};  // one residual block per level
  int kernel = 3;
  int dilation_base = 2;  // level l uses dilation base^l
  int feature_dim = 128;

  int receptive_field() const;
  // Throws ConfigError on non-positive dims or a receptive field longer than
  // the window.
  void validate(int window) const;
};

struct DenoiserConfig {
  int latent_dim = 6;
  int fused_dim = 128;
  int hidden = 464;
  int cells = 2;
  int embed_dim = 128;
  int diffusion_steps = 1000;
  bool pooled_condition = false;  // average the condition over the window
  bool sequence_latent = true;    // x0 is 6 x W; otherwise one 6-vector per window

  void validate() const;
};

enum class ModelKind { diffusion, regression };

std::string to_string(ModelKind k);
ModelKind model_kind_from_string(const std::string& s);

struct NetworkConfig {
  ModelKind kind = ModelKind::diffusion;
  int window = 200;  // samples per window
  EncoderConfig encoder;
  DenoiserConfig denoiser;

  void validate() const;
};

// Full-scale dims, about 2.27M parameters.
NetworkConfig full_scale_config();

// Per-channel standardization of IMU inputs (gyro xyz, accel xyz) and bias
// targets (b_g xyz, b_a xyz).
struct Normalizer {
  std::array<double, 6> imu_mean{};
  std::array<double, 6> imu_std{1, 1, 1, 1, 1, 1};
  std::array<double, 6> bias_mean{};
  std::array<double, 6> bias_std{1, 1, 1, 1, 1, 1};

  static constexpr double kStdFloor = 1e-12;

  static Normalizer fit(std::span<const Window> train);

  std::array<double, 6> normalize_bias(const BiasState& b) const;
  BiasState denormalize_bias(std::span<const double, 6> z) const;
};

// Time-major batches. Rows of window j at step i are i*B + j.
template <typename S>
ad::Matrix<S> imu_batch(std::span<const Window* const> windows, const Normalizer& norm);
template <typename S>
ad::Matrix<S> bias_batch(std::span<const Window* const> windows, const Normalizer& norm);
// Extracts window j of a normalized (W*B) x 6 batch, denormalized onto the
// given timestamps.
template <typename S>
BiasTrack unbatch_bias(const ad::Matrix<S>& batch, std::size_t j, std::size_t batch_size, const Normalizer& norm,
                       std::span<const double> times);

// Sinusoidal embedding of a diffusion step: [sin(t f_0..f_{d/2-1}), cos(...)],
// f_k = 10000^(-k/(d/2)). Throws ConfigError for t outside [1, T] or odd dim.
std::vector<double> timestep_embedding(int t, int dim, int T);

// Named parameter tensors in a fixed order.
template <typename S>
struct ParamList {
  std::vector<std::string> names;
  std::vector<ad::Tensor<S>> tensors;

  ad::Tensor<S> add(const std::string& name, ad::Matrix<S> init);
  const ad::Tensor<S>& at(const std::string& name) const;
  std::size_t count() const;  // total scalars
};

template <typename S>
class BiasNet {
 public:
  // Parameters drawn uniformly in +-1/sqrt(fan_in), biases included.
  BiasNet(const NetworkConfig& cfg, std::uint64_t seed);

  const NetworkConfig& config() const { return cfg_; }
  ParamList<S>& params() { return params_; }
  const ParamList<S>& params() const { return params_; }

  // imu: (W*B) x 6 normalized. Returns (W*B) x feature_dim, causal in time.
  ad::Tensor<S> encode(const ad::Tensor<S>& imu) const;

  // x_t: (W*B) x 6 for a sequence latent, B x 6 for a vector latent; one
  // diffusion step per window. Returns the predicted noise, shaped like x_t.
  ad::Tensor<S> denoise(const ad::Tensor<S>& x_t, std::span<const int> t, const ad::Tensor<S>& cond) const;

  // Regression head: normalized bias estimate, (W*B) x 6.
  ad::Tensor<S> regress(const ad::Tensor<S>& cond) const;

  template <typename U>
  BiasNet<U> cast() const;

 private:
  template <typename U>
  friend class BiasNet;
  BiasNet() = default;

  ad::Tensor<S> condition(const ad::Tensor<S>& features, Eigen::Index batch) const;
  ad::Tensor<S> backbone(const ad::Tensor<S>& fused) const;

  NetworkConfig cfg_;
  ParamList<S> params_;
};

// Exact scalar count for encoder plus denoiser (or regression head).
std::size_t parameter_count(const NetworkConfig& cfg);

struct TrainingMeta {
  std::uint64_t seed = 0;
  int epochs = 0;
  int batch_size = 0;
  double lr = 0.0;
  std::size_t train_windows = 0;
  std::vector<double> loss_curve;  // mean loss per epoch
};

struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  NetworkConfig config;
  Normalizer normalizer;
  TrainingMeta meta;
  std::vector<std::string> names;
  std::vector<ad::Matrix<float>> tensors;

  static Checkpoint from_model(const BiasNet<float>& net, const Normalizer& norm, const TrainingMeta& meta);
  // Throws CheckpointError when kind differs from the stored one.
  BiasNet<float> to_model(ModelKind expected) const;
};

// "BFCKPT", u32 version, u32 header length, JSON header (configs, normalizer,
// metadata, tensor directory, payload CRC32), little-endian float32 payload.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace biasdiff
