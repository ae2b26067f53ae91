#include "biasdiff/networks.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include <zlib.h>

#include "biasdiff/dataset.hpp"
#include "biasdiff/errors.hpp"
#include "config_json.hpp"
#include "json.hpp"

namespace biasdiff {

using ad::Matrix;
using ad::Tensor;
using nlohmann::json;

int EncoderConfig::receptive_field() const {
  int rf = 1, d = 1;
  for (std::size_t l = 0; l < widths.size(); ++l) {
    rf += 2 * (kernel - 1) * d;
    d *= dilation_base;
  }
  return rf;
}

void EncoderConfig::validate(int window) const {
  if (input_channels < 1 || kernel < 1 || dilation_base < 1 || feature_dim < 1 || widths.empty()) {
    throw ConfigError("encoder: channels, kernel, dilation base and feature dim must be positive, widths non-empty");
  }
  for (int w : widths) {
    if (w < 1) throw ConfigError("encoder: channel widths must be positive");
  }
  if (receptive_field() > window) {
    throw ConfigError("encoder: receptive field " + std::to_string(receptive_field()) + " exceeds window " +
                      std::to_string(window));
  }
}

void DenoiserConfig::validate() const {
  if (latent_dim < 1 || fused_dim < 1 || hidden < 1 || cells < 1 || diffusion_steps < 1) {
    throw ConfigError("denoiser: dims, cells and diffusion steps must be positive");
  }
  if (embed_dim < 2 || embed_dim % 2 != 0) throw ConfigError("denoiser: embedding dim must be even and >= 2");
}

void NetworkConfig::validate() const {
  if (window < 1) throw ConfigError("network: window must be positive");
  encoder.validate(window);
  denoiser.validate();
  if (encoder.input_channels != 6 || denoiser.latent_dim != 6) {
    throw ConfigError("network: IMU input and bias latent must both have 6 channels");
  }
}

std::string to_string(ModelKind k) { return k == ModelKind::diffusion ? "diffusion" : "regression"; }

ModelKind model_kind_from_string(const std::string& s) {
  if (s == "diffusion") return ModelKind::diffusion;
  if (s == "regression") return ModelKind::regression;
  throw ConfigError("unknown model kind '" + s + "' (expected diffusion or regression)");
}

NetworkConfig full_scale_config() {
  NetworkConfig c;
  c.window = 200;
  c.encoder.widths = {64, 128};
  c.encoder.kernel = 3;
  c.encoder.dilation_base = 2;
  c.encoder.feature_dim = 128;
  c.denoiser.fused_dim = 128;
  c.denoiser.hidden = 464;
  c.denoiser.cells = 2;
  c.denoiser.embed_dim = 128;
  c.denoiser.diffusion_steps = 1000;
  return c;
}

// ---------------------------------------------------------------------------
// Normalization and batching

Normalizer Normalizer::fit(std::span<const Window> train) {
  if (train.empty()) throw DataError("normalizer: empty training set");
  std::array<double, 6> s_imu{}, ss_imu{}, s_b{}, ss_b{};
  double n = 0;
  for (const auto& w : train) {
    for (std::size_t k = 0; k < w.samples.size(); ++k) {
      const auto& x = w.samples[k];
      const BiasState b = w.gt_bias.at(k);
      for (int c = 0; c < 3; ++c) {
        const double v[4] = {x.omega_m[c], x.accel_m[c], b.b_g[c], b.b_a[c]};
        s_imu[c] += v[0];
        ss_imu[c] += v[0] * v[0];
        s_imu[c + 3] += v[1];
        ss_imu[c + 3] += v[1] * v[1];
        s_b[c] += v[2];
        ss_b[c] += v[2] * v[2];
        s_b[c + 3] += v[3];
        ss_b[c + 3] += v[3] * v[3];
      }
      n += 1;
    }
  }
  Normalizer out;
  for (int c = 0; c < 6; ++c) {
    out.imu_mean[c] = s_imu[c] / n;
    out.imu_std[c] = std::max(kStdFloor, std::sqrt(std::max(0.0, ss_imu[c] / n - out.imu_mean[c] * out.imu_mean[c])));
    out.bias_mean[c] = s_b[c] / n;
    out.bias_std[c] = std::max(kStdFloor, std::sqrt(std::max(0.0, ss_b[c] / n - out.bias_mean[c] * out.bias_mean[c])));
  }
  return out;
}

std::array<double, 6> Normalizer::normalize_bias(const BiasState& b) const {
  std::array<double, 6> z{};
  for (int c = 0; c < 3; ++c) {
    z[c] = (b.b_g[c] - bias_mean[c]) / bias_std[c];
    z[c + 3] = (b.b_a[c] - bias_mean[c + 3]) / bias_std[c + 3];
  }
  return z;
}

BiasState Normalizer::denormalize_bias(std::span<const double, 6> z) const {
  BiasState b;
  for (int c = 0; c < 3; ++c) {
    b.b_g[c] = z[c] * bias_std[c] + bias_mean[c];
    b.b_a[c] = z[c + 3] * bias_std[c + 3] + bias_mean[c + 3];
  }
  return b;
}

namespace {

std::size_t common_length(std::span<const Window* const> windows) {
  if (windows.empty()) throw DataError("batch: no windows");
  const std::size_t w = windows[0]->samples.size();
  for (const Window* win : windows) {
    if (win->samples.size() != w) throw DataError("batch: windows differ in length");
  }
  return w;
}

}  // namespace

template <typename S>
Matrix<S> imu_batch(std::span<const Window* const> windows, const Normalizer& norm) {
  const std::size_t W = common_length(windows), B = windows.size();
  Matrix<S> m(static_cast<Eigen::Index>(W * B), 6);
  for (std::size_t j = 0; j < B; ++j) {
    for (std::size_t i = 0; i < W; ++i) {
      const auto& s = windows[j]->samples[i];
      const auto r = static_cast<Eigen::Index>(i * B + j);
      for (int c = 0; c < 3; ++c) {
        m(r, c) = static_cast<S>((s.omega_m[c] - norm.imu_mean[c]) / norm.imu_std[c]);
        m(r, c + 3) = static_cast<S>((s.accel_m[c] - norm.imu_mean[c + 3]) / norm.imu_std[c + 3]);
      }
    }
  }
  return m;
}

template <typename S>
Matrix<S> bias_batch(std::span<const Window* const> windows, const Normalizer& norm) {
  const std::size_t W = common_length(windows), B = windows.size();
  Matrix<S> m(static_cast<Eigen::Index>(W * B), 6);
  for (std::size_t j = 0; j < B; ++j) {
    if (windows[j]->gt_bias.size() != W) throw DataError("batch: window ground-truth bias length mismatch");
    for (std::size_t i = 0; i < W; ++i) {
      const auto z = norm.normalize_bias(windows[j]->gt_bias.at(i));
      for (int c = 0; c < 6; ++c) m(static_cast<Eigen::Index>(i * B + j), c) = static_cast<S>(z[c]);
    }
  }
  return m;
}

template <typename S>
BiasTrack unbatch_bias(const Matrix<S>& batch, std::size_t j, std::size_t B, const Normalizer& norm,
                       std::span<const double> times) {
  if (batch.cols() != 6 || B == 0 || static_cast<std::size_t>(batch.rows()) != times.size() * B || j >= B) {
    throw DataError("unbatch_bias: batch shape does not match window length and batch size");
  }
  BiasTrack out;
  for (std::size_t i = 0; i < times.size(); ++i) {
    std::array<double, 6> z{};
    for (int c = 0; c < 6; ++c) z[c] = static_cast<double>(batch(static_cast<Eigen::Index>(i * B + j), c));
    out.push_back(times[i], norm.denormalize_bias(z));
  }
  return out;
}

template Matrix<float> imu_batch<float>(std::span<const Window* const>, const Normalizer&);
template Matrix<double> imu_batch<double>(std::span<const Window* const>, const Normalizer&);
template Matrix<float> bias_batch<float>(std::span<const Window* const>, const Normalizer&);
template Matrix<double> bias_batch<double>(std::span<const Window* const>, const Normalizer&);
template BiasTrack unbatch_bias<float>(const Matrix<float>&, std::size_t, std::size_t, const Normalizer&,
                                       std::span<const double>);
template BiasTrack unbatch_bias<double>(const Matrix<double>&, std::size_t, std::size_t, const Normalizer&,
                                        std::span<const double>);

std::vector<double> timestep_embedding(int t, int dim, int T) {
  if (t < 1 || t > T) throw ConfigError("timestep_embedding: step " + std::to_string(t) + " outside [1, " + std::to_string(T) + "]");
  if (dim < 2 || dim % 2 != 0) throw ConfigError("timestep_embedding: dim must be even and >= 2");
  const int half = dim / 2;
  std::vector<double> e(static_cast<std::size_t>(dim));
  for (int k = 0; k < half; ++k) {
    const double f = std::exp(-std::log(10000.0) * k / half);
    e[k] = std::sin(t * f);
    e[k + half] = std::cos(t * f);
  }
  return e;
}

// ---------------------------------------------------------------------------
// Parameters

template <typename S>
Tensor<S> ParamList<S>::add(const std::string& name, Matrix<S> init) {
  names.push_back(name);
  tensors.emplace_back(std::move(init), true);
  return tensors.back();
}

template <typename S>
const Tensor<S>& ParamList<S>::at(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return tensors[i];
  }
  throw ConfigError("no parameter named " + name);
}

template <typename S>
std::size_t ParamList<S>::count() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += static_cast<std::size_t>(t.numel());
  return n;
}

namespace {

// (name, rows, cols, fan_in) in construction order.
struct Shape {
  std::string name;
  int rows, cols, fan_in;
};

std::vector<Shape> parameter_shapes(const NetworkConfig& cfg) {
  std::vector<Shape> s;
  const auto& e = cfg.encoder;
  const auto& d = cfg.denoiser;
  int cin = e.input_channels;
  for (std::size_t l = 0; l < e.widths.size(); ++l) {
    const int w = e.widths[l];
    const std::string p = "enc.l" + std::to_string(l) + ".";
    s.push_back({p + "conv1.w", e.kernel * cin, w, e.kernel * cin});
    s.push_back({p + "conv1.b", 1, w, e.kernel * cin});
    s.push_back({p + "conv2.w", e.kernel * w, w, e.kernel * w});
    s.push_back({p + "conv2.b", 1, w, e.kernel * w});
    if (cin != w) {
      s.push_back({p + "res.w", cin, w, cin});
      s.push_back({p + "res.b", 1, w, cin});
    }
    cin = w;
  }
  s.push_back({"enc.proj.w", cin, e.feature_dim, cin});
  s.push_back({"enc.proj.b", 1, e.feature_dim, cin});

  const bool diffusion = cfg.kind == ModelKind::diffusion;
  const int fuse_in = e.feature_dim + (diffusion ? d.latent_dim : 0);
  s.push_back({"fuse.w", fuse_in, d.fused_dim, fuse_in});
  s.push_back({"fuse.b", 1, d.fused_dim, fuse_in});
  if (diffusion) {
    s.push_back({"temb.w", d.embed_dim, d.fused_dim, d.embed_dim});
    s.push_back({"temb.b", 1, d.fused_dim, d.embed_dim});
  }
  int in = d.fused_dim;
  for (int c = 0; c < d.cells; ++c) {
    const std::string p = "gru" + std::to_string(c) + ".";
    s.push_back({p + "w_input", in, 3 * d.hidden, d.hidden});
    s.push_back({p + "w_hidden", d.hidden, 3 * d.hidden, d.hidden});
    s.push_back({p + "bias", 1, 3 * d.hidden, d.hidden});
    in = d.hidden;
  }
  s.push_back({"out.w", d.hidden, d.latent_dim, d.hidden});
  s.push_back({"out.b", 1, d.latent_dim, d.hidden});
  return s;
}

}  // namespace

std::size_t parameter_count(const NetworkConfig& cfg) {
  std::size_t n = 0;
  for (const auto& s : parameter_shapes(cfg)) n += static_cast<std::size_t>(s.rows) * static_cast<std::size_t>(s.cols);
  return n;
}

// ---------------------------------------------------------------------------
// Network

template <typename S>
BiasNet<S>::BiasNet(const NetworkConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed);
  for (const auto& s : parameter_shapes(cfg_)) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(s.fan_in));
    std::uniform_real_distribution<double> u(-bound, bound);
    Matrix<S> m(s.rows, s.cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(u(rng));
    params_.add(s.name, std::move(m));
  }
}

template <typename S>
Tensor<S> BiasNet<S>::encode(const Tensor<S>& imu) const {
  const auto& e = cfg_.encoder;
  const Eigen::Index W = cfg_.window;
  if (imu.cols() != e.input_channels || imu.rows() % W != 0 || imu.rows() == 0) {
    throw ShapeError("encode: expected (" + std::to_string(W) + "*B x " + std::to_string(e.input_channels) +
                     "), got " + imu.shape_string());
  }
  Tensor<S> x = imu;
  int cin = e.input_channels, dil = 1;
  for (std::size_t l = 0; l < e.widths.size(); ++l) {
    const std::string p = "enc.l" + std::to_string(l) + ".";
    Tensor<S> y = ad::relu(ad::causal_conv1d(x, params_.at(p + "conv1.w"), params_.at(p + "conv1.b"), e.kernel, dil, W));
    y = ad::causal_conv1d(y, params_.at(p + "conv2.w"), params_.at(p + "conv2.b"), e.kernel, dil, W);
    const Tensor<S> res =
        cin != e.widths[l] ? ad::add_bias(ad::matmul(x, params_.at(p + "res.w")), params_.at(p + "res.b")) : x;
    x = ad::relu(ad::add(y, res));
    cin = e.widths[l];
    dil *= e.dilation_base;
  }
  return ad::add_bias(ad::matmul(x, params_.at("enc.proj.w")), params_.at("enc.proj.b"));
}

template <typename S>
Tensor<S> BiasNet<S>::condition(const Tensor<S>& features, Eigen::Index) const {
  if (!cfg_.denoiser.pooled_condition) return features;
  return ad::time_broadcast(ad::time_mean(features, cfg_.window), cfg_.window);
}

template <typename S>
Tensor<S> BiasNet<S>::backbone(const Tensor<S>& fused) const {
  const auto& d = cfg_.denoiser;
  const Eigen::Index W = cfg_.window;
  Tensor<S> h = fused;
  for (int c = 0; c < d.cells; ++c) {
    const std::string p = "gru" + std::to_string(c) + ".";
    const ad::GruParams<S> g{params_.at(p + "w_input"), params_.at(p + "w_hidden"), params_.at(p + "bias")};
    h = ad::gru_sequence(h, g, W);
  }
  if (!d.sequence_latent) {
    const Eigen::Index B = h.rows() / W;
    h = ad::slice_rows(h, (W - 1) * B, B);
  }
  return ad::add_bias(ad::matmul(h, params_.at("out.w")), params_.at("out.b"));
}

template <typename S>
Tensor<S> BiasNet<S>::denoise(const Tensor<S>& x_t, std::span<const int> t, const Tensor<S>& cond) const {
  if (cfg_.kind != ModelKind::diffusion) throw ConfigError("denoise called on a regression network");
  const auto& d = cfg_.denoiser;
  const Eigen::Index W = cfg_.window;
  if (cond.rows() % W != 0 || cond.cols() != cfg_.encoder.feature_dim) {
    throw ShapeError("denoise: condition " + cond.shape_string() + " is not (" + std::to_string(W) + "*B x " +
                     std::to_string(cfg_.encoder.feature_dim) + ")");
  }
  const Eigen::Index B = cond.rows() / W;
  const Eigen::Index expect_rows = d.sequence_latent ? W * B : B;
  if (x_t.rows() != expect_rows || x_t.cols() != d.latent_dim || static_cast<Eigen::Index>(t.size()) != B) {
    throw ShapeError("denoise: latent " + x_t.shape_string() + " with " + std::to_string(t.size()) +
                     " steps does not fit a batch of " + std::to_string(B));
  }
  const Tensor<S> x_seq = d.sequence_latent ? x_t : ad::time_broadcast(x_t, W);
  Tensor<S> fused =
      ad::add_bias(ad::matmul(ad::concat_cols<S>({x_seq, condition(cond, B)}), params_.at("fuse.w")), params_.at("fuse.b"));

  Matrix<S> emb(B, d.embed_dim);
  for (Eigen::Index j = 0; j < B; ++j) {
    const auto e = timestep_embedding(t[j], d.embed_dim, d.diffusion_steps);
    for (int k = 0; k < d.embed_dim; ++k) emb(j, k) = static_cast<S>(e[k]);
  }
  const Tensor<S> temb = ad::add_bias(ad::matmul(Tensor<S>(std::move(emb)), params_.at("temb.w")), params_.at("temb.b"));
  fused = ad::add(fused, ad::time_broadcast(temb, W));
  return backbone(fused);
}

template <typename S>
Tensor<S> BiasNet<S>::regress(const Tensor<S>& cond) const {
  if (cfg_.kind != ModelKind::regression) throw ConfigError("regress called on a diffusion network");
  const Eigen::Index W = cfg_.window;
  if (cond.rows() % W != 0 || cond.cols() != cfg_.encoder.feature_dim) {
    throw ShapeError("regress: condition " + cond.shape_string() + " has the wrong shape");
  }
  const Tensor<S> fused =
      ad::add_bias(ad::matmul(condition(cond, cond.rows() / W), params_.at("fuse.w")), params_.at("fuse.b"));
  return backbone(fused);
}

template <typename S>
template <typename U>
BiasNet<U> BiasNet<S>::cast() const {
  BiasNet<U> out;
  out.cfg_ = cfg_;
  for (std::size_t i = 0; i < params_.names.size(); ++i) {
    out.params_.add(params_.names[i], params_.tensors[i].value().template cast<U>());
  }
  return out;
}

template class BiasNet<float>;
template class BiasNet<double>;
template struct ParamList<float>;
template struct ParamList<double>;
template BiasNet<double> BiasNet<float>::cast<double>() const;
template BiasNet<float> BiasNet<double>::cast<float>() const;
template BiasNet<float> BiasNet<float>::cast<float>() const;

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const std::string& in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

constexpr char kMagic[] = "BFCKPT";
constexpr std::size_t kMagicLen = 6;

static_assert(std::endian::native == std::endian::little, "checkpoint payload assumes a little-endian host");

}  // namespace

Checkpoint Checkpoint::from_model(const BiasNet<float>& net, const Normalizer& norm, const TrainingMeta& meta) {
  Checkpoint c;
  c.config = net.config();
  c.normalizer = norm;
  c.meta = meta;
  c.names = net.params().names;
  for (const auto& t : net.params().tensors) c.tensors.push_back(t.value());
  return c;
}

BiasNet<float> Checkpoint::to_model(ModelKind expected) const {
  if (config.kind != expected) {
    throw CheckpointError("checkpoint holds a " + to_string(config.kind) + " model, expected " + to_string(expected));
  }
  BiasNet<float> net(config, 0);
  auto& ps = net.params();
  if (ps.names != names) throw CheckpointError("checkpoint tensor names do not match the configuration");
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (ps.tensors[i].rows() != tensors[i].rows() || ps.tensors[i].cols() != tensors[i].cols()) {
      throw CheckpointError("checkpoint tensor " + names[i] + " has shape " + std::to_string(tensors[i].rows()) + "x" +
                            std::to_string(tensors[i].cols()) + ", configuration needs " +
                            ps.tensors[i].shape_string());
    }
    ps.tensors[i].mutable_value() = tensors[i];
  }
  return net;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  if (ckpt.names.size() != ckpt.tensors.size()) throw CheckpointError("checkpoint names and tensors differ in count");
  std::string payload;
  json dir = json::array();
  std::size_t offset = 0;
  for (std::size_t i = 0; i < ckpt.tensors.size(); ++i) {
    const auto& m = ckpt.tensors[i];
    dir.push_back({{"name", ckpt.names[i]}, {"rows", m.rows()}, {"cols", m.cols()}, {"offset", offset}});
    payload.append(reinterpret_cast<const char*>(m.data()), static_cast<std::size_t>(m.size()) * sizeof(float));
    offset += static_cast<std::size_t>(m.size());
  }
  const auto crc = static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(payload.data()), static_cast<uInt>(payload.size())));
  const Normalizer& n = ckpt.normalizer;
  const json header{{"config", detail::config_to_json(ckpt.config)},
                    {"normalizer",
                     {{"imu_mean", n.imu_mean},
                      {"imu_std", n.imu_std},
                      {"bias_mean", n.bias_mean},
                      {"bias_std", n.bias_std}}},
                    {"meta",
                     {{"seed", ckpt.meta.seed},
                      {"epochs", ckpt.meta.epochs},
                      {"batch_size", ckpt.meta.batch_size},
                      {"lr", ckpt.meta.lr},
                      {"train_windows", ckpt.meta.train_windows},
                      {"loss_curve", ckpt.meta.loss_curve}}},
                    {"tensors", dir},
                    {"payload_floats", offset},
                    {"payload_crc32", crc}};
  const std::string h = header.dump();
  std::string out(kMagic, kMagicLen);
  put_u32(out, Checkpoint::kVersion);
  put_u32(out, static_cast<std::uint32_t>(h.size()));
  out += h;
  out += payload;
  std::ofstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open " + path.string() + " for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw CheckpointError("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open checkpoint " + path.string());
  const std::string in((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  const std::string where = path.string() + ": ";
  if (in.size() < kMagicLen + 8 || in.compare(0, kMagicLen, kMagic) != 0) {
    throw CheckpointError(where + "not a checkpoint (bad magic or truncated)");
  }
  const std::uint32_t version = get_u32(in, kMagicLen);
  if (version != Checkpoint::kVersion) {
    throw CheckpointError(where + "unsupported checkpoint version " + std::to_string(version) + " (expected " +
                          std::to_string(Checkpoint::kVersion) + ")");
  }
  const std::size_t hlen = get_u32(in, kMagicLen + 4);
  const std::size_t hstart = kMagicLen + 8;
  if (in.size() < hstart + hlen) throw CheckpointError(where + "truncated header");

  Checkpoint c;
  try {
    const json h = json::parse(in.substr(hstart, hlen));
    c.config = detail::config_from_json(h.at("config"));
    c.config.validate();
    const json& n = h.at("normalizer");
    c.normalizer.imu_mean = n.at("imu_mean").get<std::array<double, 6>>();
    c.normalizer.imu_std = n.at("imu_std").get<std::array<double, 6>>();
    c.normalizer.bias_mean = n.at("bias_mean").get<std::array<double, 6>>();
    c.normalizer.bias_std = n.at("bias_std").get<std::array<double, 6>>();
    const json& m = h.at("meta");
    c.meta.seed = m.at("seed").get<std::uint64_t>();
    c.meta.epochs = m.at("epochs").get<int>();
    c.meta.batch_size = m.at("batch_size").get<int>();
    c.meta.lr = m.at("lr").get<double>();
    c.meta.train_windows = m.at("train_windows").get<std::size_t>();
    c.meta.loss_curve = m.at("loss_curve").get<std::vector<double>>();

    const std::size_t floats = h.at("payload_floats").get<std::size_t>();
    const std::size_t pstart = hstart + hlen;
    if (in.size() - pstart != floats * sizeof(float)) {
      throw CheckpointError(where + "payload is " + std::to_string(in.size() - pstart) + " bytes, header declares " +
                            std::to_string(floats * sizeof(float)) + " (truncated or padded file)");
    }
    const auto crc = static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(in.data() + pstart), static_cast<uInt>(floats * sizeof(float))));
    if (crc != h.at("payload_crc32").get<std::uint32_t>()) throw CheckpointError(where + "payload checksum mismatch");

    for (const json& t : h.at("tensors")) {
      const auto rows = t.at("rows").get<Eigen::Index>();
      const auto cols = t.at("cols").get<Eigen::Index>();
      const auto off = t.at("offset").get<std::size_t>();
      if (rows < 0 || cols < 0 || off + static_cast<std::size_t>(rows * cols) > floats) {
        throw CheckpointError(where + "tensor directory entry out of range");
      }
      Matrix<float> mat(rows, cols);
      std::memcpy(mat.data(), in.data() + pstart + off * sizeof(float), static_cast<std::size_t>(rows * cols) * sizeof(float));
      c.names.push_back(t.at("name").get<std::string>());
      c.tensors.push_back(std::move(mat));
    }
  } catch (const json::exception& e) {
    throw CheckpointError(where + "malformed header: " + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(where + "invalid configuration: " + e.what());
  }
  // Shapes must match what the stored configuration builds.
  (void)c.to_model(c.config.kind);
  return c;
}

}  // namespace biasdiff
