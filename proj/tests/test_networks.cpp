#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "biasdiff/dataset.hpp"
#include "biasdiff/errors.hpp"
#include "biasdiff/networks.hpp"
#include "doctest.h"
#include "gradcheck.hpp"

using namespace biasdiff;
using ad::Matrix;
using ad::Tensor;
namespace fs = std::filesystem;

namespace {

NetworkConfig toy(ModelKind kind = ModelKind::diffusion) {
  NetworkConfig c;
  c.kind = kind;
  c.window = 8;
  c.encoder.widths = {4, 5};
  c.encoder.kernel = 2;
  c.encoder.dilation_base = 2;
  c.encoder.feature_dim = 3;
  c.denoiser.fused_dim = 4;
  c.denoiser.hidden = 16;
  c.denoiser.embed_dim = 4;
  c.denoiser.diffusion_steps = 50;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void spit(const fs::path& p, const std::string& s) {
  std::ofstream f(p, std::ios::binary);
  f.write(s.data(), static_cast<std::streamsize>(s.size()));
}

fs::path scratch(const std::string& name) { return fs::temp_directory_path() / ("biasdiff_net_" + name); }

}  // namespace

TEST_CASE("full-scale parameter count lands near 2.2M") {
  const NetworkConfig full = full_scale_config();
  const std::size_t n = parameter_count(full);
  CHECK(n >= 1800000);
  CHECK(n <= 2600000);
  CHECK(BiasNet<float>(full, 1).params().count() == n);
  MESSAGE("full-scale parameters: " << n);
}

TEST_CASE("toy parameter count matches the closed form") {
  const NetworkConfig c = toy();
  const int K = 2, F = 3, D = 4, E = 4, H = 16;
  const int enc = (K * 6 * 4 + 4) + (K * 4 * 4 + 4) + (6 * 4 + 4) + (K * 4 * 5 + 5) + (K * 5 * 5 + 5) + (4 * 5 + 5) +
                  (5 * F + F);
  const int den = ((6 + F) * D + D) + (E * D + D) + (3 * H * (D + H) + 3 * H) + (3 * H * (H + H) + 3 * H) + (H * 6 + 6);
  CHECK(parameter_count(c) == static_cast<std::size_t>(enc + den));
  CHECK(parameter_count(c) == 3013);
  CHECK(BiasNet<double>(c, 3).params().count() == 3013);
}

TEST_CASE("doubling the GRU hidden size roughly quadruples GRU parameters") {
  auto gru_params = [](int H, int D) { return 3.0 * H * (D + H) + 3 * H + 3.0 * H * (2 * H) + 3 * H; };
  NetworkConfig a = full_scale_config(), b = full_scale_config();
  b.denoiser.hidden *= 2;
  const double da = gru_params(a.denoiser.hidden, a.denoiser.fused_dim);
  const double db = gru_params(b.denoiser.hidden, b.denoiser.fused_dim);
  const double delta_total = static_cast<double>(parameter_count(b)) - static_cast<double>(parameter_count(a));
  const double out_delta = a.denoiser.hidden * 6.0;
  CHECK(delta_total == doctest::Approx(db - da + out_delta));
  CHECK(db / da == doctest::Approx(4.0).epsilon(0.1));
}

TEST_CASE("timestep embedding") {
  const auto a = timestep_embedding(17, 32, 1000);
  CHECK(a == timestep_embedding(17, 32, 1000));
  for (double v : a) CHECK(std::abs(v) <= 1.0);
  const auto e1 = timestep_embedding(1, 16, 1000);
  const auto eT = timestep_embedding(1000, 16, 1000);
  double d = 0;
  for (std::size_t i = 0; i < e1.size(); ++i) d += (e1[i] - eT[i]) * (e1[i] - eT[i]);
  CHECK(std::sqrt(d) > 0.1);
  CHECK_THROWS_AS(timestep_embedding(0, 16, 1000), ConfigError);
  CHECK_THROWS_AS(timestep_embedding(1001, 16, 1000), ConfigError);
}

TEST_CASE("encoder output shape and causality at every step") {
  NetworkConfig c = toy();
  c.window = 24;
  c.encoder.widths = {4, 4, 5};
  const BiasNet<double> net(c, 5);
  std::mt19937_64 rng(1);
  const Eigen::Index B = 2, W = c.window;
  const Matrix<double> x = gradcheck::random_matrix(rng, W * B, 6);
  const Tensor<double> f = net.encode(Tensor<double>(x));
  REQUIRE(f.shape() == std::array<Eigen::Index, 2>{W * B, 3});
  for (Eigen::Index i = 0; i < W; ++i) {
    Matrix<double> x2 = x;
    x2.middleRows(i * B, B).array() += 1.0;
    const Tensor<double> f2 = net.encode(Tensor<double>(x2));
    CHECK((f2.value().topRows(i * B) - f.value().topRows(i * B)).norm() == 0.0);
  }
  CHECK_THROWS_AS(net.encode(Tensor<double>(Matrix<double>::Zero(W * B, 5))), ShapeError);
  CHECK_THROWS_AS(net.encode(Tensor<double>(Matrix<double>::Zero(W * B + 1, 6))), ShapeError);
}

TEST_CASE("receptive field longer than the window is rejected") {
  NetworkConfig c = toy();
  c.encoder.widths = {4, 4, 4, 4};
  c.encoder.kernel = 3;
  CHECK(c.encoder.receptive_field() == 1 + 2 * 2 * (1 + 2 + 4 + 8));
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("denoiser output shape and zero-parameter output") {
  BiasNet<double> net(toy(), 6);
  std::mt19937_64 rng(2);
  const Eigen::Index B = 3, W = 8;
  const Tensor<double> imu(gradcheck::random_matrix(rng, W * B, 6));
  const Tensor<double> x(gradcheck::random_matrix(rng, W * B, 6));
  const std::vector<int> t{1, 25, 50};
  const Tensor<double> eps = net.denoise(x, t, net.encode(imu));
  CHECK(eps.shape() == x.shape());
  for (auto& p : net.params().tensors) p.mutable_value().setZero();
  CHECK(net.denoise(x, t, net.encode(imu)).value().norm() == 0.0);
  CHECK_THROWS_AS(net.denoise(x, std::vector<int>{1, 2}, net.encode(imu)), ShapeError);
  CHECK_THROWS_AS(net.regress(net.encode(imu)), ConfigError);
}

TEST_CASE("vector-latent and pooled-condition variants") {
  NetworkConfig c = toy();
  c.denoiser.sequence_latent = false;
  c.denoiser.pooled_condition = true;
  const BiasNet<double> net(c, 7);
  std::mt19937_64 rng(3);
  const Eigen::Index B = 2, W = 8;
  const Tensor<double> imu(gradcheck::random_matrix(rng, W * B, 6));
  const Tensor<double> x(gradcheck::random_matrix(rng, B, 6));
  const std::vector<int> t{3, 4};
  CHECK(net.denoise(x, t, net.encode(imu)).shape() == std::array<Eigen::Index, 2>{B, 6});
}

TEST_CASE("full encoder and denoiser gradients match finite differences") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const BiasNet<double> net = BiasNet<float>(toy(), 10 + seed).cast<double>();
    std::mt19937_64 rng(seed);
    const Eigen::Index B = 2, W = 8;
    const Tensor<double> imu(gradcheck::random_matrix(rng, W * B, 6));
    const Tensor<double> x(gradcheck::random_matrix(rng, W * B, 6));
    const Tensor<double> eps(gradcheck::random_matrix(rng, W * B, 6));
    const std::vector<int> t{7, 42};
    const double err = gradcheck::max_relative_error(
        net.params().tensors, [&] { return ad::mse_loss(eps, net.denoise(x, t, net.encode(imu))); });
    CHECK(err < 1e-4);
  }
  const BiasNet<double> reg(toy(ModelKind::regression), 20);
  std::mt19937_64 rng(9);
  const Tensor<double> imu(gradcheck::random_matrix(rng, 16, 6));
  const Tensor<double> target(gradcheck::random_matrix(rng, 16, 6));
  CHECK(gradcheck::max_relative_error(reg.params().tensors,
                                      [&] { return ad::mse_loss(reg.regress(reg.encode(imu)), target); }) < 1e-4);
}

TEST_CASE("regression head is deterministic and shaped like the bias sequence") {
  const BiasNet<float> net(toy(ModelKind::regression), 4);
  std::mt19937_64 rng(4);
  const Tensor<float> imu(gradcheck::random_matrix(rng, 8 * 5, 6).cast<float>());
  const Tensor<float> a = net.regress(net.encode(imu));
  CHECK(a.shape() == std::array<Eigen::Index, 2>{40, 6});
  CHECK(a.value() == net.regress(net.encode(imu)).value());
}

TEST_CASE("bounded inputs give finite denoiser outputs") {
  const BiasNet<float> net(toy(), 8);
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> step(1, 50);
  std::size_t draws = 0;
  for (int batch = 0; batch < 10; ++batch) {
    const Eigen::Index B = 1000;
    const Tensor<float> imu((gradcheck::random_matrix(rng, 8 * B, 6) * 3.0).cast<float>());
    const Tensor<float> x((gradcheck::random_matrix(rng, 8 * B, 6) * 3.0).cast<float>());
    std::vector<int> t(B);
    for (auto& v : t) v = step(rng);
    const Tensor<float> e = net.denoise(x, t, net.encode(imu));
    CHECK(e.value().allFinite());
    CHECK(e.value().cwiseAbs().maxCoeff() < 1e3f);
    draws += B;
  }
  CHECK(draws == 10000);
}

TEST_CASE("normalizer round trip and batching layout") {
  MotionConfig m;
  m.position_amplitude = Vec3d(0.3, 0.3, 0.1);
  m.angle_amplitude = Vec3d(0.1, 0.1, 0.3);
  BiasProcessConfig b;
  b.gyro.initial_mean = Vec3d(0.01, -0.02, 0.005);
  b.gyro.rw_rate = Vec3d::Constant(1e-3);
  b.accel.initial_mean = Vec3d(0.1, 0.05, -0.08);
  b.accel.rw_rate = Vec3d::Constant(1e-2);
  const Sequence seq = synthesize_sequence(m, b, NoiseParams{1e-3, 1e-2, 0, 0}, {}, 6.0, 100.0, 3);
  const auto ws = make_windows(seq, 1.0, 0.5);
  const Normalizer norm = Normalizer::fit(ws);
  for (int c = 0; c < 6; ++c) CHECK(norm.bias_std[c] > 0);

  const BiasState x = ws[2].gt_bias.at(17);
  const auto z = norm.normalize_bias(x);
  const BiasState back = norm.denormalize_bias(z);
  CHECK((back.b_g - x.b_g).norm() < 1e-6);
  CHECK((back.b_a - x.b_a).norm() < 1e-6);

  std::vector<const Window*> ptrs{&ws[0], &ws[3], &ws[5]};
  const Matrix<double> bb = bias_batch<double>(ptrs, norm);
  const Matrix<double> ib = imu_batch<double>(ptrs, norm);
  CHECK(bb.rows() == 3 * 100);
  CHECK(ib(4 * 3 + 1, 0) == doctest::Approx((ws[3].samples[4].omega_m.x() - norm.imu_mean[0]) / norm.imu_std[0]));
  const BiasTrack tr = unbatch_bias<double>(bb, 1, 3, norm, ws[3].gt_bias.t);
  for (std::size_t k = 0; k < tr.size(); ++k) {
    CHECK(tr.t[k] == ws[3].gt_bias.t[k]);
    CHECK((tr.b_g[k] - ws[3].gt_bias.b_g[k]).norm() < 1e-12);
    CHECK((tr.b_a[k] - ws[3].gt_bias.b_a[k]).norm() < 1e-12);
  }
}

TEST_CASE("checkpoint save, load, save is byte-identical") {
  const BiasNet<float> net(toy(), 11);
  Normalizer norm;
  norm.imu_mean = {0.1, -0.2, 0.3, 0.01, 0.02, 9.81};
  norm.bias_std = {1e-3, 2e-3, 3e-3, 0.1, 0.2, 1.0 / 3.0};
  TrainingMeta meta;
  meta.seed = 1234567890123ULL;
  meta.epochs = 3;
  meta.batch_size = 16;
  meta.lr = 3e-5;
  meta.train_windows = 99;
  meta.loss_curve = {1.0, 0.75, 0.123456789012345};
  const fs::path a = scratch("a.ckpt"), b = scratch("b.ckpt");
  save_checkpoint(a, Checkpoint::from_model(net, norm, meta));
  const Checkpoint loaded = load_checkpoint(a);
  save_checkpoint(b, loaded);
  CHECK(slurp(a) == slurp(b));
  CHECK(loaded.meta.loss_curve == meta.loss_curve);
  CHECK(loaded.normalizer.bias_std == norm.bias_std);

  const BiasNet<float> back = loaded.to_model(ModelKind::diffusion);
  for (std::size_t i = 0; i < back.params().tensors.size(); ++i) {
    CHECK(back.params().tensors[i].value() == net.params().tensors[i].value());
  }
  CHECK_THROWS_AS(loaded.to_model(ModelKind::regression), CheckpointError);
}

TEST_CASE("checkpoint corruption is detected") {
  const BiasNet<float> net(toy(), 12);
  const fs::path p = scratch("c.ckpt");
  save_checkpoint(p, Checkpoint::from_model(net, {}, {}));
  const std::string good = slurp(p);

  std::string bad = good;
  bad[bad.size() - 7] ^= 0x40;
  spit(p, bad);
  CHECK_THROWS_WITH_AS(load_checkpoint(p), doctest::Contains("checksum"), CheckpointError);

  spit(p, good.substr(0, good.size() - 10));
  CHECK_THROWS_WITH_AS(load_checkpoint(p), doctest::Contains("truncated"), CheckpointError);

  bad = good;
  bad[6] = 9;
  spit(p, bad);
  CHECK_THROWS_WITH_AS(load_checkpoint(p), doctest::Contains("version"), CheckpointError);

  spit(p, "hello");
  CHECK_THROWS_AS(load_checkpoint(p), CheckpointError);
  CHECK_THROWS_AS(load_checkpoint(scratch("missing.ckpt")), CheckpointError);
}

TEST_CASE("checkpoint tensors must match the configuration") {
  const BiasNet<float> net(toy(), 13);
  Checkpoint c = Checkpoint::from_model(net, {}, {});
  c.tensors[2] = Matrix<float>::Zero(c.tensors[2].rows() + 1, c.tensors[2].cols());
  const fs::path p = scratch("d.ckpt");
  save_checkpoint(p, c);
  CHECK_THROWS_WITH_AS(load_checkpoint(p), doctest::Contains("shape"), CheckpointError);
}
