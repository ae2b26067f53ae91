#include "biasdiff/manifest.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "biasdiff/errors.hpp"
#include "config_json.hpp"
#include "json.hpp"

namespace biasdiff {

using nlohmann::json;

namespace {

json vec(const Vec3d& v) { return json::array({v.x(), v.y(), v.z()}); }

Vec3d vec(const json& j) {
  const auto a = j.get<std::vector<double>>();
  if (a.size() != 3) throw ConfigError("manifest: expected a 3-vector");
  return {a[0], a[1], a[2]};
}

json sensor_json(const SensorBiasConfig& s) {
  return {{"initial_mean", vec(s.initial_mean)}, {"initial_std", vec(s.initial_std)}, {"rw_rate", vec(s.rw_rate)},
          {"gm_tau", s.gm_tau},                 {"gm_sigma", vec(s.gm_sigma)},       {"ramp_rate", vec(s.ramp_rate)}};
}

SensorBiasConfig sensor_from(const json& j) {
  SensorBiasConfig s;
  s.initial_mean = vec(j.at("initial_mean"));
  s.initial_std = vec(j.at("initial_std"));
  s.rw_rate = vec(j.at("rw_rate"));
  s.gm_tau = j.at("gm_tau").get<double>();
  s.gm_sigma = vec(j.at("gm_sigma"));
  s.ramp_rate = vec(j.at("ramp_rate"));
  return s;
}

std::uint64_t split_code(const std::string& split) {
  if (split == "train") return 1;
  if (split == "test") return 2;
  throw ConfigError("unknown split '" + split + "' (expected train or test)");
}

const SplitConfig& split_config(const Manifest& m, const std::string& split) {
  return split_code(split) == 1 ? m.train : m.test;
}

}  // namespace

void Manifest::validate() const {
  if (!(rate_hz >= 50.0)) throw ConfigError("manifest: rate_hz must be at least 50");
  if (!(window_s > 0.0) || overlap < 0.0 || overlap > 0.95) throw ConfigError("manifest: bad window or overlap");
  for (const SplitConfig* s : {&train, &test}) {
    if (s->sequences < 0 || (s->sequences > 0 && s->duration_s < window_s)) {
      throw ConfigError("manifest: each split needs sequences at least one window long");
    }
  }
  if (network.window != window_samples()) {
    throw ConfigError("manifest: network window " + std::to_string(network.window) + " differs from rate * window_s = " +
                      std::to_string(window_samples()));
  }
  network.validate();
  motion.validate();
  bias.validate();
  if (training.epochs < 0 || training.batch_size < 1 || !(training.lr >= 0.0)) {
    throw ConfigError("manifest: bad training settings");
  }
  if (evaluation.runs < 1 || evaluation.ddim_steps < 1 || evaluation.oracle_candidates < 1) {
    throw ConfigError("manifest: bad evaluation settings");
  }
}

int Manifest::window_samples() const { return static_cast<int>(std::lround(rate_hz * window_s)); }

Manifest desk_manifest() {
  Manifest m;
  m.seed = 20240601;
  m.rate_hz = 100.0;
  m.window_s = 1.0;
  m.overlap = 0.5;
  m.train = {1000, 3.0};
  m.test = {50, 6.0};

  // a ground robot on a level floor: yaw only, gentle bursts with frequent
  // stops, which is when a constant bias shows up in the readings
  m.motion.components = 3;
  m.motion.position_amplitude = Vec3d(0.3, 0.3, 0.0);
  m.motion.angle_amplitude = Vec3d(0.0, 0.0, 0.5);
  m.motion.min_freq_hz = 0.1;
  m.motion.max_freq_hz = 0.3;
  m.motion.go_min_s = 0.5;
  m.motion.go_max_s = 1.0;
  m.motion.stop_min_s = 0.4;
  m.motion.stop_max_s = 1.0;
  m.motion.ramp_s = 0.25;

  // turn-on offsets around a fixed factory bias, plus drift
  m.bias.gyro.initial_mean = Vec3d(-0.002, 0.01, 0.02);
  m.bias.gyro.initial_std = Vec3d::Constant(0.01);
  m.bias.gyro.rw_rate = Vec3d::Constant(2e-4);
  m.bias.gyro.gm_sigma = Vec3d::Constant(2e-3);
  m.bias.gyro.gm_tau = 20.0;
  m.bias.accel.initial_mean = Vec3d(-0.02, 0.12, 0.07);
  m.bias.accel.initial_std = Vec3d::Constant(0.05);
  m.bias.accel.rw_rate = Vec3d::Constant(3e-3);
  m.bias.accel.gm_sigma = Vec3d::Constant(0.02);
  m.bias.accel.gm_tau = 20.0;

  m.noise = {1.7e-4, 2e-3, 1.9e-5, 3e-3};

  m.network.kind = ModelKind::diffusion;
  m.network.window = 100;
  m.network.encoder.widths = {32, 32, 32};
  m.network.encoder.kernel = 3;
  m.network.encoder.feature_dim = 32;
  m.network.denoiser.fused_dim = 32;
  m.network.denoiser.hidden = 32;
  m.network.denoiser.cells = 2;
  m.network.denoiser.embed_dim = 32;

  m.training = {30, 32, 1e-3};
  return m;
}

std::string manifest_to_json(const Manifest& m) {
  json seqs = json::array();
  for (const auto& s : m.sequences) {
    seqs.push_back({{"name", s.name}, {"split", s.split}, {"id", s.id}, {"path", s.path}});
  }
  const auto& mo = m.motion;
  const json j{
      {"seed", m.seed},
      {"rate_hz", m.rate_hz},
      {"window_s", m.window_s},
      {"overlap", m.overlap},
      {"train", {{"sequences", m.train.sequences}, {"duration_s", m.train.duration_s}}},
      {"test", {{"sequences", m.test.sequences}, {"duration_s", m.test.duration_s}}},
      {"motion",
       {{"components", mo.components},
        {"position_amplitude", vec(mo.position_amplitude)},
        {"angle_amplitude", vec(mo.angle_amplitude)},
        {"min_freq_hz", mo.min_freq_hz},
        {"max_freq_hz", mo.max_freq_hz},
        {"random_heading", mo.random_heading},
        {"go_min_s", mo.go_min_s},
        {"go_max_s", mo.go_max_s},
        {"stop_min_s", mo.stop_min_s},
        {"stop_max_s", mo.stop_max_s},
        {"ramp_s", mo.ramp_s}}},
      {"bias", {{"gyro", sensor_json(m.bias.gyro)}, {"accel", sensor_json(m.bias.accel)}}},
      {"noise",
       {{"sigma_g", m.noise.sigma_g}, {"sigma_a", m.noise.sigma_a}, {"eta_g", m.noise.eta_g}, {"eta_a", m.noise.eta_a}}},
      {"network", detail::config_to_json(m.network)},
      {"training", {{"epochs", m.training.epochs}, {"batch_size", m.training.batch_size}, {"lr", m.training.lr}}},
      {"evaluation",
       {{"runs", m.evaluation.runs},
        {"ddim_steps", m.evaluation.ddim_steps},
        {"oracle_candidates", m.evaluation.oracle_candidates},
        {"methods", m.evaluation.methods}}},
      {"sequences", seqs}};
  return j.dump(2) + "\n";
}

Manifest manifest_from_json(const std::string& text) {
  Manifest m;
  try {
    const json j = json::parse(text);
    m.seed = j.at("seed").get<std::uint64_t>();
    m.rate_hz = j.at("rate_hz").get<double>();
    m.window_s = j.at("window_s").get<double>();
    m.overlap = j.at("overlap").get<double>();
    m.train = {j.at("train").at("sequences").get<int>(), j.at("train").at("duration_s").get<double>()};
    m.test = {j.at("test").at("sequences").get<int>(), j.at("test").at("duration_s").get<double>()};
    const json& mo = j.at("motion");
    m.motion.components = mo.at("components").get<int>();
    m.motion.position_amplitude = vec(mo.at("position_amplitude"));
    m.motion.angle_amplitude = vec(mo.at("angle_amplitude"));
    m.motion.min_freq_hz = mo.at("min_freq_hz").get<double>();
    m.motion.max_freq_hz = mo.at("max_freq_hz").get<double>();
    m.motion.random_heading = mo.at("random_heading").get<bool>();
    m.motion.go_min_s = mo.at("go_min_s").get<double>();
    m.motion.go_max_s = mo.at("go_max_s").get<double>();
    m.motion.stop_min_s = mo.at("stop_min_s").get<double>();
    m.motion.stop_max_s = mo.at("stop_max_s").get<double>();
    m.motion.ramp_s = mo.at("ramp_s").get<double>();
    m.bias.gyro = sensor_from(j.at("bias").at("gyro"));
    m.bias.accel = sensor_from(j.at("bias").at("accel"));
    const json& n = j.at("noise");
    m.noise = {n.at("sigma_g").get<double>(), n.at("sigma_a").get<double>(), n.at("eta_g").get<double>(),
               n.at("eta_a").get<double>()};
    m.network = detail::config_from_json(j.at("network"));
    const json& t = j.at("training");
    m.training = {t.at("epochs").get<int>(), t.at("batch_size").get<int>(), t.at("lr").get<double>()};
    const json& e = j.at("evaluation");
    m.evaluation.runs = e.at("runs").get<int>();
    m.evaluation.ddim_steps = e.at("ddim_steps").get<int>();
    m.evaluation.oracle_candidates = e.at("oracle_candidates").get<int>();
    m.evaluation.methods = e.at("methods").get<std::vector<std::string>>();
    for (const json& s : j.at("sequences")) {
      m.sequences.push_back(
          {s.at("name").get<std::string>(), s.at("split").get<std::string>(), s.at("id").get<int>(),
           s.at("path").get<std::string>()});
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed manifest: ") + e.what());
  }
  m.validate();
  return m;
}

void save_manifest(const std::filesystem::path& path, const Manifest& m) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path.string() + " for writing");
  f << manifest_to_json(m);
}

Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot read manifest " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return manifest_from_json(ss.str());
}

Sequence synthesize_split(const Manifest& m, const std::string& split, int index) {
  const SplitConfig& sc = split_config(m, split);
  if (index < 0 || index >= sc.sequences) throw ConfigError("synthesize_split: index out of range");
  char name[64];
  std::snprintf(name, sizeof(name), "%s_%03d", split.c_str(), index);
  const std::uint64_t seed = mix_seed(mix_seed(m.seed, split_code(split)), static_cast<std::uint64_t>(index));
  return synthesize_sequence(m.motion, m.bias, m.noise, ImuIntrinsics{}, sc.duration_s, m.rate_hz, seed, name);
}

std::vector<Window> split_windows(const Manifest& m, const std::string& split, const std::filesystem::path& root,
                                  std::vector<std::string>* names) {
  const SplitConfig& sc = split_config(m, split);
  std::vector<Window> out;
  auto add = [&](const Sequence& seq, int id, const std::string& name) {
    auto ws = make_windows(seq, m.window_s, m.overlap, id);
    out.insert(out.end(), ws.begin(), ws.end());
    if (names) {
      if (names->size() <= static_cast<std::size_t>(id)) names->resize(static_cast<std::size_t>(id) + 1);
      (*names)[static_cast<std::size_t>(id)] = name;
    }
  };
  bool listed = false;
  for (const auto& e : m.sequences) {
    if (e.split != split) continue;
    listed = true;
    Sequence seq = load_euroc(root / e.path);
    add(seq, e.id, e.name);
  }
  if (!listed) {
    for (int i = 0; i < sc.sequences; ++i) {
      const Sequence seq = synthesize_split(m, split, i);
      add(seq, i, seq.meta.name);
    }
  }
  if (out.empty()) throw DataError("split " + split + " has no windows");
  return out;
}

}  // namespace biasdiff
