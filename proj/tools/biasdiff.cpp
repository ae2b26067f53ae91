// biasdiff command line: synth, calibrate, train, predict, evaluate, report.
// Exit codes: 0 ok, 2 bad arguments or config, 3 data errors, 4 checkpoint errors.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "biasdiff/allan.hpp"
#include "biasdiff/dataset.hpp"
#include "biasdiff/diffusion.hpp"
#include "biasdiff/errors.hpp"
#include "biasdiff/evaluation.hpp"
#include "biasdiff/manifest.hpp"
#include "biasdiff/networks.hpp"
#include "json.hpp"

using namespace biasdiff;
namespace fs = std::filesystem;

namespace {

constexpr const char* kManifest = "manifest.json";

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path.string());
  f << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot read " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

Manifest load_data_manifest(const fs::path& data) { return load_manifest(data / kManifest); }

// Test-split sequence names by id, without loading any data.
std::vector<std::string> test_names(const Manifest& m) {
  std::vector<std::string> names;
  for (const auto& e : m.sequences) {
    if (e.split != "test") continue;
    if (names.size() <= static_cast<std::size_t>(e.id)) names.resize(static_cast<std::size_t>(e.id) + 1);
    names[static_cast<std::size_t>(e.id)] = e.name;
  }
  if (names.empty()) {
    for (int i = 0; i < m.test.sequences; ++i) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "test_%03d", i);
      names.emplace_back(buf);
    }
  }
  return names;
}

std::string method_digest(const Manifest& m, const std::string& method) {
  return digest(manifest_to_json(m) + "|" + method);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// ---- synth

struct SynthArgs {
  std::string out;
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> train;
  std::optional<int> test;
  std::optional<double> duration;
  double static_s = 0.0;
};

int run_synth(const SynthArgs& a) {
  Manifest m = a.config.empty() ? desk_manifest() : load_manifest(a.config);
  if (a.seed) m.seed = *a.seed;
  if (a.train) m.train.sequences = *a.train;
  if (a.test) m.test.sequences = *a.test;
  if (a.duration) m.train.duration_s = m.test.duration_s = *a.duration;
  m.sequences.clear();
  m.validate();

  const fs::path root(a.out);
  fs::create_directories(root);
  for (const char* split : {"train", "test"}) {
    const int n = std::string(split) == "train" ? m.train.sequences : m.test.sequences;
    for (int i = 0; i < n; ++i) {
      const Sequence seq = synthesize_split(m, split, i);
      write_euroc(root / seq.meta.name, seq);
      m.sequences.push_back({seq.meta.name, split, i, seq.meta.name});
    }
    std::fprintf(stderr, "synth: %d %s sequences\n", n, split);
  }
  if (a.static_s > 0.0) {
    // level and still, same sensor as the motion data
    MotionConfig still;
    still.position_amplitude = Vec3d::Zero();
    still.angle_amplitude = Vec3d::Zero();
    const Sequence seq = synthesize_sequence(still, m.bias, m.noise, ImuIntrinsics{}, a.static_s, m.rate_hz,
                                             mix_seed(m.seed, 3), "static");
    write_euroc(root / "static", seq);
    std::fprintf(stderr, "synth: static sequence of %.0f s\n", a.static_s);
  }
  save_manifest(root / kManifest, m);
  std::printf("%s\n", (root / kManifest).string().c_str());
  return 0;
}

// ---- calibrate

int run_calibrate(const std::string& data, const std::string& out) {
  const Sequence seq = load_euroc(data);
  const NoiseFit fit = fit_noise(seq.samples);
  const fs::path dir(out);
  fs::create_directories(dir);
  write_allan_csv((dir / "allan_gyro.csv").string(), fit.gyro);
  write_allan_csv((dir / "allan_accel.csv").string(), fit.accel);
  const auto axes = [](const Vec3d& v) { return nlohmann::json::array({v.x(), v.y(), v.z()}); };
  const nlohmann::json j{{"sigma_g", fit.params.sigma_g},
                         {"sigma_a", fit.params.sigma_a},
                         {"eta_g", fit.params.eta_g},
                         {"eta_a", fit.params.eta_a},
                         {"axes",
                          {{"sigma_g", axes(fit.sigma_g_axes)},
                           {"sigma_a", axes(fit.sigma_a_axes)},
                           {"eta_g", axes(fit.eta_g_axes)},
                           {"eta_a", axes(fit.eta_a_axes)}}}};
  write_text(dir / "noise.json", j.dump(2) + "\n");
  std::printf("sigma_g %.4g rad/s/sqrt(Hz)  sigma_a %.4g m/s^2/sqrt(Hz)  eta_g %.4g  eta_a %.4g\n", fit.params.sigma_g,
              fit.params.sigma_a, fit.params.eta_g, fit.params.eta_a);
  return 0;
}

// ---- train

struct TrainArgs {
  std::string data;
  std::string method = "diffusion";
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
  std::optional<double> lr;
  std::optional<int> batch;
  std::optional<double> window;
  std::optional<double> overlap;
};

int run_train(const TrainArgs& a) {
  const ModelKind kind = model_kind_from_string(a.method);
  const fs::path root(a.data);
  Manifest m = load_data_manifest(root);
  if (a.window) {
    m.window_s = *a.window;
    m.network.window = m.window_samples();
  }
  if (a.overlap) m.overlap = *a.overlap;
  if (a.epochs) m.training.epochs = *a.epochs;
  if (a.lr) m.training.lr = *a.lr;
  if (a.batch) m.training.batch_size = *a.batch;
  m.network.kind = kind;
  m.validate();
  const std::uint64_t seed = a.seed.value_or(m.seed);

  const auto windows = split_windows(m, "train", root);
  const Normalizer norm = Normalizer::fit(windows);
  const TrainingSet set = TrainingSet::prepare(windows, norm);
  const DiffusionSchedule sched = build_schedule(m.network.denoiser.diffusion_steps);

  BiasNet<float> net(m.network, mix_seed(seed, 11));
  ad::AdamState<float> opt;
  opt.cfg.lr = m.training.lr;
  Rng rng(mix_seed(seed, 12));
  TrainingMeta meta{seed, m.training.epochs, m.training.batch_size, m.training.lr, set.size(), {}};
  std::fprintf(stderr, "train %s: %zu windows, %zu parameters, %d epochs, lr %g\n", a.method.c_str(), set.size(),
               net.params().count(), m.training.epochs, m.training.lr);
  const auto t0 = std::chrono::steady_clock::now();
  for (int e = 0; e < m.training.epochs; ++e) {
    meta.loss_curve.push_back(train_epoch(net, set, sched, opt, rng, m.training.batch_size));
    std::fprintf(stderr, "epoch %d loss %.6f (%.0f s)\n", e, meta.loss_curve.back(), seconds_since(t0));
  }

  const fs::path out = a.out.empty() ? root / (a.method + ".ckpt") : fs::path(a.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_checkpoint(out, Checkpoint::from_model(net, norm, meta));
  std::ostringstream csv;
  csv << "epoch,loss\n";
  char buf[64];
  for (std::size_t e = 0; e < meta.loss_curve.size(); ++e) {
    std::snprintf(buf, sizeof(buf), "%zu,%.17g\n", e, meta.loss_curve[e]);
    csv << buf;
  }
  fs::path loss = out;
  loss.replace_extension(".loss.csv");
  write_text(loss, csv.str());
  std::printf("%s final loss %.17g\n", out.string().c_str(), meta.loss_curve.empty() ? 0.0 : meta.loss_curve.back());
  return 0;
}

// ---- predict

struct PredictArgs {
  std::string data;
  std::string checkpoint;
  std::string sequence;
  std::string out;
  std::uint64_t seed = 1;
  int steps = 25;
  int mean_n = 1;
  std::string trace;
  int trace_window = 0;
};

int run_predict(const PredictArgs& a) {
  const fs::path root(a.data);
  const Manifest m = load_data_manifest(root);
  const SequenceEntry* entry = nullptr;
  for (const auto& e : m.sequences) {
    if (e.name == a.sequence) entry = &e;
  }
  if (!entry) throw DataError("sequence '" + a.sequence + "' is not listed in the manifest");
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const ModelKind kind = ck.config.kind;
  const BiasNet<float> net = ck.to_model(kind);
  const double window_s = ck.config.window / m.rate_hz;

  // back to back windows so the tracks tile the sequence
  const Sequence seq = load_euroc(root / entry->path);
  const auto windows = make_windows(seq, window_s, 0.0, entry->id);
  if (windows.empty()) throw DataError("sequence shorter than one window");
  std::vector<BiasTrack> tracks;
  if (kind == ModelKind::diffusion) {
    std::vector<PredictRequest> req;
    for (const auto& w : windows) req.push_back({&w, window_seed(a.seed, w.sequence_id, w.window_index)});
    const auto mode = a.mean_n > 1 ? PredictMode::mean_of_n : PredictMode::single;
    tracks = predict_bias(net, ck.normalizer, build_schedule(ck.config.denoiser.diffusion_steps), req, mode,
                          a.mean_n, a.steps);
  } else {
    std::vector<const Window*> ptrs;
    for (const auto& w : windows) ptrs.push_back(&w);
    tracks = predict_regression(net, ck.normalizer, ptrs);
  }
  BiasTrack all;
  for (const auto& t : tracks) {
    for (std::size_t i = 0; i < t.size(); ++i) all.push_back(t.t[i], t.at(i));
  }
  write_bias_csv(fs::path(a.out), all);
  if (!a.trace.empty()) {
    if (a.trace_window < 0 || a.trace_window >= static_cast<int>(windows.size())) {
      throw ConfigError("--trace-window out of range");
    }
    const auto k = static_cast<std::size_t>(a.trace_window);
    const std::vector<std::pair<std::string, BiasTrack>> methods{{to_string(kind), tracks[k]}};
    write_bias_trace_csv(fs::path(a.trace), windows[k], methods);
  }
  std::printf("%s: %zu windows, %zu samples\n", a.out.c_str(), windows.size(), all.size());
  return 0;
}

// ---- evaluate

struct EvalArgs {
  std::string data;
  std::string methods;
  std::optional<int> runs;
  std::uint64_t seed = 1;
  std::string diffusion;
  std::string regression;
  std::string out;
  std::optional<int> steps;
  int mean_n = 1;
  unsigned threads = 0;
};

void write_reports(const fs::path& dir, std::span<const MethodReport> reports) {
  const std::string table = render_table(reports);
  write_text(dir / "report.md", table);
  write_text(dir / "report.json", report_json(reports));
  std::printf("%s", table.c_str());
}

int run_evaluate(const EvalArgs& a) {
  const fs::path root(a.data);
  const Manifest m = load_data_manifest(root);
  std::vector<Method> methods;
  for (const auto& name : a.methods.empty() ? m.evaluation.methods : split_list(a.methods)) {
    methods.push_back(method_from_string(name));
  }
  if (methods.empty()) throw ConfigError("no methods to evaluate");
  const int runs = a.runs.value_or(m.evaluation.runs);
  if (runs < 1) throw ConfigError("--runs must be at least 1");

  Predictors p;
  p.noise = m.noise;
  p.oracle_candidates = m.evaluation.oracle_candidates;
  p.ddim_steps = a.steps.value_or(m.evaluation.ddim_steps);
  p.mode = a.mean_n > 1 ? PredictMode::mean_of_n : PredictMode::single;
  p.mean_n = a.mean_n;
  p.threads = a.threads;
  std::optional<BiasNet<float>> diff, reg;
  for (Method meth : methods) {
    if (meth == Method::diffusion && !diff) {
      const Checkpoint ck = load_checkpoint(a.diffusion.empty() ? root / "diffusion.ckpt" : fs::path(a.diffusion));
      diff.emplace(ck.to_model(ModelKind::diffusion));
      p.diffusion_norm = ck.normalizer;
      p.schedule = build_schedule(ck.config.denoiser.diffusion_steps);
    }
    if (meth == Method::regression && !reg) {
      const Checkpoint ck = load_checkpoint(a.regression.empty() ? root / "regression.ckpt" : fs::path(a.regression));
      reg.emplace(ck.to_model(ModelKind::regression));
      p.regression_norm = ck.normalizer;
    }
  }
  if (diff) p.diffusion = &*diff;
  if (reg) p.regression = &*reg;

  EvalSet set;
  set.windows = split_windows(m, "test", root, &set.sequence_names);
  for (const auto* net : {p.diffusion, p.regression}) {
    if (net && net->config().window != static_cast<int>(set.windows.front().size())) {
      throw CheckpointError("checkpoint window does not match the manifest window");
    }
  }
  const fs::path out = a.out.empty() ? root / "eval" : fs::path(a.out);
  fs::create_directories(out);

  std::vector<WindowResult> raw;
  std::vector<MethodReport> reports;
  for (Method meth : methods) {
    const auto t0 = std::chrono::steady_clock::now();
    const int r = is_stochastic(meth) ? runs : 1;
    reports.push_back(evaluate_method(set, meth, p, r, a.seed, &raw, method_digest(m, to_string(meth))));
    std::fprintf(stderr, "evaluate %s: %zu windows x %d runs, PRMSE %.4f ROE %.3f (%.0f s)\n",
                 to_string(meth).c_str(), set.windows.size(), r, reports.back().avg_prmse, reports.back().avg_roe,
                 seconds_since(t0));
  }
  write_results_csv(out / "results.csv", raw);

  // Fig. 4 style trace for the first test window, run 0
  const Window& w0 = set.windows.front();
  if (!w0.gt_bias.t.empty()) {
    EvalSet one{{w0}, set.sequence_names};
    std::vector<std::pair<std::string, BiasTrack>> traces;
    for (Method meth : methods) {
      traces.emplace_back(to_string(meth), predict_windows(one, meth, p, 0, a.seed).front());
    }
    write_bias_trace_csv(out / "bias_trace.csv", w0, traces);
  }
  write_reports(out, reports);
  return 0;
}

// ---- report

int run_report(const std::string& data, const std::string& eval) {
  const fs::path root(data);
  const Manifest m = load_data_manifest(root);
  const fs::path dir = eval.empty() ? root / "eval" : fs::path(eval);
  const auto raw = read_results_csv(dir / "results.csv");
  if (raw.empty()) throw DataError("no results in " + (dir / "results.csv").string());
  std::vector<std::string> order;
  for (const auto& r : raw) {
    if (std::find(order.begin(), order.end(), r.method) == order.end()) order.push_back(r.method);
  }
  const auto names = test_names(m);
  std::vector<MethodReport> reports;
  for (const auto& method : order) reports.push_back(summarize(method, raw, names, method_digest(m, method)));
  write_reports(dir, reports);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"IMU bias estimation with a conditional diffusion model"};
  app.require_subcommand(1);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset and its manifest");
  synth->add_option("--out", sa.out, "output directory")->required();
  synth->add_option("--config", sa.config, "manifest to start from (default: desk-scale settings)");
  synth->add_option("--seed", sa.seed, "dataset seed");
  synth->add_option("--train", sa.train, "number of training sequences");
  synth->add_option("--test", sa.test, "number of test sequences");
  synth->add_option("--duration", sa.duration, "sequence length in seconds");
  synth->add_option("--static", sa.static_s, "also write a static sequence of this many seconds");

  std::string cal_data, cal_out;
  auto* cal = app.add_subcommand("calibrate", "Allan analysis of a static sequence");
  cal->add_option("--data", cal_data, "EuRoC-layout sequence directory")->required();
  cal->add_option("--out", cal_out, "output directory")->required();

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "train a bias model");
  train->add_option("--data", ta.data, "dataset directory")->required();
  train->add_option("--method", ta.method, "diffusion or regression")->capture_default_str();
  train->add_option("--out", ta.out, "checkpoint path (default <data>/<method>.ckpt)");
  train->add_option("--seed", ta.seed, "training seed (default: manifest seed)");
  train->add_option("--epochs", ta.epochs);
  train->add_option("--lr", ta.lr, "Adam learning rate (default: manifest)");
  train->add_option("--batch", ta.batch);
  train->add_option("--window", ta.window, "window length in seconds");
  train->add_option("--overlap", ta.overlap, "window overlap fraction");

  PredictArgs pa;
  auto* pred = app.add_subcommand("predict", "predict a bias track for one sequence");
  pred->add_option("--data", pa.data, "dataset directory")->required();
  pred->add_option("--checkpoint", pa.checkpoint)->required();
  pred->add_option("--sequence", pa.sequence, "sequence name from the manifest")->required();
  pred->add_option("--out", pa.out, "bias CSV")->required();
  pred->add_option("--seed", pa.seed)->capture_default_str();
  pred->add_option("--steps", pa.steps, "DDIM steps")->capture_default_str();
  pred->add_option("--mean-of", pa.mean_n, "average this many samples per window")->capture_default_str();
  pred->add_option("--trace", pa.trace, "also write a per-window trace CSV against ground truth");
  pred->add_option("--trace-window", pa.trace_window)->capture_default_str();

  EvalArgs ea;
  auto* ev = app.add_subcommand("evaluate", "compare methods on the test split");
  ev->add_option("--data", ea.data, "dataset directory")->required();
  ev->add_option("--methods", ea.methods, "comma separated (default: manifest list)");
  ev->add_option("--runs", ea.runs, "runs for stochastic methods (default: manifest, 50)");
  ev->add_option("--seed", ea.seed)->capture_default_str();
  ev->add_option("--diffusion", ea.diffusion, "diffusion checkpoint (default <data>/diffusion.ckpt)");
  ev->add_option("--regression", ea.regression, "regression checkpoint (default <data>/regression.ckpt)");
  ev->add_option("--out", ea.out, "output directory (default <data>/eval)");
  ev->add_option("--steps", ea.steps, "DDIM steps");
  ev->add_option("--mean-of", ea.mean_n)->capture_default_str();
  ev->add_option("--threads", ea.threads, "worker threads, 0 for all cores")->capture_default_str();

  std::string rep_data, rep_eval;
  auto* rep = app.add_subcommand("report", "rebuild report tables from persisted results");
  rep->add_option("--data", rep_data, "dataset directory")->required();
  rep->add_option("--eval", rep_eval, "evaluation directory (default <data>/eval)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*synth) return run_synth(sa);
    if (*cal) return run_calibrate(cal_data, cal_out);
    if (*train) return run_train(ta);
    if (*pred) return run_predict(pa);
    if (*ev) return run_evaluate(ea);
    if (*rep) return run_report(rep_data, rep_eval);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  } catch (const CheckpointError& e) {
    std::fprintf(stderr, "checkpoint error: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
