#pragma once

// Window metrics (PRMSE, ROE), the multi-method comparison harness, report
// tables and result persistence.
//
// Both metrics are relative: each window is integrated from its ground-truth
// initial state over its own span, and only the final state is compared.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "biasdiff/diffusion.hpp"
#include "biasdiff/imu_model.hpp"
#include "biasdiff/networks.hpp"

namespace biasdiff {

struct Window;

enum class Method { diffusion, regression, random_walk_oracle, zero_bias, gt_bias };

std::string to_string(Method m);
// Throws ConfigError naming the unknown method.
Method method_from_string(const std::string& s);
bool is_stochastic(Method m);

struct WindowResult {
  std::string method;
  int run = 0;
  int sequence_id = 0;
  int window_index = 0;
  double position_error = 0.0;     // m
  double orientation_error = 0.0;  // deg
  bool has_bias = false;
  double bias_rmse_gyro = 0.0;   // rad/s
  double bias_rmse_accel = 0.0;  // m/s^2
};

// Integrates the window with the predicted bias and compares its end state
// with ground truth. Bias RMSEs are filled when the window has gt bias.
WindowResult score_window(const Window& w, const BiasTrack& predicted, const std::string& method, int run,
                          const ImuIntrinsics& intr = {});

// sqrt(mean ||p_est - p_gt||^2) over windows, metres. Throws DataError on
// empty input.
double prmse(std::span<const WindowResult> results);
// RMS of the end-orientation geodesic angle over windows, degrees.
double roe(std::span<const WindowResult> results);

struct SequenceScore {
  int sequence_id = 0;
  std::string name;
  double prmse = 0.0;
  double roe = 0.0;
};

// Per-sequence metrics averaged over runs; the average row is the mean of
// the per-sequence values.
struct MethodReport {
  std::string method;
  int runs = 1;
  std::vector<SequenceScore> sequences;
  double avg_prmse = 0.0;
  double avg_roe = 0.0;
  std::string config_digest;
};

// Rebuilds a report from raw results: for each sequence and run, PRMSE and
// ROE over that run's windows, then the mean over runs. Sequences appear in
// id order; names come from sequence_names[id] when present.
MethodReport summarize(const std::string& method, std::span<const WindowResult> results,
                       const std::vector<std::string>& sequence_names, const std::string& digest = "");

struct EvalSet {
  std::vector<Window> windows;
  std::vector<std::string> sequence_names;  // indexed by Window::sequence_id
};

struct Predictors {
  const BiasNet<float>* diffusion = nullptr;
  Normalizer diffusion_norm;
  const BiasNet<float>* regression = nullptr;
  Normalizer regression_norm;
  DiffusionSchedule schedule;
  int ddim_steps = 25;
  PredictMode mode = PredictMode::single;
  int mean_n = 1;
  NoiseParams noise;  // random-walk oracle
  int oracle_candidates = 50;
  ImuIntrinsics intr;
  unsigned threads = 0;  // 0: hardware concurrency
};

// Bias tracks one method predicts for every window in one run. Stochastic
// methods draw from window_seed(mix_seed(seed, run), sequence, window).
std::vector<BiasTrack> predict_windows(const EvalSet& set, Method m, const Predictors& p, int run,
                                       std::uint64_t seed);

// Stochastic methods are evaluated `runs` times with distinct seeds,
// deterministic ones once. Raw results are appended to `results` when given.
// Throws ConfigError when the method's model is missing or runs < 1.
MethodReport evaluate_method(const EvalSet& set, Method m, const Predictors& p, int runs, std::uint64_t seed,
                             std::vector<WindowResult>* results = nullptr, const std::string& digest = "");

// Comparison table in the "PRMSE / ROE" layout, one row per sequence plus
// an average row, one column per method. Per row and metric the smallest
// value is wrapped as **best** and the next smallest as _second_.
std::string render_table(std::span<const MethodReport> reports);
std::string report_json(std::span<const MethodReport> reports);
// Throws DataError on a malformed document.
std::vector<MethodReport> reports_from_json(const std::string& text);

// CSV columns: method, run, sequence_id, window_index, position_error_m,
// orientation_error_deg, has_bias, bias_rmse_gyro, bias_rmse_accel.
void write_results_csv(const std::filesystem::path& path, std::span<const WindowResult> results);
std::vector<WindowResult> read_results_csv(const std::filesystem::path& path);

// Per-sample bias traces for one window: t, gt_bgx..gt_baz, then
// <method>_bgx..<method>_baz per method. Throws DataError when the window has
// no gt bias or a track does not match its length.
void write_bias_trace_csv(std::ostream& os, const Window& w,
                          std::span<const std::pair<std::string, BiasTrack>> methods);
void write_bias_trace_csv(const std::filesystem::path& path, const Window& w,
                          std::span<const std::pair<std::string, BiasTrack>> methods);

struct BiasTrace {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
};
BiasTrace read_bias_trace_csv(const std::filesystem::path& path);

// CRC32 of a string as 8 lowercase hex digits.
std::string digest(const std::string& text);

}  // namespace biasdiff
