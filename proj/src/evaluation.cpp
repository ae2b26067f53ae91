#include "biasdiff/evaluation.hpp"

#include <zlib.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <sstream>
#include <thread>

#include "biasdiff/allan.hpp"
#include "biasdiff/dataset.hpp"
#include "biasdiff/errors.hpp"
#include "biasdiff/integrator.hpp"
#include "csv.hpp"
#include "json.hpp"

namespace biasdiff {

using nlohmann::json;

namespace {

constexpr std::pair<Method, const char*> kMethodNames[] = {
    {Method::diffusion, "diffusion"},
    {Method::regression, "regression"},
    {Method::random_walk_oracle, "random-walk-oracle"},
    {Method::zero_bias, "zero-bias"},
    {Method::gt_bias, "gt-bias"},
};

// Runs fn(i) for i in [0, n) on a small pool; each index writes only its
// own slot, so results do not depend on the thread count.
void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, n));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::atomic<bool> failed{false};
  std::vector<std::thread> pool;
  for (unsigned k = 0; k < threads; ++k) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n && !failed; i = next++) {
        try {
          fn(i);
        } catch (...) {
          if (!failed.exchange(true)) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

double rms(double sum_sq, std::size_t n) { return std::sqrt(sum_sq / static_cast<double>(n)); }

std::string fmt(double v, const char* pattern) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), pattern, v);
  return buf;
}

}  // namespace

std::string to_string(Method m) {
  for (const auto& [k, name] : kMethodNames)
    if (k == m) return name;
  return "unknown";
}

Method method_from_string(const std::string& s) {
  for (const auto& [k, name] : kMethodNames)
    if (s == name) return k;
  throw ConfigError("unknown method '" + s +
                    "' (expected diffusion, regression, random-walk-oracle, zero-bias or gt-bias)");
}

bool is_stochastic(Method m) { return m == Method::diffusion || m == Method::random_walk_oracle; }

WindowResult score_window(const Window& w, const BiasTrack& predicted, const std::string& method, int run,
                          const ImuIntrinsics& intr) {
  if (predicted.size() != w.size()) throw DataError("score_window: predicted bias length differs from the window");
  const auto [traj, last] = integrate_window(w, predicted, intr);
  WindowResult r;
  r.method = method;
  r.run = run;
  r.sequence_id = w.sequence_id;
  r.window_index = w.window_index;
  r.position_error = (last.p - w.final_state.p).norm();
  r.orientation_error =
      rotation_angle_between<double>(quat_to_rot(w.final_state.q), quat_to_rot(last.q)) * 180.0 / std::numbers::pi;
  if (w.gt_bias.size() == w.size()) {
    double sg = 0, sa = 0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      sg += (predicted.b_g[i] - w.gt_bias.b_g[i]).squaredNorm();
      sa += (predicted.b_a[i] - w.gt_bias.b_a[i]).squaredNorm();
    }
    r.has_bias = true;
    r.bias_rmse_gyro = rms(sg, 3 * w.size());
    r.bias_rmse_accel = rms(sa, 3 * w.size());
  }
  return r;
}

double prmse(std::span<const WindowResult> results) {
  if (results.empty()) throw DataError("prmse: no windows");
  double s = 0;
  for (const auto& r : results) s += r.position_error * r.position_error;
  return rms(s, results.size());
}

double roe(std::span<const WindowResult> results) {
  if (results.empty()) throw DataError("roe: no windows");
  double s = 0;
  for (const auto& r : results) s += r.orientation_error * r.orientation_error;
  return rms(s, results.size());
}

MethodReport summarize(const std::string& method, std::span<const WindowResult> results,
                       const std::vector<std::string>& sequence_names, const std::string& digest) {
  std::map<int, std::map<int, std::vector<WindowResult>>> by_seq;
  for (const auto& r : results) {
    if (r.method == method) by_seq[r.sequence_id][r.run].push_back(r);
  }
  if (by_seq.empty()) throw DataError("summarize: no results for method " + method);
  MethodReport rep;
  rep.method = method;
  rep.config_digest = digest;
  rep.runs = 0;
  for (const auto& [id, runs] : by_seq) {
    SequenceScore sc;
    sc.sequence_id = id;
    sc.name = id >= 0 && static_cast<std::size_t>(id) < sequence_names.size() ? sequence_names[id]
                                                                              : "seq_" + std::to_string(id);
    for (const auto& [run, rs] : runs) {
      sc.prmse += prmse(rs);
      sc.roe += roe(rs);
    }
    sc.prmse /= static_cast<double>(runs.size());
    sc.roe /= static_cast<double>(runs.size());
    rep.runs = std::max(rep.runs, static_cast<int>(runs.size()));
    rep.avg_prmse += sc.prmse;
    rep.avg_roe += sc.roe;
    rep.sequences.push_back(std::move(sc));
  }
  rep.avg_prmse /= static_cast<double>(rep.sequences.size());
  rep.avg_roe /= static_cast<double>(rep.sequences.size());
  return rep;
}

std::vector<BiasTrack> predict_windows(const EvalSet& set, Method m, const Predictors& p, int run,
                                       std::uint64_t seed) {
  const std::uint64_t run_seed = mix_seed(seed, static_cast<std::uint64_t>(run));
  const auto& ws = set.windows;
  std::vector<BiasTrack> out(ws.size());
  switch (m) {
    case Method::diffusion: {
      if (p.diffusion == nullptr) throw ConfigError("diffusion method needs a diffusion checkpoint");
      std::vector<PredictRequest> req;
      req.reserve(ws.size());
      for (const auto& w : ws) req.push_back({&w, window_seed(run_seed, w.sequence_id, w.window_index)});
      return predict_bias(*p.diffusion, p.diffusion_norm, p.schedule, req, p.mode, p.mean_n, p.ddim_steps);
    }
    case Method::regression: {
      if (p.regression == nullptr) throw ConfigError("regression method needs a regression checkpoint");
      std::vector<const Window*> ptrs;
      for (const auto& w : ws) ptrs.push_back(&w);
      return predict_regression(*p.regression, p.regression_norm, ptrs);
    }
    case Method::random_walk_oracle:
      parallel_for(ws.size(), p.threads, [&](std::size_t i) {
        Rng rng(window_seed(run_seed, ws[i].sequence_id, ws[i].window_index));
        out[i] = random_walk_oracle(ws[i], p.noise, p.oracle_candidates, rng, p.intr).bias;
      });
      return out;
    case Method::zero_bias:
      for (std::size_t i = 0; i < ws.size(); ++i) {
        for (const auto& s : ws[i].samples) out[i].push_back(s.t, BiasState{});
      }
      return out;
    case Method::gt_bias:
      for (std::size_t i = 0; i < ws.size(); ++i) {
        if (ws[i].gt_bias.size() != ws[i].size()) throw DataError("gt-bias method needs ground-truth bias");
        out[i] = ws[i].gt_bias;
      }
      return out;
  }
  throw ConfigError("unhandled method");
}

MethodReport evaluate_method(const EvalSet& set, Method m, const Predictors& p, int runs, std::uint64_t seed,
                             std::vector<WindowResult>* results, const std::string& digest) {
  if (runs < 1) throw ConfigError("evaluate: runs must be >= 1");
  if (set.windows.empty()) throw DataError("evaluate: no windows");
  const int n_runs = is_stochastic(m) ? runs : 1;
  const std::string name = to_string(m);
  std::vector<WindowResult> all;
  all.reserve(set.windows.size() * static_cast<std::size_t>(n_runs));
  for (int run = 0; run < n_runs; ++run) {
    const auto pred = predict_windows(set, m, p, run, seed);
    std::vector<WindowResult> rs(set.windows.size());
    parallel_for(rs.size(), p.threads,
                 [&](std::size_t i) { rs[i] = score_window(set.windows[i], pred[i], name, run, p.intr); });
    all.insert(all.end(), rs.begin(), rs.end());
  }
  MethodReport rep = summarize(name, all, set.sequence_names, digest);
  if (results) results->insert(results->end(), all.begin(), all.end());
  return rep;
}

// ---------------------------------------------------------------------------
// Reports

namespace {

struct Row {
  std::string name;
  std::vector<double> prmse, roe;  // per method; NaN when absent
};

std::vector<Row> table_rows(std::span<const MethodReport> reports) {
  std::vector<int> ids;
  std::map<int, std::string> names;
  for (const auto& r : reports) {
    for (const auto& s : r.sequences) {
      if (!names.count(s.sequence_id)) ids.push_back(s.sequence_id);
      names.emplace(s.sequence_id, s.name);
    }
  }
  std::sort(ids.begin(), ids.end());
  std::vector<Row> rows;
  for (int id : ids) {
    Row row{names[id], {}, {}};
    for (const auto& r : reports) {
      double p = std::nan(""), o = std::nan("");
      for (const auto& s : r.sequences) {
        if (s.sequence_id == id) {
          p = s.prmse;
          o = s.roe;
        }
      }
      row.prmse.push_back(p);
      row.roe.push_back(o);
    }
    rows.push_back(std::move(row));
  }
  Row avg{"Average", {}, {}};
  for (const auto& r : reports) {
    avg.prmse.push_back(r.avg_prmse);
    avg.roe.push_back(r.avg_roe);
  }
  rows.push_back(std::move(avg));
  return rows;
}

// 1 for the smallest value(s), 2 for the next smallest, 0 otherwise.
std::vector<int> marks(const std::vector<double>& v) {
  std::vector<double> uniq;
  for (double x : v)
    if (!std::isnan(x)) uniq.push_back(x);
  std::sort(uniq.begin(), uniq.end());
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
  std::vector<int> out(v.size(), 0);
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (std::isnan(v[i])) continue;
    if (!uniq.empty() && v[i] == uniq[0]) out[i] = 1;
    else if (uniq.size() > 1 && v[i] == uniq[1]) out[i] = 2;
  }
  return out;
}

std::string marked(double v, int mark, const char* pattern) {
  if (std::isnan(v)) return "-";
  const std::string s = fmt(v, pattern);
  return mark == 1 ? "**" + s + "**" : mark == 2 ? "_" + s + "_" : s;
}

const char* mark_name(int m) { return m == 1 ? "best" : m == 2 ? "second" : ""; }

}  // namespace

std::string render_table(std::span<const MethodReport> reports) {
  std::ostringstream os;
  os << "Motion estimation over 1 s windows (PRMSE m / ROE deg)\n\n| Sequence |";
  for (const auto& r : reports) os << ' ' << r.method << " |";
  os << "\n|---|";
  for (std::size_t i = 0; i < reports.size(); ++i) os << "---|";
  os << '\n';
  for (const Row& row : table_rows(reports)) {
    const auto mp = marks(row.prmse), mo = marks(row.roe);
    os << "| " << row.name << " |";
    for (std::size_t i = 0; i < reports.size(); ++i) {
      os << ' ' << marked(row.prmse[i], mp[i], "%.4f") << " / " << marked(row.roe[i], mo[i], "%.3f") << " |";
    }
    os << '\n';
  }
  os << "\nruns:";
  for (const auto& r : reports) os << ' ' << r.method << '=' << r.runs;
  os << "\nbest in **bold**, second best in _italics_\n";
  return os.str();
}

std::string report_json(std::span<const MethodReport> reports) {
  json methods = json::array();
  for (const auto& r : reports) {
    json seqs = json::array();
    for (const auto& s : r.sequences) {
      seqs.push_back({{"id", s.sequence_id}, {"name", s.name}, {"prmse", s.prmse}, {"roe", s.roe}});
    }
    methods.push_back({{"method", r.method},
                       {"runs", r.runs},
                       {"config_digest", r.config_digest},
                       {"average", {{"prmse", r.avg_prmse}, {"roe", r.avg_roe}}},
                       {"sequences", seqs}});
  }
  json rows = json::array();
  for (const Row& row : table_rows(reports)) {
    const auto mp = marks(row.prmse), mo = marks(row.roe);
    json cells = json::array();
    for (std::size_t i = 0; i < reports.size(); ++i) {
      if (std::isnan(row.prmse[i])) continue;
      cells.push_back({{"method", reports[i].method},
                       {"prmse", row.prmse[i]},
                       {"roe", row.roe[i]},
                       {"prmse_mark", mark_name(mp[i])},
                       {"roe_mark", mark_name(mo[i])}});
    }
    rows.push_back({{"sequence", row.name}, {"cells", cells}});
  }
  return json{{"units", {{"prmse", "m"}, {"roe", "deg"}}}, {"methods", methods}, {"rows", rows}}.dump(2) + "\n";
}

std::vector<MethodReport> reports_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    std::vector<MethodReport> out;
    for (const json& m : j.at("methods")) {
      MethodReport r;
      r.method = m.at("method").get<std::string>();
      r.runs = m.at("runs").get<int>();
      r.config_digest = m.at("config_digest").get<std::string>();
      r.avg_prmse = m.at("average").at("prmse").get<double>();
      r.avg_roe = m.at("average").at("roe").get<double>();
      for (const json& s : m.at("sequences")) {
        r.sequences.push_back({s.at("id").get<int>(), s.at("name").get<std::string>(), s.at("prmse").get<double>(),
                               s.at("roe").get<double>()});
      }
      out.push_back(std::move(r));
    }
    return out;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed report: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Persistence

void write_results_csv(const std::filesystem::path& path, std::span<const WindowResult> results) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path.string() + " for writing");
  f << "method,run,sequence_id,window_index,position_error_m,orientation_error_deg,has_bias,bias_rmse_gyro,"
       "bias_rmse_accel\n";
  char buf[256];
  for (const auto& r : results) {
    std::snprintf(buf, sizeof(buf), "%d,%d,%d,%.17g,%.17g,%d,%.17g,%.17g\n", r.run, r.sequence_id, r.window_index,
                  r.position_error, r.orientation_error, r.has_bias ? 1 : 0, r.bias_rmse_gyro, r.bias_rmse_accel);
    f << r.method << ',' << buf;
  }
}

std::vector<WindowResult> read_results_csv(const std::filesystem::path& path) {
  std::vector<WindowResult> out;
  for (const auto& row : csv::read_rows(path, false)) {
    if (row.line == 1) continue;  // header
    csv::expect_columns(row, 9, path);
    const auto& f = row.fields;
    WindowResult r;
    r.method = f[0];
    r.run = static_cast<int>(csv::to_int64(f[1], path, row.line));
    r.sequence_id = static_cast<int>(csv::to_int64(f[2], path, row.line));
    r.window_index = static_cast<int>(csv::to_int64(f[3], path, row.line));
    r.position_error = csv::to_double(f[4], path, row.line);
    r.orientation_error = csv::to_double(f[5], path, row.line);
    r.has_bias = csv::to_int64(f[6], path, row.line) != 0;
    r.bias_rmse_gyro = csv::to_double(f[7], path, row.line);
    r.bias_rmse_accel = csv::to_double(f[8], path, row.line);
    out.push_back(std::move(r));
  }
  return out;
}

void write_bias_trace_csv(std::ostream& os, const Window& w,
                          std::span<const std::pair<std::string, BiasTrack>> methods) {
  if (w.gt_bias.size() != w.size()) throw DataError("bias trace: window has no ground-truth bias");
  for (const auto& [name, track] : methods) {
    if (track.size() != w.size()) throw DataError("bias trace: track for " + name + " does not match the window");
  }
  static const char* axes[] = {"bgx", "bgy", "bgz", "bax", "bay", "baz"};
  os << 't';
  for (const char* a : axes) os << ",gt_" << a;
  for (const auto& m : methods)
    for (const char* a : axes) os << ',' << m.first << '_' << a;
  os << '\n';
  char buf[32];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    os << buf;
  };
  auto put_state = [&](const BiasTrack& b, std::size_t i) {
    for (int c = 0; c < 3; ++c) {
      os << ',';
      put(b.b_g[i][c]);
    }
    for (int c = 0; c < 3; ++c) {
      os << ',';
      put(b.b_a[i][c]);
    }
  };
  for (std::size_t i = 0; i < w.size(); ++i) {
    put(w.samples[i].t);
    put_state(w.gt_bias, i);
    for (const auto& m : methods) put_state(m.second, i);
    os << '\n';
  }
}

void write_bias_trace_csv(const std::filesystem::path& path, const Window& w,
                          std::span<const std::pair<std::string, BiasTrack>> methods) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path.string() + " for writing");
  write_bias_trace_csv(f, w, methods);
}

BiasTrace read_bias_trace_csv(const std::filesystem::path& path) {
  BiasTrace out;
  for (const auto& row : csv::read_rows(path, false)) {
    if (out.columns.empty()) {
      out.columns = row.fields;
      continue;
    }
    csv::expect_columns(row, out.columns.size(), path);
    std::vector<double> vals;
    for (const auto& f : row.fields) vals.push_back(csv::to_double(f, path, row.line));
    out.rows.push_back(std::move(vals));
  }
  return out;
}

std::string digest(const std::string& text) {
  const uLong crc = crc32(crc32(0L, Z_NULL, 0), reinterpret_cast<const Bytef*>(text.data()),
                          static_cast<uInt>(text.size()));
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%08lx", static_cast<unsigned long>(crc));
  return buf;
}

}  // namespace biasdiff
