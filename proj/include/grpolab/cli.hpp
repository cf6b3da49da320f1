#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "grpolab/config.hpp"
#include "grpolab/error.hpp"
#include "grpolab/policy.hpp"
#include "grpolab/trainer.hpp"
#include "grpolab/verify.hpp"

namespace grpolab::cli {

// Stable process exit codes.
inline constexpr int kOk = 0;
inline constexpr int kVerifyFailed = 1;
inline constexpr int kConfigError = 2;
inline constexpr int kIoError = 3;

namespace fs = std::filesystem;

namespace detail {

inline std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + p.string() + " for writing");
  return out;
}

inline void ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw IoError("cannot create directory " + p.string() + ": " + ec.message());
}

inline void check(const std::ostream& out, const fs::path& p) {
  if (!out) throw IoError("write failed: " + p.string());
}

inline std::string num(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", x);
  return buf;
}

}  // namespace detail

/// Deterministic part of one step record. Wall-clock goes to timing.csv.
inline nlohmann::json metrics_record(const StepMetrics& m) {
  return {{"step", m.step},
          {"mean-reward", m.mean_reward},
          {"mean-p-hat", m.mean_p_hat},
          {"objective", m.objective},
          {"grad-norm", m.grad_norm},
          {"clip-fraction", m.clip_fraction},
          {"cov", m.covariance},
          {"kl", m.kl},
          {"fallback-groups", m.fallback_groups}};
}

inline nlohmann::json eval_record(const EvalRecord& e) {
  nlohmann::json pass = nlohmann::json::object();
  for (std::size_t j = 0; j < e.pass.ks.size(); ++j)
    pass["pass@" + std::to_string(e.pass.ks[j])] = e.pass.values[j];
  return {{"step", e.step}, {"pass", pass}};
}

inline std::string checkpoint_name(int step) {
  std::ostringstream s;
  s << "step-" << std::setw(6) << std::setfill('0') << step << ".params";
  return s.str();
}

struct RunOutcome {
  TrainResult result;
  fs::path dir;
};

/// Runs one training job and writes its artifacts:
///   resolved-config.json, metrics.jsonl, eval.jsonl, summary.csv,
///   timing.csv, checkpoints/step-NNNNNN.params, final.params
inline RunOutcome run_training(const RunConfig& cfg, std::ostream& log) {
  const fs::path dir(cfg.output_dir);
  detail::ensure_dir(dir / "checkpoints");
  {
    auto out = detail::open_out(dir / "resolved-config.json");
    out << to_json(cfg).dump(2) << '\n';
    detail::check(out, dir / "resolved-config.json");
  }
  auto metrics = detail::open_out(dir / "metrics.jsonl");
  auto evals = detail::open_out(dir / "eval.jsonl");
  auto summary = detail::open_out(dir / "summary.csv");
  auto timing = detail::open_out(dir / "timing.csv");
  summary << "step,mean_reward,cov,clip_fraction,grad_norm\n";
  timing << "step,wall_clock_seconds\n";

  TrainHooks hooks;
  hooks.on_step = [&](const StepMetrics& m, const PolicyParams& params) {
    metrics << metrics_record(m).dump() << '\n';
    summary << m.step << ',' << detail::num(m.mean_reward) << ',' << detail::num(m.covariance) << ','
            << detail::num(m.clip_fraction) << ',' << detail::num(m.grad_norm) << '\n';
    timing << m.step << ',' << detail::num(m.wall_clock) << '\n';
    detail::check(metrics, dir / "metrics.jsonl");
    detail::check(summary, dir / "summary.csv");
    if ((m.step + 1) % cfg.checkpoint_interval == 0) {
      const auto p = dir / "checkpoints" / checkpoint_name(m.step + 1);
      auto out = detail::open_out(p);
      save_params(params, out);
      detail::check(out, p);
    }
    if (cfg.verbosity == Verbosity::step)
      log << "step " << m.step << " reward " << detail::num(m.mean_reward) << " cov "
          << detail::num(m.covariance) << " clip " << detail::num(m.clip_fraction) << '\n';
  };
  hooks.on_eval = [&](const EvalRecord& e, const PolicyParams&) {
    evals << eval_record(e).dump() << '\n';
    detail::check(evals, dir / "eval.jsonl");
  };

  RunOutcome out{train(cfg.train, hooks), dir};
  auto fin = detail::open_out(dir / "final.params");
  save_params(out.result.final_params, fin);
  detail::check(fin, dir / "final.params");
  return out;
}

/// Mean reward over the last min(10, steps) steps.
inline double final_mean_reward(const TrainResult& r) {
  const std::size_t n = std::min<std::size_t>(10, r.metrics.size());
  if (n == 0) return 0.0;
  double s = 0.0;
  for (std::size_t i = r.metrics.size() - n; i < r.metrics.size(); ++i) s += r.metrics[i].mean_reward;
  return s / static_cast<double>(n);
}

inline double final_pass_at_1(const TrainResult& r) {
  if (r.evals.empty()) return -1.0;
  const auto& p = r.evals.back().pass;
  for (std::size_t j = 0; j < p.ks.size(); ++j)
    if (p.ks[j] == 1) return p.values[j];
  return -1.0;
}

template <class F>
int guarded(std::ostream& err, F&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const InputError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const IoError& e) {
    err << "io error: " << e.what() << '\n';
    return kIoError;
  } catch (const fs::filesystem_error& e) {
    err << "io error: " << e.what() << '\n';
    return kIoError;
  }
}

inline int cmd_train(const std::string& config_path, const std::vector<std::string>& overrides,
                     std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const RunConfig cfg = load_run_config(config_path, overrides);
    const auto run = run_training(cfg, out);
    out << "trained " << cfg.train.steps << " steps; final mean reward "
        << detail::num(final_mean_reward(run.result)) << "; artifacts in " << run.dir.string() << '\n';
    return kOk;
  });
}

inline int cmd_verify(const std::string& report_path, const VerifyOptions& opt, std::ostream& out,
                      std::ostream& err) {
  return guarded(err, [&] {
    const VerifyReport rep = run_verification(opt);
    if (!report_path.empty()) {
      const fs::path p(report_path);
      if (p.has_parent_path()) detail::ensure_dir(p.parent_path());
      auto f = detail::open_out(p);
      rep.write(f);
      detail::check(f, p);
    }
    rep.write(out);
    for (const auto& c : rep.checks)
      if (!c.passed) err << "failed check: " << c.name << '\n';
    return rep.all_passed() ? kOk : kVerifyFailed;
  });
}

inline int cmd_sweep(const std::string& config_path, const std::string& axis,
                     const std::vector<std::string>& values, const std::vector<std::string>& overrides,
                     std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (values.empty()) throw ConfigError("sweep needs at least one value");
    if (!is_config_key(axis)) throw ConfigError("unknown sweep axis '" + axis + "'");
    if (axis == "output-dir") throw ConfigError("output-dir cannot be swept");
    const RunConfig base = load_run_config(config_path, overrides);
    // Resolve every value first so a bad one fails before any run starts.
    std::vector<RunConfig> runs;
    for (const auto& v : values) {
      auto o = overrides;
      o.push_back(axis + "=" + v);
      RunConfig c = load_run_config(config_path, o);
      c.output_dir = (fs::path(base.output_dir) / (axis + "=" + v)).string();
      runs.push_back(std::move(c));
    }
    detail::ensure_dir(base.output_dir);
    const fs::path sp = fs::path(base.output_dir) / "sweep_summary.csv";
    auto summary = detail::open_out(sp);
    summary << "axis,value,final_mean_reward,pass_at_1,steps_to_0.8,run_dir\n";
    for (std::size_t i = 0; i < runs.size(); ++i) {
      const auto run = run_training(runs[i], out);
      const auto th = steps_to_threshold(run.result.metrics, 0.8);
      summary << axis << ',' << values[i] << ',' << detail::num(final_mean_reward(run.result)) << ','
              << detail::num(final_pass_at_1(run.result)) << ',' << (th ? std::to_string(*th) : "")
              << ',' << run.dir.string() << '\n';
      detail::check(summary, sp);
      out << axis << '=' << values[i] << ": final mean reward "
          << detail::num(final_mean_reward(run.result)) << '\n';
    }
    return kOk;
  });
}

/// Pass@k of a saved checkpoint on the evaluation queries of a config.
inline int cmd_eval(const std::string& checkpoint, const std::string& config_path,
                    const std::vector<std::string>& overrides, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const RunConfig cfg = config_path.empty() ? parse_run_config("{}", overrides)
                                              : load_run_config(config_path, overrides);
    std::ifstream in(checkpoint);
    if (!in) throw IoError("cannot read checkpoint " + checkpoint);
    const PolicyParams params = load_params(in);
    const Environment env = Environment::by_name(cfg.train.env);
    const auto queries = eval_queries(cfg.train);
    const auto table = evaluate_pass_at_k(params, env, queries, cfg.train.eval.n, cfg.train.eval.ks,
                                          derive_seed(cfg.train.seed, 7));
    EvalRecord rec{-1, table};
    auto j = eval_record(rec);
    j.erase("step");
    j["n"] = cfg.train.eval.n;
    j["queries"] = queries.size();
    out << j.dump() << '\n';
    return kOk;
  });
}

}  // namespace grpolab::cli
