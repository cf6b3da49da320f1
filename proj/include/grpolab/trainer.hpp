#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <future>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "grpolab/error.hpp"
#include "grpolab/grpo_math.hpp"
#include "grpolab/objectives.hpp"
#include "grpolab/policy.hpp"
#include "grpolab/rng.hpp"
#include "grpolab/rollout.hpp"
#include "grpolab/tokens.hpp"

namespace grpolab {

struct OptimizerConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  double grad_clip = 1.0;  // global L2 norm

  void validate() const {
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
      throw InputError("optimizer betas must lie in [0, 1)");
    if (!(eps > 0.0)) throw InputError("optimizer eps must be positive");
    if (!(weight_decay >= 0.0)) throw InputError("weight decay must be non-negative");
    if (!(grad_clip > 0.0)) throw InputError("gradient clip must be positive");
  }

  friend bool operator==(const OptimizerConfig&, const OptimizerConfig&) = default;
};

enum class InitScheme { zeros, gaussian };

struct PolicyConfig {
  int window = 16;
  int position_cap = 8;
  InitScheme init = InitScheme::zeros;
  double init_sigma = 0.1;

  friend bool operator==(const PolicyConfig&, const PolicyConfig&) = default;
};

struct EvalConfig {
  int n = 32;
  std::vector<int> ks{1, 2, 4, 8};
  int queries = 16;  // evaluation queries drawn from the training pool

  void validate() const {
    if (ks.empty()) throw InputError("eval k-list must not be empty");
    for (int k : ks)
      if (k < 1 || k > n) throw InputError("eval k must lie in [1, n]");
    if (n < 1 || n > 120) throw InputError("eval n must lie in [1, 120]");
    if (queries < 1) throw InputError("eval queries must be at least 1");
  }

  friend bool operator==(const EvalConfig&, const EvalConfig&) = default;
};

struct TrainConfig {
  std::string env = "mod_sum";
  VariantConfig variant;
  PolicyConfig policy;
  OptimizerConfig optimizer;
  EvalConfig eval;
  int group_size = 8;
  int queries_per_step = 4;
  int steps = 300;
  int dataset_size = 16;  // fixed query pool; 0 draws a fresh query every time
  double learning_rate = 0.05;
  int snapshot_interval = 1;
  int eval_interval = 50;
  int cov_window = 10;  // steps pooled into the windowed covariance
  int workers = 1;
  std::uint64_t seed = 1;

  void validate() const {
    (void)Environment::by_name(env);
    variant.validate();
    optimizer.validate();
    eval.validate();
    FeatureSpec{Vocab::standard(), policy.window, policy.position_cap}.validate();
    if (!(policy.init_sigma >= 0.0)) throw InputError("init sigma must be non-negative");
    if (group_size < 2) throw InputError("group size must be at least 2");
    if (queries_per_step < 1) throw InputError("queries per step must be at least 1");
    if (steps < 0) throw InputError("steps must be non-negative");
    if (dataset_size < 0) throw InputError("dataset size must be non-negative");
    if (!(learning_rate > 0.0)) throw InputError("learning rate must be positive");
    if (snapshot_interval < 1 || eval_interval < 1 || cov_window < 1)
      throw InputError("intervals must be at least 1");
    if (workers < 1) throw InputError("workers must be at least 1");
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct StepMetrics {
  int step = 0;
  double mean_reward = 0.0;
  double mean_p_hat = 0.0;
  double objective = 0.0;
  double grad_norm = 0.0;  // before clipping
  double clip_fraction = 0.0;
  double covariance = 0.0;  // pooled over the trailing cov_window steps
  double kl = 0.0;
  int fallback_groups = 0;
  double wall_clock = 0.0;  // seconds since the start of training
};

/// Rewards and deltas of one trained group, kept for covariance tracking.
struct GroupTrace {
  int step = 0;
  std::vector<int> rewards;
  std::vector<double> deltas;
};

struct PassAtK {
  std::vector<int> ks;
  std::vector<double> values;  // mean over evaluation queries
};

struct EvalRecord {
  int step = 0;  // number of completed updates
  PassAtK pass;
};

struct TrainResult {
  std::vector<StepMetrics> metrics;
  std::vector<EvalRecord> evals;
  std::vector<GroupTrace> history;
  PolicyParams initial_params;
  PolicyParams final_params;
};

/// Adam with decoupled weight decay and global-norm clipping, used for ascent
/// on the surrogate objective.
class AdamW {
 public:
  AdamW(OptimizerConfig cfg, double lr, std::size_t dim)
      : cfg_(cfg), lr_(lr), m_(dim, 0.0), v_(dim, 0.0) {
    cfg_.validate();
    if (!(lr > 0.0)) throw InputError("learning rate must be positive");
  }

  /// Clips `grad` in place to the global-norm limit and returns the norm it
  /// had before clipping.
  double clip(ParamVector& grad) const {
    const double norm = l2_norm(grad);
    if (norm > cfg_.grad_clip) {
      const double s = cfg_.grad_clip / norm;
      for (double& g : grad) g *= s;
    }
    return norm;
  }

  /// One update in the direction that increases the objective whose
  /// gradient is `grad`. Returns the pre-clip gradient norm.
  double ascend(PolicyParams& params, ParamVector grad) {
    if (grad.size() != m_.size()) throw InputError("gradient size mismatch");
    const double norm = clip(grad);
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    ParamVector w(params.weights().begin(), params.weights().end());
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double g = -grad[k];  // descent on the negated objective
      m_[k] = cfg_.beta1 * m_[k] + (1.0 - cfg_.beta1) * g;
      v_[k] = cfg_.beta2 * v_[k] + (1.0 - cfg_.beta2) * g * g;
      const double mh = m_[k] / c1;
      const double vh = v_[k] / c2;
      w[k] -= lr_ * (mh / (std::sqrt(vh) + cfg_.eps) + cfg_.weight_decay * w[k]);
    }
    params.assign(std::move(w));
    return norm;
  }

  std::uint64_t steps() const noexcept { return t_; }

 private:
  OptimizerConfig cfg_;
  double lr_;
  ParamVector m_, v_;
  std::uint64_t t_ = 0;
};

/// Pooled covariance of all (r, delta) pairs in `groups`; 0 with fewer
/// than two pairs.
inline double pooled_covariance(std::span<const GroupTrace> groups) {
  std::vector<double> r, d;
  for (const auto& g : groups) {
    r.insert(r.end(), g.rewards.begin(), g.rewards.end());
    d.insert(d.end(), g.deltas.begin(), g.deltas.end());
  }
  return r.size() < 2 ? 0.0 : covariance_estimate(r, d);
}

/// Tumbling windows of `window` consecutive groups; a trailing partial
/// window is dropped.
inline std::vector<double> track_covariance_window(std::span<const GroupTrace> history,
                                                   std::size_t window) {
  if (window < 1) throw InputError("covariance window must hold at least one group");
  std::vector<double> out;
  for (std::size_t s = 0; s + window <= history.size(); s += window)
    out.push_back(pooled_covariance(history.subspan(s, window)));
  return out;
}

/// Pass@k of the live policy, sampling on the bare query only.
inline PassAtK evaluate_pass_at_k(const PolicyParams& params, const Environment& env,
                                  std::span<const Query> queries, int n, std::span<const int> ks,
                                  std::uint64_t seed) {
  if (queries.empty()) throw InputError("evaluation needs at least one query");
  for (int k : ks)
    if (k < 1 || k > n) throw InputError("pass@k needs n >= max(k)");
  PassAtK out{{ks.begin(), ks.end()}, std::vector<double>(ks.size(), 0.0)};
  for (std::size_t qi = 0; qi < queries.size(); ++qi) {
    const Query& q = queries[qi];
    SeedStream rng(derive_seed(seed, qi));
    const EvalContext ctx = EvalContext::of(q);
    int c = 0;
    for (int s = 0; s < n; ++s)
      c += env.reward(q, sample_output(params, ctx, env.max_output_length(q), rng));
    for (std::size_t j = 0; j < ks.size(); ++j) out.values[j] += pass_at_k(n, c, ks[j]);
  }
  for (double& v : out.values) v /= static_cast<double>(queries.size());
  return out;
}

/// The fixed training pool (or an empty vector when dataset_size is 0).
inline std::vector<Query> build_dataset(const Environment& env, int size, std::uint64_t seed) {
  SeedStream rng(derive_seed(seed, 2));
  std::vector<Query> pool;
  for (int i = 0; i < size; ++i) pool.push_back(env.sample_query(rng));
  return pool;
}

inline PolicyParams initial_params(const TrainConfig& cfg) {
  const Environment env = Environment::by_name(cfg.env);
  FeatureSpec spec{env.vocab(), cfg.policy.window, cfg.policy.position_cap};
  if (cfg.policy.init == InitScheme::zeros) return PolicyParams(spec);
  SeedStream rng(derive_seed(cfg.seed, 1));
  return PolicyParams::gaussian(spec, cfg.policy.init_sigma, rng);
}

/// Queries that Pass@k evaluation runs on.
inline std::vector<Query> eval_queries(const TrainConfig& cfg) {
  const Environment env = Environment::by_name(cfg.env);
  auto pool = build_dataset(env, cfg.dataset_size, cfg.seed);
  if (pool.empty()) {
    SeedStream rng(derive_seed(cfg.seed, 6));
    for (int i = 0; i < cfg.eval.queries; ++i) pool.push_back(env.sample_query(rng));
  }
  if (pool.size() > static_cast<std::size_t>(cfg.eval.queries))
    pool.resize(static_cast<std::size_t>(cfg.eval.queries));
  return pool;
}

using StepObserver = std::function<void(const StepMetrics&, const PolicyParams&)>;
using EvalObserver = std::function<void(const EvalRecord&, const PolicyParams&)>;

struct TrainHooks {
  StepObserver on_step;
  EvalObserver on_eval;
};

/// Runs the training loop. With workers > 1 the groups of a step are
/// evaluated concurrently; reduction order is fixed so results match the
/// single-worker run.
inline TrainResult train(const TrainConfig& cfg, const TrainHooks& hooks = {}) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const Environment env = Environment::by_name(cfg.env);
  PolicyParams params = initial_params(cfg);
  const PolicySnapshot ref(params, SnapshotRole::ref);
  const auto pool = build_dataset(env, cfg.dataset_size, cfg.seed);
  const auto evalq = eval_queries(cfg);
  AdamW opt(cfg.optimizer, cfg.learning_rate, params.size());

  TrainResult res{{}, {}, {}, params, params};
  std::optional<PolicySnapshot> old;
  const auto run_eval = [&](int step) {
    EvalRecord rec{step, evaluate_pass_at_k(params, env, evalq, cfg.eval.n, cfg.eval.ks,
                                            derive_seed(cfg.seed, 5, static_cast<std::uint64_t>(step)))};
    if (hooks.on_eval) hooks.on_eval(rec, params);
    res.evals.push_back(std::move(rec));
  };

  const std::size_t q_per_step = static_cast<std::size_t>(cfg.queries_per_step);
  for (int step = 0; step < cfg.steps; ++step) {
    if (step % cfg.snapshot_interval == 0) old.emplace(params, SnapshotRole::old);
    const PolicySnapshots snaps{*old, ref};

    SeedStream pick(derive_seed(cfg.seed, 3, static_cast<std::uint64_t>(step)));
    std::vector<Query> queries;
    for (std::size_t i = 0; i < q_per_step; ++i)
      queries.push_back(pool.empty() ? env.sample_query(pick) : pool[pick.below(pool.size())]);

    const auto one_group = [&](std::size_t i) {
      SeedStream rng(derive_seed(cfg.seed, 4, static_cast<std::uint64_t>(step) * q_per_step + i));
      const Group g = rollout_group(env, *old, queries[i], static_cast<std::size_t>(cfg.group_size), rng);
      return assemble_group_gradient(g, cfg.variant, params, snaps);
    };
    std::vector<ObjectiveReport> reports(q_per_step);
    if (cfg.workers == 1) {
      for (std::size_t i = 0; i < q_per_step; ++i) reports[i] = one_group(i);
    } else {
      for (std::size_t b = 0; b < q_per_step; b += static_cast<std::size_t>(cfg.workers)) {
        std::vector<std::future<ObjectiveReport>> fut;
        const std::size_t e = std::min(q_per_step, b + static_cast<std::size_t>(cfg.workers));
        for (std::size_t i = b; i < e; ++i) fut.push_back(std::async(std::launch::async, one_group, i));
        for (std::size_t i = b; i < e; ++i) reports[i] = fut[i - b].get();
      }
    }

    StepMetrics m;
    m.step = step;
    ParamVector grad(params.size(), 0.0);
    const double inv_q = 1.0 / static_cast<double>(q_per_step);
    double reward_sum = 0.0;
    std::size_t reward_count = 0;
    for (const auto& rep : reports) {
      axpy(inv_q, rep.gradient, grad);
      m.objective += inv_q * rep.value;
      m.clip_fraction += inv_q * rep.clip_fraction;
      m.kl += inv_q * rep.kl;
      m.fallback_groups += rep.fallback ? 1 : 0;
      int pos = 0;
      for (int r : rep.rewards) pos += r;
      reward_sum += pos;
      reward_count += rep.rewards.size();
      m.mean_p_hat += inv_q * static_cast<double>(pos) / static_cast<double>(rep.rewards.size());
      res.history.push_back(GroupTrace{step, rep.rewards, rep.deltas});
    }
    m.mean_reward = reward_sum / static_cast<double>(reward_count);
    m.grad_norm = opt.ascend(params, std::move(grad));

    const std::size_t keep = static_cast<std::size_t>(cfg.cov_window) * q_per_step;
    const std::size_t n_hist = res.history.size();
    const std::size_t from = n_hist > keep ? n_hist - keep : 0;
    m.covariance = pooled_covariance(std::span<const GroupTrace>(res.history).subspan(from));
    m.wall_clock = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    if (hooks.on_step) hooks.on_step(m, params);
    res.metrics.push_back(m);
    if ((step + 1) % cfg.eval_interval == 0) run_eval(step + 1);
  }
  if (cfg.steps == 0 || cfg.steps % cfg.eval_interval != 0) run_eval(cfg.steps);
  res.final_params = params;
  return res;
}

/// First step whose trailing mean reward over `trailing` steps exceeds
/// `threshold`.
inline std::optional<int> steps_to_threshold(std::span<const StepMetrics> metrics,
                                             double threshold, std::size_t trailing = 10) {
  double sum = 0.0;
  for (std::size_t i = 0; i < metrics.size(); ++i) {
    sum += metrics[i].mean_reward;
    if (i >= trailing) sum -= metrics[i - trailing].mean_reward;
    if (i + 1 >= trailing && sum / static_cast<double>(trailing) > threshold)
      return metrics[i].step;
  }
  return std::nullopt;
}

}  // namespace grpolab
