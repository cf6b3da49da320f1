#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "grpolab/error.hpp"
#include "grpolab/grpo_math.hpp"
#include "grpolab/policy.hpp"
#include "grpolab/rng.hpp"
#include "grpolab/tokens.hpp"

namespace grpolab {

/// Exhaustive output space for one fixed query.
///
/// Outputs follow the sampler's semantics: the environment's length limit
/// forces EOS in its last slot. Outputs longer than `max_len` are not
/// enumerated and their probability shows up as uncovered mass.
struct EnumerationSpec {
  Environment env = Environment(TaskKind::mod_sum);
  Query query;
  std::size_t max_len = 3;
  bool digits_and_eos_only = false;  // expand only digit and EOS tokens

  static constexpr std::size_t kMaxOutputs = 10000;
};

struct EnumeratedOutput {
  Output output;
  double log_prob;
};

namespace detail {

inline void enumerate_into(const PolicyParams& params, const EnumerationSpec& spec,
                           const detail::ContextFeatures& cf, std::size_t limit, Output& cur,
                           double lp, std::vector<EnumeratedOutput>& out) {
  const Vocab& vocab = params.spec().vocab;
  if (cur.tokens.size() + 1 == limit) {
    if (cur.tokens.size() + 1 > spec.max_len) return;
    Output o = cur;
    o.tokens.push_back(vocab.eos);
    o.forced_eos = true;
    out.push_back({std::move(o), lp});
    if (out.size() > EnumerationSpec::kMaxOutputs)
      throw EnumerationCapError("enumeration exceeds the output cap");
    return;
  }
  const auto f = detail::step_features(params.spec(), cf, cur.tokens);
  const auto row = detail::log_softmax(detail::logits_from(params, f));
  for (Token v = 0; v < vocab.size; ++v) {
    if (spec.digits_and_eos_only && !Vocab::is_digit(v) && v != vocab.eos) continue;
    if (cur.tokens.size() + 1 > spec.max_len) return;
    cur.tokens.push_back(v);
    if (v == vocab.eos) {
      out.push_back({cur, lp + row[v]});
      if (out.size() > EnumerationSpec::kMaxOutputs)
        throw EnumerationCapError("enumeration exceeds the output cap");
    } else {
      enumerate_into(params, spec, cf, limit, cur, lp + row[v], out);
    }
    cur.tokens.pop_back();
  }
}

}  // namespace detail

/// Every output reachable within the enumeration limits, with its exact log-probability.
inline std::vector<EnumeratedOutput> enumerate_outputs(const PolicyParams& params,
                                                       const EnumerationSpec& spec) {
  spec.query.validate(spec.env.vocab());
  if (spec.max_len < 1) throw InputError("enumeration length must be positive");
  const auto cf = detail::context_features(params.spec(), EvalContext::of(spec.query));
  std::vector<EnumeratedOutput> out;
  Output cur;
  detail::enumerate_into(params, spec, cf, spec.env.max_output_length(spec.query), cur, 0.0, out);
  return out;
}

struct ExpectedReward {
  double value;  // sum_o pi(o|q) R(o, q) over the enumerated outputs
  double mass;   // total enumerated probability
};

inline ExpectedReward exact_expected_reward(const PolicyParams& params, const EnumerationSpec& spec) {
  ExpectedReward er{0.0, 0.0};
  for (const auto& e : enumerate_outputs(params, spec)) {
    const double p = std::exp(e.log_prob);
    er.mass += p;
    er.value += p * spec.env.reward(spec.query, e.output);
  }
  return er;
}

/// sum_o pi(o|q) (R(o, q) - baseline) grad log pi(o|q)
inline ParamVector exact_policy_gradient(const PolicyParams& params, const EnumerationSpec& spec,
                                         double baseline = 0.0) {
  ParamVector g(params.size(), 0.0);
  const EvalContext ctx = EvalContext::of(spec.query);
  for (const auto& e : enumerate_outputs(params, spec)) {
    const double weight = std::exp(e.log_prob) * (spec.env.reward(spec.query, e.output) - baseline);
    if (weight == 0.0) continue;
    for (const auto& st : trace_output(params, ctx, e.output))
      accumulate_score(params.spec(), st, weight, g);
  }
  return g;
}

/// Exact importance-sampling baseline quantities under pi_ref sampling.
struct ExactBaseline {
  double optimal;          // E_ref[R w^2] / E_ref[w^2], w = pi_theta / pi_ref
  double expected_reward;  // E_ref[R]
  double covariance;       // Cov_ref(R, delta), delta = log pi_theta - log pi_ref
  double first_order;      // E_ref[R] + 2 Cov_ref(R, delta)
  double mass;             // enumerated pi_ref mass
};

inline ExactBaseline exact_optimal_baseline(const PolicyParams& params, const PolicyParams& ref,
                                            const EnumerationSpec& spec) {
  const EvalContext ctx = EvalContext::of(spec.query);
  double num = 0.0, den = 0.0, er = 0.0, ed = 0.0, erd = 0.0, mass = 0.0;
  for (const auto& e : enumerate_outputs(ref, spec)) {
    const double p = std::exp(e.log_prob);
    const double delta = log_prob(params, ctx, e.output) - e.log_prob;
    const double w = std::exp(delta);
    const double r = spec.env.reward(spec.query, e.output);
    num += p * r * w * w;
    den += p * w * w;
    er += p * r;
    ed += p * delta;
    erd += p * r * delta;
    mass += p;
  }
  ExactBaseline b{};
  b.optimal = num / den;
  b.expected_reward = er;
  b.covariance = erd - er * ed;
  b.first_order = er + 2.0 * b.covariance;
  b.mass = mass;
  return b;
}

/// E_ref[(R - b)^2 w^2]: the quantity the optimal baseline minimizes.
inline double weighted_second_moment(const PolicyParams& params, const PolicyParams& ref,
                                     const EnumerationSpec& spec, double b) {
  const EvalContext ctx = EvalContext::of(spec.query);
  double s = 0.0;
  for (const auto& e : enumerate_outputs(ref, spec)) {
    const double p = std::exp(e.log_prob);
    const double w = std::exp(log_prob(params, ctx, e.output) - e.log_prob);
    const double r = spec.env.reward(spec.query, e.output);
    s += p * (r - b) * (r - b) * w * w;
  }
  return s;
}

/// Baselines for the Monte-Carlo study. `exact_optimal` is the group's own
/// sum r w^2 / sum w^2 with exact weights (the quantity RCC expands to first
/// order); `population_optimal` is the enumerated constant E[R w^2] / E[w^2].
enum class BaselineRule { none, group_mean, rcc, exact_optimal, population_optimal };

inline std::string to_string(BaselineRule r) {
  switch (r) {
    case BaselineRule::none: return "none";
    case BaselineRule::group_mean: return "group-mean";
    case BaselineRule::rcc: return "rcc";
    case BaselineRule::exact_optimal: return "exact-optimal";
    case BaselineRule::population_optimal: return "population-optimal";
  }
  return "none";
}

/// Monte-Carlo study of the single-group importance-weighted estimator
///   g-hat = (1/G) sum_i w_i (R_i - b) grad log pi_theta(o_i|q),  o_i ~ pi_ref(.|q).
struct VarianceSpec {
  Environment env = Environment(TaskKind::mod_sum);
  Query query;
  std::size_t group_size = 8;
  std::size_t trials = 10000;
  std::uint64_t seed = 0;
};

struct VarianceSummary {
  BaselineRule rule = BaselineRule::none;
  double trace = 0.0;  // sum of per-coordinate variances
  std::vector<std::pair<std::size_t, double>> top;  // largest per-coordinate variances
  ParamVector mean;
  std::vector<double> trial_sq_dev;  // ||g-hat_t - mean||^2 per trial, for paired tests
};

namespace detail {

struct TrialSample {
  std::vector<double> rewards, weights, deltas;
  std::vector<ParamVector> scores;
};

inline TrialSample draw_trial(const PolicyParams& params, const PolicyParams& ref,
                              const VarianceSpec& spec, std::uint64_t trial) {
  SeedStream rng(derive_seed(spec.seed, trial));
  const EvalContext ctx = EvalContext::of(spec.query);
  const std::size_t max_len = spec.env.max_output_length(spec.query);
  TrialSample s;
  for (std::size_t i = 0; i < spec.group_size; ++i) {
    const Output o = sample_output(ref, ctx, max_len, rng);
    const auto steps = trace_output(params, ctx, o);
    const double delta = sum_log_prob(steps) - log_prob(ref, ctx, o);
    ParamVector psi(params.size(), 0.0);
    for (const auto& st : steps) accumulate_score(params.spec(), st, 1.0, psi);
    s.rewards.push_back(spec.env.reward(spec.query, o));
    s.deltas.push_back(delta);
    s.weights.push_back(std::exp(delta));
    s.scores.push_back(std::move(psi));
  }
  return s;
}

inline double rule_baseline(BaselineRule rule, const TrialSample& s, double population) {
  switch (rule) {
    case BaselineRule::none: return 0.0;
    case BaselineRule::group_mean: return detail::mean_of(s.rewards);
    case BaselineRule::rcc:
      return detail::mean_of(s.rewards) + 2.0 * covariance_estimate(s.rewards, s.deltas);
    case BaselineRule::exact_optimal: return optimal_baseline(s.rewards, s.weights);
    case BaselineRule::population_optimal: return population;
  }
  return 0.0;
}

inline ParamVector estimate(const TrialSample& s, double b) {
  ParamVector g(s.scores.front().size(), 0.0);
  const double inv = 1.0 / static_cast<double>(s.scores.size());
  for (std::size_t i = 0; i < s.scores.size(); ++i)
    axpy(inv * s.weights[i] * (s.rewards[i] - b), s.scores[i], g);
  return g;
}

}  // namespace detail

/// Per-rule variance summaries. Every rule sees the same sampled groups:
/// trial t draws from a stream seeded by (seed, t).
inline std::vector<VarianceSummary> estimator_variance(const PolicyParams& params,
                                                       const PolicyParams& ref,
                                                       const VarianceSpec& spec,
                                                       std::span<const BaselineRule> rules,
                                                       std::size_t top_k = 5) {
  if (spec.trials < 1000) throw InputError("variance estimation needs at least 1000 trials");
  if (spec.group_size < 2) throw InputError("group size must be at least 2");
  double b_star = 0.0;
  if (std::find(rules.begin(), rules.end(), BaselineRule::population_optimal) != rules.end()) {
    EnumerationSpec es{spec.env, spec.query, spec.env.max_output_length(spec.query), false};
    b_star = exact_optimal_baseline(params, ref, es).optimal;
  }
  const std::size_t dim = params.size();
  std::vector<VarianceSummary> out(rules.size());
  for (std::size_t r = 0; r < rules.size(); ++r) {
    out[r].rule = rules[r];
    out[r].mean.assign(dim, 0.0);
    out[r].trial_sq_dev.reserve(spec.trials);
  }
  const double inv_t = 1.0 / static_cast<double>(spec.trials);
  for (std::size_t t = 0; t < spec.trials; ++t) {
    const auto s = detail::draw_trial(params, ref, spec, t);
    for (std::size_t r = 0; r < rules.size(); ++r)
      axpy(inv_t, detail::estimate(s, detail::rule_baseline(rules[r], s, b_star)), out[r].mean);
  }
  std::vector<ParamVector> coord(rules.size(), ParamVector(dim, 0.0));
  for (std::size_t t = 0; t < spec.trials; ++t) {
    const auto s = detail::draw_trial(params, ref, spec, t);
    for (std::size_t r = 0; r < rules.size(); ++r) {
      const auto g = detail::estimate(s, detail::rule_baseline(rules[r], s, b_star));
      double sq = 0.0;
      for (std::size_t k = 0; k < dim; ++k) {
        const double d = g[k] - out[r].mean[k];
        coord[r][k] += d * d;
        sq += d * d;
      }
      out[r].trial_sq_dev.push_back(sq);
    }
  }
  const double denom = static_cast<double>(spec.trials - 1);
  for (std::size_t r = 0; r < rules.size(); ++r) {
    std::vector<std::pair<std::size_t, double>> per;
    for (std::size_t k = 0; k < dim; ++k) {
      const double v = coord[r][k] / denom;
      out[r].trace += v;
      per.emplace_back(k, v);
    }
    const std::size_t keep = std::min(top_k, per.size());
    std::partial_sort(per.begin(), per.begin() + static_cast<std::ptrdiff_t>(keep), per.end(),
                      [](const auto& a, const auto& b) { return a.second > b.second; });
    per.resize(keep);
    out[r].top = std::move(per);
  }
  return out;
}

inline VarianceSummary estimator_variance(const PolicyParams& params, const PolicyParams& ref,
                                          const VarianceSpec& spec, BaselineRule rule) {
  const BaselineRule rules[] = {rule};
  return std::move(estimator_variance(params, ref, spec, rules).front());
}

/// Paired comparison of two rules' trial-wise squared deviations.
/// `difference` > 0 means `a` has the larger variance.
struct PairedVarianceTest {
  double difference;      // mean_t (sq_a - sq_b); equals (T-1)/T (trace_a - trace_b)
  double standard_error;  // of that mean
  double z;
  double p_one_sided;     // P(Z >= z) under no difference
};

inline PairedVarianceTest paired_variance_test(const VarianceSummary& a, const VarianceSummary& b) {
  const std::size_t n = a.trial_sq_dev.size();
  if (n < 2 || n != b.trial_sq_dev.size()) throw InputError("paired test needs aligned trials");
  double mean = 0.0;
  for (std::size_t t = 0; t < n; ++t) mean += a.trial_sq_dev[t] - b.trial_sq_dev[t];
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    const double d = a.trial_sq_dev[t] - b.trial_sq_dev[t] - mean;
    ss += d * d;
  }
  const double se = std::sqrt(ss / static_cast<double>(n - 1) / static_cast<double>(n));
  PairedVarianceTest out{mean, se, se > 0.0 ? mean / se : 0.0, 0.5};
  out.p_one_sided = 0.5 * std::erfc(out.z / std::sqrt(2.0));
  return out;
}

}  // namespace grpolab
