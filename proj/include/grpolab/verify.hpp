#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "grpolab/finite_difference.hpp"
#include "grpolab/grpo_math.hpp"
#include "grpolab/objectives.hpp"
#include "grpolab/oracle.hpp"
#include "grpolab/policy.hpp"
#include "grpolab/rng.hpp"
#include "grpolab/rollout.hpp"
#include "grpolab/tokens.hpp"

namespace grpolab {

struct CheckResult {
  std::string name;
  std::string tolerance;
  double observed = 0.0;
  bool passed = false;
  std::string detail;
};

/// The correct answer for `q`, shaped the way the sampler would emit it.
inline Output correct_output(const Environment& env, const Query& q) {
  Output o;
  if (env.kind() == TaskKind::mod_sum) {
    int sum = 0;
    for (Token t : q.tokens) sum += t;
    o.tokens = {static_cast<Token>(sum % 10), env.vocab().eos};
  } else {
    o.tokens.assign(q.tokens.rbegin(), q.tokens.rend());
    o.tokens.push_back(env.vocab().eos);
  }
  o.forced_eos = o.tokens.size() == env.max_output_length(q);
  return o;
}

/// A wrong answer of the same shape as the correct one.
inline Output wrong_output(const Environment& env, const Query& q) {
  Output o = correct_output(env, q);
  o.tokens[0] = static_cast<Token>((o.tokens[0] + 1) % 10);
  if (env.kind() == TaskKind::copy_reverse && env.reward(q, o) == 1) o.tokens[0] = env.vocab().pad;
  return o;
}

/// Randomized objective instance: live params near pi_old, an independent
/// pi_ref, and a sampled group forced to contain both partitions.
struct GradientInstance {
  Group group;
  PolicyParams params;
  PolicyParams old;
  PolicyParams ref;
};

inline ParamVector perturbed(std::span<const double> w, double sigma, SeedStream& rng) {
  ParamVector out(w.begin(), w.end());
  for (double& x : out) x += sigma * rng.normal();
  return out;
}

inline GradientInstance make_gradient_instance(TaskKind task, std::uint64_t seed,
                                               std::size_t group_size = 6, bool mixed = true) {
  SeedStream rng(seed);
  const Environment env(task);
  FeatureSpec spec;
  GradientInstance in{Group{}, PolicyParams(spec), PolicyParams::gaussian(spec, 0.5, rng),
                      PolicyParams::gaussian(spec, 0.5, rng)};
  in.params.assign(perturbed(in.old.weights(), 0.05, rng));
  const Query q = env.sample_query(rng);
  std::vector<Output> outs;
  for (std::size_t i = 0; i < group_size; ++i)
    outs.push_back(sample_output(in.old, EvalContext::of(q), env.max_output_length(q), rng));
  Group g = make_group(env, q, outs);
  if (mixed) {
    if (g.num_positive() == 0) outs[rng.below(group_size)] = correct_output(env, q);
    g = make_group(env, q, outs);
    if (g.num_negative() == 0) outs.back() = wrong_output(env, q);
  }
  in.group = make_group(env, q, std::move(outs));
  return in;
}

/// Contexts the numerator is evaluated under for this config and group.
inline std::vector<EvalContext> contexts_for(const Group& g, const VariantConfig& cfg,
                                             const FeatureSpec& spec) {
  if (!cfg.bicc || fallback_check(g) != ConditioningMode::bilateral) return {};
  return numerator_contexts(g, build_bilateral_contexts(g, cfg.budget, spec.vocab));
}

/// Smallest distance from any clip-relevant ratio to a band edge.
inline double clip_margin(const Group& g, std::span<const EvalContext> contexts,
                          const PolicyParams& params, const PolicySnapshots& snaps,
                          const VariantConfig& cfg) {
  const ClipBand band = cfg.band();
  const PolicyParams& den =
      cfg.variant == Variant::dr_grpo ? snaps.ref.params() : snaps.old.params();
  const EvalContext qctx = EvalContext::of(g.query);
  double margin = 1e300;
  const auto consider = [&](double r) {
    margin = std::min({margin, std::abs(r - band.lower()), std::abs(r - band.upper())});
  };
  for (std::size_t i = 0; i < g.size(); ++i) {
    const auto num = trace_output(params, contexts.empty() ? qctx : contexts[i], g.outputs[i]);
    const auto d = trace_output(den, qctx, g.outputs[i]);
    double lr = 0.0;
    for (std::size_t t = 0; t < num.size(); ++t) {
      const double step = num[t].log_prob() - d[t].log_prob();
      lr += step;
      if (cfg.effective_granularity() == Granularity::token) consider(std::exp(step));
    }
    if (cfg.effective_granularity() == Granularity::sequence)
      consider(cfg.variant == Variant::gspo ? std::exp(lr / static_cast<double>(num.size()))
                                            : std::exp(lr));
  }
  return margin;
}

struct GradientCheck {
  double relative_error;
  double margin;
};

/// Analytic gradient of assemble_group_gradient against central differences
/// of the surrogate with advantages (and GSPO's stop-gradient ratio) frozen.
inline GradientCheck check_objective_gradient(const GradientInstance& in, const VariantConfig& cfg) {
  const PolicySnapshots snaps = PolicySnapshots::of(in.old, in.ref);
  const auto rep = assemble_group_gradient(in.group, cfg, in.params, snaps);
  const auto contexts = contexts_for(in.group, cfg, in.params.spec());
  FrozenTerms frozen{rep.advantages, {}};
  if (cfg.variant == Variant::gspo) frozen.sg_ratios = rep.ratios;
  const auto f = [&](const std::vector<double>& x) {
    PolicyParams p(in.params.spec());
    p.assign(x);
    return surrogate_objective(in.group, contexts, p, snaps, cfg, frozen).value;
  };
  const ParamVector w(in.params.weights().begin(), in.params.weights().end());
  const auto fd = central_differences(f, w, 1e-5);
  return {relative_error(rep.gradient, fd), clip_margin(in.group, contexts, in.params, snaps, cfg)};
}

/// All sixteen variant configurations: {grpo, dr-grpo, dapo, gspo} x bicc x rcc.
inline std::vector<VariantConfig> all_variant_configs() {
  std::vector<VariantConfig> out;
  for (Variant v : {Variant::grpo, Variant::dr_grpo, Variant::dapo, Variant::gspo})
    for (bool bicc : {false, true})
      for (bool rcc : {false, true}) {
        VariantConfig c;
        c.variant = v;
        c.bicc = bicc;
        c.rcc = rcc;
        out.push_back(c);
      }
  return out;
}

/// Toy setup with an injected reward-confidence correlation: pi_theta is
/// uniform over the first answer token while pi_ref's query-bag weights
/// push `strength` logits per query digit away from the correct answer.
struct CorrelatedToy {
  Environment env = Environment(TaskKind::mod_sum);
  Query query{{3, 4, 5}, TaskKind::mod_sum};
  PolicyParams theta;
  PolicyParams ref;

  static CorrelatedToy make(double strength) {
    CorrelatedToy toy;
    const FeatureSpec spec;
    toy.theta = PolicyParams(spec);
    toy.ref = PolicyParams(spec);
    const Token answer = correct_output(toy.env, toy.query).tokens[0];
    for (Token d : toy.query.tokens) toy.ref.set_weight(spec.query_bag(d), answer, -strength);
    return toy;
  }
};

/// Corrupted clip rule for mutation testing: the upper bound is widened.
struct WidenedClip {
  static double up(double rho, const ClipBand& band) noexcept {
    return std::min(rho, band.upper() + 0.05);
  }
  static double low(double rho, const ClipBand& band) noexcept { return std::max(rho, band.lower()); }
};

namespace detail {

/// Random binary-reward group with both partitions and ratios in [0.5, 2].
inline void random_binary_group(SeedStream& rng, std::size_t g, std::vector<int>& rewards,
                                std::vector<double>& ratios) {
  do {
    rewards.assign(g, 0);
    for (int& r : rewards) r = static_cast<int>(rng.below(2));
  } while (std::count(rewards.begin(), rewards.end(), 1) == 0 ||
           std::count(rewards.begin(), rewards.end(), 0) == 0);
  ratios.resize(g);
  for (double& x : ratios) x = 0.5 + 1.5 * rng.uniform();
}

inline std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", x);
  return buf;
}

}  // namespace detail

// Individual checks. Each returns the worst observed deviation.

template <class Clip = StandardClip>
inline CheckResult check_contrastive_equivalence(std::uint64_t seed, std::size_t groups = 1000) {
  SeedStream rng(seed);
  const ClipBand band = ClipBand::symmetric(0.2);
  double worst = 0.0;
  std::vector<int> r;
  std::vector<double> rho;
  for (std::size_t i = 0; i < groups; ++i) {
    detail::random_binary_group(rng, std::size_t{2} << rng.below(3), r, rho);
    const auto adv = binary_advantage_set(r);
    const double seq = grpo_objective_sequence(rho, adv.values, band);
    worst = std::max(worst, std::abs(seq - contrastive_objective<Clip>(r, rho, band)));
  }
  return {"contrastive-equivalence", "1e-12", worst, worst < 1e-12,
          std::to_string(groups) + " groups, G in {2,4,8}"};
}

inline CheckResult check_pairwise_equivalence(std::uint64_t seed, std::size_t groups = 1000) {
  SeedStream rng(seed);
  const ClipBand band = ClipBand::symmetric(0.2);
  double worst = 0.0;
  std::vector<int> r;
  std::vector<double> rho;
  for (std::size_t i = 0; i < groups; ++i) {
    detail::random_binary_group(rng, std::size_t{2} << rng.below(3), r, rho);
    worst = std::max(worst, std::abs(contrastive_objective(r, rho, band) - pairwise_objective(r, rho, band)));
  }
  return {"pairwise-equivalence", "1e-12", worst, worst < 1e-12,
          std::to_string(groups) + " groups, G in {2,4,8}"};
}

inline CheckResult check_clip_split(std::uint64_t seed, std::size_t groups = 1000) {
  SeedStream rng(seed);
  const ClipBand band = ClipBand::symmetric(0.2);
  double worst = 0.0;
  for (std::size_t i = 0; i < groups; ++i) {
    const std::size_t g = 1 + rng.below(8);
    std::vector<double> rho(g), a(g);
    for (std::size_t j = 0; j < g; ++j) {
      rho[j] = 0.5 + 1.5 * rng.uniform();
      a[j] = 4.0 * rng.uniform() - 2.0;
    }
    worst = std::max(worst, std::abs(grpo_objective_sequence(rho, a, band) -
                                     grpo_objective_sequence_split(rho, a, band)));
  }
  return {"clip-split-form", "1e-12", worst, worst < 1e-12, "min form vs C_up/C_low form"};
}

/// d/d rho of the min form (binary advantages) vs the contrastive form.
inline CheckResult check_clip_gradient_consistency(std::uint64_t seed, std::size_t groups = 300) {
  SeedStream rng(seed);
  const ClipBand band = ClipBand::symmetric(0.2);
  double worst = 0.0;
  std::vector<int> r;
  std::vector<double> rho;
  for (std::size_t i = 0; i < groups; ++i) {
    detail::random_binary_group(rng, std::size_t{2} << rng.below(3), r, rho);
    for (double& x : rho)
      if (std::abs(x - band.upper()) < 1e-3 || std::abs(x - band.lower()) < 1e-3) x += 2e-3;
    const auto adv = binary_advantage_set(r).values;
    const auto g1 = central_differences(
        [&](const std::vector<double>& x) { return grpo_objective_sequence(x, adv, band); }, rho, 1e-6);
    const auto g2 = central_differences(
        [&](const std::vector<double>& x) { return contrastive_objective(r, x, band); }, rho, 1e-6);
    for (std::size_t k = 0; k < g1.size(); ++k) worst = std::max(worst, std::abs(g1[k] - g2[k]));
  }
  return {"clip-gradient-consistency", "1e-8", worst, worst < 1e-8,
          "ratio-gradients of both forms agree"};
}

inline CheckResult check_binary_advantages() {
  double worst = 0.0;
  for (int m = 1; m <= 7; ++m) {
    std::vector<int> r(8, 0);
    for (int i = 0; i < m; ++i) r[static_cast<std::size_t>(i)] = 1;
    const auto std_adv = standardized_advantages(r);
    const auto bin = binary_advantage_set(r);
    for (std::size_t i = 0; i < r.size(); ++i)
      worst = std::max(worst, std::abs(std_adv.values[i] - bin.values[i]));
    const double p = m / 8.0;
    const auto b = binary_advantages(p);
    const double sigma = group_sigma(p);
    worst = std::max({worst, std::abs(p * b.positive - sigma), std::abs((1 - p) * -b.negative - sigma)});
  }
  return {"binary-advantage-closed-form", "1e-10", worst, worst < 1e-10,
          "p-hat in {1/8..7/8}, G = 8"};
}

inline CheckResult check_optimal_baseline_grid(std::uint64_t seed, int instances = 5) {
  SeedStream rng(seed);
  const Environment env(TaskKind::mod_sum);
  double worst = 0.0;
  for (int i = 0; i < instances; ++i) {
    const PolicyParams ref = PolicyParams::gaussian(FeatureSpec{}, 0.7, rng);
    PolicyParams theta(ref.spec());
    theta.assign(perturbed(ref.weights(), 0.4, rng));
    const Query q = env.sample_query(rng);
    const EnumerationSpec es{env, q, 2, false};
    const double b = exact_optimal_baseline(theta, ref, es).optimal;
    double best_b = 0.0, best = 1e300;
    for (int k = 0; k <= 1000; ++k) {
      const double m = weighted_second_moment(theta, ref, es, k * 1e-3);
      if (m < best) best = m, best_b = k * 1e-3;
    }
    worst = std::max(worst, std::abs(b - best_b));
  }
  return {"optimal-baseline-grid", "1e-3", worst, worst <= 1e-3 + 1e-12,
          std::to_string(instances) + " enumerated instances, grid step 1e-3"};
}

inline CheckResult check_optimal_baseline_on_policy(std::uint64_t seed) {
  SeedStream rng(seed);
  const Environment env(TaskKind::mod_sum);
  const PolicyParams ref = PolicyParams::gaussian(FeatureSpec{}, 0.7, rng);
  const Query q = env.sample_query(rng);
  const EnumerationSpec es{env, q, 2, false};
  const auto b = exact_optimal_baseline(ref, ref, es);
  const double er = exact_expected_reward(ref, es).value;
  const double dev = std::abs(b.optimal - er);
  return {"optimal-baseline-on-policy", "1e-12", dev, dev < 1e-12, "theta = ref gives E[R]"};
}

inline CheckResult check_first_order_scaling(std::uint64_t seed, int instances = 20,
                                             double base_scale = 0.02) {
  SeedStream rng(seed);
  const Environment env(TaskKind::mod_sum);
  double lo = 1e300, hi = 0.0;
  for (int i = 0; i < instances; ++i) {
    const PolicyParams ref = PolicyParams::gaussian(FeatureSpec{}, 1.0, rng);
    ParamVector dir = perturbed(ParamVector(ref.size(), 0.0), 1.0, rng);
    const Query q = env.sample_query(rng);
    const EnumerationSpec es{env, q, 2, false};
    const auto at = [&](double s) {
      PolicyParams theta(ref.spec());
      ParamVector w(ref.weights().begin(), ref.weights().end());
      axpy(s, dir, w);
      theta.assign(std::move(w));
      return theta;
    };
    // Rescale the direction so that s is the RMS of delta under pi_ref
    // (to first order in s).
    const double probe = 1e-4;
    const auto outs = enumerate_outputs(ref, es);
    const PolicyParams tp = at(probe);
    double ms = 0.0;
    for (const auto& e : outs) {
      const double d = log_prob(tp, EvalContext::of(q), e.output) - e.log_prob;
      ms += std::exp(e.log_prob) * d * d;
    }
    for (double& x : dir) x *= probe / std::sqrt(ms);
    // The error's leading term is 2 Cov(R, delta^2); skip instances where it
    // nearly vanishes, since the quadratic rate is then unobservable.
    const PolicyParams tq = at(probe);
    double er = 0.0, e2 = 0.0, e4 = 0.0, er2 = 0.0;
    for (const auto& e : outs) {
      const double p = std::exp(e.log_prob);
      const double d = (log_prob(tq, EvalContext::of(q), e.output) - e.log_prob) / probe;
      const double r = env.reward(q, e.output);
      er += p * r, e2 += p * d * d, e4 += p * d * d * d * d, er2 += p * r * d * d;
    }
    const double corr = (er2 - er * e2) / std::sqrt(er * (1 - er) * (e4 - e2 * e2));
    if (!(std::abs(corr) >= 0.25)) {
      --i;
      continue;
    }
    const auto err = [&](double s) {
      const auto b = exact_optimal_baseline(at(s), ref, es);
      return std::abs(b.optimal - b.first_order);
    };
    const double ratio = err(base_scale) / err(base_scale / 2);
    lo = std::min(lo, ratio);
    hi = std::max(hi, ratio);
  }
  const bool ok = lo >= 3.0 && hi <= 5.0;
  return {"first-order-baseline-scaling", "halving ratio in [3, 5]", ok ? hi : (lo < 3.0 ? lo : hi), ok,
          "ratios in [" + detail::fmt(lo) + ", " + detail::fmt(hi) + "] over " +
              std::to_string(instances) + " instances, base scale " + detail::fmt(base_scale)};
}

inline CheckResult check_exact_gradient_fd(std::uint64_t seed) {
  SeedStream rng(seed);
  const Environment env(TaskKind::mod_sum);
  const PolicyParams theta = PolicyParams::gaussian(FeatureSpec{}, 0.5, rng);
  const Query q = env.sample_query(rng);
  const EnumerationSpec es{env, q, 2, false};
  const auto g = exact_policy_gradient(theta, es);
  const auto fd = central_differences(
      [&](const std::vector<double>& x) {
        PolicyParams p(theta.spec());
        p.assign(x);
        return exact_expected_reward(p, es).value;
      },
      ParamVector(theta.weights().begin(), theta.weights().end()), 1e-5);
  const double err = relative_error(g, fd);
  return {"exact-gradient-finite-difference", "1e-6", err, err < 1e-6, "mod_sum, full support"};
}

inline CheckResult check_exact_gradient_baseline_invariance(std::uint64_t seed) {
  SeedStream rng(seed);
  const Environment env(TaskKind::mod_sum);
  const PolicyParams theta = PolicyParams::gaussian(FeatureSpec{}, 0.5, rng);
  const Query q = env.sample_query(rng);
  const EnumerationSpec es{env, q, 2, false};
  const auto g0 = exact_policy_gradient(theta, es);
  double worst = 0.0;
  for (double b : {-1.0, 0.3, 2.5}) {
    const auto gb = exact_policy_gradient(theta, es, b);
    for (std::size_t k = 0; k < g0.size(); ++k) worst = std::max(worst, std::abs(g0[k] - gb[k]));
  }
  return {"exact-gradient-baseline-invariance", "1e-12", worst, worst < 1e-12, "b in {-1, 0.3, 2.5}"};
}

inline CheckResult check_bicc_decomposition(std::uint64_t seed, int instances = 50) {
  double worst = 0.0;
  for (int i = 0; i < instances; ++i) {
    const auto task = i % 2 == 0 ? TaskKind::mod_sum : TaskKind::copy_reverse;
    const auto in = make_gradient_instance(task, derive_seed(seed, static_cast<std::uint64_t>(i)));
    const auto bc = build_bilateral_contexts(in.group, ContextBudget{});
    const auto rb = bicc_conditioned_ratios(in.group, bc, in.params, PolicySnapshots::of(in.old, in.ref));
    for (std::size_t k = 0; k < rb.ratios.size(); ++k)
      worst = std::max(worst, std::abs(rb.conditioned[k] - rb.weights[k] * rb.ratios[k]));
  }
  return {"bicc-decomposition", "1e-10", worst, worst < 1e-10,
          std::to_string(instances) + " groups, rho^c = w rho"};
}

inline CheckResult check_bicc_zero_budget(std::uint64_t seed, int instances = 20) {
  int mismatches = 0;
  for (int i = 0; i < instances; ++i) {
    const auto task = i % 2 == 0 ? TaskKind::mod_sum : TaskKind::copy_reverse;
    const auto in = make_gradient_instance(task, derive_seed(seed, static_cast<std::uint64_t>(i)));
    const auto snaps = PolicySnapshots::of(in.old, in.ref);
    for (const auto& base : all_variant_configs()) {
      if (base.bicc) continue;
      VariantConfig cond = base;
      cond.bicc = true;
      cond.budget.ratio = 0.0;
      const auto a = assemble_group_gradient(in.group, base, in.params, snaps);
      const auto b = assemble_group_gradient(in.group, cond, in.params, snaps);
      if (a.value != b.value || a.gradient != b.gradient) ++mismatches;
    }
  }
  return {"bicc-zero-budget-reduction", "bit-identical", static_cast<double>(mismatches),
          mismatches == 0, std::to_string(instances) + " groups x 8 configs"};
}

inline CheckResult check_bicc_fallback(std::uint64_t seed, int instances = 20) {
  int failures = 0;
  for (int i = 0; i < instances; ++i) {
    const auto in = make_gradient_instance(TaskKind::copy_reverse,
                                           derive_seed(seed, static_cast<std::uint64_t>(i)), 6, false);
    const Environment env(in.group.query.task);
    std::vector<Output> outs = in.group.outputs;
    for (std::size_t k = 0; k < outs.size(); ++k) {
      if (i % 2 == 1) outs[k] = correct_output(env, in.group.query);
      else if (in.group.rewards[k] == 1) outs[k] = wrong_output(env, in.group.query);
    }
    const Group g = make_group(env, in.group.query, std::move(outs));
    VariantConfig plain, cond;
    cond.bicc = true;
    const auto snaps = PolicySnapshots::of(in.old, in.ref);
    const auto a = assemble_group_gradient(g, plain, in.params, snaps);
    const auto b = assemble_group_gradient(g, cond, in.params, snaps);
    if (!b.fallback || b.mode != ConditioningMode::standard_grpo || a.value != b.value ||
        a.gradient != b.gradient)
      ++failures;
  }
  return {"bicc-empty-partition-fallback", "flag set, standard path", static_cast<double>(failures),
          failures == 0, std::to_string(instances) + " one-sided groups"};
}

inline CheckResult check_objective_gradients(std::uint64_t seed, int per_config = 8) {
  double worst = 0.0;
  int n = 0;
  std::uint64_t attempt = 0;
  for (const auto& cfg : all_variant_configs()) {
    for (int i = 0; i < per_config; ++i) {
      while (true) {
        const auto task = attempt % 2 == 0 ? TaskKind::mod_sum : TaskKind::copy_reverse;
        const auto in = make_gradient_instance(task, derive_seed(seed, attempt++));
        const auto r = check_objective_gradient(in, cfg);
        if (r.margin < 1e-3) continue;
        worst = std::max(worst, r.relative_error);
        ++n;
        break;
      }
    }
  }
  return {"objective-gradient-finite-difference", "1e-4", worst, worst < 1e-4,
          std::to_string(n) + " instances over 16 variant configs"};
}

/// Pass@k against direct enumeration of all k-subsets.
inline CheckResult check_pass_at_k() {
  double worst = 0.0;
  for (int n = 1; n <= 10; ++n)
    for (int c = 0; c <= n; ++c)
      for (int k = 1; k <= n; ++k) {
        long hit = 0, total = 0;
        for (unsigned mask = 0; mask < (1u << n); ++mask) {
          if (std::popcount(mask) != k) continue;
          ++total;
          if ((mask & ((1u << c) - 1u)) != 0) ++hit;
        }
        worst = std::max(worst, std::abs(pass_at_k(n, c, k) - static_cast<double>(hit) / total));
      }
  return {"pass-at-k-enumeration", "1e-12", worst, worst < 1e-12, "all n <= 10, c <= n, k <= n"};
}

struct VarianceStudy {
  std::vector<VarianceSummary> summaries;  // none, group-mean, rcc, exact-optimal, population-optimal
  PairedVarianceTest group_mean_vs_rcc;
  PairedVarianceTest exact_vs_rcc;
  PairedVarianceTest none_vs_group_mean;
};

inline VarianceStudy run_variance_study(double strength, std::size_t trials, std::uint64_t seed) {
  const auto toy = CorrelatedToy::make(strength);
  const BaselineRule rules[] = {BaselineRule::none, BaselineRule::group_mean, BaselineRule::rcc,
                                BaselineRule::exact_optimal, BaselineRule::population_optimal};
  VarianceSpec vs{toy.env, toy.query, 8, trials, seed};
  VarianceStudy st;
  st.summaries = estimator_variance(toy.theta, toy.ref, vs, rules);
  st.group_mean_vs_rcc = paired_variance_test(st.summaries[1], st.summaries[2]);
  st.exact_vs_rcc = paired_variance_test(st.summaries[3], st.summaries[2]);
  st.none_vs_group_mean = paired_variance_test(st.summaries[0], st.summaries[1]);
  return st;
}

struct VerifyOptions {
  bool mutate_clip = false;  // swap in a corrupted clip rule for the contrastive check
  std::uint64_t seed = 2024;
  std::size_t variance_trials = 10000;
  double variance_strength = 0.6;
};

struct VerifyReport {
  std::vector<CheckResult> checks;
  VarianceStudy variance;

  bool all_passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.passed; });
  }

  void write(std::ostream& out) const {
    out << "grpolab verification report\n\n";
    for (const auto& c : checks) {
      char line[256];
      std::snprintf(line, sizeof line, "[%s] %-38s tol %-24s observed %-10.3g %s\n",
                    c.passed ? "PASS" : "FAIL", c.name.c_str(), c.tolerance.c_str(), c.observed,
                    c.detail.c_str());
      out << line;
    }
    out << "\ngradient-variance table (trace of per-coordinate variance, "
        << (variance.summaries.empty() ? 0 : variance.summaries[0].trial_sq_dev.size())
        << " paired trials)\n";
    for (const auto& s : variance.summaries) {
      char line[256];
      std::snprintf(line, sizeof line, "  %-20s trace %.6g   top coordinate %zu (%.3g)\n",
                    to_string(s.rule).c_str(), s.trace, s.top.empty() ? 0 : s.top[0].first,
                    s.top.empty() ? 0.0 : s.top[0].second);
      out << line;
    }
    const auto& t = variance.group_mean_vs_rcc;
    char line[256];
    std::snprintf(line, sizeof line, "  group-mean minus rcc: %.4g (se %.3g, z %.2f, p %.3g)\n",
                  t.difference, t.standard_error, t.z, t.p_one_sided);
    out << line;
    out << "\n" << (all_passed() ? "all checks passed" : "verification FAILED") << "\n";
  }
};

inline VerifyReport run_verification(const VerifyOptions& opt = {}) {
  VerifyReport rep;
  const std::uint64_t s = opt.seed;
  rep.checks.push_back(opt.mutate_clip ? check_contrastive_equivalence<WidenedClip>(derive_seed(s, 1))
                                       : check_contrastive_equivalence(derive_seed(s, 1)));
  rep.checks.push_back(check_pairwise_equivalence(derive_seed(s, 2)));
  rep.checks.push_back(check_clip_split(derive_seed(s, 3)));
  rep.checks.push_back(check_clip_gradient_consistency(derive_seed(s, 4)));
  rep.checks.push_back(check_binary_advantages());
  rep.checks.push_back(check_optimal_baseline_grid(derive_seed(s, 5)));
  rep.checks.push_back(check_optimal_baseline_on_policy(derive_seed(s, 6)));
  rep.checks.push_back(check_first_order_scaling(derive_seed(s, 7)));
  rep.checks.push_back(check_exact_gradient_fd(derive_seed(s, 8)));
  rep.checks.push_back(check_exact_gradient_baseline_invariance(derive_seed(s, 9)));
  rep.checks.push_back(check_bicc_decomposition(derive_seed(s, 10)));
  rep.checks.push_back(check_bicc_zero_budget(derive_seed(s, 11)));
  rep.checks.push_back(check_bicc_fallback(derive_seed(s, 12)));
  rep.checks.push_back(check_objective_gradients(derive_seed(s, 13)));
  rep.checks.push_back(check_pass_at_k());

  rep.variance = run_variance_study(opt.variance_strength, opt.variance_trials, derive_seed(s, 14));
  const auto& gm = rep.variance.group_mean_vs_rcc;
  rep.checks.push_back({"rcc-variance-reduction", "paired p < 0.01", gm.p_one_sided,
                        gm.difference > 0.0 && gm.p_one_sided < 0.01,
                        "rcc trace " + detail::fmt(rep.variance.summaries[2].trace) +
                            " vs group-mean " + detail::fmt(rep.variance.summaries[1].trace)});
  const auto& ex = rep.variance.exact_vs_rcc;
  rep.checks.push_back({"exact-optimal-variance", "<= rcc + 2 se", ex.difference,
                        ex.difference <= 2.0 * ex.standard_error,
                        "exact-optimal trace " + detail::fmt(rep.variance.summaries[3].trace)});
  const auto& nb = rep.variance.none_vs_group_mean;
  rep.checks.push_back({"group-mean-variance", "<= none + 2 se", -nb.difference,
                        -nb.difference <= 2.0 * nb.standard_error,
                        "none trace " + detail::fmt(rep.variance.summaries[0].trace)});
  return rep;
}

}  // namespace grpolab
