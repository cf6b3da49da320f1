#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "grpolab/error.hpp"
#include "grpolab/grpo_math.hpp"
#include "grpolab/policy.hpp"
#include "grpolab/rollout.hpp"

namespace grpolab {

enum class Variant { grpo, dr_grpo, dapo, gspo };
enum class Granularity { token, sequence };

/// How the per-output log-prob shift delta is aggregated over tokens.
enum class DeltaMode { sequence_sum, token_mean };

inline std::string_view to_string(Variant v) noexcept {
  switch (v) {
    case Variant::grpo: return "grpo";
    case Variant::dr_grpo: return "dr-grpo";
    case Variant::dapo: return "dapo";
    case Variant::gspo: return "gspo";
  }
  return "grpo";
}

inline Variant parse_variant(std::string_view s) {
  if (s == "grpo") return Variant::grpo;
  if (s == "dr-grpo") return Variant::dr_grpo;
  if (s == "dapo") return Variant::dapo;
  if (s == "gspo") return Variant::gspo;
  throw InputError("unknown variant '" + std::string(s) + "'");
}

struct VariantConfig {
  Variant variant = Variant::grpo;
  double epsilon = 0.2;        // symmetric band for grpo, dr-grpo, gspo
  double epsilon_low = 0.2;    // dapo
  double epsilon_high = 0.28;  // dapo
  double beta = 0.01;          // dr-grpo KL coefficient
  bool bicc = false;
  bool rcc = false;
  Granularity granularity = Granularity::token;
  DeltaMode delta_mode = DeltaMode::sequence_sum;
  ContextBudget budget;

  ClipBand band() const noexcept {
    return variant == Variant::dapo ? ClipBand{epsilon_low, epsilon_high}
                                    : ClipBand::symmetric(epsilon);
  }

  /// GSPO always works on the length-normalized sequence ratio.
  Granularity effective_granularity() const noexcept {
    return variant == Variant::gspo ? Granularity::sequence : granularity;
  }

  void validate() const {
    band().validate();
    ClipBand::symmetric(epsilon).validate();
    if (!(beta >= 0.0)) throw InputError("beta must be non-negative");
    budget.validate();
  }

  friend bool operator==(const VariantConfig&, const VariantConfig&) = default;
};

/// pi_old (sampling / trust-region anchor) and pi_ref (frozen initial policy).
struct PolicySnapshots {
  PolicySnapshot old;
  PolicySnapshot ref;

  static PolicySnapshots of(const PolicyParams& old_params, const PolicyParams& ref_params) {
    return {PolicySnapshot(old_params, SnapshotRole::old), PolicySnapshot(ref_params, SnapshotRole::ref)};
  }
};

/// Per-output ratio diagnostics.
struct RatioBundle {
  std::vector<double> ratios;                     // pi_theta(o|q) / pi_old(o|q)
  std::vector<std::vector<double>> token_ratios;  // per scored step, unconditioned
  std::vector<double> conditioned;                // pi_theta(o|x^c) / pi_old(o|q)
  std::vector<double> weights;                    // pi_theta(o|x^c) / pi_theta(o|q)
  std::vector<double> deltas;                     // log pi_theta(o|x^c) - log pi_ref(o|q)
};

/// Everything treated as a constant under differentiation: the advantages,
/// and for GSPO the stop-gradient ratio sg(rho_i). An empty `sg_ratios`
/// means "evaluate sg at the current parameters".
struct FrozenTerms {
  std::vector<double> advantages;
  std::vector<double> sg_ratios;
};

struct ObjectiveReport {
  double value = 0.0;
  ParamVector gradient;
  double clip_fraction = 0.0;
  double covariance = 0.0;  // Cov-hat(R, delta) for this group
  double kl = 0.0;          // dr-grpo: mean per-token KL(pi_theta || pi_ref)
  bool fallback = false;    // an empty partition forced unconditioned ratios
  bool degenerate = false;  // all advantages are zero
  ConditioningMode mode = ConditioningMode::standard_grpo;
  std::vector<int> rewards;
  std::vector<double> advantages;
  std::vector<double> deltas;        // under the numerator context (Algorithm-1 delta)
  std::vector<double> plain_deltas;  // under the bare query
  std::vector<double> ratios;        // sequence-level ratio actually fed to the surrogate
};

namespace detail {

inline std::vector<EvalContext> query_contexts(const Group& g) {
  return std::vector<EvalContext>(g.size(), EvalContext::of(g.query));
}

inline void check_snapshots(const PolicySnapshots& s) {
  if (s.old.role() != SnapshotRole::old || s.ref.role() != SnapshotRole::ref)
    throw InputError("snapshot roles must be {old, ref}");
}

/// d KL(p || r) / d z_u = p_u (log p_u - log r_u - KL) for p = softmax(z).
inline double step_kl(const StepTrace& policy, const StepTrace& ref, std::vector<double>& dz) {
  const std::size_t v = policy.log_probs.size();
  double kl = 0.0;
  for (std::size_t u = 0; u < v; ++u)
    kl += std::exp(policy.log_probs[u]) * (policy.log_probs[u] - ref.log_probs[u]);
  dz.assign(v, 0.0);
  for (std::size_t u = 0; u < v; ++u)
    dz[u] = std::exp(policy.log_probs[u]) * (policy.log_probs[u] - ref.log_probs[u] - kl);
  return kl;
}

inline void accumulate_logit_grad(const FeatureSpec& spec, std::span<const int> features,
                                  std::span<const double> dz, double scale, std::span<double> grad) {
  const int vsize = spec.vocab_size();
  for (int f : features) {
    const std::size_t base = static_cast<std::size_t>(f) * vsize;
    for (int u = 0; u < vsize; ++u) grad[base + u] += scale * dz[u];
  }
}

}  // namespace detail

/// Clipped surrogate of the configured variant for one group, with its
/// analytic gradient. `numerator_contexts[i]` conditions pi_theta for output
/// i (empty span: the bare query for all). Denominators always condition on
/// the bare query: pi_old, or pi_ref for dr-grpo.
///
/// The gradient flows through the ratio on the unclipped branch only; a ratio
/// exactly on a bound takes the unclipped branch.
inline ObjectiveReport surrogate_objective(const Group& g,
                                           std::span<const EvalContext> numerator_contexts,
                                           const PolicyParams& params,
                                           const PolicySnapshots& snapshots,
                                           const VariantConfig& cfg, const FrozenTerms& frozen) {
  detail::check_snapshots(snapshots);
  cfg.validate();
  const std::size_t n_out = g.size();
  if (n_out == 0) throw InputError("empty group");
  if (frozen.advantages.size() != n_out) throw InputError("advantages must align with outputs");
  if (!frozen.sg_ratios.empty() && frozen.sg_ratios.size() != n_out)
    throw InputError("stop-gradient ratios must align with outputs");
  if (!numerator_contexts.empty() && numerator_contexts.size() != n_out)
    throw InputError("numerator contexts must align with outputs");

  const FeatureSpec& spec = params.spec();
  const ClipBand band = cfg.band();
  const Granularity gran = cfg.effective_granularity();
  const bool is_dr = cfg.variant == Variant::dr_grpo;
  const PolicyParams& denominator = is_dr ? snapshots.ref.params() : snapshots.old.params();
  const EvalContext qctx = EvalContext::of(g.query);
  const double inv_g = 1.0 / static_cast<double>(n_out);

  ObjectiveReport rep;
  rep.gradient.assign(params.size(), 0.0);
  rep.rewards = g.rewards;
  rep.advantages = frozen.advantages;
  rep.mode = fallback_check(g);
  rep.fallback = rep.mode == ConditioningMode::standard_grpo;
  std::size_t clip_events = 0, clip_slots = 0;
  double kl_sum = 0.0;
  std::size_t kl_terms = 0;
  std::vector<double> dz;

  for (std::size_t i = 0; i < n_out; ++i) {
    const Output& o = g.outputs[i];
    const EvalContext& nctx = numerator_contexts.empty() ? qctx : numerator_contexts[i];
    const auto num = trace_output(params, nctx, o);
    const auto den = trace_output(denominator, qctx, o);
    const std::size_t n = num.size();
    const double inv_n = 1.0 / static_cast<double>(n);
    const double a = frozen.advantages[i];

    if (gran == Granularity::token) {
      double seq_log_ratio = 0.0;
      for (std::size_t t = 0; t < n; ++t) {
        const double lr = num[t].log_prob() - den[t].log_prob();
        seq_log_ratio += lr;
        const double rho = std::exp(lr);
        rep.value += inv_g * inv_n * clipped_surrogate(rho, a, band);
        ++clip_slots;
        if (clip_active(rho, a, band)) {
          ++clip_events;
        } else if (a != 0.0) {
          accumulate_score(spec, num[t], inv_g * inv_n * a * rho, rep.gradient);
        }
      }
      rep.ratios.push_back(std::exp(seq_log_ratio));
    } else if (cfg.variant == Variant::gspo) {
      // rho~ = rho^(1/n) * sg(rho)^(1 - 1/n): value rho, gradient (1/n) d rho.
      double mean_lr = 0.0;
      for (std::size_t t = 0; t < n; ++t) mean_lr += num[t].log_prob() - den[t].log_prob();
      mean_lr *= inv_n;
      const double rho = std::exp(mean_lr);
      double composite = rho;
      double coeff = rho * inv_n * inv_n;  // d composite / d log pi_t
      if (!frozen.sg_ratios.empty()) {
        const double sg = frozen.sg_ratios[i];
        const double root = std::exp(mean_lr * inv_n);
        const double frozen_part = std::pow(sg, 1.0 - inv_n);
        composite = root * frozen_part;
        coeff = frozen_part * root * inv_n * inv_n;
      }
      rep.ratios.push_back(rho);
      rep.value += inv_g * clipped_surrogate(composite, a, band);
      ++clip_slots;
      if (clip_active(composite, a, band)) {
        ++clip_events;
      } else if (a != 0.0) {
        for (std::size_t t = 0; t < n; ++t)
          accumulate_score(spec, num[t], inv_g * a * coeff, rep.gradient);
      }
    } else {
      double lr = 0.0;
      for (std::size_t t = 0; t < n; ++t) lr += num[t].log_prob() - den[t].log_prob();
      const double rho = std::exp(lr);
      rep.ratios.push_back(rho);
      rep.value += inv_g * clipped_surrogate(rho, a, band);
      ++clip_slots;
      if (clip_active(rho, a, band)) {
        ++clip_events;
      } else if (a != 0.0) {
        for (std::size_t t = 0; t < n; ++t)
          accumulate_score(spec, num[t], inv_g * a * rho, rep.gradient);
      }
    }

    if (is_dr && cfg.beta > 0.0) {
      // KL(pi_theta(.|q) || pi_ref(.|q)) per step, unconditioned on both sides.
      const auto plain = &nctx == &qctx ? num : trace_output(params, qctx, o);
      const auto ref = trace_output(snapshots.ref.params(), qctx, o);
      for (std::size_t t = 0; t < n; ++t) {
        const double kl = detail::step_kl(plain[t], ref[t], dz);
        kl_sum += kl;
        ++kl_terms;
        rep.value -= cfg.beta * inv_g * inv_n * kl;
        detail::accumulate_logit_grad(spec, plain[t].features, dz, -cfg.beta * inv_g * inv_n,
                                      rep.gradient);
      }
    }
  }
  rep.clip_fraction =
      clip_slots == 0 ? 0.0 : static_cast<double>(clip_events) / static_cast<double>(clip_slots);
  rep.kl = kl_terms == 0 ? 0.0 : kl_sum / static_cast<double>(kl_terms);
  bool all_zero = true;
  for (double a : frozen.advantages)
    if (a != 0.0) all_zero = false;
  rep.degenerate = all_zero;
  return rep;
}

namespace detail {

inline ObjectiveReport run_variant(Variant v, Granularity gran, const Group& g,
                                   const PolicyParams& params, const PolicySnapshots& snaps,
                                   VariantConfig cfg, std::span<const double> advantages,
                                   std::span<const EvalContext> contexts) {
  cfg.variant = v;
  cfg.granularity = gran;
  FrozenTerms frozen{{advantages.begin(), advantages.end()}, {}};
  return surrogate_objective(g, contexts, params, snaps, cfg, frozen);
}

}  // namespace detail

/// GRPO token-level objective (1/G) sum_i (1/T_i) sum_t L^CLIP_{i,t}.
inline ObjectiveReport token_level_objective(const Group& g, const PolicyParams& params,
                                             const PolicySnapshots& snaps, const VariantConfig& cfg,
                                             std::span<const double> advantages,
                                             std::span<const EvalContext> contexts = {}) {
  return detail::run_variant(Variant::grpo, Granularity::token, g, params, snaps, cfg, advantages,
                             contexts);
}

/// GRPO with one ratio per output.
inline ObjectiveReport sequence_level_objective(const Group& g, const PolicyParams& params,
                                                const PolicySnapshots& snaps,
                                                const VariantConfig& cfg,
                                                std::span<const double> advantages,
                                                std::span<const EvalContext> contexts = {}) {
  return detail::run_variant(Variant::grpo, Granularity::sequence, g, params, snaps, cfg,
                             advantages, contexts);
}

/// Ratio against pi_ref minus beta times the exact per-token KL to pi_ref.
inline ObjectiveReport dr_grpo_objective(const Group& g, const PolicyParams& params,
                                         const PolicySnapshots& snaps, const VariantConfig& cfg,
                                         std::span<const double> advantages,
                                         std::span<const EvalContext> contexts = {}) {
  return detail::run_variant(Variant::dr_grpo, cfg.granularity, g, params, snaps, cfg, advantages,
                             contexts);
}

/// GRPO with the asymmetric band [1 - eps_low, 1 + eps_high].
inline ObjectiveReport dapo_objective(const Group& g, const PolicyParams& params,
                                      const PolicySnapshots& snaps, const VariantConfig& cfg,
                                      std::span<const double> advantages,
                                      std::span<const EvalContext> contexts = {}) {
  return detail::run_variant(Variant::dapo, cfg.granularity, g, params, snaps, cfg, advantages,
                             contexts);
}

/// Geometric-mean sequence ratio with the stop-gradient split.
inline ObjectiveReport gspo_objective(const Group& g, const PolicyParams& params,
                                      const PolicySnapshots& snaps, const VariantConfig& cfg,
                                      std::span<const double> advantages,
                                      std::span<const EvalContext> contexts = {}) {
  return detail::run_variant(Variant::gspo, Granularity::sequence, g, params, snaps, cfg,
                             advantages, contexts);
}

/// Per-output contexts for the ratio numerator: x+ for correct outputs and
/// x- for incorrect ones.
inline std::vector<EvalContext> numerator_contexts(const Group& g, const BilateralContext& bc) {
  std::vector<EvalContext> ctx;
  ctx.reserve(g.size());
  for (int r : g.rewards) ctx.push_back(bc.for_reward(r));
  return ctx;
}

/// Conditioned ratios rho^c_i = pi_theta(o_i|x^c) / pi_old(o_i|q), the
/// unconditioned rho_i and the conditioning weight w_i = rho^c_i / rho_i.
inline RatioBundle bicc_conditioned_ratios(const Group& g, const BilateralContext& bc,
                                           const PolicyParams& params,
                                           const PolicySnapshots& snaps) {
  detail::check_snapshots(snaps);
  if (fallback_check(g) != ConditioningMode::bilateral)
    throw InputError("conditioned ratios need both partitions non-empty");
  const EvalContext qctx = EvalContext::of(g.query);
  RatioBundle rb;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const Output& o = g.outputs[i];
    const auto plain = trace_output(params, qctx, o);
    const auto cond = trace_output(params, bc.for_reward(g.rewards[i]), o);
    const auto old = trace_output(snaps.old.params(), qctx, o);
    const double lp_plain = sum_log_prob(plain);
    const double lp_cond = sum_log_prob(cond);
    const double lp_old = sum_log_prob(old);
    const double lp_ref = log_prob(snaps.ref.params(), qctx, o);
    std::vector<double> tok;
    for (std::size_t t = 0; t < plain.size(); ++t)
      tok.push_back(std::exp(plain[t].log_prob() - old[t].log_prob()));
    rb.token_ratios.push_back(std::move(tok));
    rb.ratios.push_back(std::exp(lp_plain - lp_old));
    rb.conditioned.push_back(std::exp(lp_cond - lp_old));
    rb.weights.push_back(std::exp(lp_cond - lp_plain));
    rb.deltas.push_back(lp_cond - lp_ref);
  }
  return rb;
}

/// The per-group pipeline: fallback check, bilateral contexts, delta,
/// advantage selection (RCC or standardized), and the variant surrogate.
/// Never throws on degenerate groups.
inline ObjectiveReport assemble_group_gradient(const Group& g, const VariantConfig& cfg,
                                               const PolicyParams& params,
                                               const PolicySnapshots& snaps) {
  detail::check_snapshots(snaps);
  cfg.validate();
  const ConditioningMode mode = fallback_check(g);
  const EvalContext qctx = EvalContext::of(g.query);

  std::vector<EvalContext> contexts;
  if (cfg.bicc && mode == ConditioningMode::bilateral)
    contexts = numerator_contexts(g, build_bilateral_contexts(g, cfg.budget, params.spec().vocab));

  std::vector<double> deltas, plain_deltas;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const Output& o = g.outputs[i];
    const auto ref_steps = trace_output(snaps.ref.params(), qctx, o);
    const double lp_ref = sum_log_prob(ref_steps);
    const double lp_plain = log_prob(params, qctx, o);
    const double lp_num = contexts.empty() ? lp_plain : log_prob(params, contexts[i], o);
    const double norm =
        cfg.delta_mode == DeltaMode::token_mean ? static_cast<double>(ref_steps.size()) : 1.0;
    deltas.push_back((lp_num - lp_ref) / norm);
    plain_deltas.push_back((lp_plain - lp_ref) / norm);
  }

  const auto rewards = g.reward_values();
  const AdvantageSet adv =
      g.size() >= 2 && cfg.rcc ? rcc_advantages(rewards, deltas) : standardized_advantages(rewards);

  ObjectiveReport rep =
      surrogate_objective(g, contexts, params, snaps, cfg, FrozenTerms{adv.values, {}});
  rep.mode = mode;
  rep.fallback = mode == ConditioningMode::standard_grpo;
  rep.covariance = g.size() >= 2 ? covariance_estimate(rewards, deltas) : 0.0;
  rep.deltas = std::move(deltas);
  rep.plain_deltas = std::move(plain_deltas);
  return rep;
}

}  // namespace grpolab
