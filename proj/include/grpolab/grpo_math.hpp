#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "grpolab/error.hpp"

namespace grpolab {

enum class AdvantageScheme { standardized, binary_closed_form, rcc };

/// Per-output advantages together with the group statistics behind them.
struct AdvantageSet {
  std::vector<double> values;
  AdvantageScheme scheme = AdvantageScheme::standardized;
  double mean = 0.0;        // R-bar
  double stddev = 0.0;      // population sigma (standardized scheme)
  double p_hat = 0.0;       // share of reward-1 outputs
  double covariance = 0.0;  // Cov-hat(R, delta) (rcc scheme)
  double baseline = 0.0;    // value subtracted from each reward
  bool degenerate = false;  // sigma == 0: all advantages forced to zero
};

namespace detail {

inline std::vector<double> as_doubles(std::span<const int> bits) {
  return {bits.begin(), bits.end()};
}

inline double mean_of(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v;
  return s / static_cast<double>(x.size());
}

inline double share_of_ones(std::span<const double> r) {
  std::size_t ones = 0;
  for (double v : r)
    if (v == 1.0) ++ones;
  return static_cast<double>(ones) / static_cast<double>(r.size());
}

}  // namespace detail

/// A_i = (r_i - mu) / sigma with population sigma; zero-variance groups get
/// all-zero advantages and the degenerate flag.
inline AdvantageSet standardized_advantages(std::span<const double> rewards) {
  if (rewards.empty()) throw InputError("standardized advantages need at least one reward");
  AdvantageSet a;
  a.scheme = AdvantageScheme::standardized;
  a.mean = detail::mean_of(rewards);
  a.baseline = a.mean;
  a.p_hat = detail::share_of_ones(rewards);
  double ss = 0.0;
  for (double r : rewards) ss += (r - a.mean) * (r - a.mean);
  a.stddev = std::sqrt(ss / static_cast<double>(rewards.size()));
  a.values.assign(rewards.size(), 0.0);
  if (a.stddev == 0.0) {
    a.degenerate = true;
    return a;
  }
  for (std::size_t i = 0; i < rewards.size(); ++i) a.values[i] = (rewards[i] - a.mean) / a.stddev;
  return a;
}

inline AdvantageSet standardized_advantages(std::span<const int> rewards) {
  return standardized_advantages(detail::as_doubles(rewards));
}

struct BinaryAdvantages {
  double positive;  // A+ = sqrt((1 - p) / p)
  double negative;  // A- = -sqrt(p / (1 - p))
};

/// Closed-form advantages of a binary-reward group with success share p_hat.
inline BinaryAdvantages binary_advantages(double p_hat) {
  if (!(p_hat >= 0.0 && p_hat <= 1.0)) throw InputError("p_hat must lie in [0, 1]");
  if (p_hat == 0.0 || p_hat == 1.0)
    throw DegenerateGroupError("binary advantages are undefined for p_hat in {0, 1}; use the fallback");
  return {std::sqrt((1.0 - p_hat) / p_hat), -std::sqrt(p_hat / (1.0 - p_hat))};
}

/// sigma_q = sqrt(p (1 - p)): the group reward standard deviation.
inline double group_sigma(double p_hat) { return std::sqrt(p_hat * (1.0 - p_hat)); }

/// Binary closed form laid out per output.
inline AdvantageSet binary_advantage_set(std::span<const int> rewards) {
  if (rewards.empty()) throw InputError("binary advantages need at least one reward");
  const auto r = detail::as_doubles(rewards);
  AdvantageSet a;
  a.scheme = AdvantageScheme::binary_closed_form;
  a.p_hat = detail::share_of_ones(r);
  a.mean = a.p_hat;
  a.baseline = a.p_hat;
  a.stddev = group_sigma(a.p_hat);
  const auto b = binary_advantages(a.p_hat);
  for (int bit : rewards) a.values.push_back(bit == 1 ? b.positive : b.negative);
  return a;
}

/// Clip interval [1 - low, 1 + high]; symmetric GRPO uses low == high == eps.
struct ClipBand {
  double low = 0.2;
  double high = 0.2;

  static constexpr ClipBand symmetric(double eps) noexcept { return {eps, eps}; }

  constexpr double lower() const noexcept { return 1.0 - low; }
  constexpr double upper() const noexcept { return 1.0 + high; }

  void validate() const {
    if (!(low > 0.0 && low < 1.0 && high > 0.0 && high < 1.0))
      throw InputError("clip epsilons must lie in (0, 1)");
  }

  friend bool operator==(const ClipBand&, const ClipBand&) = default;
};

/// C_up(rho) = min(rho, 1 + eps)
inline double clip_up(double rho, double eps) noexcept { return std::min(rho, 1.0 + eps); }
/// C_low(rho) = max(rho, 1 - eps)
inline double clip_low(double rho, double eps) noexcept { return std::max(rho, 1.0 - eps); }

/// Default clip rule for the contrastive and pairwise forms. Any type with
/// the same static interface can be substituted (the verify suite swaps in a
/// corrupted rule to prove the equivalence check can fail).
struct StandardClip {
  static double up(double rho, const ClipBand& band) noexcept { return std::min(rho, band.upper()); }
  static double low(double rho, const ClipBand& band) noexcept { return std::max(rho, band.lower()); }
};

/// min(rho A, clip(rho, 1 - low, 1 + high) A)
inline double clipped_surrogate(double rho, double advantage, const ClipBand& band) noexcept {
  const double clipped = std::clamp(rho, band.lower(), band.upper());
  return std::min(rho * advantage, clipped * advantage);
}

/// True when the clipped branch of the min is selected, i.e. the ratio lies
/// strictly beyond the bound that matters for the advantage sign. A ratio
/// exactly on a bound counts as unclipped.
inline bool clip_active(double rho, double advantage, const ClipBand& band) noexcept {
  if (advantage > 0.0) return rho > band.upper();
  if (advantage < 0.0) return rho < band.lower();
  return false;
}

/// (1/G) sum_i min(rho_i A_i, clip(rho_i) A_i), one ratio per output.
inline double grpo_objective_sequence(std::span<const double> ratios,
                                      std::span<const double> advantages, const ClipBand& band) {
  if (ratios.size() != advantages.size() || ratios.empty())
    throw InputError("ratios and advantages must be aligned and non-empty");
  double s = 0.0;
  for (std::size_t i = 0; i < ratios.size(); ++i) s += clipped_surrogate(ratios[i], advantages[i], band);
  return s / static_cast<double>(ratios.size());
}

/// The same objective through the sign-split form A C_up(rho) / A C_low(rho).
inline double grpo_objective_sequence_split(std::span<const double> ratios,
                                            std::span<const double> advantages,
                                            const ClipBand& band) {
  if (ratios.size() != advantages.size() || ratios.empty())
    throw InputError("ratios and advantages must be aligned and non-empty");
  double s = 0.0;
  for (std::size_t i = 0; i < ratios.size(); ++i) {
    const double a = advantages[i];
    if (a > 0.0) s += a * StandardClip::up(ratios[i], band);
    else if (a < 0.0) s += a * StandardClip::low(ratios[i], band);
  }
  return s / static_cast<double>(ratios.size());
}

namespace detail {

struct PartitionCounts {
  std::size_t pos = 0;
  std::size_t neg = 0;
};

inline PartitionCounts partition_counts(std::span<const int> rewards, std::size_t n_ratios) {
  if (rewards.size() != n_ratios) throw InputError("rewards and ratios must be aligned");
  PartitionCounts c;
  for (int r : rewards) (r == 1 ? c.pos : c.neg)++;
  if (c.pos == 0 || c.neg == 0)
    throw DegenerateGroupError("contrastive form needs both partitions non-empty; use the fallback");
  return c;
}

}  // namespace detail

/// sigma_q * (mean C_up over correct - mean C_low over incorrect).
template <class Clip = StandardClip>
double contrastive_objective(std::span<const int> rewards, std::span<const double> ratios,
                             const ClipBand& band) {
  const auto c = detail::partition_counts(rewards, ratios.size());
  double up = 0.0, low = 0.0;
  for (std::size_t i = 0; i < ratios.size(); ++i) {
    if (rewards[i] == 1) up += Clip::up(ratios[i], band);
    else low += Clip::low(ratios[i], band);
  }
  const double p = static_cast<double>(c.pos) / static_cast<double>(rewards.size());
  return group_sigma(p) * (up / static_cast<double>(c.pos) - low / static_cast<double>(c.neg));
}

/// sum over all (correct i, incorrect j) of sigma_q / (G+ G-) (C_up(rho_i) - C_low(rho_j)).
template <class Clip = StandardClip>
double pairwise_objective(std::span<const int> rewards, std::span<const double> ratios,
                          const ClipBand& band) {
  const auto c = detail::partition_counts(rewards, ratios.size());
  const double p = static_cast<double>(c.pos) / static_cast<double>(rewards.size());
  const double pair_weight = group_sigma(p) / static_cast<double>(c.pos * c.neg);
  double s = 0.0;
  for (std::size_t i = 0; i < ratios.size(); ++i) {
    if (rewards[i] != 1) continue;
    const double up = Clip::up(ratios[i], band);
    for (std::size_t j = 0; j < ratios.size(); ++j)
      if (rewards[j] != 1) s += up - Clip::low(ratios[j], band);
  }
  return pair_weight * s;
}

/// b* = sum r_j w_j^2 / sum w_j^2
inline double optimal_baseline(std::span<const double> rewards, std::span<const double> weights) {
  if (rewards.empty() || rewards.size() != weights.size())
    throw InputError("rewards and weights must be aligned and non-empty");
  double num = 0.0, den = 0.0;
  for (std::size_t j = 0; j < rewards.size(); ++j) {
    if (!(weights[j] > 0.0)) throw InputError("importance weights must be positive");
    const double w2 = weights[j] * weights[j];
    num += rewards[j] * w2;
    den += w2;
  }
  return num / den;
}

/// Population covariance (1/G) sum (r_i - R-bar)(delta_i - delta-bar).
inline double covariance_estimate(std::span<const double> rewards, std::span<const double> deltas) {
  if (rewards.size() != deltas.size()) throw InputError("rewards and deltas must have equal length");
  if (rewards.size() < 2) throw InputError("covariance needs at least two samples");
  const double rbar = detail::mean_of(rewards);
  const double dbar = detail::mean_of(deltas);
  double s = 0.0;
  for (std::size_t i = 0; i < rewards.size(); ++i) s += (rewards[i] - rbar) * (deltas[i] - dbar);
  return s / static_cast<double>(rewards.size());
}

inline double covariance_estimate(std::span<const int> rewards, std::span<const double> deltas) {
  return covariance_estimate(detail::as_doubles(rewards), deltas);
}

/// A_i = r_i - R-bar - 2 Cov-hat(R, delta). No sigma division.
inline AdvantageSet rcc_advantages(std::span<const double> rewards, std::span<const double> deltas) {
  AdvantageSet a;
  a.scheme = AdvantageScheme::rcc;
  a.covariance = covariance_estimate(rewards, deltas);
  a.mean = detail::mean_of(rewards);
  a.p_hat = detail::share_of_ones(rewards);
  a.baseline = a.mean + 2.0 * a.covariance;
  a.values.reserve(rewards.size());
  for (double r : rewards) a.values.push_back((r - a.mean) - 2.0 * a.covariance);
  return a;
}

inline AdvantageSet rcc_advantages(std::span<const int> rewards, std::span<const double> deltas) {
  return rcc_advantages(detail::as_doubles(rewards), deltas);
}

struct BaselineApproximation {
  double exact;      // b* with w = exp(scale * delta)
  double approx;     // R-bar + 2 Cov-hat(R, scale * delta)
  double abs_error;
};

/// Compares the optimal baseline to its covariance-corrected first-order form
/// on a sample, with every delta multiplied by `scale`.
inline BaselineApproximation first_order_baseline_error(std::span<const double> rewards,
                                                        std::span<const double> deltas,
                                                        double scale) {
  if (!(scale > 0.0)) throw InputError("scale must be positive");
  if (rewards.size() != deltas.size()) throw InputError("rewards and deltas must have equal length");
  std::vector<double> scaled(deltas.begin(), deltas.end());
  for (double& d : scaled) d *= scale;
  std::vector<double> w(scaled.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::exp(scaled[i]);
  const double shift = detail::mean_of(scaled);
  for (double& d : scaled) d -= shift;
  BaselineApproximation out{};
  out.exact = optimal_baseline(rewards, w);
  out.approx = detail::mean_of(rewards) + 2.0 * covariance_estimate(rewards, scaled);
  out.abs_error = std::abs(out.exact - out.approx);
  return out;
}

namespace detail {

/// Exact C(n, k) for n <= 120.
inline unsigned __int128 binomial(unsigned n, unsigned k) {
  if (k > n) return 0;
  k = std::min(k, n - k);
  unsigned __int128 c = 1;
  for (unsigned i = 1; i <= k; ++i) c = c * (n - k + i) / i;
  return c;
}

}  // namespace detail

/// Unbiased Pass@k estimate 1 - C(n - c, k) / C(n, k).
inline double pass_at_k(int n, int c, int k) {
  if (n < 1 || n > 120) throw InputError("pass@k needs 1 <= n <= 120");
  if (c < 0 || c > n) throw InputError("pass@k needs 0 <= c <= n");
  if (k < 1 || k > n) throw InputError("pass@k needs 1 <= k <= n");
  const auto miss = detail::binomial(static_cast<unsigned>(n - c), static_cast<unsigned>(k));
  if (miss == 0) return 1.0;
  const auto all = detail::binomial(static_cast<unsigned>(n), static_cast<unsigned>(k));
  if (miss == all) return 0.0;
  return 1.0 - static_cast<double>(static_cast<long double>(miss) / static_cast<long double>(all));
}

}  // namespace grpolab
