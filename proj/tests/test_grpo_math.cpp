#include <algorithm>
#include <bit>
#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "grpolab/grpo_math.hpp"
#include "grpolab/rng.hpp"

using namespace grpolab;

namespace {

std::vector<int> bits_with(int g, int pos) {
  std::vector<int> r(g, 0);
  for (int i = 0; i < pos; ++i) r[i] = 1;
  return r;
}

// (r - mean) / population sd, written out independently of the library.
std::vector<double> reference_standardized(const std::vector<int>& r) {
  double m = 0.0;
  for (int x : r) m += x;
  m /= r.size();
  double v = 0.0;
  for (int x : r) v += (x - m) * (x - m);
  const double sd = std::sqrt(v / r.size());
  std::vector<double> a;
  for (int x : r) a.push_back((x - m) / sd);
  return a;
}

}  // namespace

TEST(StandardizedAdvantages, Examples) {
  const auto a = standardized_advantages(std::vector<int>{1, 1, 0, 0, 0, 0, 0, 0});
  EXPECT_NEAR(a.values[0], 1.732051, 1e-6);
  EXPECT_NEAR(a.values[7], -0.577350, 1e-6);
  EXPECT_FALSE(a.degenerate);

  const auto b = standardized_advantages(std::vector<int>{1, 0});
  EXPECT_DOUBLE_EQ(b.values[0], 1.0);
  EXPECT_DOUBLE_EQ(b.values[1], -1.0);

  const auto c = standardized_advantages(std::vector<int>{1, 1, 1});
  EXPECT_TRUE(c.degenerate);
  for (double x : c.values) EXPECT_EQ(x, 0.0);
}

TEST(StandardizedAdvantages, ZeroMeanAndReferenceAgreement) {
  SeedStream rng(1);
  for (int n = 0; n < 500; ++n) {
    const std::size_t g = 2 + rng.below(15);
    std::vector<int> r(g);
    for (int& x : r) x = static_cast<int>(rng.below(2));
    const auto a = standardized_advantages(r);
    if (a.degenerate) continue;
    double s = 0.0;
    for (double x : a.values) s += x;
    EXPECT_NEAR(s, 0.0, 1e-10);
    const auto ref = reference_standardized(r);
    for (std::size_t i = 0; i < g; ++i) EXPECT_NEAR(a.values[i], ref[i], 1e-12);
  }
}

TEST(BinaryAdvantages, Examples) {
  const auto h = binary_advantages(0.5);
  EXPECT_DOUBLE_EQ(h.positive, 1.0);
  EXPECT_DOUBLE_EQ(h.negative, -1.0);
  const auto q = binary_advantages(0.25);
  EXPECT_NEAR(q.positive, std::sqrt(3.0), 1e-15);
  EXPECT_NEAR(q.negative, -1.0 / std::sqrt(3.0), 1e-15);
  EXPECT_THROW(binary_advantages(0.0), DegenerateGroupError);
  EXPECT_THROW(binary_advantages(1.0), DegenerateGroupError);
}

TEST(BinaryAdvantages, MatchStandardizationForEveryProportion) {
  for (int g : {2, 3, 4, 7, 8, 16}) {
    for (int pos = 1; pos < g; ++pos) {
      const auto r = bits_with(g, pos);
      const auto std_a = standardized_advantages(r);
      const auto bin = binary_advantage_set(r);
      const auto ref = reference_standardized(r);
      for (int i = 0; i < g; ++i) {
        EXPECT_NEAR(bin.values[i], std_a.values[i], 1e-10);
        EXPECT_NEAR(bin.values[i], ref[i], 1e-10);
      }
      const double p = static_cast<double>(pos) / g;
      const auto ab = binary_advantages(p);
      EXPECT_GT(ab.positive, 0.0);
      EXPECT_LT(ab.negative, 0.0);
      EXPECT_NEAR(p * ab.positive, group_sigma(p), 1e-12);
      EXPECT_NEAR((1.0 - p) * -ab.negative, group_sigma(p), 1e-12);
    }
  }
}

TEST(Clip, Examples) {
  EXPECT_DOUBLE_EQ(clip_up(1.5, 0.2), 1.2);
  EXPECT_DOUBLE_EQ(clip_low(0.7, 0.2), 0.8);
  EXPECT_DOUBLE_EQ(clip_up(0.9, 0.2), 0.9);
  EXPECT_DOUBLE_EQ(clip_low(1.1, 0.2), 1.1);
}

TEST(SequenceObjective, Examples) {
  const ClipBand band = ClipBand::symmetric(0.2);
  const std::vector<double> one(4, 1.0);
  const auto a = standardized_advantages(std::vector<int>{1, 0, 0, 1});
  EXPECT_NEAR(grpo_objective_sequence(one, a.values, band), 0.0, 1e-15);
  const std::vector<double> adv{0.3, -0.1, 0.4, 0.2};
  EXPECT_NEAR(grpo_objective_sequence(one, adv, band), 0.2, 1e-15);
  EXPECT_DOUBLE_EQ(grpo_objective_sequence(std::vector<double>{1.5}, std::vector<double>{1.0}, band), 1.2);
}

TEST(SequenceObjective, MinFormEqualsSplitForm) {
  SeedStream rng(3);
  const ClipBand band = ClipBand::symmetric(0.2);
  for (int n = 0; n < 1000; ++n) {
    const std::size_t g = 1 + rng.below(8);
    std::vector<double> rho(g), adv(g);
    for (std::size_t i = 0; i < g; ++i) {
      rho[i] = 0.5 + 1.5 * rng.uniform();
      adv[i] = 4.0 * rng.uniform() - 2.0;
    }
    EXPECT_NEAR(grpo_objective_sequence(rho, adv, band), grpo_objective_sequence_split(rho, adv, band), 1e-12);
  }
}

TEST(ContrastiveObjective, Examples) {
  const ClipBand band = ClipBand::symmetric(0.2);
  EXPECT_NEAR(contrastive_objective(std::vector<int>{1, 0}, std::vector<double>{1.1, 0.9}, band), 0.1, 1e-15);
  EXPECT_NEAR(contrastive_objective(std::vector<int>{1, 0, 1, 0}, std::vector<double>{1.0, 1.1, 1.2, 1.1}, band),
              0.0, 1e-15);
  EXPECT_THROW(contrastive_objective(std::vector<int>{1, 1}, std::vector<double>{1.0, 1.0}, band),
               DegenerateGroupError);
}

TEST(ContrastiveObjective, EqualsSequenceFormAndPairwiseForm) {
  SeedStream rng(5);
  const ClipBand band = ClipBand::symmetric(0.2);
  for (int n = 0; n < 1000; ++n) {
    const std::size_t g = std::vector<std::size_t>{2, 4, 8}[rng.below(3)];
    std::vector<int> r;
    do {
      r.assign(g, 0);
      for (int& x : r) x = static_cast<int>(rng.below(2));
    } while (std::count(r.begin(), r.end(), 1) == 0 || std::count(r.begin(), r.end(), 0) == 0);
    std::vector<double> rho(g);
    for (double& x : rho) x = 0.5 + 1.5 * rng.uniform();
    const double seq = grpo_objective_sequence(rho, binary_advantage_set(r).values, band);
    const double con = contrastive_objective(r, rho, band);
    const double pair = pairwise_objective(r, rho, band);
    EXPECT_NEAR(seq, con, 1e-12);
    EXPECT_NEAR(con, pair, 1e-12);
  }
}

TEST(PairwiseObjective, Examples) {
  const ClipBand wide{0.9, 0.99};
  // correct ratios {1.0, 1.9} hold the mean 1.45 - not clipped by the wide band.
  const std::vector<int> r{1, 1, 0};
  const std::vector<double> rho{1.0, 1.9, 0.5};
  const double sigma = group_sigma(2.0 / 3.0);
  EXPECT_NEAR(pairwise_objective(r, rho, wide), sigma * (1.45 - 0.5), 1e-14);
  EXPECT_NEAR(pairwise_objective(std::vector<int>{1, 0}, std::vector<double>{1.0, 1.0}, wide), 0.0, 1e-15);
  // a single pair carries weight sigma_q
  EXPECT_NEAR(pairwise_objective(std::vector<int>{1, 0}, std::vector<double>{1.1, 1.0}, ClipBand{0.2, 0.2}),
              0.1 * group_sigma(0.5), 1e-12);
}

TEST(OptimalBaseline, Examples) {
  EXPECT_DOUBLE_EQ(optimal_baseline(std::vector<double>{1, 0, 0, 1}, std::vector<double>{1, 1, 1, 1}), 0.5);
  EXPECT_NEAR(optimal_baseline(std::vector<double>{1, 0}, std::vector<double>{2, 1}), 0.8, 1e-15);
  EXPECT_THROW(optimal_baseline(std::vector<double>{1}, std::vector<double>{0.0}), InputError);
}

TEST(OptimalBaseline, MinimizesWeightedSecondMomentOnGrid) {
  SeedStream rng(7);
  for (int n = 0; n < 50; ++n) {
    const std::size_t g = 2 + rng.below(10);
    std::vector<double> r(g), w(g);
    for (std::size_t i = 0; i < g; ++i) {
      r[i] = static_cast<double>(rng.below(2));
      w[i] = std::exp(rng.normal());
    }
    const auto moment = [&](double b) {
      double s = 0.0;
      for (std::size_t i = 0; i < g; ++i) s += (r[i] - b) * (r[i] - b) * w[i] * w[i];
      return s;
    };
    double best = -1.0, best_val = 1e300;
    for (int k = 0; k <= 3000; ++k) {
      const double b = -1.0 + 1e-3 * k;
      if (const double v = moment(b); v < best_val) {
        best_val = v;
        best = b;
      }
    }
    EXPECT_NEAR(optimal_baseline(r, w), best, 1e-3);
  }
}

TEST(Covariance, Examples) {
  const std::vector<int> r{1, 0, 1, 0};
  EXPECT_NEAR(covariance_estimate(r, std::vector<double>{0.2, -0.1, 0.1, 0.0}), 0.05, 1e-15);
  EXPECT_NEAR(covariance_estimate(r, std::vector<double>{0.4, 0.4, 0.4, 0.4}), 0.0, 1e-15);
  EXPECT_NEAR(covariance_estimate(r, std::vector<double>{1, 0, 1, 0}), 0.25, 1e-15);
  EXPECT_THROW(covariance_estimate(std::vector<int>{1}, std::vector<double>{0.0}), InputError);
}

TEST(RccAdvantages, Examples) {
  const std::vector<int> r{1, 0, 1, 0};
  const auto a = rcc_advantages(r, std::vector<double>{0.2, -0.1, 0.1, 0.0});
  const std::vector<double> want{0.4, -0.6, 0.4, -0.6};
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(a.values[i], want[i], 1e-15);
  EXPECT_NEAR(a.covariance, 0.05, 1e-15);
  EXPECT_NEAR(a.baseline, 0.6, 1e-15);
}

TEST(RccAdvantages, ZeroCovarianceGivesCenteredRewards) {
  const std::vector<int> r{1, 0, 0, 0, 1};
  const auto a = rcc_advantages(r, std::vector<double>(5, 0.3));
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(a.values[i], r[i] - 0.4);
}

TEST(RccAdvantages, PositiveCovarianceLowersEveryAdvantage) {
  SeedStream rng(9);
  for (int n = 0; n < 200; ++n) {
    std::vector<int> r(8);
    for (int& x : r) x = static_cast<int>(rng.below(2));
    std::vector<double> d(8);
    for (double& x : d) x = rng.normal();
    const auto a = rcc_advantages(r, d);
    double m = 0.0;
    for (int x : r) m += x;
    m /= 8.0;
    for (std::size_t i = 0; i < 8; ++i) {
      EXPECT_NEAR(a.values[i], r[i] - m - 2.0 * a.covariance, 1e-15);
      if (a.covariance > 0.0) {
        EXPECT_LT(a.values[i], r[i] - m);
      }
    }
  }
}

TEST(FirstOrderBaseline, OnPolicyIsExact) {
  const std::vector<double> r{1, 0, 0, 1, 1};
  const auto e = first_order_baseline_error(r, std::vector<double>(5, 0.0), 1.0);
  EXPECT_NEAR(e.exact, 0.6, 1e-15);
  EXPECT_NEAR(e.approx, 0.6, 1e-15);
  EXPECT_NEAR(e.abs_error, 0.0, 1e-15);
}

TEST(FirstOrderBaseline, SmallScaleErrorAndQuadraticShrinkage) {
  SeedStream rng(11);
  int checked = 0;
  for (int n = 0; n < 200 && checked < 30; ++n) {
    std::vector<double> r(8), d(8);
    for (double& x : r) x = static_cast<double>(rng.below(2));
    for (double& x : d) x = rng.normal();
    double m = 0.0;
    for (double x : d) m += x;
    for (double& x : d) x -= m / 8.0;
    const auto tiny = first_order_baseline_error(r, d, 1e-3);
    EXPECT_LT(tiny.abs_error, 1e-5);
    const auto big = first_order_baseline_error(r, d, 0.02);
    const auto half = first_order_baseline_error(r, d, 0.01);
    // The leading error term tracks Cov(r, d^2); when that nearly vanishes
    // the cubic term takes over and the rate is not quadratic.
    double mr = 0.0, m2 = 0.0;
    for (std::size_t i = 0; i < 8; ++i) mr += r[i] / 8.0, m2 += d[i] * d[i] / 8.0;
    double c = 0.0, vr = 0.0, v2 = 0.0;
    for (std::size_t i = 0; i < 8; ++i) {
      c += (r[i] - mr) * (d[i] * d[i] - m2);
      vr += (r[i] - mr) * (r[i] - mr);
      v2 += (d[i] * d[i] - m2) * (d[i] * d[i] - m2);
    }
    if (vr == 0.0 || std::abs(c) < 0.25 * std::sqrt(vr * v2)) continue;
    ++checked;
    const double ratio = big.abs_error / half.abs_error;
    EXPECT_GE(ratio, 3.0);
    EXPECT_LE(ratio, 5.0);
  }
  EXPECT_GT(checked, 10);
}

TEST(PassAtK, Examples) {
  EXPECT_NEAR(pass_at_k(4, 2, 2), 1.0 - 1.0 / 6.0, 1e-15);
  EXPECT_EQ(pass_at_k(10, 0, 3), 0.0);
  EXPECT_EQ(pass_at_k(10, 10, 3), 1.0);
  EXPECT_EQ(pass_at_k(6, 1, 6), 1.0);
  EXPECT_EQ(pass_at_k(6, 0, 6), 0.0);
  EXPECT_THROW(pass_at_k(4, 5, 1), InputError);
  EXPECT_THROW(pass_at_k(4, 2, 5), InputError);
  EXPECT_THROW(pass_at_k(121, 2, 5), InputError);
}

TEST(PassAtK, MatchesSubsetEnumerationAndIsMonotone) {
  for (int n = 1; n <= 10; ++n)
    for (int c = 0; c <= n; ++c) {
      double prev = -1.0;
      for (int k = 1; k <= n; ++k) {
        // first c samples correct; count k-subsets that contain one of them
        long hit = 0, total = 0;
        for (unsigned mask = 0; mask < (1u << n); ++mask) {
          if (std::popcount(mask) != k) continue;
          ++total;
          hit += (mask & ((1u << c) - 1u)) != 0;
        }
        const double v = pass_at_k(n, c, k);
        EXPECT_NEAR(v, static_cast<double>(hit) / total, 1e-12);
        EXPECT_GE(v, prev);
        prev = v;
      }
    }
}

TEST(PassAtK, LargeCountsStayAccurate) {
  // 1 - C(100, 50) / C(120, 50) computed as a telescoping product.
  double miss = 1.0;
  for (int i = 0; i < 50; ++i) miss *= static_cast<double>(100 - i) / (120 - i);
  EXPECT_NEAR(pass_at_k(120, 20, 50), 1.0 - miss, 1e-12);
}
