#include <cmath>
#include <numeric>
#include <sstream>

#include <gtest/gtest.h>

#include "grpolab/finite_difference.hpp"
#include "grpolab/policy.hpp"

using namespace grpolab;

namespace {

const Vocab V = Vocab::standard();

double softmax_sum(const std::vector<double>& z) {
  const auto lp = detail::log_softmax(z);
  double s = 0.0;
  for (double x : lp) s += std::exp(x);
  return s;
}

Output random_output(SeedStream& rng, std::size_t max_len) {
  Output o;
  const std::size_t len = 1 + rng.below(max_len);
  for (std::size_t i = 0; i + 1 < len; ++i) {
    Token t = static_cast<Token>(rng.below(15));
    while (t == V.eos) t = static_cast<Token>(rng.below(15));
    o.tokens.push_back(t);
  }
  o.tokens.push_back(V.eos);
  o.forced_eos = len >= 2 && rng.below(2) == 1;
  return o;
}

EvalContext random_context(SeedStream& rng) {
  EvalContext c;
  const std::size_t k = 2 + rng.below(4);
  for (std::size_t i = 0; i < k; ++i) c.tokens.push_back(static_cast<Token>(rng.below(10)));
  if (rng.below(2)) {
    c.tokens.push_back(V.sep);
    const std::size_t extra = rng.below(12);
    for (std::size_t i = 0; i < extra; ++i) c.tokens.push_back(static_cast<Token>(rng.below(15)));
  }
  return c;
}

}  // namespace

TEST(Logits, ZeroWeightsAreUniform) {
  const PolicyParams p;
  const auto z = logits(p, EvalContext{{1, 2, 3}}, TokenSeq{4});
  ASSERT_EQ(z.size(), 15u);
  for (double x : z) EXPECT_EQ(x, 0.0);
}

TEST(Logits, RowShiftLeavesSoftmaxUnchanged) {
  SeedStream rng(3);
  PolicyParams p = PolicyParams::gaussian({}, 1.0, rng);
  const EvalContext ctx{{1, 2, 3}};
  const TokenSeq prefix{7};
  const auto before = logits(p, ctx, prefix);
  const int f = p.spec().bias();
  for (Token v = 0; v < 15; ++v) p.set_weight(f, v, p.weight(f, v) + 2.5);
  const auto after = logits(p, ctx, prefix);
  const auto lb = detail::log_softmax(before), la = detail::log_softmax(after);
  for (std::size_t v = 0; v < 15; ++v) {
    EXPECT_NEAR(after[v] - before[v], 2.5, 1e-12);
    EXPECT_NEAR(la[v], lb[v], 1e-12);
  }
}

TEST(Logits, ContextBeyondWindowIsInvisible) {
  FeatureSpec spec;
  spec.window = 4;
  SeedStream rng(11);
  const PolicyParams p = PolicyParams::gaussian(spec, 1.0, rng);
  const EvalContext a{{1, 2, 3, V.sep, 5, 6, 7, 8, 9, 1}};
  const EvalContext b{{1, 2, 3, V.sep, 0, 0, 7, 8, 9, 1}};
  const EvalContext c{{1, 2, 3, V.sep, 5, 6, 7, 8, 9, 2}};
  for (const TokenSeq& prefix : {TokenSeq{}, TokenSeq{4}, TokenSeq{4, 4, 4}}) {
    EXPECT_EQ(logits(p, a, prefix), logits(p, b, prefix));
    EXPECT_NE(logits(p, a, prefix), logits(p, c, prefix));
  }
}

TEST(Logits, RejectsUnknownTokensAndEosPrefix) {
  const PolicyParams p;
  EXPECT_THROW(logits(p, EvalContext{{1, 15}}, {}), InputError);
  EXPECT_THROW(logits(p, EvalContext{{1, 2}}, TokenSeq{-1}), InputError);
  EXPECT_THROW(logits(p, EvalContext{{1, 2}}, TokenSeq{V.eos}), InputError);
}

TEST(Logits, SoftmaxNormalizes) {
  SeedStream rng(17);
  const PolicyParams p = PolicyParams::gaussian({}, 3.0, rng);
  for (int n = 0; n < 100; ++n) {
    const auto ctx = random_context(rng);
    TokenSeq prefix;
    for (std::size_t i = 0; i < rng.below(4); ++i) prefix.push_back(static_cast<Token>(rng.below(10)));
    EXPECT_NEAR(softmax_sum(logits(p, ctx, prefix)), 1.0, 1e-12);
  }
}

TEST(LogProb, UniformPolicy) {
  const PolicyParams p;
  EXPECT_NEAR(log_prob(p, EvalContext{{1, 2, 3}}, Output{{5, V.eos}, false}), 2.0 * std::log(1.0 / 15.0),
              1e-12);
  EXPECT_NEAR(log_prob(p, EvalContext{{1, 2, 3}}, Output{{5, V.eos}, false}), -5.4161, 5e-5);
}

TEST(LogProb, ForcedEosStepIsNotScored) {
  const PolicyParams p;
  EXPECT_NEAR(log_prob(p, EvalContext{{1, 2, 3}}, Output{{5, V.eos}, true}), std::log(1.0 / 15.0), 1e-12);
}

TEST(LogProb, LengthTwoMassByEnumeration) {
  SeedStream rng(23);
  const PolicyParams p = PolicyParams::gaussian({}, 1.0, rng);
  const EvalContext ctx{{3, 1, 4}};
  double mass = 0.0, direct = 0.0;
  const auto first = detail::log_softmax(logits(p, ctx, {}));
  for (Token v = 0; v < 15; ++v) {
    if (v == V.eos) continue;
    mass += std::exp(log_prob(p, ctx, Output{{v, V.eos}, false}));
    direct += std::exp(first[v] + detail::log_softmax(logits(p, ctx, TokenSeq{v}))[V.eos]);
  }
  EXPECT_LE(mass, 1.0);
  EXPECT_NEAR(mass, direct, 1e-14);
  EXPECT_NEAR(std::exp(log_prob(PolicyParams{}, ctx, Output{{1, V.eos}, false})) * 14.0, 14.0 / 225.0,
              1e-15);
}

TEST(Snapshot, MatchesLiveAtCreationAndIsIsolated) {
  SeedStream rng(29);
  PolicyParams live = PolicyParams::gaussian({}, 0.5, rng);
  const PolicySnapshot snap(live, SnapshotRole::old);
  const EvalContext ctx{{2, 7}};
  const Output o{{7, 2, V.eos}, false};
  const double at_creation = log_prob(live, ctx, o);
  EXPECT_EQ(log_prob(snap.params(), ctx, o), at_creation);
  const auto v0 = live.version();
  live.set_weight(live.spec().bias(), 7, 3.0);
  EXPECT_GT(live.version(), v0);
  EXPECT_NE(log_prob(live, ctx, o), at_creation);
  EXPECT_EQ(log_prob(snap.params(), ctx, o), at_creation);
}

TEST(Params, RejectsNonFiniteAndOutOfRange) {
  PolicyParams p;
  EXPECT_THROW(p.set_weight(0, 0, std::nan("")), InputError);
  EXPECT_THROW(p.set_weight(0, 15, 1.0), InputError);
  EXPECT_THROW(p.set_weight(p.spec().num_features(), 0, 1.0), InputError);
  EXPECT_THROW(p.assign(ParamVector(3, 0.0)), InputError);
}

TEST(LogProbGrad, SingleBiasFeatureScore) {
  // Window 0 and an empty query leave bias, previous-BOS and position active;
  // the score on the bias row is the softmax score function.
  FeatureSpec spec;
  spec.window = 0;
  SeedStream rng(31);
  const PolicyParams p = PolicyParams::gaussian(spec, 1.0, rng);
  const EvalContext ctx{{V.sep}};
  const Output o{{6, V.eos}, true};
  const auto g = log_prob_grad(p, ctx, o);
  const auto lp = detail::log_softmax(logits(p, ctx, {}));
  EXPECT_NEAR(g[p.index(spec.bias(), 6)], 1.0 - std::exp(lp[6]), 1e-14);
  EXPECT_NEAR(g[p.index(spec.bias(), 2)], -std::exp(lp[2]), 1e-14);
}

TEST(LogProbGrad, RowsSumToZero) {
  SeedStream rng(37);
  const PolicyParams p = PolicyParams::gaussian({}, 1.0, rng);
  for (int n = 0; n < 20; ++n) {
    const auto g = log_prob_grad(p, random_context(rng), random_output(rng, 5));
    for (int f = 0; f < p.spec().num_features(); ++f) {
      double s = 0.0;
      for (Token v = 0; v < 15; ++v) s += g[p.index(f, v)];
      EXPECT_NEAR(s, 0.0, 1e-12);
    }
  }
}

TEST(LogProbGrad, MatchesCentralDifferences) {
  SeedStream rng(41);
  double worst = 0.0;
  for (int n = 0; n < 100; ++n) {
    const PolicyParams p = PolicyParams::gaussian({}, 0.8, rng);
    const auto ctx = random_context(rng);
    const auto o = random_output(rng, 5);
    const auto f = [&](const std::vector<double>& x) {
      PolicyParams q(p.spec());
      q.assign(x);
      return log_prob(q, ctx, o);
    };
    const ParamVector w(p.weights().begin(), p.weights().end());
    const auto analytic = log_prob_grad(p, ctx, o);
    std::vector<std::size_t> coords;
    for (std::size_t k = 0; k < analytic.size(); ++k)
      if (analytic[k] != 0.0) coords.push_back(k);
    for (int extra = 0; extra < 20; ++extra) coords.push_back(rng.below(analytic.size()));
    const auto fd = central_differences(f, w, 1e-5, coords);
    std::vector<double> a, b;
    for (std::size_t k : coords) {
      a.push_back(analytic[k]);
      b.push_back(fd[k]);
    }
    worst = std::max(worst, relative_error(a, b));
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(Sampling, SameSeedSameOutput) {
  SeedStream init(43);
  const PolicyParams p = PolicyParams::gaussian({}, 1.0, init);
  const PolicySnapshot snap(p, SnapshotRole::old);
  SeedStream a(5), b(5);
  for (int n = 0; n < 20; ++n)
    EXPECT_EQ(sample_output(snap, EvalContext{{1, 2, 3}}, 4, a), sample_output(snap, EvalContext{{1, 2, 3}}, 4, b));
}

TEST(Sampling, RefSnapshotCannotSample) {
  const PolicySnapshot ref(PolicyParams{}, SnapshotRole::ref);
  SeedStream rng(1);
  EXPECT_THROW(sample_output(ref, EvalContext{{1}}, 2, rng), InputError);
}

TEST(Sampling, UniformFrequenciesWithinThreeSigma) {
  const PolicySnapshot snap(PolicyParams{}, SnapshotRole::old);
  SeedStream rng(47);
  const int n = 100000;
  std::vector<int> counts(15, 0);
  for (int i = 0; i < n; ++i) ++counts[sample_output(snap, EvalContext{{1, 2, 3}}, 2, rng).tokens[0]];
  const double p = 1.0 / 15.0;
  const double sd = std::sqrt(n * p * (1.0 - p));
  for (int c : counts) EXPECT_LT(std::abs(c - n * p), 3.0 * sd);
}

TEST(Sampling, DominantLogitIsAlmostAlwaysChosen) {
  PolicyParams p;
  p.set_weight(p.spec().bias(), 4, 20.0);
  const PolicySnapshot snap(p, SnapshotRole::old);
  SeedStream rng(53);
  int hits = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) hits += sample_output(snap, EvalContext{{1}}, 2, rng).tokens[0] == 4;
  EXPECT_GT(hits, 0.999 * n);
}

TEST(Sampling, ForcedEosAtLengthLimit) {
  PolicyParams p;
  p.set_weight(p.spec().bias(), V.eos, -50.0);
  SeedStream rng(59);
  const Output o = sample_output(p, EvalContext{{1, 2}}, 3, rng);
  EXPECT_EQ(o.tokens.size(), 3u);
  EXPECT_TRUE(o.forced_eos);
  EXPECT_EQ(o.tokens.back(), V.eos);
  EXPECT_EQ(o.scored_steps(), 2u);
}

TEST(Checkpoint, RoundTripsExactly) {
  FeatureSpec spec;
  spec.window = 9;
  SeedStream rng(61);
  const PolicyParams p = PolicyParams::gaussian(spec, 1.0, rng);
  std::stringstream s;
  save_params(p, s);
  const PolicyParams q = load_params(s);
  EXPECT_EQ(q.spec(), p.spec());
  ASSERT_EQ(q.size(), p.size());
  for (std::size_t k = 0; k < p.size(); ++k) EXPECT_EQ(q.weights()[k], p.weights()[k]);
}

TEST(Checkpoint, RejectsCorruptFiles) {
  std::stringstream s;
  save_params(PolicyParams{}, s);
  std::string text = s.str();

  std::string bad_hash = text;
  bad_hash.replace(bad_hash.find("hash=") + 5, 4, "ffff");
  std::istringstream a(bad_hash);
  EXPECT_THROW(load_params(a), IoError);

  std::istringstream b(text.substr(0, text.size() / 2));
  EXPECT_THROW(load_params(b), IoError);

  std::istringstream c("");
  EXPECT_THROW(load_params(c), IoError);

  std::istringstream d(text + "0 0 1.0\n");
  EXPECT_THROW(load_params(d), IoError);
}
