#pragma once

#include <cmath>
#include <cstddef>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "grpolab/error.hpp"
#include "grpolab/policy.hpp"
#include "grpolab/rng.hpp"
#include "grpolab/tokens.hpp"

namespace grpolab {

/// G outputs for one query with their rewards and the correct/incorrect split.
struct Group {
  Query query;
  std::vector<Output> outputs;
  std::vector<int> rewards;
  std::vector<std::size_t> positive;  // indices with reward 1, sampling order
  std::vector<std::size_t> negative;  // indices with reward 0, sampling order

  std::size_t size() const noexcept { return outputs.size(); }
  std::size_t num_positive() const noexcept { return positive.size(); }
  std::size_t num_negative() const noexcept { return negative.size(); }

  double p_hat() const noexcept {
    return size() == 0 ? 0.0 : static_cast<double>(num_positive()) / static_cast<double>(size());
  }

  std::vector<double> reward_values() const { return {rewards.begin(), rewards.end()}; }

  friend bool operator==(const Group&, const Group&) = default;
};

/// Scores `outputs` against `env` and builds the partitions.
inline Group make_group(const Environment& env, Query query, std::vector<Output> outputs) {
  Group g{std::move(query), std::move(outputs), {}, {}, {}};
  g.rewards.reserve(g.outputs.size());
  for (std::size_t i = 0; i < g.outputs.size(); ++i) {
    const int r = env.reward(g.query, g.outputs[i]);
    g.rewards.push_back(r);
    (r == 1 ? g.positive : g.negative).push_back(i);
  }
  return g;
}

/// Samples G outputs from the old snapshot conditioned on the query alone.
inline Group rollout_group(const Environment& env, const PolicySnapshot& old, const Query& q,
                           std::size_t group_size, SeedStream& rng) {
  if (group_size < 2) throw InputError("group size must be at least 2");
  q.validate(env.vocab());
  const EvalContext ctx = EvalContext::of(q);
  const std::size_t max_len = env.max_output_length(q);
  std::vector<Output> outputs;
  outputs.reserve(group_size);
  for (std::size_t i = 0; i < group_size; ++i)
    outputs.push_back(sample_output(old, ctx, max_len, rng));
  return make_group(env, q, std::move(outputs));
}

/// Token budget for conditioning samples: floor(ratio * max_context).
struct ContextBudget {
  double ratio = 0.4;
  int max_context = 16;

  std::size_t tokens() const noexcept {
    return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(max_context)));
  }

  void validate() const {
    if (!(ratio >= 0.0 && ratio <= 1.0)) throw InputError("context ratio must lie in [0, 1]");
    if (max_context < 1) throw InputError("max context must be positive");
  }

  friend bool operator==(const ContextBudget&, const ContextBudget&) = default;
};

/// x+ = [q; SEP; NEG o_j ...] for correct outputs and
/// x- = [q; SEP; POS o_i ...] for incorrect ones.
struct BilateralContext {
  EvalContext for_positive;
  EvalContext for_negative;
  std::size_t positive_tokens_used = 0;  // conditioning tokens in for_positive
  std::size_t negative_tokens_used = 0;

  const EvalContext& for_reward(int reward) const noexcept {
    return reward == 1 ? for_positive : for_negative;
  }
};

namespace detail {

inline std::size_t append_conditioning(TokenSeq& ctx, const Group& group,
                                       const std::vector<std::size_t>& source, Token marker,
                                       std::size_t budget) {
  std::size_t used = 0;
  for (std::size_t idx : source) {
    if (used == budget) break;
    ctx.push_back(marker);
    ++used;
    for (Token t : group.outputs[idx].tokens) {
      if (used == budget) break;
      ctx.push_back(t);
      ++used;
    }
  }
  return used;
}

}  // namespace detail

/// Appends opposite-partition samples in sampling order until the budget is
/// spent; the last sample may be cut mid-sequence (no truncation marker).
inline BilateralContext build_bilateral_contexts(const Group& group, const ContextBudget& budget,
                                                 const Vocab& vocab = Vocab::standard()) {
  budget.validate();
  if (group.num_positive() == 0 || group.num_negative() == 0)
    throw InputError("bilateral contexts need both partitions non-empty");
  BilateralContext bc;
  const std::size_t limit = budget.tokens();
  bc.for_positive.tokens = group.query.tokens;
  bc.for_positive.tokens.push_back(vocab.sep);
  bc.positive_tokens_used = detail::append_conditioning(bc.for_positive.tokens, group,
                                                        group.negative, vocab.neg_mark, limit);
  bc.for_negative.tokens = group.query.tokens;
  bc.for_negative.tokens.push_back(vocab.sep);
  bc.negative_tokens_used = detail::append_conditioning(bc.for_negative.tokens, group,
                                                        group.positive, vocab.pos_mark, limit);
  return bc;
}

enum class ConditioningMode { bilateral, standard_grpo };

/// Groups with an empty partition fall back to unconditioned ratios.
inline ConditioningMode fallback_check(const Group& group) noexcept {
  return group.num_positive() == 0 || group.num_negative() == 0 ? ConditioningMode::standard_grpo
                                                                 : ConditioningMode::bilateral;
}

// Group dump: one JSON object per line.

inline nlohmann::json group_to_json(const Group& g) {
  nlohmann::json outs = nlohmann::json::array();
  nlohmann::json forced = nlohmann::json::array();
  for (const auto& o : g.outputs) {
    outs.push_back(o.tokens);
    forced.push_back(o.forced_eos);
  }
  return {{"task", g.query.task == TaskKind::mod_sum ? "mod_sum" : "copy_reverse"},
          {"query", g.query.tokens},
          {"outputs", std::move(outs)},
          {"forced_eos", std::move(forced)},
          {"rewards", g.rewards},
          {"g_pos", g.num_positive()},
          {"g_neg", g.num_negative()}};
}

inline void write_group_record(std::ostream& out, const Group& g) {
  out << group_to_json(g).dump() << '\n';
  if (!out) throw IoError("failed to write group record");
}

/// Parses one record and re-derives rewards; throws if stored bits disagree.
inline Group read_group_record(const std::string& line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError(std::string("malformed group record: ") + e.what());
  }
  const Environment env = Environment::by_name(j.at("task").get<std::string>());
  Query q{j.at("query").get<TokenSeq>(), env.kind()};
  std::vector<Output> outs;
  const auto& forced = j.at("forced_eos");
  for (std::size_t i = 0; i < j.at("outputs").size(); ++i)
    outs.push_back(Output{j.at("outputs")[i].get<TokenSeq>(), forced.at(i).get<bool>()});
  Group g = make_group(env, std::move(q), std::move(outs));
  if (g.rewards != j.at("rewards").get<std::vector<int>>())
    throw IoError("stored rewards disagree with the environment");
  return g;
}

}  // namespace grpolab
