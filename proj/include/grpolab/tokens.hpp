#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "grpolab/error.hpp"
#include "grpolab/rng.hpp"

namespace grpolab {

using Token = std::int32_t;
using TokenSeq = std::vector<Token>;

/// Token alphabet: digits 0-9 followed by the reserved control tokens.
struct Vocab {
  int size = 15;
  Token sep = 10;       // separates the query from conditioning samples
  Token pos_mark = 11;  // prefixes a correct sample inside a context
  Token neg_mark = 12;  // prefixes an incorrect sample inside a context
  Token eos = 13;
  Token pad = 14;

  static Vocab standard() { return Vocab{}; }

  static constexpr bool is_digit(Token t) noexcept { return t >= 0 && t <= 9; }

  bool in_range(Token t) const noexcept { return t >= 0 && t < size; }

  bool is_reserved(Token t) const noexcept {
    return t == sep || t == pos_mark || t == neg_mark || t == eos || t == pad;
  }

  void validate() const {
    if (size < 12 || size > 64) throw InputError("vocab size must lie in [12, 64]");
    const Token reserved[] = {sep, pos_mark, neg_mark, eos, pad};
    for (std::size_t i = 0; i < 5; ++i) {
      if (!in_range(reserved[i]) || is_digit(reserved[i]))
        throw InputError("reserved token ids must be non-digit ids below the vocab size");
      for (std::size_t j = i + 1; j < 5; ++j)
        if (reserved[i] == reserved[j]) throw InputError("reserved token ids must be distinct");
    }
  }

  friend bool operator==(const Vocab&, const Vocab&) = default;
};

enum class TaskKind { mod_sum, copy_reverse };

struct Query {
  TokenSeq tokens;
  TaskKind task = TaskKind::mod_sum;

  void validate(const Vocab& vocab) const {
    if (tokens.empty()) throw InputError("query must contain at least one token");
    for (Token t : tokens)
      if (!vocab.in_range(t) || vocab.is_reserved(t))
        throw InputError("query contains a reserved or out-of-range token");
  }

  friend bool operator==(const Query&, const Query&) = default;
};

/// A generated answer. `forced_eos` marks an EOS appended at the length limit;
/// that step carries no probability and is skipped by log-prob accounting.
struct Output {
  TokenSeq tokens;
  bool forced_eos = false;

  /// Number of steps that contribute to log-probabilities and gradients.
  std::size_t scored_steps() const noexcept {
    return forced_eos ? tokens.size() - 1 : tokens.size();
  }

  void validate(const Vocab& vocab) const {
    if (tokens.empty() || tokens.back() != vocab.eos)
      throw InputError("output must be terminated by EOS");
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (!vocab.in_range(tokens[i])) throw InputError("output contains an out-of-range token");
      if (i + 1 < tokens.size() && tokens[i] == vocab.eos)
        throw InputError("output contains an interior EOS");
    }
    if (forced_eos && tokens.size() < 2)
      throw InputError("a forced EOS must follow at least one sampled token");
  }

  friend bool operator==(const Output&, const Output&) = default;
};

/// Reward 1 iff `o` is a single digit equal to the query digit sum mod 10.
/// Malformed outputs score 0.
inline int mod_sum_reward(const Query& q, const Output& o, const Vocab& vocab = Vocab::standard()) {
  if (o.tokens.size() != 2 || o.tokens[1] != vocab.eos || !Vocab::is_digit(o.tokens[0])) return 0;
  int sum = 0;
  for (Token t : q.tokens) sum += t;
  return o.tokens[0] == sum % 10 ? 1 : 0;
}

/// Reward 1 iff `o` is the query reversed followed by EOS.
inline int copy_reverse_reward(const Query& q, const Output& o,
                               const Vocab& vocab = Vocab::standard()) {
  if (o.tokens.size() != q.tokens.size() + 1 || o.tokens.back() != vocab.eos) return 0;
  const std::size_t k = q.tokens.size();
  for (std::size_t i = 0; i < k; ++i)
    if (o.tokens[i] != q.tokens[k - 1 - i]) return 0;
  return 1;
}

/// A toy task with a seeded query sampler and a verifiable binary reward.
class Environment {
 public:
  explicit Environment(TaskKind kind, Vocab vocab = Vocab::standard())
      : kind_(kind), vocab_(vocab) {
    vocab_.validate();
  }

  static Environment by_name(std::string_view name) {
    if (name == "mod_sum") return Environment(TaskKind::mod_sum);
    if (name == "copy_reverse") return Environment(TaskKind::copy_reverse);
    throw InputError("unknown environment '" + std::string(name) + "'");
  }

  TaskKind kind() const noexcept { return kind_; }
  const Vocab& vocab() const noexcept { return vocab_; }

  std::string_view name() const noexcept {
    return kind_ == TaskKind::mod_sum ? "mod_sum" : "copy_reverse";
  }

  /// Inclusive bounds on the number of query digits.
  std::size_t min_query_length() const noexcept { return kind_ == TaskKind::mod_sum ? 3 : 2; }
  std::size_t max_query_length() const noexcept { return kind_ == TaskKind::mod_sum ? 6 : 5; }

  Query sample_query(SeedStream& rng) const {
    const std::size_t span = max_query_length() - min_query_length() + 1;
    const std::size_t k = min_query_length() + rng.below(span);
    Query q{TokenSeq(k), kind_};
    for (Token& t : q.tokens) t = static_cast<Token>(rng.below(10));
    return q;
  }

  int reward(const Query& q, const Output& o) const {
    return kind_ == TaskKind::mod_sum ? mod_sum_reward(q, o, vocab_)
                                      : copy_reverse_reward(q, o, vocab_);
  }

  /// Maximum output length in tokens, EOS included.
  std::size_t max_output_length(const Query& q) const noexcept {
    return kind_ == TaskKind::mod_sum ? 2 : q.tokens.size() + 1;
  }

 private:
  TaskKind kind_;
  Vocab vocab_;
};

}  // namespace grpolab
