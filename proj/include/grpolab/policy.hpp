#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <memory>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "grpolab/error.hpp"
#include "grpolab/rng.hpp"
#include "grpolab/tokens.hpp"

namespace grpolab {

using ParamVector = std::vector<double>;

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double l2_norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

/// a += scale * b
inline void axpy(double scale, std::span<const double> b, std::span<double> a) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += scale * b[i];
}

/// Layout of the feature templates of the linear softmax policy.
///
/// At output step t the active features are:
///   - bias
///   - previous output token (a BOS id at t = 0)
///   - output position, capped at position_cap - 1
///   - aligned query token: query[k - 1 - t], i.e. reverse alignment
///   - bag-of-context presence features over the last `window` context
///     tokens, keyed by segment. Tokens before the first SEP inside the
///     window belong to the query segment, tokens after it to the
///     conditioning segment. SEP and PAD never fire a feature.
///
/// The "query" used for alignment is the full context prefix before its
/// first SEP, so a bilateral context and its bare query align identically.
struct FeatureSpec {
  Vocab vocab = Vocab::standard();
  int window = 16;
  int position_cap = 8;

  int vocab_size() const noexcept { return vocab.size; }

  int bias() const noexcept { return 0; }
  int previous(Token t) const noexcept { return 1 + t; }
  int previous_bos() const noexcept { return 1 + vocab.size; }
  int position(std::size_t t) const noexcept {
    return 2 + vocab.size + static_cast<int>(std::min<std::size_t>(t, position_cap - 1));
  }
  int aligned(Token t) const noexcept { return 2 + vocab.size + position_cap + t; }
  int query_bag(Token t) const noexcept { return 2 + 2 * vocab.size + position_cap + t; }
  int conditioning_bag(Token t) const noexcept { return 2 + 3 * vocab.size + position_cap + t; }
  int num_features() const noexcept { return 2 + 4 * vocab.size + position_cap; }

  std::size_t num_params() const noexcept {
    return static_cast<std::size_t>(num_features()) * static_cast<std::size_t>(vocab.size);
  }

  void validate() const {
    vocab.validate();
    if (window < 0) throw InputError("context window must be non-negative");
    if (position_cap < 1) throw InputError("position cap must be at least 1");
  }

  std::string describe() const {
    std::ostringstream s;
    s << "vocab=" << vocab.size << ";sep=" << vocab.sep << ";pos=" << vocab.pos_mark
      << ";neg=" << vocab.neg_mark << ";eos=" << vocab.eos << ";pad=" << vocab.pad
      << ";window=" << window << ";position-cap=" << position_cap << ";layout=1";
    return s.str();
  }

  /// FNV-1a of describe(); stamped into checkpoint headers.
  std::uint64_t hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : describe()) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    return h;
  }

  friend bool operator==(const FeatureSpec&, const FeatureSpec&) = default;
};

/// Conditioning prefix an output is evaluated under: the bare query, or the
/// query followed by SEP and opposite-partition samples.
struct EvalContext {
  TokenSeq tokens;

  static EvalContext of(const Query& q) { return EvalContext{q.tokens}; }

  friend bool operator==(const EvalContext&, const EvalContext&) = default;
};

/// Feature table theta: one logit weight per (feature, token).
class PolicyParams {
 public:
  explicit PolicyParams(FeatureSpec spec = {}) : spec_(std::move(spec)) {
    spec_.validate();
    weights_.assign(spec_.num_params(), 0.0);
  }

  /// Seeded N(0, sigma^2) initialization.
  static PolicyParams gaussian(FeatureSpec spec, double sigma, SeedStream& rng) {
    PolicyParams p(std::move(spec));
    for (double& w : p.weights_) w = sigma * rng.normal();
    return p;
  }

  const FeatureSpec& spec() const noexcept { return spec_; }
  std::size_t size() const noexcept { return weights_.size(); }
  std::span<const double> weights() const noexcept { return weights_; }
  std::uint64_t version() const noexcept { return version_; }

  std::size_t index(int feature, Token token) const noexcept {
    return static_cast<std::size_t>(feature) * spec_.vocab_size() + static_cast<std::size_t>(token);
  }

  double weight(int feature, Token token) const { return weights_.at(index(feature, token)); }

  void set_weight(int feature, Token token, double w) {
    if (!std::isfinite(w)) throw InputError("policy weights must be finite");
    if (feature < 0 || feature >= spec_.num_features() || !spec_.vocab.in_range(token))
      throw InputError("weight address out of range");
    weights_[index(feature, token)] = w;
    ++version_;
  }

  void assign(ParamVector w) {
    if (w.size() != weights_.size()) throw InputError("parameter vector size mismatch");
    for (double x : w)
      if (!std::isfinite(x)) throw InputError("policy weights must be finite");
    weights_ = std::move(w);
    ++version_;
  }

 private:
  FeatureSpec spec_;
  ParamVector weights_;
  std::uint64_t version_ = 0;
};

enum class SnapshotRole { old, ref };

/// Frozen copy of the parameters serving as pi_old or pi_ref.
class PolicySnapshot {
 public:
  PolicySnapshot(const PolicyParams& live, SnapshotRole role)
      : params_(std::make_shared<const PolicyParams>(live)), role_(role) {}

  const PolicyParams& params() const noexcept { return *params_; }
  SnapshotRole role() const noexcept { return role_; }

 private:
  std::shared_ptr<const PolicyParams> params_;
  SnapshotRole role_;
};

namespace detail {

inline void check_tokens(const Vocab& vocab, std::span<const Token> tokens) {
  for (Token t : tokens)
    if (!vocab.in_range(t)) throw InputError("unknown token id " + std::to_string(t));
}

/// Step-invariant part of the feature set for one context.
struct ContextFeatures {
  std::vector<int> bag;
  TokenSeq query;
};

inline ContextFeatures context_features(const FeatureSpec& spec, const EvalContext& ctx) {
  const Vocab& vocab = spec.vocab;
  check_tokens(vocab, ctx.tokens);
  ContextFeatures cf;
  auto sep = std::find(ctx.tokens.begin(), ctx.tokens.end(), vocab.sep);
  cf.query.assign(ctx.tokens.begin(), sep);

  const std::size_t n = ctx.tokens.size();
  const std::size_t w = std::min<std::size_t>(n, static_cast<std::size_t>(spec.window));
  std::vector<char> seen(static_cast<std::size_t>(spec.num_features()), 0);
  bool conditioning = false;
  for (std::size_t i = n - w; i < n; ++i) {
    const Token t = ctx.tokens[i];
    if (t == vocab.sep) {
      conditioning = true;
      continue;
    }
    if (t == vocab.pad) continue;
    const int f = conditioning ? spec.conditioning_bag(t) : spec.query_bag(t);
    if (!seen[f]) {
      seen[f] = 1;
      cf.bag.push_back(f);
    }
  }
  return cf;
}

inline std::vector<int> step_features(const FeatureSpec& spec, const ContextFeatures& cf,
                                      std::span<const Token> prefix) {
  const std::size_t t = prefix.size();
  std::vector<int> f;
  f.reserve(4 + cf.bag.size());
  f.push_back(spec.bias());
  f.push_back(t == 0 ? spec.previous_bos() : spec.previous(prefix.back()));
  f.push_back(spec.position(t));
  const std::size_t k = cf.query.size();
  if (t < k) f.push_back(spec.aligned(cf.query[k - 1 - t]));
  f.insert(f.end(), cf.bag.begin(), cf.bag.end());
  return f;
}

inline std::vector<double> logits_from(const PolicyParams& params, std::span<const int> features) {
  const int vsize = params.spec().vocab_size();
  std::vector<double> z(static_cast<std::size_t>(vsize), 0.0);
  const auto w = params.weights();
  for (int f : features) {
    const std::size_t base = static_cast<std::size_t>(f) * vsize;
    for (int v = 0; v < vsize; ++v) z[v] += w[base + v];
  }
  return z;
}

inline std::vector<double> log_softmax(std::vector<double> z) {
  const double m = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double x : z) s += std::exp(x - m);
  const double lse = m + std::log(s);
  for (double& x : z) x -= lse;
  return z;
}

}  // namespace detail

/// Logit vector for the next token after `prefix` under `ctx`.
inline std::vector<double> logits(const PolicyParams& params, const EvalContext& ctx,
                                  std::span<const Token> prefix) {
  const FeatureSpec& spec = params.spec();
  detail::check_tokens(spec.vocab, prefix);
  if (std::find(prefix.begin(), prefix.end(), spec.vocab.eos) != prefix.end())
    throw InputError("prefix must not contain EOS");
  const auto cf = detail::context_features(spec, ctx);
  const auto f = detail::step_features(spec, cf, prefix);
  return detail::logits_from(params, f);
}

/// Per-step evaluation of one output: the active features, the full
/// log-softmax row, and the emitted token.
struct StepTrace {
  std::vector<int> features;
  std::vector<double> log_probs;
  Token token = 0;

  double log_prob() const { return log_probs[static_cast<std::size_t>(token)]; }
};

/// Evaluates every scored step of `o` (a forced EOS is skipped).
inline std::vector<StepTrace> trace_output(const PolicyParams& params, const EvalContext& ctx,
                                           const Output& o) {
  const FeatureSpec& spec = params.spec();
  o.validate(spec.vocab);
  const auto cf = detail::context_features(spec, ctx);
  std::vector<StepTrace> steps;
  steps.reserve(o.scored_steps());
  for (std::size_t t = 0; t < o.scored_steps(); ++t) {
    StepTrace s;
    s.features = detail::step_features(spec, cf, std::span<const Token>(o.tokens).first(t));
    s.log_probs = detail::log_softmax(detail::logits_from(params, s.features));
    s.token = o.tokens[t];
    steps.push_back(std::move(s));
  }
  return steps;
}

inline double sum_log_prob(std::span<const StepTrace> steps) {
  double s = 0.0;
  for (const auto& st : steps) s += st.log_prob();
  return s;
}

/// log pi(o | ctx), summed over scored steps.
inline double log_prob(const PolicyParams& params, const EvalContext& ctx, const Output& o) {
  return sum_log_prob(trace_output(params, ctx, o));
}

/// grad += scale * d log pi(token | step) / d theta
inline void accumulate_score(const FeatureSpec& spec, const StepTrace& step, double scale,
                             std::span<double> grad) {
  const int vsize = spec.vocab_size();
  for (int f : step.features) {
    const std::size_t base = static_cast<std::size_t>(f) * vsize;
    grad[base + step.token] += scale;
    for (int v = 0; v < vsize; ++v) grad[base + v] -= scale * std::exp(step.log_probs[v]);
  }
}

inline ParamVector log_prob_grad(const PolicyParams& params, const EvalContext& ctx,
                                 const Output& o) {
  ParamVector g(params.size(), 0.0);
  for (const auto& st : trace_output(params, ctx, o)) accumulate_score(params.spec(), st, 1.0, g);
  return g;
}

/// Draws a token from a log-probability row.
inline Token sample_token(std::span<const double> log_probs, SeedStream& rng) {
  const double u = rng.uniform();
  double c = 0.0;
  Token last = 0;
  for (std::size_t v = 0; v < log_probs.size(); ++v) {
    const double p = std::exp(log_probs[v]);
    if (p <= 0.0) continue;
    last = static_cast<Token>(v);
    c += p;
    if (u < c) return last;
  }
  return last;
}

/// Ancestral sampling up to `max_len` tokens (EOS included). If the last
/// slot is reached without EOS, an EOS is forced and flagged.
inline Output sample_output(const PolicyParams& params, const EvalContext& ctx,
                            std::size_t max_len, SeedStream& rng) {
  if (max_len < 2) throw InputError("max output length must be at least 2");
  const FeatureSpec& spec = params.spec();
  const auto cf = detail::context_features(spec, ctx);
  Output o;
  for (std::size_t pos = 0; pos < max_len; ++pos) {
    if (pos + 1 == max_len) {
      o.tokens.push_back(spec.vocab.eos);
      o.forced_eos = true;
      break;
    }
    const auto f = detail::step_features(spec, cf, o.tokens);
    const auto lp = detail::log_softmax(detail::logits_from(params, f));
    const Token t = sample_token(lp, rng);
    o.tokens.push_back(t);
    if (t == spec.vocab.eos) break;
  }
  return o;
}

inline Output sample_output(const PolicySnapshot& snapshot, const EvalContext& ctx,
                            std::size_t max_len, SeedStream& rng) {
  if (snapshot.role() != SnapshotRole::old)
    throw InputError("groups are sampled from the old-policy snapshot");
  return sample_output(snapshot.params(), ctx, max_len, rng);
}

// Text checkpoint format:
//   grpolab-params 1 vocab=<V> window=<W> position-cap=<P> hash=<hex>
//   <feature> <token> <weight>      (one line per entry, %.17g)

inline void save_params(const PolicyParams& params, std::ostream& out) {
  const FeatureSpec& spec = params.spec();
  char hex[32];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(spec.hash()));
  out << "grpolab-params 1 vocab=" << spec.vocab.size << " window=" << spec.window
      << " position-cap=" << spec.position_cap << " hash=" << hex << '\n';
  char buf[64];
  for (int f = 0; f < spec.num_features(); ++f)
    for (Token v = 0; v < spec.vocab_size(); ++v) {
      std::snprintf(buf, sizeof buf, "%d %d %.17g\n", f, v, params.weight(f, v));
      out << buf;
    }
  if (!out) throw IoError("failed to write parameters");
}

inline PolicyParams load_params(std::istream& in) {
  std::string header;
  if (!std::getline(in, header)) throw IoError("empty parameter file");
  std::istringstream hs(header);
  std::string magic, version, vocab_kv, window_kv, cap_kv, hash_kv;
  hs >> magic >> version >> vocab_kv >> window_kv >> cap_kv >> hash_kv;
  auto value_of = [](const std::string& kv, const std::string& key) {
    if (kv.rfind(key + "=", 0) != 0) throw IoError("malformed parameter header field: " + kv);
    return kv.substr(key.size() + 1);
  };
  if (magic != "grpolab-params" || version != "1") throw IoError("not a grpolab parameter file");
  FeatureSpec spec;
  try {
    spec.vocab.size = std::stoi(value_of(vocab_kv, "vocab"));
    spec.window = std::stoi(value_of(window_kv, "window"));
    spec.position_cap = std::stoi(value_of(cap_kv, "position-cap"));
  } catch (const std::logic_error&) {
    throw IoError("malformed parameter header");
  }
  char hex[32];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(spec.hash()));
  if (value_of(hash_kv, "hash") != hex) throw IoError("feature-spec hash mismatch");

  PolicyParams params(spec);
  ParamVector w(params.size(), 0.0);
  std::vector<char> filled(params.size(), 0);
  int f = 0, v = 0;
  double x = 0.0;
  std::size_t count = 0;
  while (in >> f >> v >> x) {
    if (f < 0 || f >= spec.num_features() || !spec.vocab.in_range(v))
      throw IoError("parameter entry out of range");
    const std::size_t i = params.index(f, v);
    if (filled[i]) throw IoError("duplicate parameter entry");
    filled[i] = 1;
    w[i] = x;
    ++count;
  }
  if (!in.eof()) throw IoError("malformed parameter entry");
  if (count != params.size()) throw IoError("parameter file is incomplete");
  params.assign(std::move(w));
  return params;
}

}  // namespace grpolab
