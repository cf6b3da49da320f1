#pragma once

#include <cstdint>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "grpolab/error.hpp"
#include "grpolab/objectives.hpp"
#include "grpolab/trainer.hpp"

namespace grpolab {

enum class Verbosity { quiet, step };

/// Everything a `train` invocation needs: the trainer config plus output
/// settings. Serialized as one JSON document with hyphenated keys.
struct RunConfig {
  TrainConfig train;
  std::string output_dir = "runs/default";
  Verbosity verbosity = Verbosity::quiet;
  int checkpoint_interval = 100;  // periodic checkpoints; the final one is always written

  void validate() const {
    train.validate();
    if (output_dir.empty()) throw InputError("output-dir must not be empty");
    if (checkpoint_interval < 1) throw InputError("checkpoint-interval must be at least 1");
  }

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

namespace detail {

using nlohmann::json;

/// Raw config text kept around so errors can point at a line.
struct ConfigSource {
  std::string name = "<config>";
  std::string text;

  /// Line of the last path component, searched after each parent key in turn.
  int line_of(const std::vector<std::string>& path) const {
    std::size_t pos = 0;
    for (const auto& key : path) {
      const auto found = text.find('"' + key + '"', pos);
      if (found == std::string::npos) return 0;
      pos = found + 1;
    }
    if (pos == 0) return 0;
    int line = 1;
    for (std::size_t i = 0; i + 1 < pos; ++i) line += text[i] == '\n';
    return line;
  }

  [[noreturn]] void fail(const std::vector<std::string>& path, const std::string& msg) const {
    std::ostringstream s;
    s << name;
    if (const int line = line_of(path); line > 0) s << ':' << line;
    s << ": ";
    for (std::size_t i = 0; i < path.size(); ++i) s << (i ? "." : "") << path[i];
    s << ": " << msg;
    throw ConfigError(s.str());
  }
};

class ObjectReader {
 public:
  ObjectReader(const json& j, std::vector<std::string> path, const ConfigSource& src)
      : j_(j), path_(std::move(path)), src_(src) {
    if (!j_.is_object()) src_.fail(path_, "expected an object");
  }

  template <class T>
  void read(const std::string& key, T& out) {
    known_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    auto p = path_;
    p.push_back(key);
    convert(*it, out, p);
  }

  template <class F>
  void read_with(const std::string& key, F&& f) {
    known_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    auto p = path_;
    p.push_back(key);
    f(*it, p);
  }

  void finish() const {
    for (const auto& [key, _] : j_.items()) {
      if (known_.count(key)) continue;
      auto p = path_;
      p.push_back(key);
      src_.fail(p, "unknown key");
    }
  }

  const ConfigSource& source() const { return src_; }

 private:
  void convert(const json& v, bool& out, const std::vector<std::string>& p) const {
    if (!v.is_boolean()) src_.fail(p, "expected true or false");
    out = v.get<bool>();
  }
  void convert(const json& v, int& out, const std::vector<std::string>& p) const {
    if (!v.is_number_integer()) src_.fail(p, "expected an integer");
    const auto x = v.get<long long>();
    if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max())
      src_.fail(p, "integer out of range");
    out = static_cast<int>(x);
  }
  void convert(const json& v, std::uint64_t& out, const std::vector<std::string>& p) const {
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0))
      src_.fail(p, "expected a non-negative integer");
    out = v.get<std::uint64_t>();
  }
  void convert(const json& v, double& out, const std::vector<std::string>& p) const {
    if (!v.is_number()) src_.fail(p, "expected a number");
    out = v.get<double>();
  }
  void convert(const json& v, std::string& out, const std::vector<std::string>& p) const {
    if (!v.is_string()) src_.fail(p, "expected a string");
    out = v.get<std::string>();
  }
  void convert(const json& v, std::vector<int>& out, const std::vector<std::string>& p) const {
    if (!v.is_array()) src_.fail(p, "expected an array of integers");
    out.clear();
    for (const auto& x : v) {
      if (!x.is_number_integer()) src_.fail(p, "expected an array of integers");
      out.push_back(x.get<int>());
    }
  }

  const json& j_;
  std::vector<std::string> path_;
  const ConfigSource& src_;
  std::set<std::string> known_;
};

template <class E>
struct EnumName {
  E value;
  const char* name;
};

template <class E, std::size_t N>
void read_enum(ObjectReader& r, const std::string& key, E& out, const EnumName<E> (&names)[N]) {
  r.read_with(key, [&](const json& v, const std::vector<std::string>& p) {
    std::string allowed;
    if (v.is_string()) {
      for (const auto& n : names)
        if (v.get<std::string>() == n.name) {
          out = n.value;
          return;
        }
    }
    for (const auto& n : names) allowed += (allowed.empty() ? "" : ", ") + std::string(n.name);
    r.source().fail(p, "expected one of: " + allowed);
  });
}

template <class E, std::size_t N>
const char* enum_name(E v, const EnumName<E> (&names)[N]) {
  for (const auto& n : names)
    if (n.value == v) return n.name;
  return names[0].name;
}

inline constexpr EnumName<Variant> kVariants[] = {{Variant::grpo, "grpo"},
                                                  {Variant::dr_grpo, "dr-grpo"},
                                                  {Variant::dapo, "dapo"},
                                                  {Variant::gspo, "gspo"}};
inline constexpr EnumName<Granularity> kGranularities[] = {{Granularity::token, "token"},
                                                           {Granularity::sequence, "sequence"}};
inline constexpr EnumName<DeltaMode> kDeltaModes[] = {{DeltaMode::sequence_sum, "sequence-sum"},
                                                      {DeltaMode::token_mean, "token-mean"}};
inline constexpr EnumName<InitScheme> kInits[] = {{InitScheme::zeros, "zeros"},
                                                  {InitScheme::gaussian, "gaussian"}};
inline constexpr EnumName<Verbosity> kVerbosity[] = {{Verbosity::quiet, "quiet"},
                                                     {Verbosity::step, "step"}};

inline void read_variant(const json& j, const std::vector<std::string>& p, const ConfigSource& src,
                         VariantConfig& v) {
  ObjectReader r(j, p, src);
  read_enum(r, "name", v.variant, kVariants);
  r.read("epsilon", v.epsilon);
  r.read("epsilon-low", v.epsilon_low);
  r.read("epsilon-high", v.epsilon_high);
  r.read("beta", v.beta);
  r.read("bicc-enabled", v.bicc);
  r.read("rcc-enabled", v.rcc);
  read_enum(r, "granularity", v.granularity, kGranularities);
  read_enum(r, "delta-mode", v.delta_mode, kDeltaModes);
  r.read("context-ratio", v.budget.ratio);
  r.read("max-context", v.budget.max_context);
  r.finish();
}

inline void read_policy(const json& j, const std::vector<std::string>& p, const ConfigSource& src,
                        PolicyConfig& c) {
  ObjectReader r(j, p, src);
  r.read("window", c.window);
  r.read("position-cap", c.position_cap);
  read_enum(r, "init", c.init, kInits);
  r.read("init-sigma", c.init_sigma);
  r.finish();
}

inline void read_optimizer(const json& j, const std::vector<std::string>& p,
                           const ConfigSource& src, OptimizerConfig& c) {
  ObjectReader r(j, p, src);
  r.read("beta1", c.beta1);
  r.read("beta2", c.beta2);
  r.read("eps", c.eps);
  r.read("weight-decay", c.weight_decay);
  r.read("grad-clip", c.grad_clip);
  r.finish();
}

inline void read_eval(const json& j, const std::vector<std::string>& p, const ConfigSource& src,
                      EvalConfig& c) {
  ObjectReader r(j, p, src);
  r.read("n", c.n);
  r.read("k", c.ks);
  r.read("queries", c.queries);
  r.finish();
}

}  // namespace detail

inline nlohmann::json to_json(const RunConfig& c) {
  using detail::enum_name;
  const TrainConfig& t = c.train;
  const VariantConfig& v = t.variant;
  return {
      {"env", t.env},
      {"seed", t.seed},
      {"steps", t.steps},
      {"group-size", t.group_size},
      {"queries-per-step", t.queries_per_step},
      {"dataset-size", t.dataset_size},
      {"learning-rate", t.learning_rate},
      {"snapshot-interval", t.snapshot_interval},
      {"eval-interval", t.eval_interval},
      {"cov-window", t.cov_window},
      {"workers", t.workers},
      {"variant",
       {{"name", enum_name(v.variant, detail::kVariants)},
        {"epsilon", v.epsilon},
        {"epsilon-low", v.epsilon_low},
        {"epsilon-high", v.epsilon_high},
        {"beta", v.beta},
        {"bicc-enabled", v.bicc},
        {"rcc-enabled", v.rcc},
        {"granularity", enum_name(v.granularity, detail::kGranularities)},
        {"delta-mode", enum_name(v.delta_mode, detail::kDeltaModes)},
        {"context-ratio", v.budget.ratio},
        {"max-context", v.budget.max_context}}},
      {"policy",
       {{"window", t.policy.window},
        {"position-cap", t.policy.position_cap},
        {"init", enum_name(t.policy.init, detail::kInits)},
        {"init-sigma", t.policy.init_sigma}}},
      {"optimizer",
       {{"beta1", t.optimizer.beta1},
        {"beta2", t.optimizer.beta2},
        {"eps", t.optimizer.eps},
        {"weight-decay", t.optimizer.weight_decay},
        {"grad-clip", t.optimizer.grad_clip}}},
      {"eval", {{"n", t.eval.n}, {"k", t.eval.ks}, {"queries", t.eval.queries}}},
      {"output-dir", c.output_dir},
      {"verbosity", enum_name(c.verbosity, detail::kVerbosity)},
      {"checkpoint-interval", c.checkpoint_interval},
  };
}

/// Strict parse: unknown keys and wrong types are errors; absent keys keep
/// their defaults. The result is validated.
inline RunConfig run_config_from_json(const nlohmann::json& j,
                                      const detail::ConfigSource& src = {}) {
  RunConfig c;
  TrainConfig& t = c.train;
  detail::ObjectReader r(j, {}, src);
  r.read("env", t.env);
  r.read("seed", t.seed);
  r.read("steps", t.steps);
  r.read("group-size", t.group_size);
  r.read("queries-per-step", t.queries_per_step);
  r.read("dataset-size", t.dataset_size);
  r.read("learning-rate", t.learning_rate);
  r.read("snapshot-interval", t.snapshot_interval);
  r.read("eval-interval", t.eval_interval);
  r.read("cov-window", t.cov_window);
  r.read("workers", t.workers);
  r.read_with("variant", [&](const auto& v, const auto& p) { detail::read_variant(v, p, src, t.variant); });
  r.read_with("policy", [&](const auto& v, const auto& p) { detail::read_policy(v, p, src, t.policy); });
  r.read_with("optimizer",
              [&](const auto& v, const auto& p) { detail::read_optimizer(v, p, src, t.optimizer); });
  r.read_with("eval", [&](const auto& v, const auto& p) { detail::read_eval(v, p, src, t.eval); });
  r.read("output-dir", c.output_dir);
  detail::read_enum(r, "verbosity", c.verbosity, detail::kVerbosity);
  r.read("checkpoint-interval", c.checkpoint_interval);
  r.finish();
  try {
    c.validate();
  } catch (const InputError& e) {
    throw ConfigError(src.name + ": " + e.what());
  }
  return c;
}

inline nlohmann::json parse_config_text(const std::string& text, const std::string& name) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(name + ": " + e.what());
  }
}

/// Parses `value` as JSON when possible (numbers, booleans, arrays) and as a
/// bare string otherwise.
inline nlohmann::json override_value(const std::string& value) {
  try {
    return nlohmann::json::parse(value);
  } catch (const nlohmann::json::parse_error&) {
    return value;
  }
}

/// Applies one `dotted.path=value` override to a config document. The path
/// must name a key of the schema.
inline void apply_override(nlohmann::json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override '" + assignment + "': expected key=value");
  const std::string path = assignment.substr(0, eq);
  const nlohmann::json schema = to_json(RunConfig{});
  const nlohmann::json* node = &schema;
  nlohmann::json* target = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
    if (!node->is_object() || !node->contains(key))
      throw ConfigError("override '" + assignment + "': unknown key '" + path + "'");
    node = &(*node)[key];
    if (dot == std::string::npos) {
      (*target)[key] = override_value(assignment.substr(eq + 1));
      return;
    }
    if (!target->contains(key)) (*target)[key] = nlohmann::json::object();
    target = &(*target)[key];
    start = dot + 1;
  }
}

/// True when `path` names a scalar or list entry of the schema.
inline bool is_config_key(const std::string& path) {
  nlohmann::json schema = to_json(RunConfig{});
  const nlohmann::json* node = &schema;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
    if (!node->is_object() || !node->contains(key)) return false;
    node = &(*node)[key];
    if (dot == std::string::npos) return !node->is_object();
    start = dot + 1;
  }
}

inline RunConfig parse_run_config(const std::string& text, const std::vector<std::string>& overrides,
                                  const std::string& name = "<config>") {
  nlohmann::json doc = parse_config_text(text, name);
  if (!doc.is_object()) throw ConfigError(name + ": expected a JSON object");
  for (const auto& o : overrides) apply_override(doc, o);
  return run_config_from_json(doc, detail::ConfigSource{name, text});
}

/// Reads and parses a config file. A missing or unreadable file is a
/// configuration error.
inline RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ": cannot read config file");
  std::ostringstream s;
  s << in.rdbuf();
  return parse_run_config(s.str(), overrides, path);
}

}  // namespace grpolab
