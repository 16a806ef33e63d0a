#include "survpfn/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#define TOML_EXCEPTIONS 1
#include "toml.hpp"

#include "survpfn/errors.hpp"
#include "survpfn/tabular.hpp"

extern char** environ;

namespace survpfn {

struct Config::Impl {
  toml::table root;
  std::string source;
};

namespace {

std::vector<std::string> split_key(const std::string& key) {
  std::vector<std::string> parts;
  std::string cur;
  for (char ch : key) {
    if (ch == '.') {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  parts.push_back(cur);
  return parts;
}

std::string where(const toml::node& n) {
  const auto& src = n.source();
  if (!src.begin) return {};
  return " (line " + std::to_string(src.begin.line) + ")";
}

}  // namespace

EnvList process_environment() {
  EnvList out;
  const std::string prefix = kEnvPrefix;
  for (char** e = environ; e && *e; ++e) {
    const std::string kv = *e;
    if (kv.rfind(prefix, 0) != 0) continue;
    const auto eq = kv.find('=');
    if (eq == std::string::npos) continue;
    out.emplace_back(kv.substr(0, eq), kv.substr(eq + 1));
  }
  std::sort(out.begin(), out.end());
  return out;
}

Config::Config() : impl_(std::make_shared<Impl>()) {}

Config Config::parse(const std::string& text, const std::string& source, const EnvList& env) {
  Config c;
  c.impl_->source = source;
  try {
    c.impl_->root = toml::parse(text, source);
  } catch (const toml::parse_error& e) {
    const auto& b = e.source().begin;
    throw ConfigError(source + ":" + std::to_string(b.line) + ":" + std::to_string(b.column) + ": " +
                      std::string(e.description()));
  }
  const std::string prefix = kEnvPrefix;
  for (const auto& [name, value] : env) {
    if (name.rfind(prefix, 0) != 0 || name.size() == prefix.size()) continue;
    std::string key;
    const std::string rest = name.substr(prefix.size());
    for (std::size_t i = 0; i < rest.size(); ++i) {
      if (rest[i] == '_' && i + 1 < rest.size() && rest[i + 1] == '_') {
        key.push_back('.');
        ++i;
      } else {
        key.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(rest[i]))));
      }
    }
    c.set(key, value);
  }
  return c;
}

Config Config::load(const std::string& path, const EnvList& env) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path, env);
}

void Config::set(const std::string& key, const std::string& value) {
  auto parts = split_key(key);
  toml::table* t = &impl_->root;
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    auto* node = t->get(parts[i]);
    if (!node) {
      t->insert(parts[i], toml::table{});
      node = t->get(parts[i]);
    }
    t = node->as_table();
    if (!t) throw ConfigError("override " + key + ": `" + parts[i] + "` is not a table");
  }
  toml::table parsed;
  try {
    parsed = toml::parse("v = " + value);
  } catch (const toml::parse_error&) {
    parsed.insert("v", value);
  }
  t->insert_or_assign(parts.back(), *parsed.get("v"));
}

namespace {

const toml::node* find(const toml::table& root, const std::string& key) {
  const toml::table* t = &root;
  auto parts = split_key(key);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const toml::node* n = t->get(parts[i]);
    if (!n) return nullptr;
    if (i + 1 == parts.size()) return n;
    t = n->as_table();
    if (!t) return nullptr;
  }
  return nullptr;
}

[[noreturn]] void type_error(const std::string& key, const toml::node& n, const char* want) {
  throw ConfigError("config key " + key + where(n) + ": expected " + want);
}

}  // namespace

bool Config::has(const std::string& key) const { return find(impl_->root, key) != nullptr; }

std::optional<bool> Config::get_bool(const std::string& key) const {
  const auto* n = find(impl_->root, key);
  if (!n) return std::nullopt;
  if (auto v = n->value<bool>(); v && n->is_boolean()) return *v;
  type_error(key, *n, "a boolean");
}

std::optional<std::int64_t> Config::get_int(const std::string& key) const {
  const auto* n = find(impl_->root, key);
  if (!n) return std::nullopt;
  if (n->is_integer()) return n->as_integer()->get();
  type_error(key, *n, "an integer");
}

std::optional<std::size_t> Config::get_size(const std::string& key) const {
  const auto v = get_int(key);
  if (!v) return std::nullopt;
  if (*v < 0) throw ConfigError("config key " + key + " must be nonnegative");
  return static_cast<std::size_t>(*v);
}

std::optional<double> Config::get_double(const std::string& key) const {
  const auto* n = find(impl_->root, key);
  if (!n) return std::nullopt;
  if (n->is_floating_point()) return n->as_floating_point()->get();
  if (n->is_integer()) return static_cast<double>(n->as_integer()->get());
  type_error(key, *n, "a number");
}

std::optional<std::string> Config::get_string(const std::string& key) const {
  const auto* n = find(impl_->root, key);
  if (!n) return std::nullopt;
  if (n->is_string()) return n->as_string()->get();
  type_error(key, *n, "a string");
}

std::optional<std::vector<double>> Config::get_doubles(const std::string& key) const {
  const auto* n = find(impl_->root, key);
  if (!n) return std::nullopt;
  const auto* arr = n->as_array();
  if (!arr) type_error(key, *n, "an array of numbers");
  std::vector<double> out;
  for (const auto& e : *arr) {
    if (e.is_floating_point()) out.push_back(e.as_floating_point()->get());
    else if (e.is_integer()) out.push_back(static_cast<double>(e.as_integer()->get()));
    else type_error(key, *n, "an array of numbers");
  }
  return out;
}

std::optional<std::vector<std::string>> Config::get_strings(const std::string& key) const {
  const auto* n = find(impl_->root, key);
  if (!n) return std::nullopt;
  const auto* arr = n->as_array();
  if (!arr) type_error(key, *n, "an array of strings");
  std::vector<std::string> out;
  for (const auto& e : *arr) {
    if (!e.is_string()) type_error(key, *n, "an array of strings");
    out.push_back(e.as_string()->get());
  }
  return out;
}

void Config::check_keys(const std::string& section, const std::vector<std::string>& allowed) const {
  const toml::table* t = &impl_->root;
  if (!section.empty()) {
    const auto* n = find(impl_->root, section);
    if (!n) return;
    t = n->as_table();
    if (!t) throw ConfigError("config: `" + section + "` must be a table");
  }
  for (const auto& [k, v] : *t) {
    const std::string name(k.str());
    if (std::find(allowed.begin(), allowed.end(), name) == allowed.end())
      throw ConfigError("config: unknown key " + (section.empty() ? name : section + "." + name) + where(v));
  }
}

std::string Config::to_toml() const {
  std::ostringstream os;
  os << impl_->root;
  return os.str();
}

namespace {

template <class T, class F>
void assign(std::optional<T> v, F&& f) {
  if (v) f(*v);
}

}  // namespace

PriorConfig prior_config_from(const Config& c, const std::string& s) {
  c.check_keys(s, {"preset", "family", "kitchen_sink_weights", "censoring_weights", "min_dim", "max_dim",
                   "min_t_max", "max_t_max", "min_rate", "max_rate", "min_knots", "max_knots",
                   "mixture_counts", "calibration_rows", "generator"});
  c.check_keys(s + ".generator", {"min_layers", "max_layers", "min_width", "max_width", "min_noise",
                                  "max_noise", "activations", "input_noise_std", "noise_width"});
  PriorConfig p;
  if (auto preset = c.get_string(s + ".preset")) {
    if (*preset == "simple_exponential") p = PriorConfig::simple_exponential();
    else if (*preset != "default") throw ConfigError("unknown prior preset: " + *preset);
  }
  try {
    assign(c.get_string(s + ".family"), [&](const std::string& v) { p.family = prior_family_from_string(v); });
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (auto w = c.get_doubles(s + ".kitchen_sink_weights")) {
    if (w->size() != 3) throw ConfigError(s + ".kitchen_sink_weights needs 3 entries");
    std::copy(w->begin(), w->end(), p.kitchen_sink_weights.begin());
  }
  if (auto w = c.get_doubles(s + ".censoring_weights")) {
    if (w->size() != 4) throw ConfigError(s + ".censoring_weights needs 4 entries");
    std::copy(w->begin(), w->end(), p.censoring_weights.begin());
  }
  assign(c.get_size(s + ".min_dim"), [&](auto v) { p.min_dim = v; });
  assign(c.get_size(s + ".max_dim"), [&](auto v) { p.max_dim = v; });
  assign(c.get_double(s + ".min_t_max"), [&](auto v) { p.min_t_max = v; });
  assign(c.get_double(s + ".max_t_max"), [&](auto v) { p.max_t_max = v; });
  assign(c.get_double(s + ".min_rate"), [&](auto v) { p.min_rate = v; });
  assign(c.get_double(s + ".max_rate"), [&](auto v) { p.max_rate = v; });
  assign(c.get_size(s + ".min_knots"), [&](auto v) { p.min_knots = v; });
  assign(c.get_size(s + ".max_knots"), [&](auto v) { p.max_knots = v; });
  assign(c.get_size(s + ".calibration_rows"), [&](auto v) { p.calibration_rows = v; });
  if (auto m = c.get_doubles(s + ".mixture_counts")) {
    p.mixture_counts.clear();
    for (double v : *m) {
      if (v < 1 || v != std::floor(v)) throw ConfigError(s + ".mixture_counts must be positive integers");
      p.mixture_counts.push_back(static_cast<std::size_t>(v));
    }
  }
  const std::string g = s + ".generator";
  auto& gr = p.generator;
  assign(c.get_size(g + ".min_layers"), [&](auto v) { gr.min_layers = v; });
  assign(c.get_size(g + ".max_layers"), [&](auto v) { gr.max_layers = v; });
  assign(c.get_size(g + ".min_width"), [&](auto v) { gr.min_width = v; });
  assign(c.get_size(g + ".max_width"), [&](auto v) { gr.max_width = v; });
  assign(c.get_double(g + ".min_noise"), [&](auto v) { gr.min_noise = v; });
  assign(c.get_double(g + ".max_noise"), [&](auto v) { gr.max_noise = v; });
  assign(c.get_double(g + ".input_noise_std"), [&](auto v) { gr.input_noise_std = v; });
  assign(c.get_size(g + ".noise_width"), [&](auto v) { gr.noise_width = v; });
  if (auto acts = c.get_strings(g + ".activations")) {
    gr.activations.clear();
    for (const auto& a : *acts) {
      try {
        gr.activations.push_back(activation_from_string(a));
      } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
      }
    }
  }
  try {
    p.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("prior: ") + e.what());
  }
  return p;
}

ModelConfig model_config_from(const Config& c, const std::string& s) {
  c.check_keys(s, {"d_max", "width", "layers", "heads", "bins", "ffn", "seed", "parallel_swiglu", "zero_head"});
  ModelConfig m;
  assign(c.get_size(s + ".d_max"), [&](auto v) { m.d_max = v; });
  assign(c.get_size(s + ".width"), [&](auto v) { m.width = v; });
  assign(c.get_size(s + ".layers"), [&](auto v) { m.layers = v; });
  assign(c.get_size(s + ".heads"), [&](auto v) { m.heads = v; });
  assign(c.get_size(s + ".bins"), [&](auto v) { m.bins = v; });
  assign(c.get_size(s + ".ffn"), [&](auto v) { m.ffn = v; });
  assign(c.get_size(s + ".seed"), [&](auto v) { m.seed = v; });
  assign(c.get_bool(s + ".parallel_swiglu"), [&](auto v) { m.parallel_swiglu = v; });
  assign(c.get_bool(s + ".zero_head"), [&](auto v) { m.zero_head = v; });
  try {
    m.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
  return m;
}

TrainConfig train_config_from(const Config& c, const std::string& s) {
  c.check_keys(s, {"tasks_per_step", "queries_per_task", "min_context", "max_context", "steps",
                   "learning_rate", "weight_decay", "beta1", "beta2", "adam_eps", "loss", "sce_sigma",
                   "schedule", "transform", "seed", "checkpoint_every", "keep_last", "workers",
                   "deterministic", "validation"});
  TrainConfig t;
  assign(c.get_size(s + ".tasks_per_step"), [&](auto v) { t.tasks_per_step = v; });
  assign(c.get_size(s + ".queries_per_task"), [&](auto v) { t.queries_per_task = v; });
  assign(c.get_size(s + ".min_context"), [&](auto v) { t.min_context = v; });
  assign(c.get_size(s + ".max_context"), [&](auto v) { t.max_context = v; });
  assign(c.get_size(s + ".steps"), [&](auto v) { t.steps = v; });
  assign(c.get_double(s + ".learning_rate"), [&](auto v) { t.learning_rate = v; });
  assign(c.get_double(s + ".weight_decay"), [&](auto v) { t.weight_decay = v; });
  assign(c.get_double(s + ".beta1"), [&](auto v) { t.beta1 = v; });
  assign(c.get_double(s + ".beta2"), [&](auto v) { t.beta2 = v; });
  assign(c.get_double(s + ".adam_eps"), [&](auto v) { t.adam_eps = v; });
  assign(c.get_string(s + ".loss"), [&](const std::string& v) { t.loss = loss_kind_from_string(v); });
  assign(c.get_double(s + ".sce_sigma"), [&](auto v) { t.sce_sigma = v; });
  assign(c.get_string(s + ".schedule"), [&](const std::string& v) { t.schedule = schedule_from_string(v); });
  try {
    assign(c.get_string(s + ".transform"), [&](const std::string& v) { t.transform = transform_from_string(v); });
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  assign(c.get_size(s + ".seed"), [&](auto v) { t.seed = v; });
  assign(c.get_size(s + ".checkpoint_every"), [&](auto v) { t.checkpoint_every = v; });
  assign(c.get_size(s + ".keep_last"), [&](auto v) { t.keep_last = v; });
  assign(c.get_size(s + ".workers"), [&](auto v) { t.workers = v; });
  assign(c.get_bool(s + ".deterministic"), [&](auto v) { t.deterministic = v; });
  t.prior = prior_config_from(c);
  t.model = model_config_from(c);
  t.validate();
  return t;
}

}  // namespace survpfn
