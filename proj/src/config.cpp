#include "fairlab/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "fairlab/errors.hpp"

namespace fairlab {
namespace {

// Calls f(section, key, field) for every configurable field. Top-level keys
// use an empty section.
template <typename Config, typename F>
void for_each_field(Config& c, F&& f) {
  f("", "run_id", c.run_id);
  f("", "seed", c.seed);
  f("", "backbone", c.backbone);
  f("", "backend", c.backend);

  auto& d = c.data;
  f("data", "source", d.source);
  f("data", "format", d.format);
  f("data", "metadata", d.metadata);
  f("data", "labels", d.labels);
  f("data", "user_sample_frac", d.user_sample_frac);
  f("data", "core_k", d.core_k);
  f("data", "train_ratio", d.train_ratio);
  f("data", "val_ratio", d.val_ratio);
  f("data", "test_ratio", d.test_ratio);
  f("data", "synthetic_users", d.synthetic_users);
  f("data", "synthetic_items", d.synthetic_items);
  f("data", "synthetic_clusters", d.synthetic_clusters);
  f("data", "interactions_per_user", d.interactions_per_user);
  f("data", "group_ratio", d.group_ratio);
  f("data", "preference_mix", d.preference_mix);
  f("data", "popularity_skew", d.popularity_skew);

  auto& a = c.agents;
  f("agents", "n_personas", a.n_personas);
  f("agents", "attribute", a.attribute);
  f("agents", "temperature", a.temperature);
  f("agents", "max_tokens", a.max_tokens);
  f("agents", "workers", a.workers);
  f("agents", "failure_threshold", a.failure_threshold);
  f("agents", "max_history_titles", a.max_history_titles);
  f("agents", "embed_dim", a.embed_dim);
  f("agents", "simulated_accuracy", a.simulated_accuracy);
  f("agents", "prompts_dir", a.prompts_dir);
  f("agents", "scripted_file", a.scripted_file);
  f("agents", "record_file", a.record_file);

  auto& t = c.train;
  f("train", "d", t.d);
  f("train", "lr", t.lr);
  f("train", "bpr_batch", t.bpr_batch);
  f("train", "sens_batch", t.sens_batch);
  f("train", "mi_batch", t.mi_batch);
  f("train", "pretrain_epochs", t.pretrain_epochs);
  f("train", "patience", t.patience);
  f("train", "stage1_epochs", t.stage1_epochs);
  f("train", "stage1_patience", t.stage1_patience);
  f("train", "stage1_validation_frac", t.stage1_validation_frac);
  f("train", "stage2_epochs", t.stage2_epochs);
  f("train", "lambda_sim", t.lambda_sim);
  f("train", "lambda_fine", t.lambda_fine);
  f("train", "lambda_ub", t.lambda_ub);
  f("train", "lambda_lb", t.lambda_lb);
  f("train", "alpha", t.alpha);
  f("train", "K", t.K);
  f("train", "inner_steps", t.inner_steps);
  f("train", "variational_lr_scale", t.variational_lr_scale);
  f("train", "item_side_lb", t.item_side_lb);
  f("train", "confusion_gamma", t.confusion_gamma);
  f("train", "confusion_lr_scale", t.confusion_lr_scale);
  f("train", "sensitive_updates_users", t.sensitive_updates_users);
  f("train", "keep_best", t.keep_best);

  auto& e = c.eval;
  f("eval", "k", e.k);
  f("eval", "embeddings", e.embeddings);
  f("eval", "attack", e.attack);
  f("eval", "label_quality", e.label_quality);
  f("eval", "attacker_hidden", e.attacker_hidden);
}

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Drops a trailing comment that is not inside a string.
std::string_view strip_comment(std::string_view s) {
  bool quoted = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '"' && (i == 0 || s[i - 1] != '\\')) quoted = !quoted;
    if (s[i] == '#' && !quoted) return s.substr(0, i);
  }
  return s;
}

std::string parse_string(std::string_view v) {
  if (v.size() < 2 || v.front() != '"' || v.back() != '"') {
    throw ConfigError("expected a quoted string, got '" + std::string(v) + "'");
  }
  std::string out;
  for (std::size_t i = 1; i + 1 < v.size(); ++i) {
    if (v[i] == '\\' && i + 2 < v.size()) {
      const char n = v[++i];
      out += n == 'n' ? '\n' : n == 't' ? '\t' : n;
    } else {
      out += v[i];
    }
  }
  return out;
}

double parse_double(std::string_view v) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(out)) {
    throw ConfigError("expected a number, got '" + std::string(v) + "'");
  }
  return out;
}

template <typename T>
T parse_integer(std::string_view v) {
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("expected a nonnegative integer, got '" + std::string(v) + "'");
  }
  return out;
}

std::vector<std::string_view> parse_array(std::string_view v) {
  if (v.size() < 2 || v.front() != '[' || v.back() != ']') {
    throw ConfigError("expected an array, got '" + std::string(v) + "'");
  }
  std::vector<std::string_view> items;
  const auto body = v.substr(1, v.size() - 2);
  bool quoted = false;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= body.size(); ++i) {
    if (i < body.size() && body[i] == '"') quoted = !quoted;
    if (i == body.size() || (body[i] == ',' && !quoted)) {
      const auto item = trim(body.substr(start, i - start));
      if (!item.empty()) items.push_back(item);
      start = i + 1;
    }
  }
  return items;
}

void assign(std::string& field, std::string_view v) { field = parse_string(v); }
void assign(double& field, std::string_view v) { field = parse_double(v); }
void assign(std::size_t& field, std::string_view v) {
  field = parse_integer<std::size_t>(v);
}
void assign(int& field, std::string_view v) { field = parse_integer<int>(v); }
void assign(bool& field, std::string_view v) {
  if (v == "true") {
    field = true;
  } else if (v == "false") {
    field = false;
  } else {
    throw ConfigError("expected true or false, got '" + std::string(v) + "'");
  }
}
void assign(std::vector<double>& field, std::string_view v) {
  field.clear();
  for (auto item : parse_array(v)) field.push_back(parse_double(item));
}
void assign(std::vector<std::string>& field, std::string_view v) {
  field.clear();
  for (auto item : parse_array(v)) field.push_back(parse_string(item));
}

void set_field(RunConfig& config, std::string_view section, std::string_view key,
               std::string_view value) {
  bool found = false;
  for_each_field(config, [&](std::string_view s, std::string_view k, auto& field) {
    if (found || s != section || k != key) return;
    found = true;
    assign(field, value);
  });
  if (!found) {
    throw ConfigError("unknown key '" +
                      (section.empty() ? std::string(key)
                                       : std::string(section) + "." + std::string(key)) +
                      "'");
  }
}

void render(std::ostream& out, const std::string& v) {
  out << '"';
  for (char c : v) {
    if (c == '"' || c == '\\') out << '\\';
    if (c == '\n') {
      out << "\\n";
      continue;
    }
    out << c;
  }
  out << '"';
}
void render(std::ostream& out, double v) {
  std::ostringstream tmp;
  tmp.precision(17);
  tmp << v;
  auto text = tmp.str();
  if (text.find_first_of(".eE") == std::string::npos) text += ".0";
  out << text;
}
void render(std::ostream& out, std::size_t v) { out << v; }
void render(std::ostream& out, int v) { out << v; }
void render(std::ostream& out, bool v) { out << (v ? "true" : "false"); }
template <typename T>
void render(std::ostream& out, const std::vector<T>& v) {
  out << '[';
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i > 0) out << ", ";
    render(out, v[i]);
  }
  out << ']';
}

}  // namespace

RunConfig parse_config(std::string_view text) {
  RunConfig config;
  std::string section;
  std::istringstream in{std::string(text)};
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto line = trim(strip_comment(raw));
    if (line.empty()) continue;
    try {
      if (line.front() == '[') {
        if (line.back() != ']') throw ConfigError("unterminated section header");
        section = std::string(trim(line.substr(1, line.size() - 2)));
        if (section != "data" && section != "agents" && section != "train" &&
            section != "eval") {
          throw ConfigError("unknown section [" + section + "]");
        }
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) throw ConfigError("expected key = value");
      set_field(config, section, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  validate(config);
  return config;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str());
}

void apply_override(RunConfig& config, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) {
    throw ConfigError("override must look like section.key=value");
  }
  const auto name = trim(assignment.substr(0, eq));
  auto value = std::string(trim(assignment.substr(eq + 1)));
  const auto dot = name.find('.');
  const auto section = dot == std::string_view::npos ? std::string_view{} : name.substr(0, dot);
  const auto key = dot == std::string_view::npos ? name : name.substr(dot + 1);
  // Bare words on the command line are taken as strings.
  bool is_string = false;
  for_each_field(config, [&](std::string_view s, std::string_view k, auto& field) {
    if (s == section && k == key) {
      is_string = std::is_same_v<std::decay_t<decltype(field)>, std::string>;
    }
  });
  if (is_string && (value.empty() || value.front() != '"')) value = "\"" + value + "\"";
  set_field(config, section, key, value);
  validate(config);
}

void validate(const RunConfig& c) {
  const auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
  };
  require(!c.run_id.empty(), "run_id must be nonempty");
  require(c.backend == "mock" || c.backend == "simulated" || c.backend == "scripted" ||
              c.backend == "http",
          "backend must be one of http, scripted, mock, simulated");
  require(c.backbone == "mf", "only the mf backbone is implemented");
  const auto& d = c.data;
  require(d.format == "movielens-dat" || d.format == "dat" || d.format == "tsv",
          "data.format must be movielens-dat or tsv");
  require(d.user_sample_frac > 0.0 && d.user_sample_frac <= 1.0,
          "data.user_sample_frac must lie in (0, 1]");
  require(d.train_ratio > 0.0 && d.val_ratio >= 0.0 && d.test_ratio >= 0.0 &&
              std::abs(d.train_ratio + d.val_ratio + d.test_ratio - 1.0) < 1e-9,
          "data split ratios must be nonnegative and sum to 1");
  const auto& a = c.agents;
  require(a.n_personas >= 1, "agents.n_personas must be >= 1");
  require(a.attribute == "gender", "agents.attribute supports only gender");
  require(a.workers >= 1, "agents.workers must be >= 1");
  require(a.failure_threshold >= 0.0 && a.failure_threshold <= 1.0,
          "agents.failure_threshold must lie in [0, 1]");
  require(a.max_history_titles >= 1, "agents.max_history_titles must be >= 1");
  require(a.embed_dim >= 1, "agents.embed_dim must be >= 1");
  require(!a.simulated_accuracy.empty(), "agents.simulated_accuracy must be nonempty");
  for (double p : a.simulated_accuracy) {
    require(p >= 0.0 && p <= 1.0, "agents.simulated_accuracy values must lie in [0, 1]");
  }
  require(a.simulated_accuracy.size() == 1 || a.simulated_accuracy.size() == a.n_personas,
          "agents.simulated_accuracy needs one value or one per persona");
  const auto& t = c.train;
  require(t.d >= 1, "train.d must be >= 1");
  require(t.lr >= 0.0, "train.lr must be >= 0");
  require(t.bpr_batch >= 1 && t.sens_batch >= 1 && t.mi_batch >= 2,
          "train batch sizes must be positive (mi_batch >= 2)");
  require(t.lambda_sim >= 0.0 && t.lambda_fine >= 0.0 && t.lambda_ub >= 0.0 &&
              t.lambda_lb >= 0.0,
          "train lambda weights must be >= 0");
  require(t.K >= 1, "train.K must be >= 1");
  require(t.inner_steps >= 1, "train.inner_steps must be >= 1");
  require(t.variational_lr_scale > 0.0, "train.variational_lr_scale must be positive");
  require(t.stage1_validation_frac >= 0.0 && t.stage1_validation_frac < 1.0,
          "train.stage1_validation_frac must lie in [0, 1)");
  require(t.confusion_lr_scale >= 0.0, "train.confusion_lr_scale must be >= 0");
  require(c.eval.k >= 1, "eval.k must be >= 1");
  for (const auto& e : c.eval.embeddings) {
    require(e == "preference" || e == "user",
            "eval.embeddings entries must be preference or user");
  }
}

std::string to_toml(const RunConfig& config) {
  std::ostringstream out;
  std::string current;
  for_each_field(config, [&](std::string_view s, std::string_view k, const auto& field) {
    if (s != current) {
      out << "\n[" << s << "]\n";
      current = std::string(s);
    }
    out << k << " = ";
    render(out, field);
    out << '\n';
  });
  return out.str();
}

}  // namespace fairlab
