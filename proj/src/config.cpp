#include "rlvr/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <set>
#include <sstream>

namespace rlvr {

ConfigError::ConfigError(const std::string& source, int line, const std::string& message)
    : std::runtime_error(line > 0 ? source + ":" + std::to_string(line) + ": " + message : source + ": " + message),
      line_(line) {}

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

long long parse_int(std::string_view v) {
  long long out = 0;
  const auto* end = v.data() + v.size();
  const auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) throw std::invalid_argument("expected an integer, got '" + std::string(v) + "'");
  return out;
}

int parse_int32(std::string_view v) {
  const long long x = parse_int(v);
  if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) {
    throw std::invalid_argument("integer out of range: " + std::string(v));
  }
  return static_cast<int>(x);
}

std::uint64_t parse_u64(std::string_view v) {
  std::uint64_t out = 0;
  const auto* end = v.data() + v.size();
  const auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) {
    throw std::invalid_argument("expected a non-negative integer, got '" + std::string(v) + "'");
  }
  return out;
}

double parse_double(std::string_view v) {
  const std::string s(v);
  std::size_t used = 0;
  double x = 0.0;
  try {
    x = std::stod(s, &used);
  } catch (const std::exception&) {
    throw std::invalid_argument("expected a number, got '" + s + "'");
  }
  if (used != s.size() || !std::isfinite(x)) throw std::invalid_argument("expected a finite number, got '" + s + "'");
  return x;
}

bool parse_bool(std::string_view v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw std::invalid_argument("expected true or false, got '" + std::string(v) + "'");
}

std::string fmt_double(double x) {
  std::ostringstream s;
  s.precision(17);
  s << x;
  return s.str();
}

struct Field {
  std::function<void(TrainConfig&, std::string_view)> set;
  std::function<std::string(const TrainConfig&)> get;
};

#define INT_FIELD(key, member)                                                        \
  {                                                                                   \
    key, Field {                                                                      \
      [](TrainConfig& c, std::string_view v) { c.member = parse_int32(v); },          \
          [](const TrainConfig& c) { return std::to_string(c.member); }               \
    }                                                                                 \
  }
#define DOUBLE_FIELD(key, member)                                                     \
  {                                                                                   \
    key, Field {                                                                      \
      [](TrainConfig& c, std::string_view v) { c.member = parse_double(v); },         \
          [](const TrainConfig& c) { return fmt_double(c.member); }                   \
    }                                                                                 \
  }
#define BOOL_FIELD(key, member)                                                       \
  {                                                                                   \
    key, Field {                                                                      \
      [](TrainConfig& c, std::string_view v) { c.member = parse_bool(v); },           \
          [](const TrainConfig& c) { return std::string(c.member ? "true" : "false"); } \
    }                                                                                 \
  }

// Rendering order follows this table.
const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = {
      {"seed", Field{[](TrainConfig& c, std::string_view v) { c.seed = parse_u64(v); },
                     [](const TrainConfig& c) { return std::to_string(c.seed); }}},
      INT_FIELD("total_steps", total_steps),
      INT_FIELD("batch_size", batch_size),
      INT_FIELD("minibatch_size", minibatch_size),
      INT_FIELD("rollouts_per_prompt", rollouts_per_prompt),
      INT_FIELD("epochs", epochs),
      DOUBLE_FIELD("learning_rate", learning_rate),
      DOUBLE_FIELD("adam_beta1", adam_beta1),
      DOUBLE_FIELD("adam_beta2", adam_beta2),
      DOUBLE_FIELD("adam_eps", adam_eps),
      DOUBLE_FIELD("max_grad_norm", max_grad_norm),
      {"tasks", Field{[](TrainConfig& c, std::string_view v) { c.tasks = parse_tasks(v); },
                      [](const TrainConfig& c) { return render_tasks(c.tasks); }}},
      INT_FIELD("refill_budget_factor", refill_budget_factor),
      INT_FIELD("threads", threads),
      INT_FIELD("model.d_model", model.d_model),
      INT_FIELD("model.n_layers", model.n_layers),
      INT_FIELD("model.n_heads", model.n_heads),
      INT_FIELD("model.max_seq_len", model.max_seq_len),
      {"objective.algorithm",
       Field{[](TrainConfig& c, std::string_view v) { c.objective.algorithm = parse_algorithm(v); },
             [](const TrainConfig& c) { return std::string(to_string(c.objective.algorithm)); }}},
      DOUBLE_FIELD("objective.eps", objective.eps),
      DOUBLE_FIELD("objective.eps_low", objective.eps_low),
      DOUBLE_FIELD("objective.eps_high", objective.eps_high),
      DOUBLE_FIELD("objective.eps_reasoning", objective.eps_reasoning),
      DOUBLE_FIELD("objective.eps_knowledge", objective.eps_knowledge),
      DOUBLE_FIELD("objective.beta", objective.beta),
      DOUBLE_FIELD("objective.beta_reasoning", objective.beta_reasoning),
      DOUBLE_FIELD("objective.beta_knowledge", objective.beta_knowledge),
      DOUBLE_FIELD("objective.rho", objective.rho),
      DOUBLE_FIELD("objective.std_floor", objective.std_floor),
      DOUBLE_FIELD("sampling.temperature", sampling.temperature),
      DOUBLE_FIELD("sampling.top_p", sampling.top_p),
      INT_FIELD("sampling.max_new_tokens", sampling.max_new_tokens),
      BOOL_FIELD("shaping.enabled", shaping.enabled),
      INT_FIELD("shaping.soft_length", shaping.soft_length),
      INT_FIELD("shaping.max_length", shaping.max_length),
      DOUBLE_FIELD("shaping.max_penalty", shaping.max_penalty),
      INT_FIELD("checkpoint_every", checkpoint_every),
      INT_FIELD("rollout_log_every", rollout_log_every),
      {"repetition_n", Field{[](TrainConfig& c, std::string_view v) {
                               const long long n = parse_int(v);
                               if (n < 1) throw std::invalid_argument("repetition_n must be >= 1");
                               c.repetition_n = static_cast<std::size_t>(n);
                             },
                             [](const TrainConfig& c) { return std::to_string(c.repetition_n); }}},
      INT_FIELD("eval_every", eval_every),
      INT_FIELD("eval_instances", eval_instances),
      INT_FIELD("eval_k", eval_k),
      DOUBLE_FIELD("eval_temperature", eval_temperature),
      DOUBLE_FIELD("eval_top_p", eval_top_p),
      DOUBLE_FIELD("stop_at_eval", stop_at_eval),
  };
  return table;
}

const Field* find_field(std::string_view key) {
  for (const auto& [k, f] : fields()) {
    if (k == key) return &f;
  }
  return nullptr;
}

const std::map<std::string, std::string, std::less<>>& presets() {
  static const std::map<std::string, std::string, std::less<>> table = {
      {"desk_addition",
       "# Two-digit addition at desk scale.\n"
       "version = 1\n"
       "tasks = addition:2-2:1\n"
       "total_steps = 2000\n"
       "batch_size = 8\n"
       "rollouts_per_prompt = 8\n"
       "minibatch_size = 32\n"
       "learning_rate = 3e-4\n"
       "max_grad_norm = 1.0\n"
       "refill_budget_factor = 64\n"
       "sampling.max_new_tokens = 4\n"
       "model.d_model = 128\n"
       "model.max_seq_len = 16\n"
       "eval_every = 25\n"
       "eval_instances = 200\n"},
      {"desk_reverse",
       "# String reversal with longer responses; used for entropy and repetition ablations.\n"
       "version = 1\n"
       "tasks = reverse:1-6:1\n"
       "total_steps = 600\n"
       "batch_size = 8\n"
       "rollouts_per_prompt = 8\n"
       "minibatch_size = 32\n"
       "learning_rate = 5e-4\n"
       "sampling.max_new_tokens = 12\n"
       "model.max_seq_len = 24\n"},
      {"large_scale",
       "# Batch and optimizer settings of the reference setup; far too slow on a CPU.\n"
       "version = 1\n"
       "tasks = addition:1-4:1, multiplication:1-3:1, sort:1-8:1, reverse:1-8:1\n"
       "total_steps = 1000\n"
       "batch_size = 64\n"
       "rollouts_per_prompt = 16\n"
       "minibatch_size = 512\n"
       "learning_rate = 1e-6\n"
       "sampling.temperature = 1.0\n"
       "sampling.max_new_tokens = 16\n"
       "model.max_seq_len = 32\n"},
  };
  return table;
}

}  // namespace

std::string render_tasks(const std::vector<TaskMixEntry>& tasks) {
  std::string out;
  for (const auto& t : tasks) {
    if (!out.empty()) out += ", ";
    out += std::string(to_string(t.kind)) + ":" + std::to_string(t.difficulty_min) + "-" +
           std::to_string(t.difficulty_max) + ":" + fmt_double(t.weight);
  }
  return out;
}

std::vector<TaskMixEntry> parse_tasks(std::string_view text) {
  std::vector<TaskMixEntry> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto comma = text.find(',', pos);
    const auto item = trim(text.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos));
    pos = comma == std::string_view::npos ? text.size() + 1 : comma + 1;
    if (item.empty()) throw std::invalid_argument("empty task entry (expected kind:min-max[:weight])");
    TaskMixEntry e;
    const auto c1 = item.find(':');
    e.kind = parse_task_kind(trim(item.substr(0, c1)));
    const auto range = difficulty_range(e.kind);
    e.difficulty_min = range.min;
    e.difficulty_max = range.max;
    if (c1 != std::string_view::npos) {
      const auto rest = item.substr(c1 + 1);
      const auto c2 = rest.find(':');
      const auto diff = trim(rest.substr(0, c2));
      const auto dash = diff.find('-');
      if (dash == std::string_view::npos) {
        e.difficulty_min = e.difficulty_max = parse_int32(diff);
      } else {
        e.difficulty_min = parse_int32(trim(diff.substr(0, dash)));
        e.difficulty_max = parse_int32(trim(diff.substr(dash + 1)));
      }
      if (c2 != std::string_view::npos) e.weight = parse_double(trim(rest.substr(c2 + 1)));
    }
    if (e.difficulty_min < range.min || e.difficulty_max > range.max || e.difficulty_min > e.difficulty_max) {
      throw std::invalid_argument("difficulty for " + std::string(to_string(e.kind)) + " must lie within [" +
                                  std::to_string(range.min) + ", " + std::to_string(range.max) + "]");
    }
    if (!(e.weight > 0.0)) throw std::invalid_argument("task weight must be > 0");
    out.push_back(e);
  }
  return out;
}

void apply_setting(TrainConfig& cfg, std::string_view key, std::string_view value) {
  const Field* f = find_field(key);
  if (!f) throw std::invalid_argument("unknown key '" + std::string(key) + "'");
  f->set(cfg, trim(value));
}

TrainConfig parse_config(std::string_view text, const std::string& source) {
  TrainConfig cfg;
  std::set<std::string, std::less<>> seen;
  bool have_version = false;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() : nl + 1;
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(source, line_no, "expected 'key = value'");
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(source, line_no, "missing key");
    if (value.empty()) throw ConfigError(source, line_no, "missing value for '" + std::string(key) + "'");
    if (!seen.insert(std::string(key)).second) {
      throw ConfigError(source, line_no, "duplicate key '" + std::string(key) + "'");
    }
    if (key == "version") {
      try {
        if (parse_int32(value) != kConfigVersion) {
          throw std::invalid_argument("unsupported config version " + std::string(value) + " (expected " +
                                      std::to_string(kConfigVersion) + ")");
        }
      } catch (const std::invalid_argument& e) {
        throw ConfigError(source, line_no, e.what());
      }
      have_version = true;
      continue;
    }
    try {
      apply_setting(cfg, key, value);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(source, line_no, e.what());
    }
  }
  if (!have_version) throw ConfigError(source, 0, "missing 'version = " + std::to_string(kConfigVersion) + "'");
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(source, 0, std::string("invalid configuration: ") + e.what());
  }
  return cfg;
}

TrainConfig load_config(const std::string& path_or_preset) {
  if (is_preset(path_or_preset)) return parse_config(preset_text(path_or_preset), "preset:" + path_or_preset);
  std::ifstream in(path_or_preset);
  if (!in) throw ConfigError(path_or_preset, 0, "cannot open config (not a file or a known preset)");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), path_or_preset);
}

std::string render_config(const TrainConfig& cfg) {
  std::string out = "version = " + std::to_string(kConfigVersion) + "\n";
  for (const auto& [k, f] : fields()) out += k + " = " + f.get(cfg) + "\n";
  return out;
}

std::vector<std::string> preset_names() {
  std::vector<std::string> out;
  for (const auto& [k, v] : presets()) out.push_back(k);
  return out;
}

bool is_preset(std::string_view name) { return presets().find(name) != presets().end(); }

std::string preset_text(std::string_view name) {
  const auto it = presets().find(name);
  if (it == presets().end()) throw std::invalid_argument("unknown preset '" + std::string(name) + "'");
  return it->second;
}

}  // namespace rlvr
