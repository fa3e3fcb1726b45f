#include "rlvr/envs.hpp"

#include "rlvr/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cctype>
#include <istream>
#include <ostream>

namespace rlvr {

namespace {

constexpr std::array<std::string_view, 4> kTaskNames = {"addition", "multiplication", "sort", "reverse"};
constexpr std::string_view kLetters = "abcdefgh";

bool all_digits(std::string_view s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
}

std::int64_t pow10(int n) {
  std::int64_t p = 1;
  for (int i = 0; i < n; ++i) p *= 10;
  return p;
}

}  // namespace

std::string_view to_string(TaskKind kind) { return kTaskNames[static_cast<std::size_t>(kind)]; }

TaskKind parse_task_kind(std::string_view name) {
  for (std::size_t i = 0; i < kTaskNames.size(); ++i) {
    if (kTaskNames[i] == name) return static_cast<TaskKind>(i);
  }
  throw std::invalid_argument("unknown task kind '" + std::string(name) + "'");
}

DifficultyRange difficulty_range(TaskKind kind) {
  switch (kind) {
    case TaskKind::addition: return {1, 4};
    case TaskKind::multiplication: return {1, 3};
    case TaskKind::sort:
    case TaskKind::reverse: return {1, static_cast<int>(kLetters.size())};
  }
  throw std::invalid_argument("unknown task kind");
}

// ---------------------------------------------------------------------------
// Vocabulary

Vocabulary::Vocabulary(std::vector<std::string> symbols) : symbols_(std::move(symbols)) {
  for (int i = 0; i < size(); ++i) {
    if (symbols_[i] == kStopSymbol) stop_id_ = i;
    if (symbols_[i] == std::string(1, kDelimiter)) delimiter_id_ = i;
    if (symbols_[i] == std::string(1, kWhitespace)) whitespace_id_ = i;
  }
  if (stop_id_ < 0 || delimiter_id_ < 0) throw std::invalid_argument("vocabulary lacks stop or delimiter symbol");
}

Vocabulary Vocabulary::for_tasks(std::span<const TaskKind> kinds) {
  auto has = [&](TaskKind k) { return std::find(kinds.begin(), kinds.end(), k) != kinds.end(); };
  const bool numeric = has(TaskKind::addition) || has(TaskKind::multiplication);
  const bool letters = has(TaskKind::sort) || has(TaskKind::reverse);
  std::vector<std::string> s = {std::string(kStopSymbol), std::string(1, kDelimiter)};
  if (numeric) {
    for (char c = '0'; c <= '9'; ++c) s.emplace_back(1, c);
  }
  if (has(TaskKind::addition)) s.emplace_back("+");
  if (has(TaskKind::multiplication)) s.emplace_back("*");
  if (has(TaskKind::sort)) s.emplace_back("S");
  if (has(TaskKind::reverse)) s.emplace_back("R");
  if (letters) {
    for (char c : kLetters) s.emplace_back(1, c);
  }
  return Vocabulary(std::move(s));
}

Vocabulary Vocabulary::full() {
  constexpr std::array all = {TaskKind::addition, TaskKind::multiplication, TaskKind::sort, TaskKind::reverse};
  Vocabulary v = for_tasks(all);
  v.symbols_.insert(v.symbols_.begin() + 2, std::string(1, kWhitespace));
  return Vocabulary(std::move(v.symbols_));
}

std::optional<int> Vocabulary::id_of(char symbol) const {
  for (int i = 0; i < size(); ++i) {
    if (symbols_[i].size() == 1 && symbols_[i][0] == symbol) return i;
  }
  return std::nullopt;
}

const std::string& Vocabulary::symbol(int id) const {
  if (id < 0 || id >= size()) throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary");
  return symbols_[id];
}

bool Vocabulary::is_whitespace(int id) const { return whitespace_id_ >= 0 && id == whitespace_id_; }

std::vector<int> Vocabulary::encode(std::string_view text) const {
  std::vector<int> ids;
  ids.reserve(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text.substr(i, kStopSymbol.size()) == kStopSymbol) {
      ids.push_back(stop_id_);
      i += kStopSymbol.size() - 1;
      continue;
    }
    auto id = id_of(text[i]);
    if (!id) throw std::invalid_argument(std::string("symbol '") + text[i] + "' not in vocabulary");
    ids.push_back(*id);
  }
  return ids;
}

std::string Vocabulary::decode(std::span<const int> tokens) const {
  std::string out;
  for (int t : tokens) out += symbol(t);
  return out;
}

std::string Vocabulary::spec() const {
  // Single-character symbols concatenated; the stop symbol is implicit and first.
  std::string out;
  for (int i = 0; i < size(); ++i) {
    if (i == stop_id_) continue;
    out += symbols_[i];
  }
  return out;
}

Vocabulary Vocabulary::from_spec(std::string_view spec) {
  std::vector<std::string> s = {std::string(kStopSymbol)};
  for (char c : spec) s.emplace_back(1, c);
  return Vocabulary(std::move(s));
}

// ---------------------------------------------------------------------------
// Task generation

TaskInstance generate_instance(const Vocabulary& vocab, TaskKind kind, int difficulty, std::uint64_t seed) {
  const auto range = difficulty_range(kind);
  if (difficulty < range.min || difficulty > range.max) {
    throw std::invalid_argument("difficulty " + std::to_string(difficulty) + " outside [" + std::to_string(range.min) +
                                ", " + std::to_string(range.max) + "] for " + std::string(to_string(kind)));
  }
  Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(kind), static_cast<std::uint64_t>(difficulty)}));
  TaskInstance inst;
  inst.kind = kind;
  inst.difficulty = difficulty;
  inst.seed = seed;
  switch (kind) {
    case TaskKind::addition:
    case TaskKind::multiplication: {
      // Exactly `difficulty` digits per operand; single digits include 0.
      const std::int64_t lo = difficulty == 1 ? 0 : pow10(difficulty - 1);
      const std::int64_t hi = pow10(difficulty) - 1;
      const std::int64_t a = uniform_int(rng, lo, hi);
      const std::int64_t b = uniform_int(rng, lo, hi);
      const bool add = kind == TaskKind::addition;
      inst.prompt_text = std::to_string(a) + (add ? "+" : "*") + std::to_string(b) + "=";
      inst.ground_truth = std::to_string(add ? a + b : a * b);
      break;
    }
    case TaskKind::sort:
    case TaskKind::reverse: {
      std::string items;
      for (int i = 0; i < difficulty; ++i) {
        items += kLetters[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(kLetters.size()) - 1))];
      }
      std::string answer = items;
      if (kind == TaskKind::sort) {
        std::sort(answer.begin(), answer.end());
      } else {
        std::reverse(answer.begin(), answer.end());
      }
      inst.prompt_text = (kind == TaskKind::sort ? "S" : "R") + items + "=";
      inst.ground_truth = answer;
      break;
    }
  }
  inst.prompt = vocab.encode(inst.prompt_text);
  return inst;
}

// ---------------------------------------------------------------------------
// Verification and reward

std::string canonical_answer(std::string_view answer) {
  std::string s;
  for (char c : answer) {
    if (c != Vocabulary::kWhitespace) s += c;
  }
  if (all_digits(s)) {
    const auto first = s.find_first_not_of('0');
    s = first == std::string::npos ? "0" : s.substr(first);
  }
  return s;
}

bool is_equivalent(const Vocabulary& vocab, std::span<const int> tokens, std::string_view ground_truth) {
  std::size_t end = tokens.size();
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] == vocab.stop_id()) {
      end = i;
      break;
    }
  }
  std::size_t delim = end;
  for (std::size_t i = end; i-- > 0;) {
    if (tokens[i] == vocab.delimiter_id()) {
      delim = i;
      break;
    }
  }
  if (delim == end) return false;
  std::string extracted;
  for (std::size_t i = delim + 1; i < end; ++i) {
    if (!vocab.is_whitespace(tokens[i])) extracted += vocab.symbol(tokens[i]);
  }
  if (extracted.empty()) return false;
  const std::string expected = canonical_answer(ground_truth);
  return !expected.empty() && canonical_answer(extracted) == expected;
}

RewardOutcome reward(const Vocabulary& vocab, std::span<const int> prompt, std::span<const int> response,
                     std::string_view ground_truth, bool truncated, const ShapingConfig& shaping) {
  std::vector<int> full(prompt.begin(), prompt.end());
  full.insert(full.end(), response.begin(), response.end());
  RewardOutcome out;
  out.correct = is_equivalent(vocab, full, ground_truth);
  out.reward = out.correct ? 1.0 : 0.0;
  if (shaping.enabled && truncated) {
    const double span = std::max(1, shaping.max_length - shaping.soft_length);
    const double overrun = static_cast<double>(response.size()) - shaping.soft_length;
    const double penalty = shaping.max_penalty * std::clamp(overrun / span, 0.0, 1.0);
    if (penalty > 0.0) {
      out.reward -= penalty;
      out.truncated_penalty_applied = true;
    }
  }
  out.reward = std::clamp(out.reward, -1.0, 1.0);
  return out;
}

double uniform_policy_success(const Vocabulary& vocab, std::string_view ground_truth, int max_new_tokens) {
  const std::string target = canonical_answer(ground_truth);
  if (target.empty() || max_new_tokens <= 0) return 0.0;
  const bool numeric = all_digits(target);
  const bool zero_target = target == "0";
  const int len = static_cast<int>(target.size());
  // States: 0 = empty, 1 = leading zeros only, 2 = dead, 3 + k = k symbols matched (k >= 1).
  const int n_states = 3 + len + 1;
  auto success = [&](int s) { return zero_target ? s == 1 : s == 3 + len; };
  auto step = [&](int s, char c) -> int {
    if (s == 2) return 2;
    if ((s == 0 || s == 1) && numeric && c == '0') return 1;
    if (s == 0 || s == 1) return (!zero_target && c == target[0]) ? 4 : 2;
    const int k = s - 3;
    return (k < len && c == target[static_cast<std::size_t>(k)]) ? s + 1 : 2;
  };
  const double p = 1.0 / vocab.size();
  std::vector<double> mass(static_cast<std::size_t>(n_states), 0.0), next;
  mass[0] = 1.0;
  double total = 0.0;
  for (int t = 0; t < max_new_tokens; ++t) {
    next.assign(mass.size(), 0.0);
    for (int s = 0; s < n_states; ++s) {
      const double m = mass[static_cast<std::size_t>(s)];
      if (m == 0.0) continue;
      for (int id = 0; id < vocab.size(); ++id) {
        if (id == vocab.stop_id()) {
          if (success(s)) total += m * p;
        } else if (id == vocab.delimiter_id()) {
          next[0] += m * p;
        } else if (vocab.is_whitespace(id)) {
          next[static_cast<std::size_t>(s)] += m * p;
        } else {
          next[static_cast<std::size_t>(step(s, vocab.symbol(id)[0]))] += m * p;
        }
      }
    }
    mass.swap(next);
  }
  for (int s = 0; s < n_states; ++s) {
    if (success(s)) total += mass[static_cast<std::size_t>(s)];
  }
  return total;
}

// ---------------------------------------------------------------------------
// Task sets

std::vector<TaskInstance> make_task_set(const Vocabulary& vocab, std::span<const TaskSpec> specs, int per_spec,
                                        std::uint64_t seed) {
  std::vector<TaskInstance> out;
  for (std::size_t s = 0; s < specs.size(); ++s) {
    for (int i = 0; i < per_spec; ++i) {
      out.push_back(generate_instance(vocab, specs[s].kind, specs[s].difficulty,
                                      derive_seed(seed, {s, static_cast<std::uint64_t>(i)})));
    }
  }
  return out;
}

void write_task_set(std::ostream& out, std::span<const TaskInstance> tasks) {
  for (const auto& t : tasks) {
    nlohmann::ordered_json j;
    j["task_kind"] = to_string(t.kind);
    j["difficulty"] = t.difficulty;
    j["seed"] = t.seed;
    j["prompt_text"] = t.prompt_text;
    j["ground_truth"] = t.ground_truth;
    out << j.dump() << '\n';
  }
}

std::vector<TaskInstance> read_task_set(std::istream& in, const Vocabulary& vocab) {
  std::vector<TaskInstance> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      TaskInstance t;
      t.kind = parse_task_kind(j.at("task_kind").get<std::string>());
      t.difficulty = j.at("difficulty").get<int>();
      t.seed = j.at("seed").get<std::uint64_t>();
      t.prompt_text = j.at("prompt_text").get<std::string>();
      t.ground_truth = j.at("ground_truth").get<std::string>();
      t.prompt = vocab.encode(t.prompt_text);
      out.push_back(std::move(t));
    } catch (const std::exception& e) {
      throw std::runtime_error("task set line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace rlvr
