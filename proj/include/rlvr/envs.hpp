#pragma once

// Synthetic tasks with exact verifiers: addition, multiplication, sort and
// reverse, rendered over a small symbol vocabulary.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace rlvr {

enum class TaskKind { addition, multiplication, sort, reverse };

std::string_view to_string(TaskKind kind);
TaskKind parse_task_kind(std::string_view name);  // throws std::invalid_argument

struct DifficultyRange {
  int min;
  int max;
};
DifficultyRange difficulty_range(TaskKind kind);

// Ordered symbol table. Every symbol is a single character except the stop
// symbol, rendered "<stop>".
class Vocabulary {
 public:
  static constexpr std::string_view kStopSymbol = "<stop>";
  static constexpr char kDelimiter = '=';
  static constexpr char kWhitespace = ' ';

  // Union of the symbols the given tasks need, in canonical order.
  static Vocabulary for_tasks(std::span<const TaskKind> kinds);
  // Every symbol any task can use, plus the whitespace symbol.
  static Vocabulary full();

  int size() const { return static_cast<int>(symbols_.size()); }
  int stop_id() const { return stop_id_; }
  int delimiter_id() const { return delimiter_id_; }
  std::optional<int> id_of(char symbol) const;
  const std::string& symbol(int id) const;
  bool is_whitespace(int id) const;

  std::vector<int> encode(std::string_view text) const;  // throws on unknown characters
  // Renders tokens; the stop symbol renders as "<stop>".
  std::string decode(std::span<const int> tokens) const;
  // Compact name list used to persist the vocabulary.
  std::string spec() const;
  static Vocabulary from_spec(std::string_view spec);

  bool operator==(const Vocabulary& other) const { return symbols_ == other.symbols_; }

 private:
  explicit Vocabulary(std::vector<std::string> symbols);
  std::vector<std::string> symbols_;
  int stop_id_ = -1;
  int delimiter_id_ = -1;
  int whitespace_id_ = -1;
};

struct TaskInstance {
  TaskKind kind = TaskKind::addition;
  int difficulty = 1;
  std::uint64_t seed = 0;
  std::string prompt_text;  // ends with the delimiter
  std::vector<int> prompt;
  std::string ground_truth;
};

// Deterministic in (kind, difficulty, seed). Throws std::invalid_argument on
// an out-of-range difficulty.
TaskInstance generate_instance(const Vocabulary& vocab, TaskKind kind, int difficulty, std::uint64_t seed);

// Canonical answer form: whitespace removed, leading zeros stripped from
// all-digit answers ("085" -> "85", "000" -> "0").
std::string canonical_answer(std::string_view answer);

// True iff the text after the final delimiter (up to a stop token) matches
// the ground truth canonically. `tokens` is the prompt followed by the
// response, or any token sequence. No delimiter means false.
bool is_equivalent(const Vocabulary& vocab, std::span<const int> tokens, std::string_view ground_truth);

struct ShapingConfig {
  bool enabled = false;
  int soft_length = 6;   // responses longer than this start paying
  int max_length = 8;    // length at which the full penalty applies
  double max_penalty = 0.5;
};

struct RewardOutcome {
  double reward = 0.0;
  bool correct = false;
  bool truncated_penalty_applied = false;
};

// Binary correctness reward, minus an optional linear overlong penalty for
// truncated responses: max_penalty * clamp((len - soft) / (max - soft), 0, 1).
RewardOutcome reward(const Vocabulary& vocab, std::span<const int> prompt, std::span<const int> response,
                     std::string_view ground_truth, bool truncated, const ShapingConfig& shaping);

// Probability that a policy drawing tokens uniformly from the vocabulary
// (stopping at the stop symbol or after max_new_tokens) produces a response
// judged equivalent to `ground_truth`, given a prompt ending in the
// delimiter. Computed exactly by dynamic programming.
double uniform_policy_success(const Vocabulary& vocab, std::string_view ground_truth, int max_new_tokens);

// ---- task set files -------------------------------------------------------
// One JSON object per line: {task_kind, difficulty, seed, prompt_text, ground_truth}.

struct TaskSpec {
  TaskKind kind;
  int difficulty;
};

std::vector<TaskInstance> make_task_set(const Vocabulary& vocab, std::span<const TaskSpec> specs, int per_spec,
                                        std::uint64_t seed);
void write_task_set(std::ostream& out, std::span<const TaskInstance> tasks);
std::vector<TaskInstance> read_task_set(std::istream& in, const Vocabulary& vocab);

}  // namespace rlvr
