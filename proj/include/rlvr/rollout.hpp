#pragma once

// Sampling phase of a training step: G responses per prompt from the rollout
// policy, rewards scored eagerly, and the dynamic-sampling group filter.

#include "rlvr/envs.hpp"
#include "rlvr/policy.hpp"
#include "rlvr/types.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <vector>

namespace rlvr {

struct TokenStep {
  int token = 0;
  double logprob_old = 0.0;  // nats, under the rollout policy
  double entropy = 0.0;      // nats, rollout-time distribution
  TokenClass token_class = TokenClass::knowledge;
};

struct ResponseRecord {
  std::vector<TokenStep> steps;
  double reward = 0.0;
  bool correct = false;
  bool truncated = false;
  // Filled by the objective module before the update.
  std::optional<double> advantage;
  std::optional<double> entropy_threshold;
  bool classified = false;
  // Ratio pi_theta / pi_old per token at the time its loss was evaluated.
  std::vector<double> ratios;

  std::vector<int> tokens() const;
  std::vector<double> entropies() const;
};

struct PromptGroup {
  std::uint64_t prompt_id = 0;
  TaskInstance instance;
  std::vector<ResponseRecord> responses;

  std::size_t correct_count() const;
};

// G >= 2 responses from `params_old`; response i is sampled with
// derive_seed(seed, {i}).
PromptGroup rollout_group(const Vocabulary& vocab, const TaskInstance& instance, const PolicyParams& params_old,
                          int group_size, const SamplingConfig& sampling, const ShapingConfig& shaping,
                          std::uint64_t seed);

// Keep iff 0 < correct < G.
bool keep_group(const PromptGroup& group);

struct FilterResult {
  std::vector<PromptGroup> kept;
  std::size_t dropped_count = 0;
};
FilterResult dynamic_sampling_filter(std::vector<PromptGroup> groups);

using GroupGenerator = std::function<PromptGroup(std::size_t prompt_index)>;
using GroupPredicate = std::function<bool(const PromptGroup&)>;

struct RefillResult {
  std::vector<PromptGroup> kept;
  std::size_t prompts_consumed = 0;
  std::size_t dropped = 0;
  bool budget_exhausted = false;

  // No learnable group within the attempt budget.
  bool unlearnable() const { return kept.empty() && budget_exhausted; }
};

// Draws prompts 0, 1, 2, ... from `generator` until `batch_target` groups
// pass `keep` or `budget` prompts (default 10 x target) have been consumed.
// Generation may run on `threads` workers; the result only depends on the
// generator's per-index output.
RefillResult refill_to_batch(std::size_t batch_target, const GroupGenerator& generator,
                             const GroupPredicate& keep = keep_group, std::size_t budget = 0,
                             std::size_t threads = 1);

// ---- rollout log ----------------------------------------------------------
// One JSON object per response: {step, prompt_id, response_index, tokens,
// logprobs_old, entropies, reward, advantage, entropy_threshold,
// token_classes, ratios}. advantage/threshold are null and token_classes
// empty until assigned; ratios are empty when the response was not trained on.

struct RolloutLogRecord {
  std::int64_t step = 0;
  std::uint64_t prompt_id = 0;
  std::size_t response_index = 0;
  std::vector<int> tokens;
  std::vector<double> logprobs_old;
  std::vector<double> entropies;
  double reward = 0.0;
  std::optional<double> advantage;
  std::optional<double> entropy_threshold;
  std::vector<TokenClass> token_classes;
  std::vector<double> ratios;
};

std::vector<RolloutLogRecord> to_log_records(std::int64_t step, std::span<const PromptGroup> groups);
void write_rollout_log(std::ostream& out, std::span<const RolloutLogRecord> records);
// Throws std::runtime_error naming the offending line.
std::vector<RolloutLogRecord> read_rollout_log(std::istream& in);

}  // namespace rlvr
