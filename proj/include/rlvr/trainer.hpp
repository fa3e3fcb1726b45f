#pragma once

// Outer RL loop: snapshot the rollout policy, refill a batch of learnable
// groups, annotate advantages and token classes, then one epoch of Adam
// updates over shuffled minibatches. The reference policy is the
// initialization and never changes.

#include "rlvr/analytics.hpp"
#include "rlvr/envs.hpp"
#include "rlvr/objective.hpp"
#include "rlvr/policy.hpp"
#include "rlvr/rollout.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace rlvr {

struct TaskMixEntry {
  TaskKind kind = TaskKind::addition;
  int difficulty_min = 2;
  int difficulty_max = 2;
  double weight = 1.0;
};

struct TrainConfig {
  int total_steps = 200;
  int batch_size = 8;        // kept groups per step
  int minibatch_size = 32;   // responses per update
  int rollouts_per_prompt = 8;
  int epochs = 1;
  double learning_rate = 3e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double max_grad_norm = 0.0;  // 0 disables clipping
  std::uint64_t seed = 0;

  ModelConfig model;  // vocab_size is filled from the task mix
  ObjectiveConfig objective;
  SamplingConfig sampling;
  ShapingConfig shaping;
  std::vector<TaskMixEntry> tasks{TaskMixEntry{}};
  int refill_budget_factor = 10;
  int threads = 1;

  int checkpoint_every = 0;    // 0: final checkpoint only
  int rollout_log_every = 1;   // 0: no rollout log
  std::size_t repetition_n = 4;

  // Held-out evaluation every eval_every steps (0 disables).
  int eval_every = 0;
  int eval_instances = 200;
  int eval_k = 1;
  double eval_temperature = 0.8;
  double eval_top_p = 1.0;
  double stop_at_eval = 0.0;  // stop once held-out avg@k reaches this (0 disables)

  Vocabulary vocabulary() const;
  std::vector<TaskKind> task_kinds() const;
  void validate() const;  // throws std::invalid_argument
};

struct AdamState {
  std::int64_t t = 0;
  std::vector<std::vector<double>> m, v;
};

// One Adam update over params.named() order. Throws std::invalid_argument on
// a non-finite gradient and leaves params and state untouched.
void optimizer_step(PolicyParams& params, std::span<const std::vector<double>> grads, double lr, AdamState& state,
                    double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

struct StepReport {
  int step = 0;
  double mean_reward = 0.0;  // over every sampled response of the step
  std::size_t kept_groups = 0;
  std::size_t dropped_groups = 0;
  std::size_t prompts_consumed = 0;
  bool skipped = false;  // no learnable group within the refill budget
  double mean_entropy = 0.0;
  double repetition_ratio = 0.0;
  double mean_response_length = 0.0;
  double loss = 0.0;
  ClipRegionHistogram regions;
  double reasoning_fraction = 0.0;
  double grad_norm = 0.0;
  std::optional<double> eval_avg;
  std::optional<double> eval_pass;
};

struct TrainHooks {
  std::function<void(const StepReport&)> on_step;
  // Annotated groups with ratios filled, after the update.
  std::function<void(int step, std::span<const PromptGroup>)> on_rollout;
  std::function<void(int step, const PolicyParams&)> on_checkpoint;
  std::function<void(const std::string&)> on_warning;
};

struct TrainResult {
  PolicyParams params;
  PolicyParams reference;
  std::vector<StepReport> reports;
  int steps_run = 0;
};

PolicyParams initial_policy(const TrainConfig& cfg);

TrainResult train(const TrainConfig& cfg, const TrainHooks& hooks = {});
TrainResult train(const TrainConfig& cfg, PolicyParams init, const TrainHooks& hooks = {});

// Held-out instances, never used as training prompts.
std::vector<TaskInstance> heldout_set(const TrainConfig& cfg);

struct EvalResult {
  std::vector<EvalRow> rows;                  // per task kind, then "overall"
  std::vector<std::vector<bool>> correct;     // per instance, K flags
};

EvalResult evaluate(const PolicyParams& params, const Vocabulary& vocab, std::span<const TaskInstance> tasks, int k,
                    const SamplingConfig& sampling, std::uint64_t seed, int threads = 1);

enum class SweepAxis { beta_knowledge, eps_knowledge, eps_reasoning };
std::string_view to_string(SweepAxis axis);
SweepAxis parse_sweep_axis(std::string_view name);
void apply_axis(TrainConfig& cfg, SweepAxis axis, double value);

struct SweepRun {
  double value = 0.0;
  TrainResult result;
};

std::vector<SweepRun> ablation_sweep(const TrainConfig& base, SweepAxis axis, std::span<const double> values,
                                     const std::function<TrainHooks(double value)>& hooks_for = {});

// ---- step report serialization -------------------------------------------
std::string step_report_json(const StepReport& r);
void write_step_csv_header(std::ostream& out);
void write_step_csv_row(std::ostream& out, const StepReport& r);

}  // namespace rlvr
