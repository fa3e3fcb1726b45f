#include "rlvr/trainer.hpp"

#include "rlvr/parallel.hpp"
#include "rlvr/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace rlvr {

namespace {

// Seed stream labels.
constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kStepStream = 2;
constexpr std::uint64_t kHeldoutStream = 3;
constexpr std::uint64_t kEvalStream = 4;

constexpr std::uint64_t kTaskPick = 0;
constexpr std::uint64_t kInstance = 1;
constexpr std::uint64_t kRollout = 2;
constexpr std::uint64_t kShuffle = 3;

}  // namespace

// ---- config ---------------------------------------------------------------

std::vector<TaskKind> TrainConfig::task_kinds() const {
  std::vector<TaskKind> kinds;
  for (const auto& t : tasks) {
    if (std::find(kinds.begin(), kinds.end(), t.kind) == kinds.end()) kinds.push_back(t.kind);
  }
  return kinds;
}

Vocabulary TrainConfig::vocabulary() const {
  const auto kinds = task_kinds();
  return Vocabulary::for_tasks(kinds);
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument(msg); };
  if (total_steps < 0) fail("total_steps must be >= 0");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (rollouts_per_prompt < 2) fail("rollouts_per_prompt must be >= 2");
  if (minibatch_size < 1) fail("minibatch_size must be >= 1");
  if (epochs < 1) fail("epochs must be >= 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) fail("learning_rate must be > 0");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    fail("adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) fail("adam_eps must be > 0");
  if (max_grad_norm < 0.0) fail("max_grad_norm must be >= 0");
  if (tasks.empty()) fail("task mix is empty");
  for (const auto& t : tasks) {
    const auto range = difficulty_range(t.kind);
    if (t.difficulty_min < range.min || t.difficulty_max > range.max || t.difficulty_min > t.difficulty_max) {
      fail("difficulty range for " + std::string(to_string(t.kind)) + " must lie within [" +
           std::to_string(range.min) + ", " + std::to_string(range.max) + "]");
    }
    if (!(t.weight > 0.0)) fail("task weights must be > 0");
  }
  if (refill_budget_factor < 1) fail("refill_budget_factor must be >= 1");
  if (threads < 1) fail("threads must be >= 1");
  if (checkpoint_every < 0 || eval_every < 0 || rollout_log_every < 0) fail("cadences must be >= 0");
  if (repetition_n < 1) fail("repetition_n must be >= 1");
  if (eval_instances < 1 || eval_k < 1) fail("eval_instances and eval_k must be >= 1");
  if (stop_at_eval < 0.0 || stop_at_eval > 1.0) fail("stop_at_eval must lie in [0, 1]");
  objective.validate();
  sampling.validate();
  if (sampling.greedy) fail("training requires stochastic sampling");
  ModelConfig m = model;
  m.vocab_size = vocabulary().size();
  m.validate();
}

// ---- optimizer ------------------------------------------------------------

void optimizer_step(PolicyParams& params, std::span<const std::vector<double>> grads, double lr, AdamState& state,
                    double beta1, double beta2, double eps) {
  auto named = params.named();
  if (grads.size() != named.size()) throw std::invalid_argument("optimizer_step: gradient count mismatch");
  for (std::size_t i = 0; i < named.size(); ++i) {
    if (grads[i].size() != named[i].tensor.size()) {
      throw std::invalid_argument("optimizer_step: gradient size mismatch for " + named[i].name);
    }
    for (double g : grads[i]) {
      if (!std::isfinite(g)) throw std::invalid_argument("optimizer_step: non-finite gradient in " + named[i].name);
    }
  }
  if (state.m.empty()) {
    for (const auto& n : named) {
      state.m.emplace_back(n.tensor.size(), 0.0);
      state.v.emplace_back(n.tensor.size(), 0.0);
    }
  }
  ++state.t;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < named.size(); ++i) {
    auto w = named[i].tensor.mutable_data();
    auto& m = state.m[i];
    auto& v = state.v[i];
    const auto& g = grads[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
      v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
      const double update = lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps);
      if (update != 0.0) w[j] -= update;
    }
  }
}

// ---- helpers --------------------------------------------------------------

namespace {

struct Sampler {
  const TrainConfig& cfg;
  const Vocabulary& vocab;
  double total_weight = 0.0;

  Sampler(const TrainConfig& c, const Vocabulary& v) : cfg(c), vocab(v) {
    for (const auto& t : cfg.tasks) total_weight += t.weight;
  }

  TaskInstance draw(std::uint64_t seed) const {
    Rng rng(derive_seed(seed, {kTaskPick}));
    const double u = uniform01(rng) * total_weight;
    std::size_t idx = 0;
    double acc = 0.0;
    for (; idx + 1 < cfg.tasks.size(); ++idx) {
      acc += cfg.tasks[idx].weight;
      if (u < acc) break;
    }
    const auto& entry = cfg.tasks[idx];
    const int difficulty = static_cast<int>(uniform_int(rng, entry.difficulty_min, entry.difficulty_max));
    return generate_instance(vocab, entry.kind, difficulty, derive_seed(seed, {kInstance}));
  }
};

std::vector<ScoredPair> pairs_of(std::span<const PromptGroup> groups, std::vector<std::vector<int>>& storage) {
  storage.clear();
  for (const auto& g : groups) {
    for (const auto& r : g.responses) storage.push_back(r.tokens());
  }
  std::vector<ScoredPair> pairs;
  std::size_t k = 0;
  for (const auto& g : groups) {
    for (std::size_t i = 0; i < g.responses.size(); ++i, ++k) {
      pairs.push_back(ScoredPair{g.instance.prompt, storage[k]});
    }
  }
  return pairs;
}

std::vector<double> score(const PolicyParams& params, std::span<const PromptGroup> groups, double temperature) {
  NoGradGuard guard;
  std::vector<std::vector<int>> storage;
  const auto pairs = pairs_of(groups, storage);
  const Tensor lp = response_logprobs(params, pairs, temperature);
  return std::vector<double>(lp.data().begin(), lp.data().end());
}

void warn(const TrainHooks& hooks, const std::string& msg) {
  if (hooks.on_warning) hooks.on_warning(msg);
}

}  // namespace

PolicyParams initial_policy(const TrainConfig& cfg) {
  ModelConfig m = cfg.model;
  m.vocab_size = cfg.vocabulary().size();
  return PolicyParams::initialize(m, derive_seed(cfg.seed, {kInitStream}));
}

std::vector<TaskInstance> heldout_set(const TrainConfig& cfg) {
  const Vocabulary vocab = cfg.vocabulary();
  std::vector<TaskInstance> out;
  std::unordered_set<std::string> seen;
  const std::size_t n_entries = cfg.tasks.size();
  std::uint64_t attempt = 0;
  const std::uint64_t max_attempts = static_cast<std::uint64_t>(cfg.eval_instances) * 50;
  while (out.size() < static_cast<std::size_t>(cfg.eval_instances) && attempt < max_attempts) {
    const std::size_t j = out.size();
    const auto& entry = cfg.tasks[j % n_entries];
    const int span = entry.difficulty_max - entry.difficulty_min + 1;
    const int difficulty = entry.difficulty_min + static_cast<int>((j / n_entries) % static_cast<std::size_t>(span));
    auto inst = generate_instance(vocab, entry.kind, difficulty, derive_seed(cfg.seed, {kHeldoutStream, attempt++}));
    if (seen.insert(inst.prompt_text).second) out.push_back(std::move(inst));
  }
  return out;
}

// ---- evaluation -----------------------------------------------------------

EvalResult evaluate(const PolicyParams& params, const Vocabulary& vocab, std::span<const TaskInstance> tasks, int k,
                    const SamplingConfig& sampling, std::uint64_t seed, int threads) {
  if (k < 1) throw std::invalid_argument("evaluate: K must be >= 1");
  if (tasks.empty()) throw std::invalid_argument("evaluate: empty task set");
  EvalResult res;
  res.correct.assign(tasks.size(), {});
  std::vector<double> baseline(tasks.size(), 0.0);
  parallel_for(tasks.size(), static_cast<std::size_t>(threads), [&](std::size_t i) {
    std::vector<std::uint64_t> seeds;
    for (int j = 0; j < k; ++j) seeds.push_back(derive_seed(seed, {kEvalStream, i, static_cast<std::uint64_t>(j)}));
    const auto samples = sample_responses(params, tasks[i].prompt, sampling, seeds);
    std::vector<bool> flags;
    std::vector<int> full(tasks[i].prompt);
    for (const auto& s : samples) {
      full.resize(tasks[i].prompt.size());
      full.insert(full.end(), s.tokens.begin(), s.tokens.end());
      flags.push_back(is_equivalent(vocab, full, tasks[i].ground_truth));
    }
    res.correct[i] = std::move(flags);
    baseline[i] = uniform_policy_success(vocab, tasks[i].ground_truth, sampling.max_new_tokens);
  });

  std::vector<std::string> order;
  std::map<std::string, std::vector<std::size_t>> by_task;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const std::string name(to_string(tasks[i].kind));
    if (!by_task.count(name)) order.push_back(name);
    by_task[name].push_back(i);
  }
  auto row_for = [&](const std::string& name, std::span<const std::size_t> idx) {
    EvalRow row;
    row.task = name;
    row.instances = idx.size();
    row.k = static_cast<std::size_t>(k);
    for (std::size_t i : idx) {
      row.avg_at_k += avg_at_k(res.correct[i]);
      row.pass_at_k += pass_at_k(res.correct[i]) ? 1.0 : 0.0;
      row.random_baseline += baseline[i];
    }
    const double n = static_cast<double>(idx.size());
    row.avg_at_k /= n;
    row.pass_at_k /= n;
    row.random_baseline /= n;
    return row;
  };
  std::vector<std::size_t> all(tasks.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  for (const auto& name : order) res.rows.push_back(row_for(name, by_task[name]));
  res.rows.push_back(row_for("overall", all));
  return res;
}

// ---- training loop --------------------------------------------------------

TrainResult train(const TrainConfig& cfg, const TrainHooks& hooks) { return train(cfg, initial_policy(cfg), hooks); }

TrainResult train(const TrainConfig& cfg, PolicyParams init, const TrainHooks& hooks) {
  cfg.validate();
  const Vocabulary vocab = cfg.vocabulary();
  if (init.config.vocab_size != vocab.size()) throw std::invalid_argument("train: policy vocabulary size mismatch");

  TrainResult result;
  result.reference = init;
  result.params = std::move(init);
  PolicyParams& params = result.params;
  const PolicyParams& reference = result.reference;

  const Sampler sampler(cfg, vocab);
  const auto heldout = heldout_set(cfg);
  std::unordered_set<std::string> heldout_prompts;
  for (const auto& t : heldout) heldout_prompts.insert(t.prompt_text);

  SamplingConfig sampling = cfg.sampling;
  sampling.stop_token = vocab.stop_id();
  SamplingConfig eval_sampling = sampling;
  eval_sampling.temperature = cfg.eval_temperature;
  eval_sampling.top_p = cfg.eval_top_p;
  const bool rescore_old = sampling.top_p < 1.0;
  const bool use_ref = needs_reference(cfg.objective);
  const std::size_t target = static_cast<std::size_t>(cfg.batch_size);

  AdamState adam;
  for (int step = 0; step < cfg.total_steps; ++step) {
    const std::uint64_t step_seed = derive_seed(cfg.seed, {kStepStream, static_cast<std::uint64_t>(step)});
    const PolicyParams params_old = params;

    auto generator = [&](std::size_t i) {
      TaskInstance inst;
      for (std::uint64_t attempt = 0;; ++attempt) {
        inst = sampler.draw(derive_seed(step_seed, {kInstance, i, attempt}));
        if (!heldout_prompts.count(inst.prompt_text) || attempt >= 64) break;
      }
      PromptGroup g = rollout_group(vocab, inst, params_old, cfg.rollouts_per_prompt, sampling, cfg.shaping,
                                    derive_seed(step_seed, {kRollout, i}));
      g.prompt_id = static_cast<std::uint64_t>(step) * 1000000ULL + i;
      return g;
    };

    StepReport report;
    report.step = step;
    double reward_sum = 0.0, entropy_sum = 0.0, rep_sum = 0.0, len_sum = 0.0;
    std::size_t n_resp = 0, n_tok = 0;
    auto keep = [&](const PromptGroup& g) {
      for (const auto& r : g.responses) {
        reward_sum += r.reward;
        for (const auto& s : r.steps) entropy_sum += s.entropy;
        n_tok += r.steps.size();
        len_sum += static_cast<double>(r.steps.size());
        const auto toks = r.tokens();
        rep_sum += repetition_ratio(toks, cfg.repetition_n);
        ++n_resp;
      }
      return keep_group(g);
    };
    RefillResult refill = refill_to_batch(target, generator, keep, target * cfg.refill_budget_factor,
                                          static_cast<std::size_t>(cfg.threads));
    report.kept_groups = refill.kept.size();
    report.dropped_groups = refill.dropped;
    report.prompts_consumed = refill.prompts_consumed;
    report.mean_reward = n_resp ? reward_sum / static_cast<double>(n_resp) : 0.0;
    report.mean_entropy = n_tok ? entropy_sum / static_cast<double>(n_tok) : 0.0;
    report.repetition_ratio = n_resp ? rep_sum / static_cast<double>(n_resp) : 0.0;
    report.mean_response_length = n_resp ? len_sum / static_cast<double>(n_resp) : 0.0;

    std::vector<PromptGroup>& groups = refill.kept;
    if (groups.empty()) {
      report.skipped = true;
      warn(hooks, "step " + std::to_string(step) + ": no learnable group within " +
                      std::to_string(refill.prompts_consumed) + " prompts; update skipped");
    } else {
      if (refill.budget_exhausted) {
        warn(hooks, "step " + std::to_string(step) + ": refill budget exhausted with " +
                        std::to_string(groups.size()) + " of " + std::to_string(target) + " groups");
      }
      annotate_groups(groups, cfg.objective);
      if (rescore_old) {
        for (auto& g : groups) {
          const auto lp = score(params_old, std::span<const PromptGroup>(&g, 1), sampling.temperature);
          std::size_t k = 0;
          for (auto& r : g.responses) {
            for (auto& s : r.steps) s.logprob_old = lp[k++];
          }
        }
      }

      // Flat response index -> (group, response).
      std::vector<std::pair<std::size_t, std::size_t>> slots;
      for (std::size_t gi = 0; gi < groups.size(); ++gi) {
        for (std::size_t ri = 0; ri < groups[gi].responses.size(); ++ri) slots.emplace_back(gi, ri);
      }
      std::size_t class_reasoning = 0, class_total = 0;
      for (const auto& g : groups) {
        for (const auto& r : g.responses) {
          for (const auto& s : r.steps) class_reasoning += s.token_class == TokenClass::reasoning ? 1 : 0;
          class_total += r.steps.size();
        }
      }
      report.reasoning_fraction = class_total ? static_cast<double>(class_reasoning) / class_total : 0.0;

      Rng shuffle_rng(derive_seed(step_seed, {kShuffle}));
      double loss_sum = 0.0, grad_norm_sum = 0.0;
      std::size_t updates = 0;
      for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<std::size_t> perm(slots.size());
        for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
        for (std::size_t i = perm.size(); i > 1; --i) {
          const auto j = static_cast<std::size_t>(uniform_int(shuffle_rng, 0, static_cast<std::int64_t>(i) - 1));
          std::swap(perm[i - 1], perm[j]);
        }
        const std::size_t mb = static_cast<std::size_t>(cfg.minibatch_size);
        for (std::size_t start = 0; start < perm.size(); start += mb) {
          std::vector<std::size_t> chosen(perm.begin() + static_cast<std::ptrdiff_t>(start),
                                          perm.begin() + static_cast<std::ptrdiff_t>(std::min(start + mb, perm.size())));
          std::sort(chosen.begin(), chosen.end());
          std::vector<PromptGroup> mini;
          std::vector<std::pair<std::size_t, std::size_t>> origin;
          for (std::size_t c : chosen) {
            const auto [gi, ri] = slots[c];
            if (mini.empty() || origin.back().first != gi) {
              PromptGroup sub;
              sub.prompt_id = groups[gi].prompt_id;
              sub.instance = groups[gi].instance;
              mini.push_back(std::move(sub));
            }
            mini.back().responses.push_back(groups[gi].responses[ri]);
            origin.emplace_back(gi, ri);
          }

          std::vector<double> ref_lp;
          if (use_ref) ref_lp = score(reference, mini, sampling.temperature);

          params.zero_grad();
          params.set_requires_grad(true);
          std::vector<std::vector<double>> grads;
          LossResult lr;
          {
            Tape tape;
            std::vector<std::vector<int>> storage;
            const auto pairs = pairs_of(mini, storage);
            const Tensor lp = response_logprobs(params, pairs, sampling.temperature);
            lr = compute_loss(mini, lp, ref_lp, cfg.objective);
            tape.backward(lr.loss);
          }
          double sq = 0.0;
          for (const auto& n : params.named()) {
            grads.emplace_back(n.tensor.grad().begin(), n.tensor.grad().end());
            for (double g : grads.back()) sq += g * g;
          }
          params.set_requires_grad(false);
          params.zero_grad();
          const double norm = std::sqrt(sq);
          if (cfg.max_grad_norm > 0.0 && norm > cfg.max_grad_norm) {
            const double s = cfg.max_grad_norm / norm;
            for (auto& g : grads) {
              for (double& x : g) x *= s;
            }
          }
          optimizer_step(params, grads, cfg.learning_rate, adam, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);

          std::size_t k = 0;
          for (std::size_t o = 0; o < origin.size(); ++o) {
            auto& resp = groups[origin[o].first].responses[origin[o].second];
            resp.ratios.clear();
            for (std::size_t t = 0; t < resp.steps.size(); ++t) resp.ratios.push_back(lr.tokens[k++].ratio);
          }
          report.regions.merge(region_histogram(lr.tokens));
          loss_sum += lr.loss.item();
          grad_norm_sum += norm;
          ++updates;
        }
      }
      report.loss = loss_sum / static_cast<double>(updates);
      report.grad_norm = grad_norm_sum / static_cast<double>(updates);
    }

    if (hooks.on_rollout) hooks.on_rollout(step, groups);
    result.steps_run = step + 1;

    const bool eval_now = cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0;
    if (eval_now) {
      const auto ev = evaluate(params, vocab, heldout, cfg.eval_k, eval_sampling, cfg.seed, cfg.threads);
      report.eval_avg = ev.rows.back().avg_at_k;
      report.eval_pass = ev.rows.back().pass_at_k;
    }
    if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 && hooks.on_checkpoint) {
      hooks.on_checkpoint(step + 1, params);
    }
    result.reports.push_back(report);
    if (hooks.on_step) hooks.on_step(report);
    if (cfg.stop_at_eval > 0.0 && report.eval_avg && *report.eval_avg >= cfg.stop_at_eval) break;
  }
  return result;
}

// ---- sweeps ---------------------------------------------------------------

std::string_view to_string(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::beta_knowledge: return "beta_knowledge";
    case SweepAxis::eps_knowledge: return "eps_knowledge";
    case SweepAxis::eps_reasoning: return "eps_reasoning";
  }
  return "?";
}

SweepAxis parse_sweep_axis(std::string_view name) {
  if (name == "beta_knowledge") return SweepAxis::beta_knowledge;
  if (name == "eps_knowledge") return SweepAxis::eps_knowledge;
  if (name == "eps_reasoning") return SweepAxis::eps_reasoning;
  throw std::invalid_argument("unknown sweep axis '" + std::string(name) +
                              "' (expected beta_knowledge, eps_knowledge or eps_reasoning)");
}

void apply_axis(TrainConfig& cfg, SweepAxis axis, double value) {
  switch (axis) {
    case SweepAxis::beta_knowledge: cfg.objective.beta_knowledge = value; break;
    case SweepAxis::eps_knowledge: cfg.objective.eps_knowledge = value; break;
    case SweepAxis::eps_reasoning: cfg.objective.eps_reasoning = value; break;
  }
}

std::vector<SweepRun> ablation_sweep(const TrainConfig& base, SweepAxis axis, std::span<const double> values,
                                     const std::function<TrainHooks(double value)>& hooks_for) {
  if (values.empty()) throw std::invalid_argument("ablation_sweep: no values");
  std::vector<TrainConfig> configs;
  for (double v : values) {
    TrainConfig cfg = base;
    apply_axis(cfg, axis, v);
    cfg.validate();
    configs.push_back(std::move(cfg));
  }
  std::vector<SweepRun> out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    SweepRun run;
    run.value = values[i];
    run.result = train(configs[i], hooks_for ? hooks_for(values[i]) : TrainHooks{});
    out.push_back(std::move(run));
  }
  return out;
}

// ---- serialization --------------------------------------------------------

std::string step_report_json(const StepReport& r) {
  nlohmann::ordered_json j;
  j["step"] = r.step;
  j["mean_reward"] = r.mean_reward;
  j["kept_groups"] = r.kept_groups;
  j["dropped_groups"] = r.dropped_groups;
  j["prompts_consumed"] = r.prompts_consumed;
  j["skipped"] = r.skipped;
  j["mean_entropy"] = r.mean_entropy;
  j["repetition_ratio"] = r.repetition_ratio;
  j["mean_response_length"] = r.mean_response_length;
  j["loss"] = r.loss;
  nlohmann::ordered_json regions;
  for (auto reg : kAllRegions) regions[std::string(to_string(reg))] = r.regions.region_total(reg);
  j["clip_regions"] = regions;
  j["reasoning_fraction"] = r.reasoning_fraction;
  j["grad_norm"] = r.grad_norm;
  j["eval_avg"] = r.eval_avg ? nlohmann::ordered_json(*r.eval_avg) : nlohmann::ordered_json(nullptr);
  j["eval_pass"] = r.eval_pass ? nlohmann::ordered_json(*r.eval_pass) : nlohmann::ordered_json(nullptr);
  return j.dump();
}

void write_step_csv_header(std::ostream& out) {
  out << "step,mean_reward,kept_groups,dropped_groups,prompts_consumed,skipped,mean_entropy,repetition_ratio,"
         "mean_response_length,loss,region_A,region_B,region_C,region_E,region_F,reasoning_fraction,grad_norm,"
         "eval_avg,eval_pass\n";
}

void write_step_csv_row(std::ostream& out, const StepReport& r) {
  std::ostringstream s;
  s << std::setprecision(17);
  s << r.step << ',' << r.mean_reward << ',' << r.kept_groups << ',' << r.dropped_groups << ',' << r.prompts_consumed
    << ',' << (r.skipped ? 1 : 0) << ',' << r.mean_entropy << ',' << r.repetition_ratio << ','
    << r.mean_response_length << ',' << r.loss;
  for (auto reg : kAllRegions) s << ',' << r.regions.region_total(reg);
  s << ',' << r.reasoning_fraction << ',' << r.grad_norm << ',';
  if (r.eval_avg) s << *r.eval_avg;
  s << ',';
  if (r.eval_pass) s << *r.eval_pass;
  out << s.str() << '\n';
}

}  // namespace rlvr
