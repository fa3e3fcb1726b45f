#include "rlvr/gradcheck.hpp"

#include "rlvr/envs.hpp"
#include "rlvr/policy.hpp"
#include "rlvr/rng.hpp"
#include "rlvr/rollout.hpp"

#include <chrono>
#include <cmath>
#include <stdexcept>

namespace rlvr {

namespace {

constexpr double kKinkMargin = 1e-3;

struct Batch {
  PolicyParams theta;
  std::vector<PromptGroup> groups;
  std::vector<double> ref_lp;
};

void perturb(PolicyParams& p, double std, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& n : p.named()) {
    for (double& x : n.tensor.mutable_data()) {
      const double u1 = 1.0 - uniform01(rng);
      const double u2 = uniform01(rng);
      x += std * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }
  }
}

std::vector<ScoredPair> pairs_of(const std::vector<PromptGroup>& groups, std::vector<std::vector<int>>& storage) {
  storage.clear();
  for (const auto& g : groups) {
    for (const auto& r : g.responses) storage.push_back(r.tokens());
  }
  std::vector<ScoredPair> pairs;
  std::size_t k = 0;
  for (const auto& g : groups) {
    for (std::size_t i = 0; i < g.responses.size(); ++i) pairs.push_back(ScoredPair{g.instance.prompt, storage[k++]});
  }
  return pairs;
}

std::vector<double> logprobs_no_grad(const PolicyParams& p, const std::vector<PromptGroup>& groups) {
  NoGradGuard guard;
  std::vector<std::vector<int>> storage;
  const auto pairs = pairs_of(groups, storage);
  const Tensor lp = response_logprobs(p, pairs);
  return {lp.data().begin(), lp.data().end()};
}

bool near_kink(const std::vector<PromptGroup>& groups, const std::vector<double>& lp, const ObjectiveConfig& cfg) {
  std::size_t k = 0;
  for (const auto& g : groups) {
    for (const auto& r : g.responses) {
      for (const auto& s : r.steps) {
        const double ratio = std::exp(lp[k++] - s.logprob_old);
        double lo = 0.0, hi = 0.0;
        switch (cfg.algorithm) {
          case Algorithm::grpo: lo = hi = cfg.eps; break;
          case Algorithm::dapo: lo = cfg.eps_low; hi = cfg.eps_high; break;
          case Algorithm::archer: lo = hi = select_clip(s.token_class, cfg); break;
        }
        if (std::abs(ratio - (1.0 - lo)) < kKinkMargin || std::abs(ratio - (1.0 + hi)) < kKinkMargin) return true;
      }
    }
  }
  return false;
}

// Random policy, perturbed rollout and reference copies, G responses per
// prompt sampled from the rollout copy, alternating 0/1 rewards so every
// group carries signal. Redrawn while any ratio sits near a clip boundary.
Batch make_batch(const GradcheckOptions& opts, const ObjectiveConfig& cfg) {
  const std::vector<TaskKind> kinds{TaskKind::addition, TaskKind::multiplication, TaskKind::sort, TaskKind::reverse};
  const Vocabulary vocab = Vocabulary::for_tasks(kinds);
  ModelConfig mc;
  mc.vocab_size = vocab.size();
  mc.d_model = opts.d_model;
  mc.n_layers = opts.n_layers;
  mc.n_heads = opts.n_heads;
  mc.max_seq_len = 16 + opts.max_response;
  for (std::uint64_t attempt = 0; attempt < 200; ++attempt) {
    const std::uint64_t base = derive_seed(opts.seed, {attempt});
    Batch b;
    b.theta = PolicyParams::initialize(mc, derive_seed(base, {0}));
    perturb(b.theta, 0.2, derive_seed(base, {1}));
    PolicyParams old = b.theta;
    perturb(old, 0.02, derive_seed(base, {2}));
    PolicyParams ref = b.theta;
    perturb(ref, 0.05, derive_seed(base, {3}));

    SamplingConfig sc;
    sc.max_new_tokens = opts.max_response;
    sc.stop_token = vocab.stop_id();
    const int prompts = 2 * opts.scale;
    for (int i = 0; i < prompts; ++i) {
      const auto inst = generate_instance(vocab, kinds[static_cast<std::size_t>(i) % kinds.size()], 2,
                                          derive_seed(base, {4, static_cast<std::uint64_t>(i)}));
      PromptGroup g = rollout_group(vocab, inst, old, opts.group_size, sc, ShapingConfig{},
                                    derive_seed(base, {5, static_cast<std::uint64_t>(i)}));
      for (std::size_t r = 0; r < g.responses.size(); ++r) {
        g.responses[r].reward = static_cast<double>(r % 2);
        g.responses[r].correct = r % 2 == 1;
      }
      b.groups.push_back(std::move(g));
    }
    annotate_groups(b.groups, cfg);
    const auto lp = logprobs_no_grad(b.theta, b.groups);
    if (near_kink(b.groups, lp, cfg)) continue;
    b.ref_lp = logprobs_no_grad(ref, b.groups);
    return b;
  }
  throw std::runtime_error("gradcheck: could not draw a batch away from clip boundaries");
}

// Inference path for the many perturbed evaluations.
double loss_value(const Batch& b, const ObjectiveConfig& cfg) {
  NoGradGuard guard;
  std::vector<std::vector<int>> storage;
  const auto pairs = pairs_of(b.groups, storage);
  return compute_loss(b.groups, Tensor::vector(response_logprobs_nograd(b.theta, pairs)), b.ref_lp, cfg).loss.item();
}

}  // namespace

std::vector<GradcheckCase> default_gradcheck_cases() {
  std::vector<GradcheckCase> out;
  out.push_back({"grpo", ObjectiveConfig::defaults(Algorithm::grpo)});
  auto grpo0 = ObjectiveConfig::defaults(Algorithm::grpo);
  grpo0.beta = 0.0;
  out.push_back({"grpo_beta0", grpo0});
  out.push_back({"dapo", ObjectiveConfig::defaults(Algorithm::dapo)});
  out.push_back({"archer", ObjectiveConfig::defaults(Algorithm::archer)});
  auto archer0 = ObjectiveConfig::defaults(Algorithm::archer);
  archer0.beta_knowledge = 0.0;
  out.push_back({"archer_beta0", archer0});
  return out;
}

GradcheckEntry run_gradcheck(const GradcheckOptions& opts, const GradcheckCase& c) {
  if (opts.scale < 1 || opts.group_size < 2 || opts.max_response < 1) {
    throw std::invalid_argument("gradcheck: scale >= 1, group_size >= 2 and max_response >= 1 required");
  }
  c.objective.validate();
  const auto t0 = std::chrono::steady_clock::now();
  Batch b = make_batch(opts, c.objective);

  GradcheckEntry e;
  e.name = c.name;
  for (const auto& g : b.groups) {
    for (const auto& r : g.responses) e.tokens += r.steps.size();
  }

  b.theta.set_requires_grad(true);
  b.theta.zero_grad();
  {
    Tape tape;
    std::vector<std::vector<int>> storage;
    const auto pairs = pairs_of(b.groups, storage);
    const Tensor lp = response_logprobs(b.theta, pairs);
    tape.backward(compute_loss(b.groups, lp, b.ref_lp, c.objective).loss);
  }
  std::vector<std::vector<double>> analytic;
  for (const auto& n : b.theta.named()) analytic.emplace_back(n.tensor.grad().begin(), n.tensor.grad().end());
  b.theta.set_requires_grad(false);
  b.theta.zero_grad();
  if (opts.corrupt && !analytic.empty() && !analytic[0].empty()) analytic[0][0] = analytic[0][0] * 1.01 + 1e-4;

  const double h = opts.step;
  auto named = b.theta.named();
  for (std::size_t pi = 0; pi < named.size(); ++pi) {
    auto data = named[pi].tensor.mutable_data();
    for (std::size_t j = 0; j < data.size(); ++j) {
      const double x = data[j];
      auto at = [&](double v) {
        data[j] = v;
        return loss_value(b, c.objective);
      };
      const double fd = opts.five_point ? (-at(x + 2 * h) + 8 * at(x + h) - 8 * at(x - h) + at(x - 2 * h)) / (12 * h)
                                        : (at(x + h) - at(x - h)) / (2 * h);
      data[j] = x;
      const double g = analytic[pi][j];
      const double abs_err = std::abs(g - fd);
      const double rel = abs_err / std::max({std::abs(g), std::abs(fd), opts.abs_floor});
      e.max_abs_err = std::max(e.max_abs_err, abs_err);
      if (rel > e.max_rel_err || e.worst_param.empty()) {
        if (rel >= e.max_rel_err) e.worst_param = named[pi].name + "[" + std::to_string(j) + "]";
        e.max_rel_err = std::max(e.max_rel_err, rel);
      }
      ++e.checked;
    }
  }
  e.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  e.passed = e.max_rel_err < opts.tolerance;
  return e;
}

std::vector<GradcheckEntry> run_gradcheck(const GradcheckOptions& opts, const std::vector<GradcheckCase>& cases) {
  std::vector<GradcheckEntry> out;
  for (const auto& c : cases) out.push_back(run_gradcheck(opts, c));
  return out;
}

}  // namespace rlvr
