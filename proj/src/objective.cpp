#include "rlvr/objective.hpp"

#include "rlvr/analytics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace rlvr {

ObjectiveConfig ObjectiveConfig::defaults(Algorithm algorithm) {
  ObjectiveConfig cfg;
  cfg.algorithm = algorithm;
  return cfg;
}

void ObjectiveConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("objective: " + msg); };
  for (double e : {eps, eps_low, eps_high, eps_reasoning, eps_knowledge}) {
    if (!(e >= 0.0) || !std::isfinite(e)) fail("clip ranges must be finite and >= 0");
  }
  if (eps_low >= 1.0 || eps >= 1.0 || eps_reasoning >= 1.0 || eps_knowledge >= 1.0) {
    fail("lower clip bounds must stay positive (eps < 1)");
  }
  for (double b : {beta, beta_reasoning, beta_knowledge}) {
    if (!(b >= 0.0) || !std::isfinite(b)) fail("KL coefficients must be finite and >= 0");
  }
  if (eps_reasoning < eps_knowledge) fail("eps_reasoning must be >= eps_knowledge");
  if (beta_knowledge < beta_reasoning) fail("beta_knowledge must be >= beta_reasoning");
  if (!(rho > 0.0 && rho < 1.0)) fail("rho must lie in (0, 1)");
  if (!(std_floor > 0.0)) fail("std_floor must be > 0");
}

std::vector<double> group_advantages(std::span<const double> rewards, double std_floor) {
  if (rewards.size() < 2) throw std::invalid_argument("group_advantages: need at least two rewards");
  const double n = static_cast<double>(rewards.size());
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  var /= n;
  const double denom = std::max(std::sqrt(var), std_floor);
  std::vector<double> out;
  out.reserve(rewards.size());
  for (double r : rewards) out.push_back((r - mean) / denom);
  return out;
}

double entropy_quantile(std::span<const double> entropies, double rho) {
  if (entropies.empty()) throw std::invalid_argument("entropy_quantile: empty list");
  std::vector<double> x(entropies.begin(), entropies.end());
  std::sort(x.begin(), x.end());
  const double h = static_cast<double>(x.size() - 1) * rho;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= x.size()) return x.back();
  return x[lo] + (h - static_cast<double>(lo)) * (x[lo + 1] - x[lo]);
}

std::vector<TokenClass> classify_tokens(std::span<const double> entropies, double tau) {
  std::vector<TokenClass> out;
  out.reserve(entropies.size());
  for (double e : entropies) out.push_back(e >= tau ? TokenClass::reasoning : TokenClass::knowledge);
  return out;
}

double select_clip(TokenClass c, const ObjectiveConfig& cfg) {
  return c == TokenClass::reasoning ? cfg.eps_reasoning : cfg.eps_knowledge;
}

double select_beta(TokenClass c, const ObjectiveConfig& cfg) {
  return c == TokenClass::reasoning ? cfg.beta_reasoning : cfg.beta_knowledge;
}

double surrogate_term(double r, double advantage, double eps_low, double eps_high) {
  if (!(r > 0.0)) throw std::invalid_argument("surrogate_term: ratio must be positive");
  const double clipped = std::clamp(r, 1.0 - eps_low, 1.0 + eps_high);
  return std::min(r * advantage, clipped * advantage);
}

double kl_term(double logp_theta, double logp_ref) {
  const double d = logp_ref - logp_theta;
  return std::exp(d) - d - 1.0;
}

Tensor surrogate_terms(const Tensor& ratio, std::span<const double> advantage, std::span<const double> eps_low,
                       std::span<const double> eps_high) {
  const std::size_t n = ratio.size();
  if (advantage.size() != n || eps_low.size() != n || eps_high.size() != n) {
    throw std::invalid_argument("surrogate_terms: length mismatch");
  }
  std::vector<double> lo(n), hi(n);
  for (std::size_t i = 0; i < n; ++i) {
    lo[i] = 1.0 - eps_low[i];
    hi[i] = 1.0 + eps_high[i];
  }
  Tensor unclipped = mul_const(ratio, advantage);
  Tensor clipped = mul_const(clamp(ratio, lo, hi), advantage);
  return minimum(unclipped, clipped);
}

Tensor kl_terms(const Tensor& logp_theta, std::span<const double> logp_ref) {
  Tensor d = add_const(neg(logp_theta), logp_ref);
  return add_scalar(sub(exp(d), d), -1.0);
}

void annotate_groups(std::span<PromptGroup> groups, const ObjectiveConfig& cfg) {
  for (auto& g : groups) {
    std::vector<double> rewards;
    rewards.reserve(g.responses.size());
    for (const auto& r : g.responses) rewards.push_back(r.reward);
    const auto adv = group_advantages(rewards, cfg.std_floor);
    for (std::size_t i = 0; i < g.responses.size(); ++i) {
      auto& resp = g.responses[i];
      resp.advantage = adv[i];
      const auto ent = resp.entropies();
      if (ent.empty()) throw std::invalid_argument("annotate_groups: empty response");
      const double tau = entropy_quantile(ent, cfg.rho);
      resp.entropy_threshold = tau;
      const auto classes = classify_tokens(ent, tau);
      for (std::size_t t = 0; t < classes.size(); ++t) resp.steps[t].token_class = classes[t];
      resp.classified = true;
    }
  }
}

std::size_t token_count(std::span<const PromptGroup> groups) {
  std::size_t n = 0;
  for (const auto& g : groups) {
    for (const auto& r : g.responses) n += r.steps.size();
  }
  return n;
}

bool needs_reference(const ObjectiveConfig& cfg) {
  switch (cfg.algorithm) {
    case Algorithm::grpo: return cfg.beta > 0.0;
    case Algorithm::dapo: return false;
    case Algorithm::archer: return cfg.beta_reasoning > 0.0 || cfg.beta_knowledge > 0.0;
  }
  return false;
}

namespace {

enum class Aggregation { token, sample };

struct TokenParams {
  std::vector<double> logp_old, advantage, eps_low, eps_high, beta;
  std::vector<TokenClass> classes;
  std::vector<double> weight;
};

TokenParams gather(std::span<const PromptGroup> groups, const ObjectiveConfig& cfg, Aggregation agg) {
  TokenParams p;
  const std::size_t n_tokens = token_count(groups);
  if (n_tokens == 0) throw std::invalid_argument("loss: batch has no tokens");
  const std::size_t n_groups = groups.size();
  for (const auto& g : groups) {
    if (g.responses.empty()) throw std::invalid_argument("loss: group without responses");
    for (const auto& r : g.responses) {
      if (!r.advantage) throw std::invalid_argument("loss: response is missing its advantage");
      if (cfg.algorithm == Algorithm::archer && (!r.entropy_threshold || !r.classified)) {
        throw std::invalid_argument("loss: response is missing its entropy threshold or token classes");
      }
      if (r.steps.empty()) throw std::invalid_argument("loss: empty response");
      const double w = agg == Aggregation::token
                           ? 1.0 / static_cast<double>(n_tokens)
                           : 1.0 / (static_cast<double>(r.steps.size()) * static_cast<double>(g.responses.size()) *
                                    static_cast<double>(n_groups));
      for (const auto& s : r.steps) {
        p.logp_old.push_back(s.logprob_old);
        p.advantage.push_back(*r.advantage);
        p.classes.push_back(s.token_class);
        p.weight.push_back(w);
        switch (cfg.algorithm) {
          case Algorithm::grpo:
            p.eps_low.push_back(cfg.eps);
            p.eps_high.push_back(cfg.eps);
            p.beta.push_back(cfg.beta);
            break;
          case Algorithm::dapo:
            p.eps_low.push_back(cfg.eps_low);
            p.eps_high.push_back(cfg.eps_high);
            p.beta.push_back(0.0);
            break;
          case Algorithm::archer: {
            const double e = select_clip(s.token_class, cfg);
            p.eps_low.push_back(e);
            p.eps_high.push_back(e);
            p.beta.push_back(select_beta(s.token_class, cfg));
            break;
          }
        }
      }
    }
  }
  return p;
}

LossResult build_loss(std::span<const PromptGroup> groups, const Tensor& logp_theta, std::span<const double> logp_ref,
                      const ObjectiveConfig& cfg, Aggregation agg) {
  const TokenParams p = gather(groups, cfg, agg);
  const std::size_t n = p.logp_old.size();
  if (logp_theta.size() != n) {
    throw std::invalid_argument("loss: expected " + std::to_string(n) + " token log-probs, got " +
                                std::to_string(logp_theta.size()));
  }
  const bool use_kl = std::any_of(p.beta.begin(), p.beta.end(), [](double b) { return b > 0.0; });
  if (use_kl && logp_ref.size() != n) throw std::invalid_argument("loss: reference log-probs required");

  std::vector<double> neg_old(n);
  for (std::size_t i = 0; i < n; ++i) neg_old[i] = -p.logp_old[i];
  Tensor ratio = exp(add_const(logp_theta, neg_old));
  Tensor terms = surrogate_terms(ratio, p.advantage, p.eps_low, p.eps_high);
  Tensor kl;
  if (use_kl) {
    kl = kl_terms(logp_theta, logp_ref);
    terms = sub(terms, mul_const(kl, p.beta));
  }

  LossResult out;
  out.loss = neg(weighted_sum(terms, p.weight));
  out.tokens.resize(n);
  const auto rv = ratio.data();
  for (std::size_t i = 0; i < n; ++i) {
    auto& b = out.tokens[i];
    b.ratio = rv[i];
    b.advantage = p.advantage[i];
    b.epsilon_used = rv[i] >= 1.0 ? p.eps_high[i] : p.eps_low[i];
    b.beta_used = p.beta[i];
    b.surrogate_term = surrogate_term(rv[i], p.advantage[i], p.eps_low[i], p.eps_high[i]);
    b.kl_term = use_kl ? kl.data()[i] : 0.0;
    b.clipped = rv[i] < 1.0 - p.eps_low[i] || rv[i] > 1.0 + p.eps_high[i];
    b.token_class = p.classes[i];
    b.region = clip_region(rv[i], p.advantage[i], p.classes[i], cfg);
  }
  return out;
}

void require(const ObjectiveConfig& cfg, Algorithm a, const char* name) {
  if (cfg.algorithm != a) throw std::invalid_argument(std::string(name) + ": config is for " +
                                                      std::string(to_string(cfg.algorithm)));
}

}  // namespace

LossResult archer_loss(std::span<const PromptGroup> groups, const Tensor& logp_theta,
                       std::span<const double> logp_ref, const ObjectiveConfig& cfg) {
  require(cfg, Algorithm::archer, "archer_loss");
  return build_loss(groups, logp_theta, logp_ref, cfg, Aggregation::token);
}

LossResult dapo_loss(std::span<const PromptGroup> groups, const Tensor& logp_theta, const ObjectiveConfig& cfg) {
  require(cfg, Algorithm::dapo, "dapo_loss");
  return build_loss(groups, logp_theta, {}, cfg, Aggregation::token);
}

LossResult grpo_loss(std::span<const PromptGroup> groups, const Tensor& logp_theta,
                     std::span<const double> logp_ref, const ObjectiveConfig& cfg) {
  require(cfg, Algorithm::grpo, "grpo_loss");
  return build_loss(groups, logp_theta, logp_ref, cfg, Aggregation::sample);
}

LossResult compute_loss(std::span<const PromptGroup> groups, const Tensor& logp_theta,
                        std::span<const double> logp_ref, const ObjectiveConfig& cfg) {
  switch (cfg.algorithm) {
    case Algorithm::grpo: return grpo_loss(groups, logp_theta, logp_ref, cfg);
    case Algorithm::dapo: return dapo_loss(groups, logp_theta, cfg);
    case Algorithm::archer: return archer_loss(groups, logp_theta, logp_ref, cfg);
  }
  throw std::invalid_argument("unknown algorithm");
}

}  // namespace rlvr
