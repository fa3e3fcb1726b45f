#pragma once

// Loss mathematics for GRPO, DAPO and Archer: group-relative advantages,
// response-level entropy thresholds, dual-token clipping and KL, and the
// aggregate objectives. Losses are returned as -J so the optimizer minimizes.

#include "rlvr/rollout.hpp"
#include "rlvr/tensor.hpp"
#include "rlvr/types.hpp"

#include <span>
#include <vector>

namespace rlvr {

struct ObjectiveConfig {
  Algorithm algorithm = Algorithm::archer;
  double eps = 0.2;  // GRPO
  double eps_low = 0.2;
  double eps_high = 0.28;
  double eps_reasoning = 0.5;
  double eps_knowledge = 0.2;
  double beta = 0.04;  // GRPO
  double beta_reasoning = 0.0;
  double beta_knowledge = 0.001;
  double rho = 0.8;
  double std_floor = 1e-6;

  static ObjectiveConfig defaults(Algorithm algorithm);
  void validate() const;  // throws std::invalid_argument
};

// (R - mean) / max(population std, std_floor). Requires at least two rewards.
std::vector<double> group_advantages(std::span<const double> rewards, double std_floor = 1e-6);

// Linear-interpolation quantile: h = (n-1) rho over the sorted values.
double entropy_quantile(std::span<const double> entropies, double rho);

// reasoning iff e >= tau.
std::vector<TokenClass> classify_tokens(std::span<const double> entropies, double tau);

double select_clip(TokenClass c, const ObjectiveConfig& cfg);
double select_beta(TokenClass c, const ObjectiveConfig& cfg);

// min(r A, clip(r, 1 - eps_low, 1 + eps_high) A).
double surrogate_term(double r, double advantage, double eps_low, double eps_high);
// k3 estimator exp(ref - theta) - (ref - theta) - 1.
double kl_term(double logp_theta, double logp_ref);

// Differentiable counterparts over per-token vectors. Where both branches of
// the min agree the gradient flows through the unclipped branch.
Tensor surrogate_terms(const Tensor& ratio, std::span<const double> advantage, std::span<const double> eps_low,
                       std::span<const double> eps_high);
Tensor kl_terms(const Tensor& logp_theta, std::span<const double> logp_ref);

// Fills advantage, entropy_threshold and token classes on every response.
void annotate_groups(std::span<PromptGroup> groups, const ObjectiveConfig& cfg);

struct TokenLossBreakdown {
  double ratio = 1.0;
  double advantage = 0.0;
  // Half-width of the clip window on the side of 1 that r lies on.
  double epsilon_used = 0.0;
  double beta_used = 0.0;
  double surrogate_term = 0.0;
  double kl_term = 0.0;
  bool clipped = false;
  ClipRegion region = ClipRegion::A;
  TokenClass token_class = TokenClass::knowledge;
};

struct LossResult {
  Tensor loss;  // scalar
  std::vector<TokenLossBreakdown> tokens;
};

// Token log-probabilities are flattened in group, response, token order.
// `logp_theta` is differentiable; `logp_ref` may be empty when every KL
// coefficient is zero.
LossResult archer_loss(std::span<const PromptGroup> groups, const Tensor& logp_theta,
                       std::span<const double> logp_ref, const ObjectiveConfig& cfg);
LossResult dapo_loss(std::span<const PromptGroup> groups, const Tensor& logp_theta, const ObjectiveConfig& cfg);
LossResult grpo_loss(std::span<const PromptGroup> groups, const Tensor& logp_theta,
                     std::span<const double> logp_ref, const ObjectiveConfig& cfg);
LossResult compute_loss(std::span<const PromptGroup> groups, const Tensor& logp_theta,
                        std::span<const double> logp_ref, const ObjectiveConfig& cfg);

std::size_t token_count(std::span<const PromptGroup> groups);
bool needs_reference(const ObjectiveConfig& cfg);

}  // namespace rlvr
