#pragma once

// Hand-built rollout batches for loss and analytics tests.

#include "rlvr/objective.hpp"
#include "rlvr/rng.hpp"
#include "rlvr/rollout.hpp"

#include <cmath>
#include <vector>

namespace fixture {

struct Batch {
  std::vector<rlvr::PromptGroup> groups;
  std::vector<double> logp_theta;
  std::vector<double> logp_ref;
};

inline double normal(rlvr::Rng& rng) {
  const double u1 = 1.0 - rlvr::uniform01(rng);
  const double u2 = rlvr::uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

// Random groups with mixed rewards, random lengths in [1, max_len], random
// old/current/reference log-probs, annotated under `cfg`.
inline Batch random_batch(std::uint64_t seed, const rlvr::ObjectiveConfig& cfg, std::size_t n_groups = 3,
                          std::size_t G = 4, std::size_t max_len = 6, double ratio_spread = 0.4,
                          bool equal_lengths = false) {
  rlvr::Rng rng(seed);
  Batch b;
  const std::size_t fixed_len = static_cast<std::size_t>(rlvr::uniform_int(rng, 1, static_cast<std::int64_t>(max_len)));
  for (std::size_t g = 0; g < n_groups; ++g) {
    rlvr::PromptGroup group;
    group.prompt_id = g;
    for (std::size_t i = 0; i < G; ++i) {
      rlvr::ResponseRecord r;
      const std::size_t len =
          equal_lengths ? fixed_len : static_cast<std::size_t>(rlvr::uniform_int(rng, 1, static_cast<std::int64_t>(max_len)));
      for (std::size_t t = 0; t < len; ++t) {
        rlvr::TokenStep s;
        s.token = static_cast<int>(rlvr::uniform_int(rng, 0, 9));
        s.logprob_old = -0.05 - 3.0 * rlvr::uniform01(rng);
        s.entropy = 2.5 * rlvr::uniform01(rng);
        r.steps.push_back(s);
      }
      r.correct = i == 0 ? true : (i == 1 ? false : rlvr::uniform01(rng) < 0.5);
      r.reward = r.correct ? 1.0 : 0.0;
      group.responses.push_back(r);
    }
    for (const auto& r : group.responses) {
      for (const auto& s : r.steps) {
        const double lt = s.logprob_old + ratio_spread * normal(rng);
        b.logp_theta.push_back(std::min(lt, -1e-3));
        b.logp_ref.push_back(std::min(b.logp_theta.back() + 0.3 * normal(rng), -1e-3));
      }
    }
    b.groups.push_back(std::move(group));
  }
  rlvr::annotate_groups(b.groups, cfg);
  return b;
}

// One response per group entry with explicit advantage and per-token data.
struct TokenSpec {
  double logp_old;
  double logp_theta;
  rlvr::TokenClass cls = rlvr::TokenClass::knowledge;
};

inline rlvr::ResponseRecord response(double advantage, const std::vector<TokenSpec>& tokens) {
  rlvr::ResponseRecord r;
  for (const auto& t : tokens) {
    rlvr::TokenStep s;
    s.logprob_old = t.logp_old;
    s.token_class = t.cls;
    r.steps.push_back(s);
  }
  r.advantage = advantage;
  r.entropy_threshold = 0.0;
  r.classified = true;
  return r;
}

inline std::vector<double> theta_of(const std::vector<std::vector<TokenSpec>>& responses) {
  std::vector<double> out;
  for (const auto& r : responses) {
    for (const auto& t : r) out.push_back(t.logp_theta);
  }
  return out;
}

}  // namespace fixture
