#pragma once

// Finite-difference verification of the policy-gradient losses on a small
// random batch. Every parameter element is checked.

#include "rlvr/objective.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace rlvr {

struct GradcheckOptions {
  std::uint64_t seed = 0;
  int scale = 1;  // prompts = 2 * scale
  int group_size = 4;
  int max_response = 16;
  int d_model = 32;
  int n_layers = 1;
  int n_heads = 2;
  double step = 1e-5;
  bool five_point = false;  // five-point instead of two-point central stencil
  double abs_floor = 1e-8;  // denominator floor of the relative error
  double tolerance = 1e-4;
  bool corrupt = false;     // perturb one analytic gradient (negative control)
};

struct GradcheckCase {
  std::string name;
  ObjectiveConfig objective;
};

struct GradcheckEntry {
  std::string name;
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  std::string worst_param;
  std::size_t checked = 0;
  std::size_t tokens = 0;
  double seconds = 0.0;
  bool passed = false;
};

// grpo, dapo and archer at their defaults, plus KL-free grpo and archer.
std::vector<GradcheckCase> default_gradcheck_cases();

GradcheckEntry run_gradcheck(const GradcheckOptions& opts, const GradcheckCase& c);
std::vector<GradcheckEntry> run_gradcheck(const GradcheckOptions& opts, const std::vector<GradcheckCase>& cases);

}  // namespace rlvr
