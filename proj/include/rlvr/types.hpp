#pragma once

#include <string_view>

namespace rlvr {

enum class Algorithm { grpo, dapo, archer };

// High-entropy tokens (e >= response threshold) are reasoning tokens.
enum class TokenClass { reasoning, knowledge };

// Clip-geometry labels for (ratio, advantage sign, token class). A is the
// baseline trust region; B and C lie below and above it; E and F are the
// parts of C (positive advantage) and B (negative advantage) opened to
// reasoning tokens by the wider clip range.
enum class ClipRegion { A, B, C, E, F };

std::string_view to_string(Algorithm a);
Algorithm parse_algorithm(std::string_view name);
std::string_view to_string(TokenClass c);
std::string_view to_string(ClipRegion r);

}  // namespace rlvr
