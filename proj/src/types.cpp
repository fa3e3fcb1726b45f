#include "rlvr/types.hpp"

#include <stdexcept>
#include <string>

namespace rlvr {

std::string_view to_string(Algorithm a) {
  switch (a) {
    case Algorithm::grpo: return "grpo";
    case Algorithm::dapo: return "dapo";
    case Algorithm::archer: return "archer";
  }
  return "?";
}

Algorithm parse_algorithm(std::string_view name) {
  if (name == "grpo") return Algorithm::grpo;
  if (name == "dapo") return Algorithm::dapo;
  if (name == "archer") return Algorithm::archer;
  throw std::invalid_argument("unknown algorithm '" + std::string(name) + "' (expected grpo, dapo or archer)");
}

std::string_view to_string(TokenClass c) { return c == TokenClass::reasoning ? "reasoning" : "knowledge"; }

std::string_view to_string(ClipRegion r) {
  switch (r) {
    case ClipRegion::A: return "A";
    case ClipRegion::B: return "B";
    case ClipRegion::C: return "C";
    case ClipRegion::E: return "E";
    case ClipRegion::F: return "F";
  }
  return "?";
}

}  // namespace rlvr
