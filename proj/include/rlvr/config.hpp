#pragma once

// Run configuration text format (version 1):
//
//   # comment
//   version = 1
//   total_steps = 2000
//   objective.algorithm = archer
//   tasks = addition:2-2:1, reverse:1-4:0.5
//
// One `key = value` per line. Unknown keys, malformed values and duplicate
// keys are errors that name the offending line. Keys not given keep their
// defaults. Presets are built-in configs addressed by name.

#include "rlvr/trainer.hpp"

#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace rlvr {

inline constexpr int kConfigVersion = 1;

class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& source, int line, const std::string& message);
  int line() const { return line_; }

 private:
  int line_;
};

// Sets one key; throws std::invalid_argument on an unknown key or bad value.
void apply_setting(TrainConfig& cfg, std::string_view key, std::string_view value);

TrainConfig parse_config(std::string_view text, const std::string& source = "<config>");

// A preset name or a file path. Throws ConfigError (line 0 for I/O problems).
TrainConfig load_config(const std::string& path_or_preset);

// Full key/value rendering; parse_config(render_config(c)) reproduces c.
std::string render_config(const TrainConfig& cfg);

std::vector<std::string> preset_names();
bool is_preset(std::string_view name);
std::string preset_text(std::string_view name);

std::string render_tasks(const std::vector<TaskMixEntry>& tasks);
std::vector<TaskMixEntry> parse_tasks(std::string_view text);

}  // namespace rlvr
