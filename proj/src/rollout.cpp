#include "rlvr/rollout.hpp"

#include "rlvr/parallel.hpp"
#include "rlvr/rng.hpp"

#include <json.hpp>

#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

namespace rlvr {

std::vector<int> ResponseRecord::tokens() const {
  std::vector<int> out;
  out.reserve(steps.size());
  for (const auto& s : steps) out.push_back(s.token);
  return out;
}

std::vector<double> ResponseRecord::entropies() const {
  std::vector<double> out;
  out.reserve(steps.size());
  for (const auto& s : steps) out.push_back(s.entropy);
  return out;
}

std::size_t PromptGroup::correct_count() const {
  std::size_t n = 0;
  for (const auto& r : responses) n += r.correct ? 1 : 0;
  return n;
}

PromptGroup rollout_group(const Vocabulary& vocab, const TaskInstance& instance, const PolicyParams& params_old,
                          int group_size, const SamplingConfig& sampling, const ShapingConfig& shaping,
                          std::uint64_t seed) {
  if (group_size < 2) throw std::invalid_argument("rollout_group: group size must be >= 2");
  std::vector<std::uint64_t> seeds;
  seeds.reserve(static_cast<std::size_t>(group_size));
  for (int i = 0; i < group_size; ++i) seeds.push_back(derive_seed(seed, {static_cast<std::uint64_t>(i)}));
  const auto sampled = sample_responses(params_old, instance.prompt, sampling, seeds);

  PromptGroup group;
  group.prompt_id = instance.seed;
  group.instance = instance;
  group.responses.reserve(sampled.size());
  for (const auto& s : sampled) {
    ResponseRecord rec;
    rec.steps.reserve(s.tokens.size());
    for (std::size_t t = 0; t < s.tokens.size(); ++t) {
      rec.steps.push_back(TokenStep{s.tokens[t], s.logprobs[t], s.entropies[t], TokenClass::knowledge});
    }
    rec.truncated = s.truncated;
    const auto outcome = reward(vocab, instance.prompt, s.tokens, instance.ground_truth, s.truncated, shaping);
    rec.reward = outcome.reward;
    rec.correct = outcome.correct;
    group.responses.push_back(std::move(rec));
  }
  return group;
}

bool keep_group(const PromptGroup& group) {
  const std::size_t c = group.correct_count();
  return c > 0 && c < group.responses.size();
}

FilterResult dynamic_sampling_filter(std::vector<PromptGroup> groups) {
  FilterResult out;
  for (auto& g : groups) {
    if (keep_group(g)) {
      out.kept.push_back(std::move(g));
    } else {
      ++out.dropped_count;
    }
  }
  return out;
}

RefillResult refill_to_batch(std::size_t batch_target, const GroupGenerator& generator, const GroupPredicate& keep,
                             std::size_t budget, std::size_t threads) {
  if (batch_target == 0) throw std::invalid_argument("refill_to_batch: batch target must be positive");
  if (budget == 0) budget = 10 * batch_target;
  RefillResult out;
  while (out.kept.size() < batch_target && out.prompts_consumed < budget) {
    const std::size_t need = batch_target - out.kept.size();
    const std::size_t wave = std::min(budget - out.prompts_consumed, std::max(need, threads));
    const std::size_t base = out.prompts_consumed;
    std::vector<PromptGroup> generated(wave);
    parallel_for(wave, threads, [&](std::size_t j) { generated[j] = generator(base + j); });
    for (auto& g : generated) {
      if (out.kept.size() == batch_target) break;
      ++out.prompts_consumed;
      if (keep(g)) {
        out.kept.push_back(std::move(g));
      } else {
        ++out.dropped;
      }
    }
  }
  out.budget_exhausted = out.kept.size() < batch_target;
  return out;
}

// ---- rollout log ----------------------------------------------------------

std::vector<RolloutLogRecord> to_log_records(std::int64_t step, std::span<const PromptGroup> groups) {
  std::vector<RolloutLogRecord> out;
  for (const auto& g : groups) {
    for (std::size_t i = 0; i < g.responses.size(); ++i) {
      const auto& r = g.responses[i];
      RolloutLogRecord rec;
      rec.step = step;
      rec.prompt_id = g.prompt_id;
      rec.response_index = i;
      for (const auto& s : r.steps) {
        rec.tokens.push_back(s.token);
        rec.logprobs_old.push_back(s.logprob_old);
        rec.entropies.push_back(s.entropy);
        if (r.classified) rec.token_classes.push_back(s.token_class);
      }
      rec.reward = r.reward;
      rec.advantage = r.advantage;
      rec.entropy_threshold = r.entropy_threshold;
      rec.ratios = r.ratios;
      out.push_back(std::move(rec));
    }
  }
  return out;
}

void write_rollout_log(std::ostream& out, std::span<const RolloutLogRecord> records) {
  for (const auto& r : records) {
    nlohmann::ordered_json j;
    j["step"] = r.step;
    j["prompt_id"] = r.prompt_id;
    j["response_index"] = r.response_index;
    j["tokens"] = r.tokens;
    j["logprobs_old"] = r.logprobs_old;
    j["entropies"] = r.entropies;
    j["reward"] = r.reward;
    j["advantage"] = r.advantage ? nlohmann::ordered_json(*r.advantage) : nlohmann::ordered_json(nullptr);
    j["entropy_threshold"] =
        r.entropy_threshold ? nlohmann::ordered_json(*r.entropy_threshold) : nlohmann::ordered_json(nullptr);
    auto classes = nlohmann::ordered_json::array();
    for (auto c : r.token_classes) classes.push_back(std::string(to_string(c)));
    j["token_classes"] = std::move(classes);
    j["ratios"] = r.ratios;
    out << j.dump() << '\n';
  }
}

std::vector<RolloutLogRecord> read_rollout_log(std::istream& in) {
  std::vector<RolloutLogRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      RolloutLogRecord r;
      r.step = j.at("step").get<std::int64_t>();
      r.prompt_id = j.at("prompt_id").get<std::uint64_t>();
      r.response_index = j.at("response_index").get<std::size_t>();
      r.tokens = j.at("tokens").get<std::vector<int>>();
      r.logprobs_old = j.at("logprobs_old").get<std::vector<double>>();
      r.entropies = j.at("entropies").get<std::vector<double>>();
      r.reward = j.at("reward").get<double>();
      if (!j.at("advantage").is_null()) r.advantage = j.at("advantage").get<double>();
      if (!j.at("entropy_threshold").is_null()) r.entropy_threshold = j.at("entropy_threshold").get<double>();
      for (const auto& c : j.at("token_classes")) {
        const auto s = c.get<std::string>();
        if (s == "reasoning") {
          r.token_classes.push_back(TokenClass::reasoning);
        } else if (s == "knowledge") {
          r.token_classes.push_back(TokenClass::knowledge);
        } else {
          throw std::runtime_error("unknown token class '" + s + "'");
        }
      }
      if (j.contains("ratios")) r.ratios = j.at("ratios").get<std::vector<double>>();
      const std::size_t n = r.tokens.size();
      if (r.logprobs_old.size() != n || r.entropies.size() != n ||
          (!r.token_classes.empty() && r.token_classes.size() != n) || (!r.ratios.empty() && r.ratios.size() != n)) {
        throw std::runtime_error("per-token arrays differ in length");
      }
      out.push_back(std::move(r));
    } catch (const std::exception& e) {
      throw std::runtime_error("rollout log line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace rlvr
