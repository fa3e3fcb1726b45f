#pragma once

// Measurement apparatus: entropy statistics, clip-region labels, token
// frequency tables, repetition ratio and avg@K / pass@K.

#include "rlvr/envs.hpp"
#include "rlvr/objective.hpp"
#include "rlvr/rollout.hpp"
#include "rlvr/types.hpp"

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace rlvr {

// ---- clip regions ---------------------------------------------------------
// Baseline window [1 - eps_k, 1 + eps_k]. Advantage >= 0 counts as positive.
//   A: inside the baseline window
//   positive: E reasoning token in (1 + eps_k, 1 + eps_r], C above that
//             (any r above the window for knowledge tokens), B below
//   negative: F reasoning token in [1 - eps_r, 1 - eps_k), B below that,
//             C above
// For GRPO and DAPO the baseline window is the algorithm's own and E/F
// never occur.
ClipRegion clip_region(double r, double advantage, TokenClass c, const ObjectiveConfig& cfg);

inline constexpr std::array<ClipRegion, 5> kAllRegions{ClipRegion::A, ClipRegion::B, ClipRegion::C, ClipRegion::E,
                                                       ClipRegion::F};

class ClipRegionHistogram {
 public:
  void add(ClipRegion r, TokenClass c, bool positive_advantage, std::size_t n = 1);
  void merge(const ClipRegionHistogram& other);
  std::size_t count(ClipRegion r, TokenClass c, bool positive_advantage) const;
  std::size_t region_total(ClipRegion r) const;
  std::size_t total() const;

 private:
  // [class][sign][region]
  std::array<std::array<std::array<std::size_t, 5>, 2>, 2> counts_{};
};

ClipRegionHistogram region_histogram(std::span<const TokenLossBreakdown> tokens);
// From logged ratios; responses without ratios are skipped.
ClipRegionHistogram region_histogram(std::span<const RolloutLogRecord> records, const ObjectiveConfig& cfg);

// ---- entropy statistics ---------------------------------------------------

struct ResponseEntropy {
  std::uint64_t prompt_id = 0;
  std::size_t response_index = 0;
  std::size_t tokens = 0;
  double mean = 0.0;
  // Fraction of tokens with entropy >= the batch-level / own response-level
  // rho-quantile.
  double high_fraction_batch = 0.0;
  double high_fraction_response = 0.0;
};

struct PromptEntropy {
  std::uint64_t prompt_id = 0;
  std::size_t tokens = 0;
  double mean = 0.0;
};

struct EntropyStats {
  double rho = 0.8;
  double batch_mean = 0.0;
  double batch_threshold = 0.0;
  std::size_t tokens = 0;
  std::vector<PromptEntropy> prompts;  // first-appearance order
  std::vector<ResponseEntropy> responses;
};

// Records of a single step. Throws std::invalid_argument when there are no tokens.
EntropyStats entropy_stats(std::span<const RolloutLogRecord> records, double rho = 0.8);

// Records keyed by step, each in original order.
std::map<std::int64_t, std::vector<RolloutLogRecord>> split_by_step(std::span<const RolloutLogRecord> records);

// ---- token frequency ------------------------------------------------------

struct FrequencyRow {
  int token = 0;
  std::size_t count = 0;
};

struct FrequencyReport {
  std::vector<FrequencyRow> high;  // ranked by count, then token id
  std::vector<FrequencyRow> low;
};

// Per response, the top_k highest- and lowest-entropy occurrences (ties by
// position) are counted; tokens seen fewer than min_count times are dropped.
FrequencyReport token_frequency_report(std::span<const RolloutLogRecord> records, std::size_t top_k = 20,
                                       std::size_t min_count = 10);

// ---- sequence and evaluation metrics -------------------------------------

// 1 - unique n-grams / total n-grams; 0 for sequences shorter than n.
double repetition_ratio(std::span<const int> tokens, std::size_t n = 4);

double avg_at_k(const std::vector<bool>& correct);  // K >= 1
bool pass_at_k(const std::vector<bool>& correct);   // K >= 1

struct EvalRow {
  std::string task;  // task kind, or "overall"
  std::size_t instances = 0;
  std::size_t k = 0;
  double avg_at_k = 0.0;
  double pass_at_k = 0.0;
  double random_baseline = 0.0;  // uniform-token policy success, avg over instances
};

// ---- CSV ------------------------------------------------------------------
// entropy_stats.csv: step,level,prompt_id,response_index,tokens,mean_entropy,
//                    high_fraction_batch,high_fraction_response,threshold
// regions.csv:       step,region,token_class,advantage_sign,count
// frequency_*.csv:   rank,token_id,symbol,count
// eval.csv:          task,instances,k,avg_at_k,pass_at_k,random_baseline

void write_entropy_stats_csv(std::ostream& out, const std::map<std::int64_t, EntropyStats>& per_step);
void write_regions_csv(std::ostream& out, const std::map<std::int64_t, ClipRegionHistogram>& per_step);
void write_frequency_csv(std::ostream& out, std::span<const FrequencyRow> rows, const Vocabulary* vocab);
void write_eval_csv(std::ostream& out, std::span<const EvalRow> rows);

}  // namespace rlvr
