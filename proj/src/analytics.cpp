#include "rlvr/analytics.hpp"

#include <algorithm>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <set>
#include <stdexcept>
#include <unordered_map>

namespace rlvr {

// ---- clip regions ---------------------------------------------------------

ClipRegion clip_region(double r, double advantage, TokenClass c, const ObjectiveConfig& cfg) {
  if (!(r > 0.0)) throw std::invalid_argument("clip_region: ratio must be positive");
  double base_lo, base_hi;
  switch (cfg.algorithm) {
    case Algorithm::grpo:
      base_lo = 1.0 - cfg.eps;
      base_hi = 1.0 + cfg.eps;
      break;
    case Algorithm::dapo:
      base_lo = 1.0 - cfg.eps_low;
      base_hi = 1.0 + cfg.eps_high;
      break;
    default:
      base_lo = 1.0 - cfg.eps_knowledge;
      base_hi = 1.0 + cfg.eps_knowledge;
      break;
  }
  if (r >= base_lo && r <= base_hi) return ClipRegion::A;
  const bool extended = cfg.algorithm == Algorithm::archer && c == TokenClass::reasoning;
  const bool positive = advantage >= 0.0;
  if (r > base_hi) {
    if (positive && extended && r <= 1.0 + cfg.eps_reasoning) return ClipRegion::E;
    return ClipRegion::C;
  }
  if (!positive && extended && r >= 1.0 - cfg.eps_reasoning) return ClipRegion::F;
  return ClipRegion::B;
}

namespace {
std::size_t region_index(ClipRegion r) { return static_cast<std::size_t>(r); }
std::size_t class_index(TokenClass c) { return c == TokenClass::reasoning ? 0 : 1; }
}  // namespace

void ClipRegionHistogram::add(ClipRegion r, TokenClass c, bool positive_advantage, std::size_t n) {
  counts_[class_index(c)][positive_advantage ? 0 : 1][region_index(r)] += n;
}

void ClipRegionHistogram::merge(const ClipRegionHistogram& other) {
  for (std::size_t c = 0; c < 2; ++c) {
    for (std::size_t s = 0; s < 2; ++s) {
      for (std::size_t r = 0; r < 5; ++r) counts_[c][s][r] += other.counts_[c][s][r];
    }
  }
}

std::size_t ClipRegionHistogram::count(ClipRegion r, TokenClass c, bool positive_advantage) const {
  return counts_[class_index(c)][positive_advantage ? 0 : 1][region_index(r)];
}

std::size_t ClipRegionHistogram::region_total(ClipRegion r) const {
  std::size_t n = 0;
  for (std::size_t c = 0; c < 2; ++c) {
    for (std::size_t s = 0; s < 2; ++s) n += counts_[c][s][region_index(r)];
  }
  return n;
}

std::size_t ClipRegionHistogram::total() const {
  std::size_t n = 0;
  for (auto r : kAllRegions) n += region_total(r);
  return n;
}

ClipRegionHistogram region_histogram(std::span<const TokenLossBreakdown> tokens) {
  ClipRegionHistogram h;
  for (const auto& t : tokens) h.add(t.region, t.token_class, t.advantage >= 0.0);
  return h;
}

ClipRegionHistogram region_histogram(std::span<const RolloutLogRecord> records, const ObjectiveConfig& cfg) {
  ClipRegionHistogram h;
  for (const auto& rec : records) {
    if (rec.ratios.empty() || !rec.advantage) continue;
    for (std::size_t t = 0; t < rec.ratios.size(); ++t) {
      const TokenClass c = rec.token_classes.empty() ? TokenClass::knowledge : rec.token_classes[t];
      h.add(clip_region(rec.ratios[t], *rec.advantage, c, cfg), c, *rec.advantage >= 0.0);
    }
  }
  return h;
}

// ---- entropy statistics ---------------------------------------------------

namespace {

double quantile(std::vector<double> x, double rho) { return entropy_quantile(x, rho); }

double fraction_at_least(std::span<const double> x, double tau) {
  if (x.empty()) return 0.0;
  std::size_t n = 0;
  for (double v : x) n += v >= tau ? 1 : 0;
  return static_cast<double>(n) / static_cast<double>(x.size());
}

}  // namespace

EntropyStats entropy_stats(std::span<const RolloutLogRecord> records, double rho) {
  EntropyStats s;
  s.rho = rho;
  std::vector<double> all;
  for (const auto& r : records) all.insert(all.end(), r.entropies.begin(), r.entropies.end());
  if (all.empty()) throw std::invalid_argument("entropy_stats: no records with tokens");
  s.tokens = all.size();
  double total = 0.0;
  for (double e : all) total += e;
  s.batch_mean = total / static_cast<double>(all.size());
  s.batch_threshold = quantile(all, rho);

  std::unordered_map<std::uint64_t, std::size_t> prompt_slot;
  std::vector<double> prompt_sums;
  for (const auto& r : records) {
    if (r.entropies.empty()) continue;
    ResponseEntropy re;
    re.prompt_id = r.prompt_id;
    re.response_index = r.response_index;
    re.tokens = r.entropies.size();
    double sum = 0.0;
    for (double e : r.entropies) sum += e;
    re.mean = sum / static_cast<double>(re.tokens);
    re.high_fraction_batch = fraction_at_least(r.entropies, s.batch_threshold);
    re.high_fraction_response = fraction_at_least(r.entropies, quantile(r.entropies, rho));
    s.responses.push_back(re);

    auto [it, inserted] = prompt_slot.emplace(r.prompt_id, s.prompts.size());
    if (inserted) {
      s.prompts.push_back(PromptEntropy{r.prompt_id, 0, 0.0});
      prompt_sums.push_back(0.0);
    }
    s.prompts[it->second].tokens += re.tokens;
    prompt_sums[it->second] += sum;
  }
  for (std::size_t i = 0; i < s.prompts.size(); ++i) {
    s.prompts[i].mean = prompt_sums[i] / static_cast<double>(s.prompts[i].tokens);
  }
  return s;
}

std::map<std::int64_t, std::vector<RolloutLogRecord>> split_by_step(std::span<const RolloutLogRecord> records) {
  std::map<std::int64_t, std::vector<RolloutLogRecord>> out;
  for (const auto& r : records) out[r.step].push_back(r);
  return out;
}

// ---- token frequency ------------------------------------------------------

namespace {

std::vector<FrequencyRow> ranked(const std::unordered_map<int, std::size_t>& counts, std::size_t min_count) {
  std::vector<FrequencyRow> rows;
  for (const auto& [tok, n] : counts) {
    if (n >= min_count) rows.push_back(FrequencyRow{tok, n});
  }
  std::sort(rows.begin(), rows.end(), [](const FrequencyRow& a, const FrequencyRow& b) {
    return a.count != b.count ? a.count > b.count : a.token < b.token;
  });
  return rows;
}

}  // namespace

FrequencyReport token_frequency_report(std::span<const RolloutLogRecord> records, std::size_t top_k,
                                       std::size_t min_count) {
  std::unordered_map<int, std::size_t> high, low;
  for (const auto& r : records) {
    const std::size_t n = r.tokens.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    const std::size_t k = std::min(top_k, n);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return r.entropies[a] > r.entropies[b]; });
    for (std::size_t i = 0; i < k; ++i) ++high[r.tokens[order[i]]];
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return r.entropies[a] < r.entropies[b]; });
    for (std::size_t i = 0; i < k; ++i) ++low[r.tokens[order[i]]];
  }
  return FrequencyReport{ranked(high, min_count), ranked(low, min_count)};
}

// ---- sequence and evaluation metrics -------------------------------------

double repetition_ratio(std::span<const int> tokens, std::size_t n) {
  if (n == 0) throw std::invalid_argument("repetition_ratio: n must be positive");
  if (tokens.size() < n) return 0.0;
  const std::size_t total = tokens.size() - n + 1;
  std::set<std::vector<int>> unique;
  for (std::size_t i = 0; i < total; ++i) unique.emplace(tokens.begin() + i, tokens.begin() + i + n);
  return 1.0 - static_cast<double>(unique.size()) / static_cast<double>(total);
}

double avg_at_k(const std::vector<bool>& correct) {
  if (correct.empty()) throw std::invalid_argument("avg_at_k: K must be >= 1");
  std::size_t n = 0;
  for (bool c : correct) n += c ? 1 : 0;
  return static_cast<double>(n) / static_cast<double>(correct.size());
}

bool pass_at_k(const std::vector<bool>& correct) {
  if (correct.empty()) throw std::invalid_argument("pass_at_k: K must be >= 1");
  return std::any_of(correct.begin(), correct.end(), [](bool c) { return c; });
}

// ---- CSV ------------------------------------------------------------------

namespace {

struct Precise {
  explicit Precise(std::ostream& o) : out(o), flags(o.flags()), prec(o.precision()) {
    out << std::setprecision(17);
  }
  ~Precise() {
    out.flags(flags);
    out.precision(prec);
  }
  std::ostream& out;
  std::ios::fmtflags flags;
  std::streamsize prec;
};

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + '"';
}

}  // namespace

void write_entropy_stats_csv(std::ostream& out, const std::map<std::int64_t, EntropyStats>& per_step) {
  Precise p(out);
  out << "step,level,prompt_id,response_index,tokens,mean_entropy,high_fraction_batch,high_fraction_response,"
         "threshold\n";
  for (const auto& [step, s] : per_step) {
    double hb = 0.0, hr = 0.0;
    for (const auto& r : s.responses) {
      hb += r.high_fraction_batch * static_cast<double>(r.tokens);
      hr += r.high_fraction_response * static_cast<double>(r.tokens);
    }
    const double n = static_cast<double>(s.tokens);
    out << step << ",batch,,," << s.tokens << ',' << s.batch_mean << ',' << hb / n << ',' << hr / n << ','
        << s.batch_threshold << '\n';
    for (const auto& pr : s.prompts) {
      out << step << ",prompt," << pr.prompt_id << ",," << pr.tokens << ',' << pr.mean << ",,,\n";
    }
    for (const auto& r : s.responses) {
      out << step << ",response," << r.prompt_id << ',' << r.response_index << ',' << r.tokens << ',' << r.mean
          << ',' << r.high_fraction_batch << ',' << r.high_fraction_response << ",\n";
    }
  }
}

void write_regions_csv(std::ostream& out, const std::map<std::int64_t, ClipRegionHistogram>& per_step) {
  out << "step,region,token_class,advantage_sign,count\n";
  for (const auto& [step, h] : per_step) {
    for (auto r : kAllRegions) {
      for (auto c : {TokenClass::reasoning, TokenClass::knowledge}) {
        for (bool pos : {true, false}) {
          out << step << ',' << to_string(r) << ',' << to_string(c) << ',' << (pos ? "positive" : "negative") << ','
              << h.count(r, c, pos) << '\n';
        }
      }
    }
  }
}

void write_frequency_csv(std::ostream& out, std::span<const FrequencyRow> rows, const Vocabulary* vocab) {
  out << "rank,token_id,symbol,count\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::string symbol;
    if (vocab && rows[i].token >= 0 && rows[i].token < vocab->size()) symbol = vocab->symbol(rows[i].token);
    out << i + 1 << ',' << rows[i].token << ',' << csv_field(symbol) << ',' << rows[i].count << '\n';
  }
}

void write_eval_csv(std::ostream& out, std::span<const EvalRow> rows) {
  Precise p(out);
  out << "task,instances,k,avg_at_k,pass_at_k,random_baseline\n";
  for (const auto& r : rows) {
    out << r.task << ',' << r.instances << ',' << r.k << ',' << r.avg_at_k << ',' << r.pass_at_k << ','
        << r.random_baseline << '\n';
  }
}

}  // namespace rlvr
