#include "oracles.hpp"
#include "rlvr/envs.hpp"
#include "rlvr/rng.hpp"

#include <doctest.h>

#include <sstream>

using namespace rlvr;

namespace {

const std::vector<TaskKind> kAllKinds{TaskKind::addition, TaskKind::multiplication, TaskKind::sort, TaskKind::reverse};

// Parses the prompt text back and recomputes the answer from the task semantics.
std::string semantic_answer(const TaskInstance& t) {
  const std::string body = t.prompt_text.substr(0, t.prompt_text.size() - 1);
  switch (t.kind) {
    case TaskKind::addition:
    case TaskKind::multiplication: {
      const auto op = body.find(t.kind == TaskKind::addition ? '+' : '*');
      const long long a = std::stoll(body.substr(0, op));
      const long long b = std::stoll(body.substr(op + 1));
      return std::to_string(t.kind == TaskKind::addition ? a + b : a * b);
    }
    case TaskKind::sort: {
      std::string s = body.substr(1);
      std::sort(s.begin(), s.end());
      return s;
    }
    case TaskKind::reverse: {
      std::string s = body.substr(1);
      return {s.rbegin(), s.rend()};
    }
  }
  return {};
}

std::vector<int> with_stop(const Vocabulary& v, const std::string& text) {
  auto ids = v.encode(text);
  ids.push_back(v.stop_id());
  return ids;
}

// Enumerates every response a uniform-token policy can emit and sums the
// probability of those the verifier accepts.
double brute_force_success(const Vocabulary& v, const std::string& truth, int max_new) {
  const std::vector<int> prompt{v.delimiter_id()};
  double total = 0.0;
  const double p = 1.0 / v.size();
  std::vector<int> resp;
  std::function<void(double)> walk = [&](double mass) {
    for (int id = 0; id < v.size(); ++id) {
      resp.push_back(id);
      const double m = mass * p;
      if (id == v.stop_id() || static_cast<int>(resp.size()) == max_new) {
        std::vector<int> full = prompt;
        full.insert(full.end(), resp.begin(), resp.end());
        if (is_equivalent(v, full, truth)) total += m;
      } else {
        walk(m);
      }
      resp.pop_back();
    }
  };
  walk(1.0);
  return total;
}

}  // namespace

TEST_CASE("task kind names round trip") {
  for (auto k : kAllKinds) CHECK(parse_task_kind(to_string(k)) == k);
  CHECK_THROWS_AS(parse_task_kind("division"), std::invalid_argument);
}

TEST_CASE("vocabulary") {
  const Vocabulary v = Vocabulary::for_tasks(std::vector<TaskKind>{TaskKind::addition});
  CHECK(v.size() == 13);
  CHECK(v.symbol(v.stop_id()) == "<stop>");
  CHECK(v.symbol(v.delimiter_id()) == "=");
  CHECK(v.decode(v.encode("12+7=")) == "12+7=");
  CHECK_THROWS(v.encode("a"));
  CHECK(Vocabulary::from_spec(v.spec()) == v);
  const Vocabulary full = Vocabulary::full();
  CHECK(Vocabulary::from_spec(full.spec()) == full);
  CHECK(full.id_of(' ').has_value());
  CHECK(full.is_whitespace(*full.id_of(' ')));
}

TEST_CASE("addition difficulty 2 has two 2-digit operands") {
  const Vocabulary v = Vocabulary::for_tasks(kAllKinds);
  const TaskInstance t = generate_instance(v, TaskKind::addition, 2, 7);
  const TaskInstance again = generate_instance(v, TaskKind::addition, 2, 7);
  CHECK(t.prompt_text == again.prompt_text);
  CHECK(t.prompt == again.prompt);
  const auto plus = t.prompt_text.find('+');
  REQUIRE(plus != std::string::npos);
  const std::string a = t.prompt_text.substr(0, plus);
  const std::string b = t.prompt_text.substr(plus + 1, t.prompt_text.size() - plus - 2);
  CHECK(a.size() == 2);
  CHECK(b.size() == 2);
  CHECK(a[0] != '0');
  CHECK(b[0] != '0');
  CHECK(t.ground_truth == std::to_string(std::stoi(a) + std::stoi(b)));
  CHECK(t.prompt_text.back() == '=');
}

TEST_CASE("sort difficulty 3 has three symbols in ascending answer order") {
  const Vocabulary v = Vocabulary::for_tasks(kAllKinds);
  const TaskInstance t = generate_instance(v, TaskKind::sort, 3, 1);
  CHECK(t.prompt_text.size() == 5);  // S + three symbols + delimiter
  CHECK(t.ground_truth.size() == 3);
  CHECK(std::is_sorted(t.ground_truth.begin(), t.ground_truth.end()));
}

TEST_CASE("ground truths match the task semantics") {
  const Vocabulary v = Vocabulary::for_tasks(kAllKinds);
  for (auto kind : kAllKinds) {
    const auto range = difficulty_range(kind);
    for (int d = range.min; d <= range.max; ++d) {
      const int n = d == 2 ? 10000 : 500;
      for (int i = 0; i < n; ++i) {
        const TaskInstance t = generate_instance(v, kind, d, derive_seed(123, {static_cast<std::uint64_t>(i)}));
        CHECK(t.ground_truth == semantic_answer(t));
        if (kind == TaskKind::addition || kind == TaskKind::multiplication) {
          const auto op = t.prompt_text.find(kind == TaskKind::addition ? '+' : '*');
          CHECK(static_cast<int>(op) == d);
          CHECK(static_cast<int>(t.prompt_text.size()) == 2 * d + 2);
        } else {
          CHECK(static_cast<int>(t.prompt_text.size()) == d + 2);
        }
      }
    }
    CHECK_THROWS_AS(generate_instance(v, kind, range.max + 1, 0), std::invalid_argument);
    CHECK_THROWS_AS(generate_instance(v, kind, 0, 0), std::invalid_argument);
  }
}

TEST_CASE("equivalence check") {
  const Vocabulary v = Vocabulary::full();
  const auto prompt = v.encode("40+45=");
  auto check = [&](const std::string& response, const std::string& truth) {
    std::vector<int> full = prompt;
    const auto r = with_stop(v, response);
    full.insert(full.end(), r.begin(), r.end());
    return is_equivalent(v, full, truth);
  };
  CHECK(check("85", "85"));
  CHECK(check("085", "85"));
  CHECK(check(" 8 5", "85"));
  CHECK_FALSE(check("84", "85"));
  CHECK_FALSE(check("", "85"));
  CHECK(check("0", "0"));
  CHECK(check("000", "0"));
  CHECK_FALSE(is_equivalent(v, v.encode("85"), "85"));
  // The answer is read after the final delimiter.
  CHECK(check("7=85", "85"));
  // Tokens after the stop token are ignored.
  std::vector<int> extra = prompt;
  const auto r = with_stop(v, "85");
  extra.insert(extra.end(), r.begin(), r.end());
  extra.push_back(*v.id_of('1'));
  CHECK(is_equivalent(v, extra, "85"));
}

TEST_CASE("canonical answers agree with a reference normalizer") {
  Rng rng(5);
  const std::string alphabet = "0123456789 ab";
  for (int i = 0; i < 2000; ++i) {
    std::string s;
    const int len = static_cast<int>(uniform_int(rng, 1, 6));
    for (int j = 0; j < len; ++j) s += alphabet[static_cast<std::size_t>(uniform_int(rng, 0, 12))];
    if (s.find_first_not_of(' ') == std::string::npos) continue;
    CHECK(canonical_answer(s) == oracle::normalize_answer(s));
  }
}

TEST_CASE("reward and overlong shaping") {
  const Vocabulary v = Vocabulary::for_tasks(std::vector<TaskKind>{TaskKind::addition});
  const auto prompt = v.encode("40+45=");
  const auto right = with_stop(v, "85");
  const auto wrong = with_stop(v, "86");
  ShapingConfig off;
  CHECK(reward(v, prompt, right, "85", false, off).reward == 1.0);
  CHECK(reward(v, prompt, wrong, "85", false, off).reward == 0.0);

  const auto long_right = v.encode("00000085");
  CHECK(reward(v, prompt, long_right, "85", true, off).reward == 1.0);
  ShapingConfig on;
  on.enabled = true;
  on.soft_length = 6;
  on.max_length = 8;
  on.max_penalty = 0.5;
  const auto shaped = reward(v, prompt, long_right, "85", true, on);
  CHECK(shaped.correct);
  CHECK(shaped.truncated_penalty_applied);
  CHECK(shaped.reward == doctest::Approx(1.0 - 0.5 * std::clamp((8.0 - 6.0) / (8.0 - 6.0), 0.0, 1.0)));
  CHECK(shaped.reward == 0.5);
  const auto halfway = v.encode("0000085");
  CHECK(reward(v, prompt, halfway, "85", true, on).reward == doctest::Approx(0.75));
  CHECK(reward(v, prompt, right, "85", false, on).reward == 1.0);
}

TEST_CASE("uniform-policy success matches enumeration") {
  const Vocabulary v = Vocabulary::for_tasks(std::vector<TaskKind>{TaskKind::addition});
  for (const std::string truth : {"85", "7", "0", "120"}) {
    for (int max_new : {1, 2, 3, 4}) {
      CHECK(uniform_policy_success(v, truth, max_new) ==
            doctest::Approx(brute_force_success(v, truth, max_new)).epsilon(1e-12));
    }
  }
  const Vocabulary full = Vocabulary::full();
  CHECK(uniform_policy_success(full, "ab", 3) == doctest::Approx(brute_force_success(full, "ab", 3)).epsilon(1e-12));
}

TEST_CASE("task set files round trip") {
  const Vocabulary v = Vocabulary::for_tasks(kAllKinds);
  const std::vector<TaskSpec> specs{{TaskKind::addition, 2}, {TaskKind::reverse, 4}};
  const auto tasks = make_task_set(v, specs, 5, 9);
  CHECK(tasks.size() == 10);
  std::stringstream buf;
  write_task_set(buf, tasks);
  const auto back = read_task_set(buf, v);
  REQUIRE(back.size() == tasks.size());
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    CHECK(back[i].prompt_text == tasks[i].prompt_text);
    CHECK(back[i].ground_truth == tasks[i].ground_truth);
    CHECK(back[i].prompt == tasks[i].prompt);
  }
  std::stringstream bad("{\"task_kind\": \"addition\"}\n");
  CHECK_THROWS(read_task_set(bad, v));
}
