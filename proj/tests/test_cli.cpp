#include "rlvr/cli.hpp"

#include <doctest.h>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

constexpr const char* kTinyConfig =
    "version = 1\n"
    "tasks = addition:1-1:1\n"
    "total_steps = 3\n"
    "batch_size = 2\n"
    "rollouts_per_prompt = 4\n"
    "minibatch_size = 4\n"
    "model.d_model = 16\n"
    "model.n_layers = 1\n"
    "model.n_heads = 2\n"
    "model.max_seq_len = 12\n"
    "sampling.max_new_tokens = 3\n"
    "refill_budget_factor = 40\n";

struct Result {
  int code;
  std::string out, err;
};

// A fresh directory under the system temp dir, removed on destruction.
struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("rlvr_cli_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "rlvr");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = rlvr::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string read(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

// Path printed after `label` on its own output line.
fs::path printed_path(const std::string& out, const std::string& label) {
  const auto at = out.find(label);
  REQUIRE(at != std::string::npos);
  const auto start = at + label.size();
  return fs::path(out.substr(start, out.find('\n', start) - start));
}

std::size_t line_count(const std::string& text) { return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')); }

fs::path write_config(const fs::path& dir) {
  const fs::path p = dir / "tiny.cfg";
  std::ofstream(p) << kTinyConfig;
  return p;
}

std::size_t entries(const fs::path& dir) {
  if (!fs::exists(dir)) return 0;
  return static_cast<std::size_t>(std::distance(fs::directory_iterator(dir), fs::directory_iterator()));
}

}  // namespace

TEST_CASE("usage errors exit with code 2 and create nothing") {
  TempDir tmp("usage");
  const auto root = (tmp.path / "runs").string();
  CHECK(run({}).code == 2);
  CHECK(run({"--run-root", root, "train"}).code == 2);
  CHECK(run({"--run-root", root, "train", "--config", (tmp.path / "missing.cfg").string()}).code == 2);
  const auto cfg = write_config(tmp.path).string();
  CHECK(run({"--run-root", root, "train", "--config", cfg, "--algo", "ppo"}).code == 2);
  CHECK(run({"--run-root", root, "train", "--config", cfg, "--set", "nope=1"}).code == 2);
  CHECK(run({"--run-root", root, "train", "--config", cfg, "--set", "total_steps"}).code == 2);
  CHECK(run({"--run-root", root, "sweep", "--config", cfg, "--axis", "rho", "--values", "0.5"}).code == 2);
  CHECK(run({"--run-root", root, "sweep", "--config", cfg, "--axis", "eps_reasoning", "--values", "0.1"}).code == 2);
  CHECK(run({"--run-root", root, "sweep", "--config", cfg, "--axis", "eps_reasoning", "--values", "x"}).code == 2);
  CHECK(entries(root) == 0);

  const auto bad = tmp.path / "bad.cfg";
  std::ofstream(bad) << "version = 1\nbatch_size = 2\nbatch_size = 3\n";
  const auto r = run({"--run-root", root, "train", "--config", bad.string()});
  CHECK(r.code == 2);
  CHECK(r.err.find(":3:") != std::string::npos);

  const auto v = run({"--version"});
  CHECK(v.code == 0);
  CHECK(v.out.find("0.1.0") != std::string::npos);
}

TEST_CASE("train writes a complete run directory") {
  TempDir tmp("train");
  const auto root = (tmp.path / "runs").string();
  const auto cfg = write_config(tmp.path).string();

  const auto r = run({"--run-root", root, "train", "--config", cfg, "--seed", "4", "--algo", "dapo"});
  REQUIRE(r.code == 0);
  const fs::path dir = printed_path(r.out, "run directory: ");
  CHECK(dir.filename().string().rfind("train-", 0) == 0);
  CHECK(dir.filename().string().find("-seed4") != std::string::npos);
  for (const char* f : {"config.txt", "steps.jsonl", "steps.csv", "rollouts.jsonl", "final.ckpt", "manifest.json",
                        "checkpoints/initial.ckpt"}) {
    CHECK_MESSAGE(fs::exists(dir / f), f);
  }
  CHECK(line_count(read(dir / "steps.jsonl")) == 3);
  CHECK(line_count(read(dir / "steps.csv")) == 4);
  CHECK(read(dir / "config.txt").find("objective.algorithm = dapo") != std::string::npos);

  const auto m = nlohmann::json::parse(read(dir / "manifest.json"));
  CHECK(m.at("kind") == "train");
  CHECK(m.at("algorithm") == "dapo");
  CHECK(m.at("master_seed") == 4);
  CHECK(m.at("steps_run") == 3);
  CHECK(m.at("files").at("final_checkpoint") == "final.ckpt");

  // Dedicated flags win over --set.
  const auto r2 = run({"--run-root", root, "-q", "train", "--config", cfg, "--set", "total_steps=5", "--steps", "2",
                       "--set", "checkpoint_every=1"});
  REQUIRE(r2.code == 0);
  const fs::path dir2 = printed_path(r2.out, "run directory: ");
  CHECK(line_count(read(dir2 / "steps.jsonl")) == 2);
  CHECK(fs::exists(dir2 / "checkpoints" / "step_000001.ckpt"));
  CHECK(read(dir2 / "config.txt").find("objective.algorithm = archer") != std::string::npos);
}

TEST_CASE("identical runs produce identical artifacts") {
  TempDir tmp("determinism");
  const auto root = (tmp.path / "runs").string();
  const auto cfg = write_config(tmp.path).string();
  const auto a = run({"--run-root", root, "-q", "train", "--config", cfg});
  const auto b = run({"--run-root", root, "-q", "train", "--config", cfg});
  REQUIRE(a.code == 0);
  REQUIRE(b.code == 0);
  const auto da = printed_path(a.out, "run directory: ");
  const auto db = printed_path(b.out, "run directory: ");
  CHECK(da != db);
  CHECK(read(da / "final.ckpt") == read(db / "final.ckpt"));
  CHECK(read(da / "steps.jsonl") == read(db / "steps.jsonl"));
  CHECK(read(da / "rollouts.jsonl") == read(db / "rollouts.jsonl"));
}

TEST_CASE("sweep trains once per value") {
  TempDir tmp("sweep");
  const auto root = (tmp.path / "runs").string();
  const auto cfg = write_config(tmp.path).string();

  SUBCASE("beta_knowledge") {
    const auto r =
        run({"--run-root", root, "-q", "sweep", "--config", cfg, "--axis", "beta_knowledge", "--values", "0,0.001,0.005"});
    REQUIRE(r.code == 0);
    const fs::path dir = printed_path(r.out, "sweep directory: ");
    for (const char* sub : {"beta_knowledge=0", "beta_knowledge=0.001", "beta_knowledge=0.005"}) {
      CHECK_MESSAGE(fs::exists(dir / sub / "final.ckpt"), sub);
      CHECK(read(dir / sub / "config.txt").find("objective.beta_knowledge = ") != std::string::npos);
    }
    const std::string cmp = read(dir / "comparison.csv");
    CHECK(cmp.rfind("axis,value,step,", 0) == 0);
    CHECK(line_count(cmp) == 1 + 3 * 3);
    const auto m = nlohmann::json::parse(read(dir / "manifest.json"));
    CHECK(m.at("runs").size() == 3);
  }
  SUBCASE("eps_reasoning") {
    const auto r =
        run({"--run-root", root, "-q", "sweep", "--config", cfg, "--axis", "eps_reasoning", "--values", "0.2,0.3,0.4,0.5",
             "--steps", "1"});
    REQUIRE(r.code == 0);
    const fs::path dir = printed_path(r.out, "sweep directory: ");
    CHECK(line_count(read(dir / "comparison.csv")) == 1 + 4);
    CHECK(entries(dir) == 4 + 2);
  }
  SUBCASE("a single value matches a plain run") {
    const auto s =
        run({"--run-root", root, "-q", "sweep", "--config", cfg, "--axis", "eps_knowledge", "--values", "0.2"});
    const auto t = run({"--run-root", root, "-q", "train", "--config", cfg});
    REQUIRE(s.code == 0);
    REQUIRE(t.code == 0);
    const fs::path sd = printed_path(s.out, "sweep directory: ") / "eps_knowledge=0.2";
    const fs::path td = printed_path(t.out, "run directory: ");
    CHECK(read(sd / "final.ckpt") == read(td / "final.ckpt"));
    CHECK(read(sd / "steps.jsonl") == read(td / "steps.jsonl"));
  }
}

TEST_CASE("eval and analyze on a trained run") {
  TempDir tmp("eval");
  const auto root = (tmp.path / "runs").string();
  const auto cfg = write_config(tmp.path).string();
  const auto t = run({"--run-root", root, "-q", "train", "--config", cfg, "--set", "rollout_log_every=1"});
  REQUIRE(t.code == 0);
  const fs::path run_dir = printed_path(t.out, "run directory: ");
  const auto ckpt = (run_dir / "final.ckpt").string();

  SUBCASE("eval") {
    const auto e1 = run({"--run-root", root, "eval", "--checkpoint", ckpt, "--task", "addition:1", "--instances", "20",
                         "--max-new-tokens", "3", "--out-dir", (tmp.path / "e1").string()});
    const auto e2 = run({"--run-root", root, "eval", "--checkpoint", ckpt, "--task", "addition:1", "--instances", "20",
                         "--max-new-tokens", "3", "--out-dir", (tmp.path / "e2").string()});
    REQUIRE(e1.code == 0);
    REQUIRE(e2.code == 0);
    const std::string csv = read(tmp.path / "e1" / "eval.csv");
    CHECK(csv == read(tmp.path / "e2" / "eval.csv"));
    CHECK(csv.rfind("task,instances,k,avg_at_k,pass_at_k,random_baseline\n", 0) == 0);
    CHECK(e1.out.find(csv) == 0);
    // K = 1: avg@1 equals pass@1 on every row.
    std::istringstream lines(csv);
    std::string line;
    std::getline(lines, line);
    int rows = 0;
    while (std::getline(lines, line)) {
      std::vector<std::string> f;
      std::stringstream ls(line);
      for (std::string x; std::getline(ls, x, ',');) f.push_back(x);
      REQUIRE(f.size() == 6);
      CHECK(f[1] == "20");
      CHECK(f[3] == f[4]);
      ++rows;
    }
    CHECK(rows == 2);

    const auto k4 = run({"--run-root", root, "eval", "--checkpoint", ckpt, "--task", "addition:1", "-k", "4",
                         "--instances", "5", "--max-new-tokens", "3"});
    CHECK(k4.code == 0);
    CHECK(fs::exists(printed_path(k4.out, "output directory: ") / "manifest.json"));

    CHECK(run({"eval", "--checkpoint", ckpt, "--task", "addition:1", "-k", "0"}).code == 2);
    CHECK(run({"eval", "--checkpoint", ckpt}).code == 2);
    CHECK(run({"eval", "--checkpoint", ckpt, "--task", "algebra"}).code == 2);
    CHECK(run({"eval", "--checkpoint", (tmp.path / "none.ckpt").string(), "--task", "addition"}).code == 1);
  }
  SUBCASE("analyze") {
    const auto out_dir = tmp.path / "an";
    const auto a = run({"analyze", (run_dir / "rollouts.jsonl").string(), "--out-dir", out_dir.string(), "--min-count",
                        "1"});
    REQUIRE(a.code == 0);
    CHECK(a.out.find("over 3 steps") != std::string::npos);
    for (const char* f : {"entropy_stats.csv", "regions.csv", "frequency_high.csv", "frequency_low.csv",
                          "manifest.json"}) {
      CHECK_MESSAGE(fs::exists(out_dir / f), f);
    }
    const std::string stats = read(out_dir / "entropy_stats.csv");
    std::size_t batch_rows = 0;
    for (std::size_t at = stats.find(",batch,"); at != std::string::npos; at = stats.find(",batch,", at + 1)) ++batch_rows;
    CHECK(batch_rows == 3);
    CHECK(line_count(read(out_dir / "frequency_high.csv")) > 1);

    const auto empty = tmp.path / "empty.jsonl";
    std::ofstream(empty).close();
    const auto e = run({"analyze", empty.string(), "--out-dir", (tmp.path / "an2").string()});
    CHECK(e.code == 1);
    CHECK(e.err.find("no records") != std::string::npos);
    CHECK(run({"analyze", (tmp.path / "missing.jsonl").string()}).code == 2);
  }
}

TEST_CASE("gradcheck command") {
  const auto ok = run({"gradcheck", "--case", "archer", "--d-model", "8", "--max-response", "4"});
  CHECK(ok.code == 0);
  CHECK(ok.out.find("archer") != std::string::npos);
  CHECK(ok.out.find("all objectives within") != std::string::npos);
  const auto bad = run({"gradcheck", "--case", "dapo", "--d-model", "8", "--max-response", "4", "--corrupt"});
  CHECK(bad.code == 1);
  CHECK(bad.out.find("FAIL") != std::string::npos);
  CHECK(run({"gradcheck", "--case", "nothing"}).code == 2);
}
