#include <cstdlib>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "hotcalib/cli.hpp"
#include "hotcalib/features.hpp"
#include "hotcalib/synthetic.hpp"
#include "json.hpp"
#include "test_util.hpp"

using namespace hotcalib;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result invoke(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

// Novel class i is drawn around base mean i; classes 10 sd apart.
void write_separable_world(const TempDir& dir, int classes, Index dim, std::uint64_t seed) {
  auto rng = make_rng(seed);
  const Matrix identity = Matrix::Identity(classes, classes);
  const auto w = make_gaussian_world(classes, classes, dim, 30, 10.0, identity, rng);
  save_features(w.base, dir.path() / "base.csv");
  save_features(w.novel, dir.path() / "novel.csv");
}

std::string p(const TempDir& dir, const char* name) { return (dir.path() / name).string(); }

}  // namespace

TEST_CASE("stats writes one entry per class and reruns byte-identically") {
  TempDir dir("cli_stats");
  dir.write("base.csv", "label,f0,f1\na,1,2\na,2,1\nb,5,5\nb,6,7\nc,0,1\nc,1,0\nc,2,2\n");
  const auto first = invoke({"stats", "--base", p(dir, "base.csv"), "--stats", p(dir, "s.json")});
  REQUIRE(first.code == 0);
  const auto stats = read_json(dir.path() / "s.json");
  CHECK(stats.at("classes").size() == 3);
  CHECK(stats.at("dim") == 2);
  const auto bytes = slurp(dir.path() / "s.json");
  REQUIRE(invoke({"stats", "--base", p(dir, "base.csv"), "--stats", p(dir, "s.json")}).code == 0);
  CHECK(slurp(dir.path() / "s.json") == bytes);
  // timing lives in the sidecar only
  CHECK(read_json(dir.path() / "s.json.meta.json").contains("started_utc"));
  CHECK(bytes.find("utc") == std::string::npos);
}

TEST_CASE("missing input is a usage error naming the path") {
  TempDir dir("cli_missing");
  const auto r = invoke({"stats", "--base", p(dir, "absent.csv"), "--stats", p(dir, "s.json")});
  CHECK(r.code == cli::kExitUsage);
  CHECK(r.err.find("absent.csv") != std::string::npos);
}

TEST_CASE("usage errors") {
  TempDir dir("cli_usage");
  write_separable_world(dir, 5, 8, 1);
  const std::vector<std::string> base_args = {"eval", "--base", p(dir, "base.csv"), "--novel", p(dir, "novel.csv"),
                                              "--tasks", "2", "--generated", "10"};
  auto with = [&](std::vector<std::string> extra) {
    auto args = base_args;
    args.insert(args.end(), extra.begin(), extra.end());
    return invoke(args).code;
  };
  CHECK(with({"--calibration-mode", "convex"}) == cli::kExitUsage);                       // lambda missing
  CHECK(with({"--lambda", "1"}) == cli::kExitUsage);                                      // mode missing
  CHECK(with({"--lambda", "1", "--calibration-mode", "middle"}) == cli::kExitUsage);
  CHECK(with({"--lambda", "1", "--calibration-mode", "convex", "--n-way", "1"}) == cli::kExitUsage);
  CHECK(with({"--lambda", "x", "--calibration-mode", "convex"}) == cli::kExitUsage);
  CHECK(with({"--lambda", "1", "--calibration-mode", "convex", "--method", "magic"}) == cli::kExitUsage);
  CHECK(with({"--lambda", "1", "--calibration-mode", "convex", "--bogus"}) == cli::kExitUsage);
  CHECK(invoke({}).code == cli::kExitUsage);
  CHECK(invoke({"--help"}).code == cli::kExitOk);

  dir.write("bad.json", R"({"lambda": 1, "calibraton_mode": "convex"})");
  CHECK(with({"--config", p(dir, "bad.json")}) == cli::kExitUsage);
  dir.write("typed.json", R"({"lambda": "one"})");
  CHECK(with({"--config", p(dir, "typed.json"), "--calibration-mode", "convex"}) == cli::kExitUsage);
}

TEST_CASE("numerical failure exits with code 1") {
  TempDir dir("cli_numeric");
  write_separable_world(dir, 5, 8, 2);
  const auto r = invoke({"eval", "--base", p(dir, "base.csv"), "--novel", p(dir, "novel.csv"), "--lambda", "1",
                      "--calibration-mode", "convex", "--tasks", "3", "--epsilon", "1e-310", "--uniform-weights",
                      "--output", p(dir, "r.json")});
  CHECK(r.code == cli::kExitNumerical);
  const auto report = read_json(dir.path() / "r.json");
  CHECK(report.at("num_failed") == 3);
  CHECK(report.at("per_task")[0].at("error").get<std::string>().find("NumericalUnderflow") != std::string::npos);
}

TEST_CASE("train-phi reports accuracy, reuses its cache and rejects corruption") {
  TempDir dir("cli_phi");
  write_separable_world(dir, 2, 4, 3);
  const std::vector<std::string> args = {"train-phi", "--base", p(dir, "base.csv"), "--phi", p(dir, "phi.json"),
                                         "--weights", p(dir, "w.json"), "--output", p(dir, "report.json")};
  REQUIRE(invoke(args).code == 0);
  auto report = read_json(dir.path() / "report.json");
  CHECK(report.at("training_accuracy").get<double>() >= 0.95);
  CHECK(report.at("reused") == false);

  // a reused run leaves the cached model untouched
  dir.write("phi.json", slurp(dir.path() / "phi.json"));
  const auto before = fs::last_write_time(dir.path() / "phi.json");
  auto reuse = args;
  reuse.push_back("--reuse");
  REQUIRE(invoke(reuse).code == 0);
  CHECK(fs::last_write_time(dir.path() / "phi.json") == before);
  report = read_json(dir.path() / "report.json");
  CHECK(report.at("reused") == true);
  CHECK(report.at("training_accuracy").get<double>() >= 0.95);

  dir.write("w.json", R"({"classes": "nope"})");
  const auto r = invoke(reuse);
  CHECK(r.code == cli::kExitUsage);
  CHECK(r.err.find("SchemaMismatch") != std::string::npos);
}

TEST_CASE("eval on a separable world, determinism and per-task csv") {
  TempDir dir("cli_eval");
  write_separable_world(dir, 6, 8, 4);
  const std::vector<std::string> args = {"eval", "--base", p(dir, "base.csv"), "--novel", p(dir, "novel.csv"),
                                         "--lambda", "1", "--calibration-mode", "convex", "--tasks", "50",
                                         "--generated", "50", "--seed", "3", "--output", p(dir, "r.json"),
                                         "--per-task-csv", p(dir, "r.csv")};
  const auto r = invoke(args);
  REQUIRE(r.code == 0);
  const auto report = read_json(dir.path() / "r.json");
  CHECK(report.at("mean_accuracy").get<double>() >= 0.99);
  CHECK(report.at("num_tasks") == 50);
  CHECK(report.at("config").at("lambda") == 1.0);
  CHECK(report.at("config").at("calibration_mode") == "convex");
  CHECK_FALSE(report.at("config").contains("threads"));
  CHECK(r.out.find("over 50 tasks") != std::string::npos);

  std::istringstream csv(slurp(dir.path() / "r.csv"));
  std::string line;
  int rows = 0;
  std::getline(csv, line);
  CHECK(line == "task_index,accuracy");
  while (std::getline(csv, line)) ++rows;
  CHECK(rows == 50);

  const auto bytes = slurp(dir.path() / "r.json");
  REQUIRE(invoke(args).code == 0);
  CHECK(slurp(dir.path() / "r.json") == bytes);
}

TEST_CASE("config file values are overridden by flags; env supplies threads") {
  TempDir dir("cli_config");
  write_separable_world(dir, 5, 8, 5);
  dir.write("cfg.json", R"({"lambda": 1.0, "calibration_mode": "paper", "tasks": 3, "generated": 10,
                            "method": "support_only", "base": ")" + p(dir, "base.csv") + R"("})");
  ::setenv("HOTCALIB_THREADS", "2", 1);
  const auto r = invoke({"eval", "--config", p(dir, "cfg.json"), "--novel", p(dir, "novel.csv"), "--tasks", "4",
                      "--output", p(dir, "r.json")});
  ::unsetenv("HOTCALIB_THREADS");
  REQUIRE(r.code == 0);
  const auto report = read_json(dir.path() / "r.json");
  CHECK(report.at("num_tasks") == 4);
  CHECK(report.at("config").at("generated") == 10);
  CHECK(report.at("config").at("calibration_mode") == "paper");
  CHECK(report.at("method") == "support_only");
  CHECK(read_json(dir.path() / "r.json.meta.json").at("threads") == 2);

  ::setenv("HOTCALIB_THREADS", "zero", 1);
  CHECK(invoke({"eval", "--config", p(dir, "cfg.json"), "--novel", p(dir, "novel.csv")}).code == cli::kExitUsage);
  ::unsetenv("HOTCALIB_THREADS");
}

TEST_CASE("plan with one base class puts 1/(NK) in every cell") {
  TempDir dir("cli_plan1");
  dir.write("base.csv", "label,f0,f1\nonly,1,2\nonly,2,1\nonly,3,3\n");
  dir.write("novel.csv", "label,f0,f1\nx,1,0\nx,2,1\ny,0,1\ny,1,2\nz,3,1\nz,1,3\n");
  const auto r = invoke({"plan", "--base", p(dir, "base.csv"), "--novel", p(dir, "novel.csv"), "--lambda", "1",
                      "--calibration-mode", "convex", "--n-way", "3", "--k-shot", "1", "--n-query", "1",
                      "--uniform-weights", "--keep-low-level", "--output", p(dir, "plan.json")});
  REQUIRE(r.code == 0);
  const auto doc = read_json(dir.path() / "plan.json");
  const auto& t = doc.at("plan").at("values");
  REQUIRE(t.size() == 1);
  REQUIRE(t[0].size() == 3);
  for (const auto& v : t[0]) CHECK(v.get<double>() == doctest::Approx(1.0 / 3.0).epsilon(1e-9));
  CHECK(doc.at("plan").at("row_violation").get<double>() <= 1e-6);
  CHECK(doc.at("plan").at("col_violation").get<double>() <= 1e-6);
  CHECK(doc.at("low_level").size() == 1);
  CHECK(doc.at("low_level")[0].at("base_rows").size() == 3);
}

TEST_CASE("masked plan routes column mass to the kept rows") {
  TempDir dir("cli_plan_mask");
  // two base clusters; each novel class sits on one of them
  std::ostringstream base, novel;
  base << "label,f0,f1\n";
  novel << "label,f0,f1\n";
  for (int i = 0; i < 5; ++i) {
    base << "left," << 10 + 0.1 * i << "," << 1 - 0.1 * i << "\n";
    base << "right," << 1 + 0.1 * i << "," << 10 - 0.1 * i << "\n";
    novel << "p," << 9 + 0.2 * i << "," << 1.5 << "\n";
    novel << "q," << 1.5 << "," << 9 + 0.2 * i << "\n";
  }
  dir.write("base.csv", base.str());
  dir.write("novel.csv", novel.str());
  REQUIRE(invoke({"plan", "--base", p(dir, "base.csv"), "--novel", p(dir, "novel.csv"), "--lambda", "1",
               "--calibration-mode", "convex", "--n-way", "2", "--k-shot", "1", "--n-query", "2", "--top-k", "1",
               "--uniform-weights", "--output", p(dir, "plan.json")})
              .code == 0);
  const auto doc = read_json(dir.path() / "plan.json");
  const auto& cost = doc.at("cost");
  const auto& t = doc.at("plan").at("values");
  for (std::size_t n = 0; n < 2; ++n) {
    const std::size_t kept = cost[0][n].get<double>() <= cost[1][n].get<double>() ? 0 : 1;
    const double col = t[0][n].get<double>() + t[1][n].get<double>();
    CHECK(t[kept][n].get<double>() >= 0.99 * col);
  }
}

TEST_CASE("toy report lists every method with scores") {
  TempDir dir("cli_toy");
  const auto r = invoke({"toy", "--instances", "3", "--seed", "1", "--output", p(dir, "toy.json")});
  REQUIRE(r.code == 0);
  const auto doc = read_json(dir.path() / "toy.json");
  for (const char* name : {"uniform", "free_lunch", "high_level_euclid", "hot"}) {
    REQUIRE(doc.at("summary").contains(name));
    const double c = doc.at("summary").at(name).at("mean_cosine").get<double>();
    CHECK(c > 0.0);
    CHECK(c <= 1.0 + 1e-12);
  }
  CHECK(doc.at("instances").size() == 3);
  CHECK(doc.at("instances")[0].at("methods").at("hot").at("learned").size() == 5);
  CHECK(doc.at("config").at("epsilon") == 0.1);
  CHECK(doc.contains("margins"));
}

TEST_CASE("world writes loadable tables deterministically") {
  TempDir a("cli_world_a"), b("cli_world_b");
  const std::vector<std::string> flags = {"--seed", "9", "--base-classes", "4", "--novel-classes", "3", "--dim", "5",
                                          "--samples-per-class", "7"};
  auto args = [&](const TempDir& d) {
    std::vector<std::string> v = {"world", "--out-dir", d.path().string()};
    v.insert(v.end(), flags.begin(), flags.end());
    return v;
  };
  REQUIRE(invoke(args(a)).code == 0);
  REQUIRE(invoke(args(b)).code == 0);
  CHECK(slurp(a.path() / "base.csv") == slurp(b.path() / "base.csv"));
  const auto novel = load_features(a.path() / "novel.csv");
  CHECK(novel.num_classes() == 3);
  CHECK(novel.rows() == 21);
  CHECK(novel.min_entry() >= 0.0);
  CHECK(read_json(a.path() / "world.json").at("mixing").size() == 3);
}
