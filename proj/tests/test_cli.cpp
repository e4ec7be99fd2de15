#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ugsr/datastream.hpp"
#include "ugsr/report.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path& root() {
  static const fs::path p = [] {
    auto d = fs::temp_directory_path() / "ugsr_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return p;
}

int cli(const std::string& args) {
  const std::string cmd = std::string(UGSR_CLI_PATH) + " -q " + args + " > " + (root() / "last.log").string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::string path(const std::string& name) { return (root() / name).string(); }

const std::string kTiny = " --static-months 3 --hidden 16 --static-epochs 2 --continual-epochs 1"
                          " --static-batch 128 --continual-batch 64 --static-optimizer adam --static-lr 1e-3";

const std::string& stream_csv() {
  static const std::string p = [] {
    const auto out = path("stream.csv");
    REQUIRE(cli("gen-data --dim 8 --families 4 --months 5 --static-months 3 --per-month 200 --seed 3 --out " +
                 out) == 0);
    return out;
  }();
  return p;
}

ugsr::CsvTable per_month(const std::string& dir) {
  return ugsr::load_table((fs::path(dir) / ugsr::kPerMonthFile).string(), ugsr::per_month_header());
}

}  // namespace

TEST_CASE("cli gen-data: deterministic, ratio, bad values") {
  REQUIRE(cli("gen-data --months 18 --seed 7 --per-month 500 --out " + path("g1.csv")) == 0);
  REQUIRE(cli("gen-data --months 18 --seed 7 --per-month 500 --out " + path("g2.csv")) == 0);
  CHECK(slurp(path("g1.csv")) == slurp(path("g2.csv")));

  REQUIRE(cli("gen-data --months 2 --static-months 1 --ratio 9 --per-month 5000 --seed 2 --out " +
               path("r.csv")) == 0);
  const auto s = ugsr::load_csv(path("r.csv"));
  std::size_t benign = 0;
  for (const auto& x : s) benign += x.y_bin == 0;
  CHECK(std::abs(double(benign) / double(s.size()) - 0.9) < 0.02);

  CHECK(cli("gen-data --months 1 --out " + path("bad.csv")) != 0);
  CHECK(cli("gen-data --ratio -2 --out " + path("bad.csv")) != 0);
  CHECK(cli("gen-data --warp 9 --out " + path("bad.csv")) != 0);
  CHECK_FALSE(fs::exists(path("bad.csv")));
}

TEST_CASE("cli run: errors") {
  CHECK(cli("run --data " + path("missing.csv") + " --out " + path("x")) != 0);
  CHECK(cli("run --data " + stream_csv() + " --out " + path("x") + " --profile desk --config " + stream_csv()) != 0);
  CHECK(cli("run --data " + stream_csv() + " --out " + path("x") + " --mu 3") != 0);
  CHECK(cli("frobnicate") != 0);
}

TEST_CASE("cli run: zero budget, retrieval switch, replay from config") {
  REQUIRE(cli("run --data " + stream_csv() + " --out " + path("full") + " --budget 10" + kTiny) == 0);
  REQUIRE(cli("run --data " + stream_csv() + " --out " + path("noret") + " --budget 10 --no-retrieval" + kTiny) == 0);
  REQUIRE(cli("run --data " + stream_csv() + " --out " + path("zero") + " --budget 0" + kTiny) == 0);

  for (const auto& row : per_month(path("zero")).rows) CHECK(row[6] == "0");

  // Only the evaluation columns may differ.
  const auto a = per_month(path("full")), b = per_month(path("noret"));
  REQUIRE(a.rows.size() == 2);
  REQUIRE(b.rows.size() == 2);
  for (std::size_t r = 0; r < 2; ++r) {
    CHECK(a.rows[r][0] == b.rows[r][0]);
    CHECK(a.rows[r][6] == b.rows[r][6]);
    CHECK(a.rows[r][7] == b.rows[r][7]);
  }
  const auto cfg = slurp(fs::path(path("noret")) / ugsr::kConfigFile);
  CHECK(cfg.find("retrieval_enabled=false") != std::string::npos);
  CHECK(cfg.find("budget=10") != std::string::npos);

  REQUIRE(cli("run --data " + stream_csv() + " --out " + path("again") + " --config " +
               (fs::path(path("full")) / ugsr::kConfigFile).string()) == 0);
  for (const char* f : {ugsr::kPerMonthFile, ugsr::kSummaryFile, ugsr::kConfigFile})
    CHECK(slurp(fs::path(path("full")) / f) == slurp(fs::path(path("again")) / f));
}

TEST_CASE("cli train-static then run matches a single run") {
  REQUIRE(cli("train-static --data " + stream_csv() + " --out " + path("st") + kTiny) == 0);
  for (const char* f : {"sampler.ckpt", "detector.ckpt", "codebook.bin", "config.txt"})
    CHECK(fs::exists(fs::path(path("st")) / f));
  REQUIRE(cli("run --data " + stream_csv() + " --out " + path("from_st") + " --static-dir " + path("st") +
               " --budget 0" + kTiny) == 0);
  REQUIRE(cli("run --data " + stream_csv() + " --out " + path("direct") + " --budget 0" + kTiny) == 0);
  const auto a = per_month(path("from_st")), b = per_month(path("direct"));
  REQUIRE(a.rows.size() == b.rows.size());
  // Weights round to float32 on disk; decisions should still agree closely.
  for (std::size_t r = 0; r < a.rows.size(); ++r) CHECK(std::abs(std::stod(a.rows[r][5]) - std::stod(b.rows[r][5])) < 0.01);
}

TEST_CASE("cli report: merged outputs") {
  REQUIRE(cli("run --data " + stream_csv() + " --out " + path("rep1") + " --budget 2" + kTiny) == 0);
  REQUIRE(cli("run --data " + stream_csv() + " --out " + path("rep2") + " --budget 4" + kTiny) == 0);
  REQUIRE(cli("report --runs " + path("rep1") + " --out " + path("agg1")) == 0);
  const auto one = ugsr::load_table((fs::path(path("agg1")) / "summary.csv").string(), {"run_id", "metric", "value"});
  const auto src = ugsr::load_table((fs::path(path("rep1")) / ugsr::kSummaryFile).string(), ugsr::summary_header());
  REQUIRE(one.rows.size() == src.rows.size());
  for (std::size_t i = 0; i < src.rows.size(); ++i) {
    CHECK(one.rows[i][0] == "rep1");
    CHECK(one.rows[i][1] == src.rows[i][0]);
    CHECK(one.rows[i][2] == src.rows[i][1]);
  }

  REQUIRE(cli("report --runs " + path("rep1") + " " + path("rep2") + " --ids a b --out " + path("agg2")) == 0);
  const auto two = ugsr::load_table((fs::path(path("agg2")) / "summary.csv").string(), {"run_id", "metric", "value"});
  CHECK(two.rows.size() == 2 * src.rows.size());
  const auto longf = ugsr::load_table((fs::path(path("agg2")) / "per_month_long.csv").string(),
                                      {"run_id", "month", "metric", "value"});
  CHECK(longf.rows.size() == 2 * 2 * 7);

  CHECK(cli("report --runs " + path("st") + " --out " + path("agg3")) != 0);
  CHECK(cli("report --runs " + path("rep1") + " --ids a b --out " + path("agg4")) != 0);
}
