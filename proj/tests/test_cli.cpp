#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "pbts/cli.hpp"
#include "pbts/sim.hpp"

using namespace pbts;

namespace {

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome call(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::filesystem::path temp(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("pbts-cli-" + name);
  std::filesystem::remove(p);
  return p;
}

}  // namespace

TEST_CASE("sizes") {
  CHECK(parse_size("512") == 512);
  CHECK(parse_size("256KB") == 256 * 1024);
  CHECK(parse_size("2MiB") == 2 * 1024 * 1024);
  CHECK(parse_size("1g") == 1ull << 30);
  CHECK(parse_size("7b") == 7);
  for (const char* bad : {"", "MB", "1.5MB", "-3", "12TB", "1 MB", "99999999999999999999G"}) {
    CAPTURE(bad);
    CHECK_THROWS_AS(parse_size(bad), Error);
  }
}

TEST_CASE("usage errors exit 2 with usage on stderr") {
  for (const auto& args : std::vector<std::vector<std::string>>{
           {},
           {"frobnicate"},
           {"run"},
           {"overhead", "--file-size", "1GB"},
           {"overhead", "--file-size", "1GB", "--bandwidth", "1MB", "--piece-size", "0"},
           {"overhead", "--file-size", "1GB", "--bandwidth", "fast", "--piece-size", "2MB"},
           {"overhead", "--file-size", "1GB", "--bandwidth", "1MB", "--piece-size", "2MB",
            "--policy", "never"},
           {"bench", "--reps", "10"},
           {"games", "--seed", "x"},
           {"chain"},
       }) {
    const auto r = call(args);
    CAPTURE(args.empty() ? "" : args[0]);
    CHECK(r.code == 2);
    CHECK(r.out.empty());
    CHECK(r.err.find("Usage") != std::string::npos);
  }
  const auto help = call({"--help"});
  CHECK(help.code == 0);
  CHECK(help.out.find("overhead") != std::string::npos);
}

TEST_CASE("overhead with the download example") {
  const auto r = call({"overhead", "--file-size", "1GB", "--bandwidth", "1MB", "--piece-size",
                       "256KB"});
  REQUIRE(r.code == 0);
  const double pct = std::stod(r.out.substr(r.out.find(' ') + 1));
  CHECK(std::abs(pct - 52) <= 5);

  const auto j = call({"overhead", "--json", "--file-size", "1GB", "--bandwidth", "1MB",
                       "--piece-size", "2MB"});
  REQUIRE(j.code == 0);
  const auto parsed = Json::parse(j.out);
  CHECK(parsed["pieces"] == 512);
  CHECK(std::abs(parsed["overhead"].get<double>() - 0.06) <= 0.02);

  const auto s = call({"overhead", "--json", "--file-size", "1GB", "--bandwidth", "1MB",
                       "--piece-size", "256KB", "--sign-ms", "128"});
  CHECK(Json::parse(s.out)["overhead"].get<double>() == doctest::Approx(4096 * 0.128 / 1024));
}

TEST_CASE("table1 output") {
  const auto r = call({"--json", "table1"});
  REQUIRE(r.code == 0);
  const auto rows = Json::parse(r.out);
  REQUIRE(rows.size() == 4);
  CHECK(rows[1]["signatures"] == 436);
  CHECK(rows[3]["report_bytes"] == 163936);
  const auto text = call({"table1"});
  CHECK(text.out.find("~512") != std::string::npos);
}

TEST_CASE("run writes a chain log that dump can read") {
  const auto scen = temp("scenario.json");
  std::ofstream(scen) << R"({"seed": 4, "peers": 3, "file_size": 200000, "piece_size": 65536,
                            "policy": "batch:2", "migrate_at_s": [1]})";
  const auto log = temp("chain.log");

  const auto r = call({"run", scen.string(), "--chain", log.string(), "--json"});
  REQUIRE(r.code == 0);
  const auto m = Json::parse(r.out);
  CHECK(m["all_complete"] == true);
  CHECK(m["contracts"].size() == 2);
  CHECK(std::filesystem::exists(log));

  const auto d = call({"--json", "chain", "dump", log.string()});
  REQUIRE(d.code == 0);
  CHECK(Json::parse(d.out).size() == 2);

  // An existing log is never overwritten.
  CHECK(call({"run", scen.string(), "--chain", log.string()}).code == 1);

  const auto env_log = temp("env.log");
  ::setenv("PBTS_CHAIN", env_log.string().c_str(), 1);
  CHECK(call({"run", scen.string()}).code == 0);
  ::unsetenv("PBTS_CHAIN");
  CHECK(std::filesystem::exists(env_log));

  CHECK(call({"chain", "dump", temp("missing.log").string()}).code == 1);
  std::ofstream(scen) << R"({"peers": 1})";
  const auto bad = call({"run", scen.string()});
  CHECK(bad.code == 1);
  CHECK(bad.err.find("peers") != std::string::npos);

  for (const auto& p : {scen, log, env_log}) std::filesystem::remove(p);
}

TEST_CASE("bench prints measured ratios") {
  const auto r = call({"bench", "--reps", "100", "--json"});
  REQUIRE(r.code == 0);
  const auto j = Json::parse(r.out);
  CHECK(j["session_sign_speedup"].get<double>() > 1);
  CHECK(j["aggregation"].size() == 4);
}
