#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <numbers>
#include <sstream>

#include "cli_support.hpp"

namespace fs = std::filesystem;
using namespace hyperdisp;
using json = nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("hyperdisp_cli_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int run(const std::string& args, const fs::path& err = {}) {
  std::string cmd = std::string(HYPERDISP_CLI) + " " + args;
  if (!err.empty()) cmd += " 2> " + err.string();
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

json load_json(const fs::path& p) { return json::parse(slurp(p)); }

}  // namespace

TEST(ConfigGrammar, ParsesCommentsBlanksAndTrimming) {
  const auto m = cli::parse_config_text("# header\n\n  n = 3 \nradii=0, 1,2\n\t# indented comment\nsigma = 1,0.5\n");
  ASSERT_EQ(m.size(), 3u);
  EXPECT_EQ(m.at("n"), "3");
  EXPECT_EQ(m.at("radii"), "0, 1,2");
  const cli::Config c("kernel", m);
  EXPECT_EQ(c.integer("n"), 3);
  EXPECT_EQ(c.list("radii"), (std::vector<double>{0.0, 1.0, 2.0}));
  EXPECT_EQ(c.complex("sigma"), std::complex<double>(1.0, 0.5));
}

TEST(ConfigGrammar, RejectsMalformedInput) {
  EXPECT_THROW(cli::parse_config_text("no equals sign\n"), Error);
  EXPECT_THROW(cli::parse_config_text("Bad-Key = 1\n"), Error);
  EXPECT_THROW(cli::parse_config_text("n = 1\nn = 2\n"), Error);
  const cli::Config c("x", {{"a", "1.5"}, {"b", "abc"}, {"r", "5:1:3"}, {"f", "maybe"}});
  EXPECT_THROW(c.integer("a"), Error);
  EXPECT_THROW(c.num("b"), Error);
  EXPECT_THROW(c.range("r"), Error);
  EXPECT_THROW(c.flag("f"), Error);
  EXPECT_THROW(c.str("missing"), Error);
}

TEST(ConfigGrammar, RangesAndCanonicalText) {
  const cli::Config c("propagate", {{"t", "1:10:4"}, {"s", "2.5"}, {"out", "somewhere"}});
  const auto r = c.range("t");
  EXPECT_EQ(r.count, 4);
  EXPECT_EQ(cli::linear_points(r), (std::vector<double>{1.0, 4.0, 7.0, 10.0}));
  EXPECT_EQ(c.range("s").count, 1);
  EXPECT_EQ(c.canonical(), "command = propagate\ns = 2.5\nt = 1:10:4\n");
}

TEST(Formatting, ShortestRoundTrip) {
  EXPECT_EQ(cli::format_double(0.0), "0");
  EXPECT_EQ(cli::format_double(0.05), "0.05");
  EXPECT_EQ(cli::format_double(-1.5), "-1.5");
  const double x = std::numbers::pi / 7.0;
  EXPECT_EQ(cli::parse_double("x", cli::format_double(x)), x);
}

TEST(Formatting, Sha256KnownVectors) {
  EXPECT_EQ(cli::sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(cli::sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(CliRun, KernelRowMatchesH3ClosedForm) {
  const auto dir = scratch("kernel");
  ASSERT_EQ(run("kernel --n 2 --sigma 1 --rmax 5 --out " + dir.string()), 0);
  const auto t = cli::read_csv((dir / "kernel.csv").string());
  ASSERT_EQ(t.header, (std::vector<std::string>{"r", "re", "im"}));
  ASSERT_EQ(t.rows.size(), 100u);
  bool found = false;
  for (const auto& row : t.rows) {
    if (row[0] != 1.0) continue;
    found = true;
    const double exact = std::exp(-1.0) / (4.0 * std::numbers::pi * std::sinh(1.0));
    EXPECT_NEAR(row[1], exact, 1e-12 * exact);
    EXPECT_EQ(row[2], 0.0);
  }
  EXPECT_TRUE(found);
  const auto m = load_json(dir / "kernel.json");
  EXPECT_EQ(m["command"], "kernel");
  EXPECT_EQ(m["config"]["sigma"], "1");
  EXPECT_EQ(m["config_sha256"].get<std::string>().size(), 64u);
  EXPECT_LT(m["derived"]["relative_mismatch"].get<double>(), 1e-8);
  EXPECT_EQ(slurp(dir / "kernel.csv").rfind("# config_sha256=" + m["config_sha256"].get<std::string>(), 0), 0u);
}

TEST(CliRun, FreePropagateThenDecayFit) {
  const auto dir = scratch("propagate");
  ASSERT_EQ(run("propagate --n 2 --t 1:100:10 --radii 0,0.5,1 --out " + dir.string()), 0);
  ASSERT_EQ(run("decay-fit --input " + (dir / "propagate.csv").string() + " --out " + dir.string() + " > /dev/null"), 0);
  const auto m = load_json(dir / "decay-fit.json");
  EXPECT_NEAR(m["derived"]["exponent"].get<double>(), -1.5, 0.05);
}

TEST(CliRun, ZeroPotentialHasNoResonances) {
  const auto dir = scratch("resonances");
  ASSERT_EQ(run("resonances --n 2 --v0 0 --ny 20 --out " + dir.string()), 0);
  const auto m = load_json(dir / "resonances.json");
  EXPECT_TRUE(m["derived"]["zeros"].empty());
  EXPECT_NEAR(m["derived"]["min_modulus"].get<double>(), 1.0, 1e-12);
}

TEST(CliRun, OutputsAreByteIdenticalAcrossRuns) {
  const auto a = scratch("det_a"), b = scratch("det_b");
  const fs::path cfg = scratch("det_cfg") / "run.cfg";
  std::ofstream(cfg) << "# boundstate run\nmu = 2\np = 1\nstep = 0.01\n";
  ASSERT_EQ(run("boundstate --config " + cfg.string() + " --out " + a.string()), 0);
  ASSERT_EQ(run("boundstate --config " + cfg.string() + " --out " + b.string()), 0);
  EXPECT_EQ(slurp(a / "boundstate.csv"), slurp(b / "boundstate.csv"));
  auto ma = load_json(a / "boundstate.json"), mb = load_json(b / "boundstate.json");
  EXPECT_EQ(ma["config"]["step"], "0.01");
  EXPECT_EQ(ma["derived"], mb["derived"]);
  EXPECT_EQ(ma["config_sha256"], mb["config_sha256"]);
}

TEST(CliRun, FlagsOverrideConfigFile) {
  const auto dir = scratch("override");
  const fs::path cfg = dir / "k.cfg";
  std::ofstream(cfg) << "sigma = 2\nnodes = 5\n";
  ASSERT_EQ(run("kernel --config " + cfg.string() + " --nodes 4 --out " + dir.string()), 0);
  const auto m = load_json(dir / "kernel.json");
  EXPECT_EQ(m["config"]["sigma"], "2");
  EXPECT_EQ(m["config"]["nodes"], "4");
  EXPECT_EQ(cli::read_csv((dir / "kernel.csv").string()).rows.size(), 4u);
}

TEST(CliRun, ErrorsAreMachineReadable) {
  const auto dir = scratch("errors");
  const fs::path cfg = dir / "bad.cfg";
  std::ofstream(cfg) << "sigma = 1\nwibble = 3\n";
  EXPECT_NE(run("kernel --config " + cfg.string() + " --out " + dir.string(), dir / "err1.txt"), 0);
  auto e = json::parse(slurp(dir / "err1.txt"));
  EXPECT_EQ(e["error"], "precondition");
  EXPECT_EQ(e["command"], "kernel");
  EXPECT_NE(e["message"].get<std::string>().find("wibble"), std::string::npos);
  EXPECT_EQ(load_json(dir / "error.json"), e);

  EXPECT_NE(run("boundstate --mu 0.5 --out " + dir.string(), dir / "err2.txt"), 0);
  e = json::parse(slurp(dir / "err2.txt"));
  EXPECT_EQ(e["command"], "boundstate");
  EXPECT_FALSE(e["error"].get<std::string>().empty());

  EXPECT_NE(run("propagate --t 0.5:10:8 --out " + dir.string(), dir / "err3.txt"), 0);
  EXPECT_EQ(json::parse(slurp(dir / "err3.txt"))["error"], "precondition");

  EXPECT_NE(run("nosuchcommand", dir / "err4.txt"), 0);
  EXPECT_EQ(json::parse(slurp(dir / "err4.txt"))["error"], "usage");
}
