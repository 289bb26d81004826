#include <doctest.h>

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "canon_hjb/errors.hpp"
#include "canon_hjb/problem_spec.hpp"
#include "cli.hpp"

using namespace canon_hjb;
using json = nlohmann::json;

namespace {

const std::string kSpecs = CANON_HJB_SPEC_DIR;

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string temp_spec(const std::string& name, const std::string& text) {
  const auto dir = std::filesystem::temp_directory_path() / "canon_hjb_test_cli";
  std::filesystem::create_directories(dir);
  const auto path = dir / name;
  std::ofstream(path) << text;
  return path.string();
}

const char* kMinimal = R"([problem]
dimension = 1
horizon = 1
xbox = -1:1

[hamiltonian]
expression = 0.5*p1^2

[terminal]
expression = 0
)";

std::string error_of(const std::string& text) {
  try {
    parse_spec(text);
  } catch (const InputError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("load_spec examples") {
  const ProblemSpec s = parse_spec(kMinimal);
  CHECK(s.dim == 1);
  CHECK(s.horizon == 1.0);
  CHECK(s.t == 0.0);
  CHECK(s.x == std::vector<double>{0.0});
  CHECK(s.pbox.lo == s.xbox.lo);
  CHECK(s.certificate.samples == 4096);
  CHECK(s.certificate.directions == 8);
  CHECK(s.grid.nodes == std::vector<int>{201});
  CHECK(s.grid.cfl == 0.5);
  CHECK(s.integrator.mesh_points == 33);
  CHECK(s.hamiltonian.has_value());
  CHECK_FALSE(s.lagrangian.has_value());

  const std::string both = std::string(kMinimal) + "[lagrangian]\nexpression = 0.5*v1^2\n";
  CHECK(error_of(both).find("exactly one") != std::string::npos);
  const std::string neither = R"([problem]
dimension = 1
horizon = 1
xbox = -1:1
[terminal]
expression = 0
)";
  CHECK(error_of(neither).find("exactly one") != std::string::npos);

  std::string p_in_terminal = kMinimal;
  p_in_terminal.replace(p_in_terminal.find("expression = 0\n"), 15, "expression = p1\n");
  CHECK(error_of(p_in_terminal).find("[terminal]") != std::string::npos);
}

TEST_CASE("load_spec rejections") {
  const auto with = [](const std::string& from, const std::string& to) {
    std::string t = kMinimal;
    t.replace(t.find(from), from.size(), to);
    return error_of(t);
  };
  CHECK(with("horizon = 1", "horizon = 0").find("horizon") != std::string::npos);
  CHECK(with("horizon = 1\n", "").find("missing key 'horizon'") != std::string::npos);
  CHECK(with("xbox = -1:1", "xbox = 1:-1").find("empty interval") != std::string::npos);
  CHECK(with("xbox = -1:1", "xbox = -1").find("lo:hi") != std::string::npos);
  CHECK(with("dimension = 1", "dimension = 5").find("dimension") != std::string::npos);
  CHECK(with("dimension = 1", "dimension = 1.5").find("integer") != std::string::npos);
  CHECK(with("[terminal]", "[termnal]").find("unknown section") != std::string::npos);
  CHECK(with("horizon = 1", "horizon = 1\nhorizn = 2").find("unknown key") != std::string::npos);
  CHECK(with("horizon = 1", "horizon = 1\nhorizon = 2").find("duplicate key") != std::string::npos);
  CHECK(with("expression = 0.5*p1^2", "expression = 0.5*p2^2").find("[hamiltonian]") != std::string::npos);
  CHECK(with("horizon = 1", "horizon = abc").find("not a number") != std::string::npos);
  CHECK(with("[problem]", "stray\n[problem]").find("expected key = value") != std::string::npos);
  CHECK_THROWS_AS(load_spec("/nonexistent/spec.ini"), InputError);
}

TEST_CASE("spec values and hash") {
  std::string text = std::string(kMinimal) + "[grid]\nbox = -2*pi:2*pi\nnodes = 11\n";
  const ProblemSpec s = parse_spec(text);
  CHECK(s.grid.box->lo[0] == doctest::Approx(-2 * M_PI).epsilon(1e-15));

  // Comments, spacing and key order do not change the hash; content does.
  const std::string reordered = R"(# comment
[terminal]
expression=0
[grid]
nodes = 11
box = -2*pi : 2*pi
[hamiltonian]
expression = 0.5 * p1 ^ 2
[problem]
xbox = -1:1
horizon = 1
dimension = 1
)";
  CHECK(parse_spec(reordered).hash() == s.hash());
  text.replace(text.find("nodes = 11"), 10, "nodes = 12");
  CHECK(parse_spec(text).hash() != s.hash());
  CHECK(s.hash().size() == 16);

  const ProblemSpec two = parse_spec(R"([problem]
dimension = 2
horizon = 1
x = 1, 2
xbox = -1:1, -2:2
[hamiltonian]
expression = 0.5*p1^2 + 0.5*p2^2
[terminal]
expression = x1*x2
)");
  CHECK(two.x == std::vector<double>{1, 2});
  CHECK(two.xbox.hi == std::vector<double>{1, 2});
  CHECK(two.grid.nodes == std::vector<int>{201, 201});
}

TEST_CASE("cli exit codes on the fixture specs") {
  {
    const Run r = run({"certify", kSpecs + "/certified.ini"});
    CHECK(r.code == 0);
    const json j = json::parse(r.out);
    CHECK(j["outputs"]["verdict"] == "CERTIFIED");
    CHECK(j["outputs"]["chosenAlpha"].get<double>() == doctest::Approx(1.0).epsilon(1e-3));
    for (const char* key : {"lambda0", "lambdaH", "lambdaG", "normPP", "muPP", "alphaLower", "alphaUpper",
                            "verdict", "chosenAlpha", "disclaimer", "ledger"}) {
      CHECK(j["outputs"].contains(key));
    }
  }
  {
    const Run r = run({"certify", kSpecs + "/quadratic_cos.ini"});
    CHECK(r.code == 1);
    CHECK(json::parse(r.out)["outputs"]["verdict"] == "NOT_CERTIFIED");
  }
  {
    const Run r = run({"verify-shift", kSpecs + "/certified.ini", "--alpha", "1"});
    CHECK(r.code == 0);
    CHECK(json::parse(r.out)["outputs"]["maxDeviation"].get<double>() <= 5e-2);
  }
  {
    const Run r = run({"verify-shift", kSpecs + "/certified.ini", "--alpha", "1", "--tol", "1e-6"});
    CHECK(r.code == 1);
  }
  CHECK(run({"solve", kSpecs + "/certified.ini", "--method", "action"}).code == 2);
  CHECK(run({"solve", kSpecs + "/certified.ini", "--method", "simplex"}).code == 2);
  CHECK(run({"bogus", kSpecs + "/certified.ini"}).code == 2);
  CHECK(run({"certify"}).code == 2);
  CHECK(run({"certify", "/nonexistent.ini"}).code == 2);
  CHECK(run({"--help"}).code == 0);

  const std::string slow = temp_spec("slow.ini", R"([problem]
dimension = 1
horizon = 1
xbox = -1:1
[hamiltonian]
expression = 0.5*p1^2
[terminal]
expression = 0.5*x1^2
[grid]
max_speed = 0.1
nodes = 21
)");
  const Run cfl = run({"solve", slow});
  CHECK(cfl.code == 3);
  CHECK(cfl.err.find("CFL") != std::string::npos);

  const std::string concave = temp_spec("concave.ini", R"([problem]
dimension = 1
horizon = 1
xbox = -1:1
[hamiltonian]
expression = -0.5*p1^2
[terminal]
expression = 0
)");
  const Run pre = run({"alpha-interval", concave});
  CHECK(pre.code == 1);
  CHECK(json::parse(pre.out)["outputs"]["precondition"] == "strong_convexity");
  CHECK(json::parse(run({"certify", concave}).out)["outputs"]["verdict"] == "INCONCLUSIVE");
}

TEST_CASE("cli solve methods agree on the Hopf-Lax fixture") {
  const json c = json::parse(run({"solve", kSpecs + "/hopf_lax.ini", "--method", "characteristics"}).out);
  CHECK(std::abs(c["outputs"]["value"].get<double>() - 0.25) <= 1e-6);
  CHECK(std::abs(c["outputs"]["terminalState"][0].get<double>() - 0.5) <= 1e-3);
  const json a = json::parse(run({"solve", kSpecs + "/hopf_lax.ini", "--method", "action"}).out);
  CHECK(std::abs(a["outputs"]["value"].get<double>() - 0.25) <= 1e-3);
  CHECK(a["outputs"]["multiple"] == false);
}

TEST_CASE("cli writes files and csv reports") {
  const auto dir = std::filesystem::temp_directory_path() / "canon_hjb_test_cli" / "out";
  std::filesystem::remove_all(dir);
  const std::string spec = temp_spec("small.ini", std::string(kMinimal) + "[grid]\nnodes = 41\n");
  const Run r = run({"solve", spec, "--out", dir.string(), "--plot", "--format", "csv"});
  REQUIRE(r.code == 0);
  CHECK(r.out.rfind("key,value\ncommand,solve\n", 0) == 0);
  for (const char* f : {"report.csv", "field.csv", "field.json", "profile.csv", "field.dat", "profile.dat"}) {
    CHECK(std::filesystem::exists(dir / f));
  }
  std::ifstream field(dir / "field.csv");
  std::string header;
  std::getline(field, header);
  CHECK(header == "t,x,u");
}

TEST_CASE("property: reports are deterministic") {
  for (const char* cmd : {"certify", "corollary-threshold", "singularity-scan"}) {
    const json a = json::parse(run({cmd, kSpecs + "/quadratic_cos.ini"}).out);
    const json b = json::parse(run({cmd, kSpecs + "/quadratic_cos.ini"}).out);
    CHECK(a["outputs"].dump() == b["outputs"].dump());
    CHECK(a["bodyHash"] == b["bodyHash"]);
    CHECK(a["specHash"] == b["specHash"]);
  }
  setenv("CANON_HJB_THREADS", "1", 1);
  const json serial = json::parse(run({"certify", kSpecs + "/certified.ini"}).out);
  setenv("CANON_HJB_THREADS", "3", 1);
  const json threaded = json::parse(run({"certify", kSpecs + "/certified.ini"}).out);
  unsetenv("CANON_HJB_THREADS");
  CHECK(serial["bodyHash"] == threaded["bodyHash"]);
}
