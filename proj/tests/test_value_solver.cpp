#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <sstream>

#include "canon_hjb/errors.hpp"
#include "canon_hjb/value_solver.hpp"

using namespace canon_hjb;

namespace {

HamiltonianModel ham(const std::string& src, int d = 1) {
  return HamiltonianModel(parse_expression(src, d, kHamiltonianVars));
}
LagrangianModel lag(const std::string& src, int d = 1) {
  return LagrangianModel(parse_expression(src, d, kLagrangianVars));
}
TerminalCost term(const std::string& src, int d = 1) { return TerminalCost(parse_expression(src, d, kTerminalVars)); }

GridSpec spec1(double lo, double hi, int nodes, double horizon) {
  GridSpec s;
  s.lo = {lo};
  s.hi = {hi};
  s.nodes = {nodes};
  s.horizon = horizon;
  return s;
}

Box box1(double lo, double hi) { return Box{{lo}, {hi}}; }

// Max interior |grid − Hopf–Lax| at t = 0 for H = ½p².
double oracle_gap(const std::string& g_src, double horizon, int nodes) {
  const auto h = ham("0.5*p1^2");
  const auto g = term(g_src);
  const ValueField f = solve_grid(h, g, make_grid(h, g, spec1(-4, 4, nodes, horizon)));
  const HopfLax oracle(g, box1(-12, 12), 4001);
  const auto [i0, i1] = interior_range(nodes);
  double gap = 0.0;
  for (int i = i0; i <= i1; ++i) {
    const double x = f.grid.coord(0, i);
    gap = std::max(gap, std::abs(f.final_slice()[i] - oracle(horizon, std::span<const double>(&x, 1)).value));
  }
  return gap;
}

}  // namespace

TEST_CASE("make_grid resolves the time step") {
  const auto h = ham("0.5*p1^2");
  const auto g = term("0.5*x1^2");
  GridSpec s = spec1(-8, 8, 801, 1.0);
  const Grid grid = make_grid(h, g, s);
  CHECK(grid.dx[0] == doctest::Approx(0.02));
  // ∇G ranges over [−8, 8], inflated to [−16, 16].
  CHECK(grid.max_speed[0] == doctest::Approx(16.0));
  CHECK(grid.dt <= grid.cfl * grid.dx[0] / grid.max_speed[0] + 1e-15);
  CHECK(grid.steps * grid.dt == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(grid.horizon / grid.snapshot_stride <= 256);

  s.max_speed = std::vector<double>{0.0};
  CHECK(make_grid(h, g, s).steps == 1);

  for (auto bad : {spec1(1, -1, 11, 1), spec1(-1, 1, 2, 1), spec1(-1, 1, 11, 0)}) {
    CHECK_THROWS_AS(make_grid(h, g, bad), InputError);
  }
  GridSpec cfl = spec1(-1, 1, 11, 1);
  cfl.cfl = 1.5;
  CHECK_THROWS_AS(make_grid(h, g, cfl), InputError);
}

TEST_CASE("solve_grid examples") {
  {
    const auto h = ham("0.5*p1^2");
    const auto g = term("0");
    const ValueField f = solve_grid(h, g, make_grid(h, g, spec1(-2, 2, 81, 1.0)));
    for (const auto& slice : f.slices) {
      for (const double u : slice) CHECK(u == 0.0);
    }
  }
  {
    const auto h = ham("0.5*p1^2");
    const auto g = term("0.5*x1^2");
    const Grid grid = make_grid(h, g, spec1(-8, 8, 801, 1.0));
    const ValueField f = solve_grid(h, g, grid);
    CHECK(f.times.front() == 1.0);
    CHECK(f.times.back() == 0.0);
    for (int i = 0; i < 801; ++i) {
      const double x = grid.coord(0, i);
      CHECK(f.slices.front()[i] == 0.5 * x * x);
    }
    for (const auto& slice : f.slices) {
      for (const double u : slice) CHECK(std::isfinite(u));
    }
    const double x = 1.0;
    CHECK(std::abs(f.value_at(std::span<const double>(&x, 1)) - 0.25) <= 2e-2);
    CHECK(f.scheme == "local-lax-friedrichs");
    CHECK(f.terminal_hash == fnv1a(f.slices.front()));
  }
}

TEST_CASE("solve_grid errors") {
  const auto h = ham("0.5*p1^2");
  const auto g = term("0.5*x1^2");
  GridSpec s = spec1(-4, 4, 81, 1.0);
  s.max_speed = std::vector<double>{1.0};  // true speeds reach 4
  CHECK_THROWS_AS(solve_grid(h, g, make_grid(h, g, s)), NumericalError);

  const auto blow = term("exp(50*x1)");
  GridSpec b = spec1(0, 20, 41, 1.0);
  b.max_speed = std::vector<double>{1.0};
  CHECK_THROWS_AS(solve_grid(h, blow, make_grid(h, blow, b)), NumericalError);
}

TEST_CASE("2D grid matches the 1D run on a separable problem") {
  const auto h1 = ham("0.5*p1^2");
  const auto g1 = term("0.5*x1^2");
  const auto h2 = ham("0.5*p1^2 + 0.5*p2^2", 2);
  const auto g2 = term("0.5*x1^2", 2);
  GridSpec s1 = spec1(-4, 4, 81, 0.5);
  s1.max_speed = std::vector<double>{8.0};
  GridSpec s2;
  s2.lo = {-4, -1};
  s2.hi = {4, 1};
  s2.nodes = {81, 11};
  s2.horizon = 0.5;
  s2.max_speed = std::vector<double>{8.0, 0.0};
  const ValueField a = solve_grid(h1, g1, make_grid(h1, g1, s1));
  const ValueField b = solve_grid(h2, g2, make_grid(h2, g2, s2));
  REQUIRE(a.grid.steps == b.grid.steps);
  for (int j = 0; j < 11; ++j) {
    for (int i = 0; i < 81; ++i) CHECK(b.final_slice()[j * 81 + i] == doctest::Approx(a.final_slice()[i]).epsilon(1e-12));
  }
  const std::vector<double> q{1.0, 0.3};
  CHECK(b.value_at(q) == doctest::Approx(a.value_at(std::span<const double>(q.data(), 1))).epsilon(1e-12));
}

TEST_CASE("verify_value_shift examples") {
  {
    const auto h = ham("0.5*p1^2 + x1*p1");
    const auto g = term("cos(x1)");
    CHECK(verify_value_shift(h, g, 0.0, spec1(-2 * M_PI, 2 * M_PI, 201, 2.0)).max_deviation == 0.0);
  }
  {
    const auto h = ham("0.5*p1^2");
    const auto g = term("0.5*x1^2");
    const ShiftDeviation d = verify_value_shift(h, g, -0.5, spec1(-4, 4, 401, 1.0));
    CHECK(d.max_deviation <= 5e-2);
    CHECK(d.worst_x.size() == 1);
  }
}

TEST_CASE("hopf_lax_oracle examples") {
  {
    const double x = 1.0;
    const OracleResult r = hopf_lax_oracle(term("0.5*x1^2"), 0, std::span<const double>(&x, 1), 1, box1(-5, 5), 2001);
    CHECK(r.value == doctest::Approx(0.25).epsilon(1e-12));
    REQUIRE(r.argmins.size() == 1);
    CHECK(std::abs(r.argmins[0][0] - 0.5) <= 1e-7);
    CHECK_FALSE(r.on_boundary);
  }
  {
    const double x = 0.7;
    const OracleResult r = hopf_lax_oracle(term("0"), 0, std::span<const double>(&x, 1), 1, box1(-5, 5), 2001);
    CHECK(std::abs(r.value) <= 1e-15);
    REQUIRE(r.argmins.size() == 1);
    CHECK(std::abs(r.argmins[0][0] - 0.7) <= 1e-7);
  }
  // The shock of G = cos sits over its maximum at 0; x = π keeps a unique minimizer.
  {
    const double x = 0.0;
    const OracleResult r =
        hopf_lax_oracle(term("cos(x1)"), 0, std::span<const double>(&x, 1), 1.5, box1(-10, 13), 5001);
    REQUIRE(r.argmins.size() == 2);
    CHECK(std::abs(r.argmins.front()[0] + r.argmins.back()[0]) <= 1e-6);
    CHECK(r.argmins.back()[0] == doctest::Approx(1.4958).epsilon(1e-4));
  }
  {
    const double x = M_PI;
    const OracleResult r =
        hopf_lax_oracle(term("cos(x1)"), 0, std::span<const double>(&x, 1), 1.5, box1(-10, 13), 5001);
    REQUIRE(r.argmins.size() == 1);
    CHECK(std::abs(r.argmins[0][0] - M_PI) <= 1e-7);
  }
  {
    const double x = 3.0;
    const OracleResult r = hopf_lax_oracle(term("x1"), 0, std::span<const double>(&x, 1), 1, box1(-1, 1), 201);
    CHECK(r.on_boundary);
  }
  {
    const std::vector<double> x{1.0, -2.0};
    const OracleResult r = hopf_lax_oracle(term("0.5*x1^2 + 0.5*x2^2", 2), 0, x, 1, Box{{-5, -5}, {5, 5}}, 201);
    CHECK(r.value == doctest::Approx(1.25).epsilon(1e-10));
    REQUIRE(r.argmins.size() == 1);
    CHECK(r.argmins[0][0] == doctest::Approx(0.5).epsilon(1e-7));
    CHECK(r.argmins[0][1] == doctest::Approx(-1.0).epsilon(1e-7));
  }
  const double x = 0;
  CHECK_THROWS_AS(hopf_lax_oracle(term("0"), 1, std::span<const double>(&x, 1), 1, box1(-1, 1), 11), InputError);
}

TEST_CASE("minimize_action examples") {
  const auto l = lag("0.5*v1^2");
  {
    const double x = 1.0;
    const ActionResult r = minimize_action(l, term("0.5*x1^2"), 0, std::span<const double>(&x, 1), 1);
    CHECK(std::abs(r.value - 0.25) <= 1e-3);
    CHECK_FALSE(r.multiple);
    REQUIRE(r.curves.size() == 1);
    const auto& pts = r.curves[0].points;
    REQUIRE(pts.size() == 33);
    CHECK(pts.front() == 1.0);
    for (int k = 0; k < 33; ++k) CHECK(pts[k] == doctest::Approx(1.0 - 0.5 * k / 32.0).epsilon(1e-6));
  }
  {
    const double x = 0.0;
    const ActionResult r = minimize_action(l, term("cos(x1)"), 0, std::span<const double>(&x, 1), 1.5);
    CHECK(r.multiple);
    REQUIRE(r.curves.size() == 2);
    CHECK(r.curves[0].points.back() == doctest::Approx(-r.curves[1].points.back()).epsilon(1e-8));
    for (const auto& c : r.curves) CHECK(c.points.front() == 0.0);
  }
  {
    const double x = M_PI;
    const ActionResult r = minimize_action(l, term("cos(x1)"), 0, std::span<const double>(&x, 1), 1.5);
    CHECK_FALSE(r.multiple);
  }
  {
    const double x = 0.0;
    CHECK_THROWS_AS(minimize_action(lag("-0.5*v1^2"), term("0"), 0, std::span<const double>(&x, 1), 1), InputError);
  }
}

TEST_CASE("semiconcavity_profile of a quadratic slice") {
  Grid grid;
  grid.dim = 1;
  grid.lo = {-3};
  grid.hi = {3};
  grid.nodes = {61};
  grid.dx = {0.1};
  std::vector<double> u(61);
  for (int i = 0; i < 61; ++i) u[i] = 0.5 * grid.coord(0, i) * grid.coord(0, i);
  const SemiconcavityRow row = second_differences(grid, 0.0, u);
  CHECK(std::abs(row.min_d2 - 1.0) <= 1e-10);
  CHECK(std::abs(row.max_d2 - 1.0) <= 1e-10);
}

TEST_CASE("export formats") {
  const auto h = ham("0.5*p1^2");
  const auto g = term("0.5*x1^2");
  const GridSpec s = spec1(-1, 1, 3, 0.1);
  const ValueField f = solve_grid(h, g, make_grid(h, g, s));
  std::ostringstream csv, plot, prof;
  write_field_csv(csv, f);
  write_field_csv(plot, f, true);
  write_profile_csv(prof, semiconcavity_profile(f));
  CHECK(csv.str().rfind("t,x,u\n0.10000000000000001,-1,0.5\n", 0) == 0);
  CHECK(plot.str().rfind("# t x u\n", 0) == 0);
  CHECK(plot.str().find("\n\n\n") != std::string::npos);
  CHECK(prof.str().rfind("t,minD2,maxD2\n", 0) == 0);
  CHECK(fnv1a(std::string_view("")) == 14695981039346656037ull);
  CHECK(fnv1a(std::string_view("a")) == 0xaf63dc4c8601ec8cull);
}

// ---- properties ---------------------------------------------------------------------

TEST_CASE("property: comparison principle") {
  const auto h = ham("0.5*p1^2 + x1*p1");
  const char* pairs[][2] = {{"cos(x1)", "cos(x1) + 0.1"},
                            {"0.5*x1^2 - 1", "0.5*x1^2"},
                            {"sin(x1)", "sin(x1) + 0.05*x1^2 + 0.01"},
                            {"-exp(-x1^2)", "0"}};
  for (const auto& pr : pairs) {
    const auto g1 = term(pr[0]);
    const auto g2 = term(pr[1]);
    GridSpec s = spec1(-3, 3, 121, 1.0);
    auto a = default_max_speed(h, g1, s);
    const auto b = default_max_speed(h, g2, s);
    a[0] = std::max(a[0], b[0]);
    s.max_speed = a;
    const Grid grid = make_grid(h, g1, s);
    GridSolver u1(h, g1, grid), u2(h, g2, grid);
    double worst = -1e300;
    while (true) {
      for (std::size_t n = 0; n < grid.size(); ++n) worst = std::max(worst, u1.values()[n] - u2.values()[n]);
      if (u1.done()) break;
      u1.step();
      u2.step();
    }
    CHECK(worst <= 1e-12);
  }
}

TEST_CASE("property: oracle equivalence under refinement") {
  struct Fixture {
    const char* g;
    double horizon;
  };
  const Fixture fixtures[] = {{"0.5*x1^2", 1.0},
                              {"cos(x1)", 0.5},
                              {"sin(x1) + 0.1*x1^2", 0.5},
                              {"log(1 + x1^2)", 0.8},
                              {"exp(-x1^2)", 0.5}};
  for (const auto& fx : fixtures) {
    const double coarse = oracle_gap(fx.g, fx.horizon, 201);
    const double fine = oracle_gap(fx.g, fx.horizon, 401);
    INFO(fx.g, " coarse=", coarse, " fine=", fine);
    CHECK(fine / coarse >= 0.35);
    CHECK(fine / coarse <= 0.65);
  }
}

TEST_CASE("property: cross-solver agreement") {
  const auto l = lag("0.5*v1^2");
  const char* gs[] = {"0.5*x1^2", "cos(x1)", "sin(x1) + 0.1*x1^2"};
  const double xs[] = {-1.3, 0.2, 0.9, M_PI};
  for (const char* src : gs) {
    const auto g = term(src);
    const HopfLax oracle(g, box1(-15, 15), 6001);
    for (const double x : xs) {
      for (const double tau : {0.5, 1.5}) {
        ActionOptions o;
        o.starts = 12;
        const ActionResult a = minimize_action(l, g, 0, std::span<const double>(&x, 1), tau, o);
        const OracleResult r = oracle(tau, std::span<const double>(&x, 1));
        INFO(src, " x=", x, " tau=", tau);
        CHECK(a.value >= r.value - 1e-3);
        if (r.argmins.size() == 1) CHECK(std::abs(a.value - r.value) <= 1e-3);
      }
    }
  }
}

TEST_CASE("property: shift deviation decreases under refinement") {
  const auto h = ham("0.5*p1^2 + x1*p1");
  const auto g = term("cos(x1)");
  const double coarse = verify_value_shift(h, g, 1.0, spec1(-2 * M_PI, 2 * M_PI, 201, 1.0)).max_deviation;
  const double fine = verify_value_shift(h, g, 1.0, spec1(-2 * M_PI, 2 * M_PI, 401, 1.0)).max_deviation;
  INFO("coarse=", coarse, " fine=", fine);
  CHECK(fine < 0.7 * coarse);
}

TEST_CASE("property: per-curve shift identity") {
  const char* ls[] = {"0.5*v1^2", "0.5*v1^2 + 0.5*x1^2", "cosh(v1) + 0.1*x1*v1", "0.25*v1^4 + 0.5*v1^2 - cos(x1)"};
  const char* gs[] = {"cos(x1)", "0.5*x1^2", "exp(0.3*x1)"};
  for (const char* lsrc : ls) {
    for (const char* gsrc : gs) {
      for (const double x : {-0.8, 1.7}) {
        ActionOptions o;
        o.starts = 3;
        o.alpha = 1.0;
        const ActionResult r = minimize_action(lag(lsrc), term(gsrc), 0, std::span<const double>(&x, 1), 1.0, o);
        CHECK(r.identity_error <= 1e-10);
      }
    }
  }
  // Arbitrary curves, several mesh sizes and shifts.
  const auto l = lag("cosh(v1) + x1^2*v1");
  const auto g = term("sin(x1)");
  for (const int k : {2, 5, 33}) {
    for (const double alpha : {-2.0, 0.5, 3.0}) {
      std::vector<double> pts(k);
      for (int i = 0; i < k; ++i) pts[i] = 0.4 + 0.7 * std::sin(1.3 * i / (k - 1.0));
      const double base = discrete_action(l, g, 0.2, 1.7, pts);
      const double shifted = discrete_action(shift_lagrangian(l, alpha), shift_terminal(g, alpha), 0.2, 1.7, pts);
      CHECK(std::abs(shifted - base - 0.5 * alpha * pts[0] * pts[0]) <= 1e-10);
    }
  }
}

TEST_CASE("property: grid solve is independent of the worker count") {
  const auto h = ham("0.5*p1^2 + x1*p1");
  const auto g = term("cos(x1)");
  const auto run = [&](const char* threads) {
    setenv("CANON_HJB_THREADS", threads, 1);
    const ValueField f = solve_grid(h, g, make_grid(h, g, spec1(-3, 3, 201, 0.5)));
    unsetenv("CANON_HJB_THREADS");
    return f.final_hash;
  };
  CHECK(run("1") == run("3"));
}
