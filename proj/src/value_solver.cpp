#include "canon_hjb/value_solver.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <limits>
#include <ostream>
#include <random>
#include <string>

#include "canon_hjb/errors.hpp"
#include "canon_hjb/parallel.hpp"

namespace canon_hjb {

namespace {

constexpr double kSpeedSlack = 1e-9;

void validate_spec(const GridSpec& spec) {
  const std::size_t d = spec.nodes.size();
  if (d < 1 || d > 2) throw InputError("grids must have 1 or 2 axes");
  if (spec.lo.size() != d || spec.hi.size() != d) throw InputError("grid bounds do not match the axis count");
  for (std::size_t k = 0; k < d; ++k) {
    if (!(spec.lo[k] < spec.hi[k]) || !std::isfinite(spec.lo[k]) || !std::isfinite(spec.hi[k])) {
      throw InputError("grid axis " + std::to_string(k + 1) + " is degenerate");
    }
    if (spec.nodes[k] < 3) throw InputError("grid axes need at least 3 nodes");
  }
  if (!(spec.horizon > 0.0)) throw InputError("horizon must be positive");
  if (!(spec.cfl > 0.0 && spec.cfl <= 1.0)) throw InputError("CFL number must lie in (0, 1]");
  if (spec.max_speed) {
    if (spec.max_speed->size() != d) throw InputError("maxSpeed needs one entry per axis");
    for (const double s : *spec.max_speed) {
      if (!(s >= 0.0) || !std::isfinite(s)) throw InputError("maxSpeed must be finite and non-negative");
    }
  }
}

std::string where(const Grid& g, std::size_t node, double t) {
  std::string out = "t=" + std::to_string(t) + ", x=(";
  const int nx = g.nodes[0];
  out += std::to_string(g.coord(0, static_cast<int>(node % nx)));
  if (g.dim == 2) out += ", " + std::to_string(g.coord(1, static_cast<int>(node / nx)));
  return out + ")";
}

}  // namespace

std::size_t Grid::size() const {
  std::size_t n = 1;
  for (const int k : nodes) n *= static_cast<std::size_t>(k);
  return n;
}

std::vector<double> default_max_speed(const HamiltonianModel& h, const TerminalCost& g, const GridSpec& spec) {
  validate_spec(spec);
  const int d = static_cast<int>(spec.nodes.size());
  if (h.dim() != d || g.dim() != d) throw InputError("grid dimension does not match the model");
  std::vector<double> dx(d);
  for (int k = 0; k < d; ++k) dx[k] = (spec.hi[k] - spec.lo[k]) / (spec.nodes[k] - 1);
  const int nx = spec.nodes[0];
  const int ny = d == 2 ? spec.nodes[1] : 1;

  std::vector<double> glo(d, std::numeric_limits<double>::infinity());
  std::vector<double> ghi(d, -std::numeric_limits<double>::infinity());
  std::array<double, 2> x{}, grad{};
  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      x[0] = spec.lo[0] + dx[0] * i;
      if (d == 2) x[1] = spec.lo[1] + dx[1] * j;
      g.gradient({x.data(), static_cast<std::size_t>(d)}, {grad.data(), static_cast<std::size_t>(d)});
      for (int k = 0; k < d; ++k) {
        glo[k] = std::min(glo[k], grad[k]);
        ghi[k] = std::max(ghi[k], grad[k]);
      }
    }
  }
  for (int k = 0; k < d; ++k) {
    if (!std::isfinite(glo[k]) || !std::isfinite(ghi[k])) throw NumericalError("terminal gradient is not finite");
    const double c = 0.5 * (glo[k] + ghi[k]);
    const double half = ghi[k] - glo[k];  // twice the half-width
    glo[k] = c - half;
    ghi[k] = c + half;
  }

  const int np = d == 1 ? 33 : 9;
  std::size_t combos = 1;
  for (int k = 0; k < d; ++k) combos *= static_cast<std::size_t>(np);
  const std::size_t count = static_cast<std::size_t>(nx) * ny;
  std::vector<std::array<double, 2>> node_speed(count);
  parallel_for(count, [&](std::size_t n) {
    std::array<double, 2> xs{}, p{}, dp{};
    xs[0] = spec.lo[0] + dx[0] * static_cast<double>(n % nx);
    if (d == 2) xs[1] = spec.lo[1] + dx[1] * static_cast<double>(n / nx);
    std::array<double, 2> best{};
    for (std::size_t c = 0; c < combos; ++c) {
      std::size_t rest = c;
      for (int k = 0; k < d; ++k) {
        const auto q = static_cast<double>(rest % np);
        rest /= np;
        p[k] = glo[k] + (ghi[k] - glo[k]) * q / (np - 1);
      }
      h.value_and_dp({xs.data(), static_cast<std::size_t>(d)}, {p.data(), static_cast<std::size_t>(d)},
                     {dp.data(), static_cast<std::size_t>(d)});
      for (int k = 0; k < d; ++k) best[k] = std::max(best[k], std::abs(dp[k]));
    }
    node_speed[n] = best;
  });
  std::vector<double> out(d, 0.0);
  for (const auto& s : node_speed) {
    for (int k = 0; k < d; ++k) out[k] = std::max(out[k], s[k]);
  }
  for (const double s : out) {
    if (!std::isfinite(s)) throw NumericalError("sampled characteristic speed is not finite");
  }
  return out;
}

Grid make_grid(const HamiltonianModel& h, const TerminalCost& g, const GridSpec& spec) {
  validate_spec(spec);
  Grid grid;
  grid.dim = static_cast<int>(spec.nodes.size());
  if (h.dim() != grid.dim || g.dim() != grid.dim) throw InputError("grid dimension does not match the model");
  grid.lo = spec.lo;
  grid.hi = spec.hi;
  grid.nodes = spec.nodes;
  grid.horizon = spec.horizon;
  grid.cfl = spec.cfl;
  for (int k = 0; k < grid.dim; ++k) grid.dx.push_back((spec.hi[k] - spec.lo[k]) / (spec.nodes[k] - 1));
  grid.max_speed = spec.max_speed ? *spec.max_speed : default_max_speed(h, g, spec);
  double rate = 0.0;
  for (int k = 0; k < grid.dim; ++k) rate += grid.max_speed[k] / grid.dx[k];
  if (rate > 0.0) {
    const double dt_max = grid.cfl / rate;
    grid.steps = std::max(1, static_cast<int>(std::ceil(spec.horizon / dt_max - 1e-12)));
  } else {
    grid.steps = 1;
  }
  grid.dt = spec.horizon / grid.steps;
  grid.snapshot_stride =
      spec.snapshot_stride > 0 ? spec.snapshot_stride : std::max(1, (grid.steps + 254) / 255);
  return grid;
}

// ---- solver ------------------------------------------------------------------

GridSolver::GridSolver(const HamiltonianModel& h, const TerminalCost& g, const Grid& grid)
    : h_(h), grid_(grid), u_(grid.size()), next_(grid.size()), time_(grid.horizon) {
  if (h.dim() != grid.dim || g.dim() != grid.dim) throw InputError("grid dimension does not match the model");
  const int nx = grid.nodes[0];
  std::array<double, 2> x{};
  for (std::size_t n = 0; n < u_.size(); ++n) {
    x[0] = grid.coord(0, static_cast<int>(n % nx));
    if (grid.dim == 2) x[1] = grid.coord(1, static_cast<int>(n / nx));
    u_[n] = g.value({x.data(), static_cast<std::size_t>(grid.dim)});
    if (!std::isfinite(u_[n])) throw NumericalError("non-finite terminal value at " + where(grid, n, time_));
  }
}

void GridSolver::step() {
  if (done()) return;
  const Grid& g = grid_;
  const double dt = g.dt;
  const double t_next = level_ + 1 == g.steps ? 0.0 : g.horizon - (level_ + 1) * dt;
  const int nx = g.nodes[0];
  const double* u = u_.data();
  double* out = next_.data();

  if (g.dim == 1) {
    const double dx = g.dx[0];
    const double limit = g.max_speed[0] * (1.0 + kSpeedSlack);
    parallel_ranges(u_.size(), [&](std::size_t begin, std::size_t end) {
      double x = 0.0, p = 0.0, dp = 0.0;
      const std::span<const double> xs(&x, 1), ps(&p, 1);
      const std::span<double> dps(&dp, 1);
      for (std::size_t n = begin; n < end; ++n) {
        const int i = static_cast<int>(n);
        const double um = i > 0 ? u[i - 1] : 2.0 * u[0] - u[1];
        const double up = i < nx - 1 ? u[i + 1] : 2.0 * u[nx - 1] - u[nx - 2];
        const double pm = (u[i] - um) / dx;
        const double pp = (up - u[i]) / dx;
        x = g.coord(0, i);
        p = 0.5 * (pm + pp);
        const double hc = h_.value(xs, ps);
        p = pm;
        h_.value_and_dp(xs, ps, dps);
        double s = std::abs(dp);
        p = pp;
        h_.value_and_dp(xs, ps, dps);
        s = std::max(s, std::abs(dp));
        if (s > limit) {
          throw NumericalError("CFL violated: local speed " + std::to_string(s) + " exceeds maxSpeed " +
                               std::to_string(g.max_speed[0]) + " at " + where(g, n, time_));
        }
        out[n] = u[i] - dt * (hc - 0.5 * s * (pp - pm));
      }
    });
  } else {
    const int ny = g.nodes[1];
    const double dx = g.dx[0], dy = g.dx[1];
    const double limx = g.max_speed[0] * (1.0 + kSpeedSlack);
    const double limy = g.max_speed[1] * (1.0 + kSpeedSlack);
    parallel_ranges(u_.size(), [&](std::size_t begin, std::size_t end) {
      std::array<double, 2> x{}, p{}, dp{};
      const std::span<const double> xs(x.data(), 2), ps(p.data(), 2);
      const std::span<double> dps(dp.data(), 2);
      for (std::size_t n = begin; n < end; ++n) {
        const int i = static_cast<int>(n % nx);
        const int j = static_cast<int>(n / nx);
        const double c = u[n];
        const double w = i > 0 ? u[n - 1] : 2.0 * c - u[n + 1];
        const double e = i < nx - 1 ? u[n + 1] : 2.0 * c - u[n - 1];
        const double s_ = j > 0 ? u[n - nx] : 2.0 * c - u[n + nx];
        const double no = j < ny - 1 ? u[n + nx] : 2.0 * c - u[n - nx];
        const double pxm = (c - w) / dx, pxp = (e - c) / dx;
        const double pym = (c - s_) / dy, pyp = (no - c) / dy;
        x = {g.coord(0, i), g.coord(1, j)};
        p = {0.5 * (pxm + pxp), 0.5 * (pym + pyp)};
        const double hc = h_.value(xs, ps);
        double sx = 0.0, sy = 0.0;
        for (const double a : {pxm, pxp}) {
          for (const double b : {pym, pyp}) {
            p = {a, b};
            h_.value_and_dp(xs, ps, dps);
            sx = std::max(sx, std::abs(dp[0]));
            sy = std::max(sy, std::abs(dp[1]));
          }
        }
        if (sx > limx || sy > limy) {
          throw NumericalError("CFL violated: local speed (" + std::to_string(sx) + ", " + std::to_string(sy) +
                               ") exceeds maxSpeed at " + where(g, n, time_));
        }
        out[n] = c - dt * (hc - 0.5 * sx * (pxp - pxm) - 0.5 * sy * (pyp - pym));
      }
    });
  }

  for (std::size_t n = 0; n < next_.size(); ++n) {
    if (!std::isfinite(next_[n])) throw NumericalError("non-finite value at " + where(g, n, t_next));
  }
  u_.swap(next_);
  ++level_;
  time_ = t_next;
}

double ValueField::value_at(std::span<const double> x) const {
  if (static_cast<int>(x.size()) != grid.dim) throw InputError("query point dimension mismatch");
  const std::vector<double>& u = final_slice();
  std::array<int, 2> base{};
  std::array<double, 2> frac{};
  for (int k = 0; k < grid.dim; ++k) {
    if (x[k] < grid.lo[k] || x[k] > grid.hi[k]) throw InputError("query point outside the grid");
    const double r = (x[k] - grid.lo[k]) / grid.dx[k];
    base[k] = std::min(static_cast<int>(std::floor(r)), grid.nodes[k] - 2);
    frac[k] = r - base[k];
  }
  const int nx = grid.nodes[0];
  if (grid.dim == 1) return (1 - frac[0]) * u[base[0]] + frac[0] * u[base[0] + 1];
  const auto at = [&](int i, int j) { return u[static_cast<std::size_t>(j) * nx + i]; };
  const double a = (1 - frac[0]) * at(base[0], base[1]) + frac[0] * at(base[0] + 1, base[1]);
  const double b = (1 - frac[0]) * at(base[0], base[1] + 1) + frac[0] * at(base[0] + 1, base[1] + 1);
  return (1 - frac[1]) * a + frac[1] * b;
}

ValueField solve_grid(const HamiltonianModel& h, const TerminalCost& g, const Grid& grid,
                      const SliceObserver& observer) {
  GridSolver solver(h, g, grid);
  ValueField field;
  field.grid = grid;
  field.scheme = "local-lax-friedrichs";
  field.terminal_hash = fnv1a(solver.values());
  const auto keep = [&] {
    field.times.push_back(solver.time());
    field.slices.push_back(solver.values());
  };
  keep();
  if (observer) observer(0, solver.time(), solver.values());
  while (!solver.done()) {
    solver.step();
    if (observer) observer(solver.level(), solver.time(), solver.values());
    if (solver.done() || solver.level() % grid.snapshot_stride == 0) keep();
  }
  field.final_hash = fnv1a(field.final_slice());
  return field;
}

std::pair<int, int> interior_range(int n) {
  const int first = static_cast<int>(std::ceil(0.1 * (n - 1) - 1e-9));
  const int last = static_cast<int>(std::floor(0.9 * (n - 1) + 1e-9));
  return {first, last};
}

ShiftDeviation verify_value_shift(const HamiltonianModel& h, const TerminalCost& g, double alpha, GridSpec spec) {
  const HamiltonianModel ha = shift_hamiltonian(h, alpha);
  const TerminalCost ga = shift_terminal(g, alpha);
  if (!spec.max_speed) {
    std::vector<double> a = default_max_speed(h, g, spec);
    const std::vector<double> b = default_max_speed(ha, ga, spec);
    for (std::size_t k = 0; k < a.size(); ++k) a[k] = std::max(a[k], b[k]);
    spec.max_speed = a;
  }
  const Grid grid = make_grid(h, g, spec);
  GridSolver base(h, g, grid);
  GridSolver shifted(ha, ga, grid);

  ShiftDeviation out;
  out.grid = grid;
  const int nx = grid.nodes[0];
  const auto [i0, i1] = interior_range(nx);
  const auto [j0, j1] = grid.dim == 2 ? interior_range(grid.nodes[1]) : std::pair<int, int>{0, 0};
  const auto measure = [&] {
    const auto& u = base.values();
    const auto& v = shifted.values();
    for (int j = j0; j <= j1; ++j) {
      const double y = grid.dim == 2 ? grid.coord(1, j) : 0.0;
      for (int i = i0; i <= i1; ++i) {
        const double x = grid.coord(0, i);
        const std::size_t n = static_cast<std::size_t>(j) * nx + i;
        const double dev = std::abs(v[n] - u[n] - 0.5 * alpha * (x * x + y * y));
        if (dev > out.max_deviation) {
          out.max_deviation = dev;
          out.worst_time = base.time();
          out.worst_x = grid.dim == 2 ? std::vector<double>{x, y} : std::vector<double>{x};
        }
      }
    }
  };
  measure();
  while (!base.done()) {
    base.step();
    shifted.step();
    measure();
  }
  return out;
}

// ---- semiconcavity ----------------------------------------------------------------

SemiconcavityRow second_differences(const Grid& grid, double t, std::span<const double> u) {
  SemiconcavityRow row;
  row.t = t;
  const int nx = grid.nodes[0];
  const int ny = grid.dim == 2 ? grid.nodes[1] : 1;
  row.axis_min.assign(grid.dim, std::numeric_limits<double>::infinity());
  row.axis_max.assign(grid.dim, -std::numeric_limits<double>::infinity());
  const auto at = [&](int i, int j) { return u[static_cast<std::size_t>(j) * nx + i]; };
  const double ix = 1.0 / (grid.dx[0] * grid.dx[0]);
  const int jlo = grid.dim == 2 ? 1 : 0, jhi = grid.dim == 2 ? ny - 2 : 0;
  for (int j = jlo; j <= jhi; ++j) {
    for (int i = 1; i + 1 < nx; ++i) {
      const double d2 = (at(i + 1, j) - 2 * at(i, j) + at(i - 1, j)) * ix;
      row.axis_min[0] = std::min(row.axis_min[0], d2);
      row.axis_max[0] = std::max(row.axis_max[0], d2);
      if (grid.dim == 2) {
        const double e2 = (at(i, j + 1) - 2 * at(i, j) + at(i, j - 1)) / (grid.dx[1] * grid.dx[1]);
        row.axis_min[1] = std::min(row.axis_min[1], e2);
        row.axis_max[1] = std::max(row.axis_max[1], e2);
      }
    }
  }
  row.min_d2 = *std::min_element(row.axis_min.begin(), row.axis_min.end());
  row.max_d2 = *std::max_element(row.axis_max.begin(), row.axis_max.end());
  return row;
}

std::vector<SemiconcavityRow> semiconcavity_profile(const ValueField& field) {
  std::vector<SemiconcavityRow> rows;
  rows.reserve(field.slices.size());
  for (std::size_t k = 0; k < field.slices.size(); ++k) {
    rows.push_back(second_differences(field.grid, field.times[k], field.slices[k]));
  }
  return rows;
}

// ---- Hopf–Lax ----------------------------------------------------------------------

HopfLax::HopfLax(const TerminalCost& g, Box y_box, int scan_n) : g_(g), box_(std::move(y_box)), scan_n_(scan_n) {
  const int d = g.dim();
  if (box_.dim() != d) throw InputError("oracle box dimension mismatch");
  if (d < 1 || d > 2) throw InputError("the oracle supports 1 or 2 dimensions");
  if (scan_n < 3) throw InputError("oracle scan needs at least 3 points");
  for (int k = 0; k < d; ++k) {
    if (!(box_.lo[k] < box_.hi[k])) throw InputError("oracle box is degenerate");
  }
  const std::size_t total = d == 1 ? scan_n : static_cast<std::size_t>(scan_n) * scan_n;
  cache_.resize(total);
  parallel_for(total, [&](std::size_t n) {
    std::array<double, 2> y{};
    y[0] = box_.lo[0] + (box_.hi[0] - box_.lo[0]) * static_cast<double>(n % scan_n) / (scan_n - 1);
    if (d == 2) y[1] = box_.lo[1] + (box_.hi[1] - box_.lo[1]) * static_cast<double>(n / scan_n) / (scan_n - 1);
    cache_[n] = g_.value({y.data(), static_cast<std::size_t>(d)});
  });
}

double HopfLax::objective(double tau, std::span<const double> x, std::span<const double> y) const {
  double q = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) q += (x[k] - y[k]) * (x[k] - y[k]);
  return q / (2 * tau) + g_.value(y);
}

OracleResult HopfLax::operator()(double tau, std::span<const double> x) const {
  const int d = g_.dim();
  if (static_cast<int>(x.size()) != d) throw InputError("oracle query dimension mismatch");
  if (!(tau > 0.0)) throw InputError("oracle needs T > t");
  const int m = scan_n_;
  std::array<double, 2> step{};
  for (int k = 0; k < d; ++k) step[k] = (box_.hi[k] - box_.lo[k]) / (m - 1);
  const auto coord = [&](int k, int i) { return box_.lo[k] + (box_.hi[k] - box_.lo[k]) * i / (m - 1); };
  const int ny = d == 2 ? m : 1;
  std::vector<double> f(cache_.size());
  for (int j = 0; j < ny; ++j) {
    const double dy = d == 2 ? x[1] - coord(1, j) : 0.0;
    for (int i = 0; i < m; ++i) {
      const double dx = x[0] - coord(0, i);
      const std::size_t n = static_cast<std::size_t>(j) * m + i;
      f[n] = (dx * dx + dy * dy) / (2 * tau) + cache_[n];
    }
  }

  struct Candidate {
    std::array<double, 2> y;
    double value;
  };
  std::vector<Candidate> found;
  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < m; ++i) {
      const std::size_t n = static_cast<std::size_t>(j) * m + i;
      const double v = f[n];
      if ((i > 0 && f[n - 1] < v) || (i + 1 < m && f[n + 1] < v)) continue;
      if (d == 2 && ((j > 0 && f[n - m] < v) || (j + 1 < m && f[n + m] < v))) continue;
      // Ternary search per axis inside the neighbouring cells.
      std::array<double, 2> y{coord(0, i), d == 2 ? coord(1, j) : 0.0};
      std::array<double, 2> lo{}, hi{};
      for (int k = 0; k < d; ++k) {
        lo[k] = std::max(box_.lo[k], y[k] - step[k]);
        hi[k] = std::min(box_.hi[k], y[k] + step[k]);
      }
      const std::span<const double> ys(y.data(), static_cast<std::size_t>(d));
      const int rounds = d == 1 ? 1 : 20;
      for (int r = 0; r < rounds; ++r) {
        for (int k = 0; k < d; ++k) {
          double a = lo[k], b = hi[k];
          for (int it = 0; it < 200 && b - a > 1e-13 * (1.0 + std::abs(a)); ++it) {
            const double m1 = a + (b - a) / 3, m2 = b - (b - a) / 3;
            y[k] = m1;
            const double f1 = objective(tau, x, ys);
            y[k] = m2;
            const double f2 = objective(tau, x, ys);
            (f1 <= f2 ? b : a) = f1 <= f2 ? m2 : m1;
          }
          y[k] = 0.5 * (a + b);
        }
      }
      // Keep the better of the refined point and the scan node.
      const double refined = objective(tau, x, ys);
      if (refined <= v) {
        found.push_back({y, refined});
      } else {
        found.push_back({{coord(0, i), d == 2 ? coord(1, j) : 0.0}, v});
      }
    }
  }

  OracleResult out;
  out.value = std::numeric_limits<double>::infinity();
  for (const auto& c : found) out.value = std::min(out.value, c.value);
  std::sort(found.begin(), found.end(), [](const Candidate& a, const Candidate& b) {
    return a.y[0] != b.y[0] ? a.y[0] < b.y[0] : a.y[1] < b.y[1];
  });
  for (const auto& c : found) {
    if (c.value > out.value + 1e-9) continue;
    bool duplicate = false;
    for (const auto& a : out.argmins) {
      double dist = 0.0;
      for (int k = 0; k < d; ++k) dist += (a[k] - c.y[k]) * (a[k] - c.y[k]);
      if (std::sqrt(dist) <= 1e-6) duplicate = true;
    }
    if (duplicate) continue;
    out.argmins.emplace_back(c.y.begin(), c.y.begin() + d);
    for (int k = 0; k < d; ++k) {
      const double tol = 1e-9 * (box_.hi[k] - box_.lo[k]);
      if (c.y[k] <= box_.lo[k] + tol || c.y[k] >= box_.hi[k] - tol) out.on_boundary = true;
    }
  }
  return out;
}

OracleResult hopf_lax_oracle(const TerminalCost& g, double t, std::span<const double> x, double horizon,
                             const Box& y_box, int scan_n) {
  if (!(horizon > t)) throw InputError("oracle needs T > t");
  return HopfLax(g, y_box, scan_n)(horizon - t, x);
}

// ---- action ------------------------------------------------------------------------

namespace {

struct ActionProblem {
  const LagrangianModel& l;
  const TerminalCost& g;
  int d;
  int k;      // mesh points
  double h;   // mesh width
  std::vector<double> x0;

  // Full curve from the free variables z (points 1..K-1).
  void curve(const std::vector<double>& z, std::vector<double>& pts) const {
    pts.resize(static_cast<std::size_t>(k) * d);
    std::copy(x0.begin(), x0.end(), pts.begin());
    std::copy(z.begin(), z.end(), pts.begin() + d);
  }

  double value(const std::vector<double>& pts) const { return value_with(l, g, pts); }

  double value_with(const LagrangianModel& lag, const TerminalCost& term, const std::vector<double>& pts) const {
    std::array<double, 8> v{};
    const std::span<const double> vs(v.data(), static_cast<std::size_t>(d));
    double sum = 0.0;
    for (int s = 0; s + 1 < k; ++s) {
      const double* a = pts.data() + s * d;
      const double* b = a + d;
      for (int j = 0; j < d; ++j) v[j] = (b[j] - a[j]) / h;
      sum += 0.5 * h * (lag.value({a, static_cast<std::size_t>(d)}, vs) + lag.value({b, static_cast<std::size_t>(d)}, vs));
    }
    return sum + term.value({pts.data() + (k - 1) * d, static_cast<std::size_t>(d)});
  }

  // Value, gradient and Hessian with respect to the free points 1..K-1.
  double derivatives(const std::vector<double>& pts, Vec& grad, Mat& hess) const {
    const int n = (k - 1) * d;
    grad.setZero(n);
    hess.setZero(n, n);
    std::array<double, 8> v{};
    const std::span<const double> vs(v.data(), static_cast<std::size_t>(d));
    // Column of point `point`, axis j in the free variables, or −1 for the pinned start.
    const auto col = [&](int point, int j) { return point > 0 ? (point - 1) * d + j : -1; };
    std::array<int, 16> idx{};
    std::array<double, 32> jac{};  // (2d inputs of L) × (2d curve coordinates a, b)
    double sum = 0.0;
    for (int s = 0; s + 1 < k; ++s) {
      const double* a = pts.data() + s * d;
      const double* b = a + d;
      for (int j = 0; j < d; ++j) v[j] = (b[j] - a[j]) / h;
      for (int j = 0; j < d; ++j) {
        idx[j] = col(s, j);
        idx[d + j] = col(s + 1, j);
      }
      for (const int end : {0, 1}) {
        const Jet2 jet = l.jet({end ? b : a, static_cast<std::size_t>(d)}, vs);
        sum += 0.5 * h * jet.value();
        // Input r of L as a linear map of the 2d segment coordinates c.
        const auto dj = [&](int r, int c) {
          if (r < d) return c == (end ? d + r : r) ? 1.0 : 0.0;
          const int j = r - d;
          if (c == j) return -1.0 / h;
          if (c == d + j) return 1.0 / h;
          return 0.0;
        };
        for (int r = 0; r < 2 * d; ++r) {
          for (int c = 0; c < 2 * d; ++c) jac[r * 2 * d + c] = dj(r, c);
        }
        for (int c = 0; c < 2 * d; ++c) {
          if (idx[c] < 0) continue;
          double gc = 0.0;
          for (int r = 0; r < 2 * d; ++r) gc += jet.gradient(r) * jac[r * 2 * d + c];
          grad(idx[c]) += 0.5 * h * gc;
          for (int c2 = 0; c2 < 2 * d; ++c2) {
            if (idx[c2] < 0) continue;
            double hc = 0.0;
            for (int r = 0; r < 2 * d; ++r) {
              if (jac[r * 2 * d + c] == 0.0) continue;
              for (int r2 = 0; r2 < 2 * d; ++r2) hc += jac[r * 2 * d + c] * jet.hessian(r, r2) * jac[r2 * 2 * d + c2];
            }
            hess(idx[c], idx[c2]) += 0.5 * h * hc;
          }
        }
      }
    }
    const std::span<const double> last(pts.data() + (k - 1) * d, static_cast<std::size_t>(d));
    std::array<double, 8> gg{};
    g.gradient(last, {gg.data(), static_cast<std::size_t>(d)});
    const Mat gh = g.hessian(last);
    const int off = (k - 2) * d;
    for (int j = 0; j < d; ++j) {
      grad(off + j) += gg[j];
      for (int j2 = 0; j2 < d; ++j2) hess(off + j, off + j2) += gh(j, j2);
    }
    return sum + g.value(last);
  }
};

struct Descent {
  bool converged = false;
  std::vector<double> points;
  double value = 0.0;
  double grad_norm = 0.0;
  int iterations = 0;
};

// Descent with eigenvalue-modified Newton directions |∇²F|⁻¹∇F and Armijo
// backtracking. A stationary point with negative curvature is left along the
// most negative eigenvector, so only local minima count as converged.
Descent descend(const ActionProblem& prob, std::vector<double> z, double tol, int max_iterations) {
  Descent out;
  const int n = static_cast<int>(z.size());
  std::vector<double> pts, trial_z(z.size()), trial_pts;
  Vec grad, trial_grad;
  Mat hess, trial_hess;
  prob.curve(z, pts);
  double f = prob.derivatives(pts, grad, hess);
  const auto try_point = [&](const Vec& dir, double t) {
    for (int i = 0; i < n; ++i) trial_z[i] = z[i] + t * dir(i);
    prob.curve(trial_z, trial_pts);
    try {
      const double ft = prob.derivatives(trial_pts, trial_grad, trial_hess);
      return std::isfinite(ft) ? ft : std::numeric_limits<double>::infinity();
    } catch (const DomainError&) {
      return std::numeric_limits<double>::infinity();
    }
  };
  const auto accept = [&](double ft) {
    z = trial_z;
    pts = trial_pts;
    grad = trial_grad;
    hess = trial_hess;
    f = ft;
  };
  for (int it = 0; it < max_iterations; ++it) {
    out.iterations = it;
    Eigen::SelfAdjointEigenSolver<Mat> eig(hess);
    const Vec& lam = eig.eigenvalues();
    const double scale = std::max(1.0, lam.cwiseAbs().maxCoeff());
    const double gn = grad.lpNorm<Eigen::Infinity>();
    if (gn <= tol) {
      if (lam(0) >= -1e-8 * scale) {
        out.converged = true;
        break;
      }
      // Saddle or maximum: step both ways along the negative direction.
      const Vec e = eig.eigenvectors().col(0);
      bool moved = false;
      for (double t = 1.0; t > 1e-6 && !moved; t *= 0.5) {
        for (const double sgn : {1.0, -1.0}) {
          const double ft = try_point(sgn * e, t);
          if (ft < f - 0.25 * t * t * std::abs(lam(0))) {
            accept(ft);
            moved = true;
            break;
          }
        }
      }
      if (!moved) break;
      continue;
    }
    const double floor = 1e-8 * scale;
    Vec coef = eig.eigenvectors().transpose() * grad;
    for (int i = 0; i < n; ++i) coef(i) /= std::max(std::abs(lam(i)), floor);
    const Vec dir = -(eig.eigenvectors() * coef);
    const double slope = grad.dot(dir);
    bool accepted = false;
    for (double t = 1.0; t > 1e-12; t *= 0.5) {
      const double ft = try_point(dir, t);
      if (ft <= f + 1e-4 * t * slope) {
        accept(ft);
        accepted = true;
        break;
      }
    }
    if (!accepted) break;  // rounding floor
  }
  out.points = pts;
  out.value = f;
  out.grad_norm = grad.lpNorm<Eigen::Infinity>();
  if (!out.converged && out.grad_norm <= tol) {
    Eigen::SelfAdjointEigenSolver<Mat> eig(hess, Eigen::EigenvaluesOnly);
    const double scale = std::max(1.0, eig.eigenvalues().cwiseAbs().maxCoeff());
    out.converged = eig.eigenvalues()(0) >= -1e-8 * scale;
  }
  return out;
}

}  // namespace

double discrete_action(const LagrangianModel& l, const TerminalCost& g, double t, double horizon,
                       std::span<const double> points) {
  const int d = l.dim();
  const int k = static_cast<int>(points.size()) / d;
  if (k < 2 || static_cast<int>(points.size()) != k * d) throw InputError("curve needs at least 2 points");
  if (!(horizon > t)) throw InputError("action needs T > t");
  ActionProblem prob{l, g, d, k, (horizon - t) / (k - 1), {points.begin(), points.begin() + d}};
  return prob.value(std::vector<double>(points.begin(), points.end()));
}

ActionResult minimize_action(const LagrangianModel& l, const TerminalCost& g, double t, std::span<const double> x,
                             double horizon, const ActionOptions& opts) {
  const int d = l.dim();
  if (d > 8) throw InputError("action minimization supports d <= 8");
  if (g.dim() != d || static_cast<int>(x.size()) != d) throw InputError("dimension mismatch");
  if (opts.mesh_points < 2) throw InputError("mesh needs at least 2 points");
  if (opts.starts < 1) throw InputError("at least one start is required");
  if (!(horizon > t)) throw InputError("action needs T > t");
  const int k = opts.mesh_points;
  const double tau = horizon - t;
  const ActionProblem prob{l, g, d, k, tau / (k - 1), {x.begin(), x.end()}};

  std::vector<double> grad0(d);
  g.gradient(x, grad0);
  double gnorm = 0.0;
  for (const double a : grad0) gnorm += a * a;
  const double radius = 2.0 * (1.0 + tau * (1.0 + std::sqrt(gnorm)));

  std::mt19937_64 rng(opts.seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::vector<std::vector<double>> initial(static_cast<std::size_t>(opts.starts));
  for (int s = 0; s < opts.starts; ++s) {
    std::vector<double> end(x.begin(), x.end());
    if (s > 0) {
      for (int j = 0; j < d; ++j) end[j] += radius * unit(rng);
    }
    auto& z = initial[static_cast<std::size_t>(s)];
    z.resize(static_cast<std::size_t>(k - 1) * d);
    for (int m = 1; m < k; ++m) {
      const double w = static_cast<double>(m) / (k - 1);
      for (int j = 0; j < d; ++j) z[static_cast<std::size_t>(m - 1) * d + j] = (1 - w) * x[j] + w * end[j];
    }
  }

  // Sampled convexity of L in v along the initial curves.
  for (const auto& z : initial) {
    std::vector<double> pts;
    prob.curve(z, pts);
    for (int m = 0; m + 1 < k; ++m) {
      std::vector<double> v(d);
      for (int j = 0; j < d; ++j) v[j] = (pts[(m + 1) * d + j] - pts[m * d + j]) / prob.h;
      const Jet2 jet = l.jet({pts.data() + m * d, static_cast<std::size_t>(d)}, v);
      Mat c(d, d);
      for (int a = 0; a < d; ++a) {
        for (int b = 0; b < d; ++b) c(a, b) = jet.hessian(d + a, d + b);
      }
      if (lambda_min(c) < -1e-12 * (1.0 + c.norm())) throw InputError("L is not convex in v on the search region");
    }
  }

  std::vector<Descent> runs(initial.size());
  parallel_for(runs.size(),
               [&](std::size_t s) { runs[s] = descend(prob, initial[s], opts.grad_tol, opts.max_iterations); });

  const LagrangianModel la = shift_lagrangian(l, opts.alpha);
  const TerminalCost ga = shift_terminal(g, opts.alpha);
  double x2 = 0.0;
  for (const double a : x) x2 += a * a;

  ActionResult result;
  std::vector<ActionCurve> converged;
  for (const Descent& r : runs) {
    if (!r.converged) continue;
    ActionCurve c;
    c.points = r.points;
    c.value = prob.value(r.points);
    c.shifted_value = prob.value_with(la, ga, r.points);
    c.gradient_norm = r.grad_norm;
    c.iterations = r.iterations;
    result.identity_error = std::max(result.identity_error, std::abs(c.shifted_value - c.value - 0.5 * opts.alpha * x2));
    converged.push_back(std::move(c));
  }
  if (converged.empty()) throw NumericalError("action minimization: no start converged");
  if (result.identity_error > 1e-10) {
    throw NumericalError("per-curve shift identity violated by " + std::to_string(result.identity_error));
  }

  // Cluster by endpoint.
  for (auto& c : converged) {
    bool merged = false;
    for (auto& rep : result.clusters) {
      double dist = 0.0;
      for (int j = 0; j < d; ++j) {
        const double e = c.points[(k - 1) * d + j] - rep.points[(k - 1) * d + j];
        dist += e * e;
      }
      if (std::sqrt(dist) <= 1e-4) {
        if (c.value < rep.value) rep = c;
        merged = true;
        break;
      }
    }
    if (!merged) result.clusters.push_back(c);
  }
  std::stable_sort(result.clusters.begin(), result.clusters.end(),
                   [](const ActionCurve& a, const ActionCurve& b) { return a.value < b.value; });
  result.value = result.clusters.front().value;
  for (const auto& c : result.clusters) {
    if (c.value <= result.value + 1e-6) result.curves.push_back(c);
  }
  result.multiple = result.curves.size() >= 2;
  return result;
}

// ---- export ------------------------------------------------------------------------

void write_field_csv(std::ostream& out, const ValueField& field, bool gnuplot) {
  const Grid& g = field.grid;
  const char sep = gnuplot ? ' ' : ',';
  out << (gnuplot ? "# t x" : "t,x") << (g.dim == 2 ? (gnuplot ? " y" : ",y") : "") << sep << "u\n";
  const auto old = out.precision(17);
  const int nx = g.nodes[0];
  const int ny = g.dim == 2 ? g.nodes[1] : 1;
  for (std::size_t s = 0; s < field.slices.size(); ++s) {
    if (gnuplot && s > 0) out << "\n\n";
    for (int j = 0; j < ny; ++j) {
      if (gnuplot && g.dim == 2 && j > 0) out << '\n';
      for (int i = 0; i < nx; ++i) {
        out << field.times[s] << sep << g.coord(0, i);
        if (g.dim == 2) out << sep << g.coord(1, j);
        out << sep << field.slices[s][static_cast<std::size_t>(j) * nx + i] << '\n';
      }
    }
  }
  out.precision(old);
}

void write_profile_csv(std::ostream& out, const std::vector<SemiconcavityRow>& rows, bool gnuplot) {
  const char sep = gnuplot ? ' ' : ',';
  out << (gnuplot ? "# t minD2 maxD2\n" : "t,minD2,maxD2\n");
  const auto old = out.precision(17);
  for (const auto& r : rows) out << r.t << sep << r.min_d2 << sep << r.max_d2 << '\n';
  out.precision(old);
}

std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 14695981039346656037ull;
  for (const unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::uint64_t fnv1a(std::span<const double> values) {
  return fnv1a(std::string_view(reinterpret_cast<const char*>(values.data()), values.size() * sizeof(double)));
}

}  // namespace canon_hjb
