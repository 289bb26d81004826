#include "canon_hjb/characteristics.hpp"

#include <algorithm>
#include <atomic>
#include <limits>
#include <cmath>
#include <ostream>
#include <random>
#include <string>

#include "canon_hjb/errors.hpp"
#include "canon_hjb/parallel.hpp"

namespace canon_hjb {

namespace {

// State layout: X (d), P (d), action (1), tangent (2d × k, column-major).
class Field {
 public:
  Field(const HamiltonianModel& h, double sign, int k) : h_(h), sign_(sign), d_(h.dim()), k_(k) {}

  int size() const { return 2 * d_ + 1 + 2 * d_ * k_; }

  // Returns H at the state as a by-product.
  double operator()(const Vec& s, Vec& ds) const {
    const std::span<const double> x(s.data(), static_cast<std::size_t>(d_));
    const std::span<const double> p(s.data() + d_, static_cast<std::size_t>(d_));
    double value = 0.0;
    double pdp = 0.0;
    if (k_ == 0) {
      std::vector<double> gx(static_cast<std::size_t>(d_)), gp(static_cast<std::size_t>(d_));
      h_.gradient(x, p, gx, gp);
      value = h_.value(x, p);
      for (int j = 0; j < d_; ++j) {
        ds(j) = sign_ * gp[j];
        ds(d_ + j) = -sign_ * gx[j];
        pdp += p[j] * gp[j];
      }
    } else {
      const HessianBlocks b = h_.blocks(x, p);
      value = b.value;
      for (int j = 0; j < d_; ++j) {
        ds(j) = sign_ * b.grad_p(j);
        ds(d_ + j) = -sign_ * b.grad_x(j);
        pdp += p[j] * b.grad_p(j);
      }
      // d/ds (δX, δP) = σ (xpᵀ δX + pp δP, −xx δX − xp δP), column by column.
      const int n = 2 * d_;
      for (int c = 0; c < k_; ++c) {
        const double* tx = s.data() + n + 1 + c * n;
        const double* tp = tx + d_;
        double* dx = ds.data() + n + 1 + c * n;
        double* dp = dx + d_;
        for (int i = 0; i < d_; ++i) {
          double ax = 0.0, ap = 0.0;
          for (int j = 0; j < d_; ++j) {
            ax += b.xp(j, i) * tx[j] + b.pp(i, j) * tp[j];
            ap += b.xx(i, j) * tx[j] + b.xp(i, j) * tp[j];
          }
          dx[i] = sign_ * ax;
          dp[i] = -sign_ * ap;
        }
      }
    }
    ds(2 * d_) = sign_ * (pdp - value);
    return value;
  }

 private:
  const HamiltonianModel& h_;
  double sign_;
  int d_;
  int k_;
};

struct Stepper {
  const Field& f;
  Vec k1, k2, k3, k4, tmp;

  explicit Stepper(const Field& field)
      : f(field), k1(field.size()), k2(field.size()), k3(field.size()), k4(field.size()), tmp(field.size()) {}

  // Advances s by dt; returns H at the starting state.
  double step(Vec& s, double dt) {
    const double value = f(s, k1);
    tmp = s + 0.5 * dt * k1;
    f(tmp, k2);
    tmp = s + 0.5 * dt * k2;
    f(tmp, k3);
    tmp = s + dt * k3;
    f(tmp, k4);
    s += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    return value;
  }
};

double energy_at(const HamiltonianModel& h, const Vec& s, int d) {
  return h.value(std::span<const double>(s.data(), static_cast<std::size_t>(d)),
                 std::span<const double>(s.data() + d, static_cast<std::size_t>(d)));
}

int step_count(double t0, double t1, double step) {
  if (!(step > 0.0)) throw InputError("step must be positive");
  if (!(t1 > t0)) throw InputError("integration interval must have t1 > t0");
  return std::max(1, static_cast<int>(std::ceil((t1 - t0) / step - 1e-9)));
}

double det_top(const Mat& t, int d) { return t.topRows(d).leftCols(d).determinant(); }

void record_state(Trajectory& tr, double time, const Vec& s, double energy, int k) {
  const int d = tr.dim;
  tr.times.push_back(time);
  tr.xs.insert(tr.xs.end(), s.data(), s.data() + d);
  tr.ps.insert(tr.ps.end(), s.data() + d, s.data() + 2 * d);
  tr.action.push_back(s(2 * d));
  tr.energy.push_back(energy);
  if (k > 0) {
    const Eigen::Map<const Mat> t(s.data() + 2 * d + 1, 2 * d, k);
    tr.tangent.emplace_back(t);
    if (k == d) tr.det_j.push_back(det_top(tr.tangent.back(), d));
  }
}

double norm(std::span<const double> a) {
  double s = 0.0;
  for (const double v : a) s += v * v;
  return std::sqrt(s);
}

}  // namespace

Trajectory integrate_flow(const HamiltonianModel& h, std::span<const double> x0, std::span<const double> p0, double t0,
                          double t1, double step, const FlowOptions& opts) {
  const int d = h.dim();
  if (static_cast<int>(x0.size()) != d || static_cast<int>(p0.size()) != d) {
    throw InputError("initial state dimension does not match H");
  }
  const int k = static_cast<int>(opts.tangent_seed.cols());
  if (k > 0 && opts.tangent_seed.rows() != 2 * d) throw InputError("tangent seed must have 2d rows");
  const int n = step_count(t0, t1, step);
  const double dt = (t1 - t0) / n;

  const Field field(h, opts.sign, k);
  Stepper stepper(field);
  Vec s = Vec::Zero(field.size());
  for (int j = 0; j < d; ++j) {
    s(j) = x0[j];
    s(d + j) = p0[j];
  }
  if (k > 0) Eigen::Map<Mat>(s.data() + 2 * d + 1, 2 * d, k) = opts.tangent_seed;

  Trajectory tr;
  tr.dim = d;
  if (opts.record) {
    tr.times.reserve(static_cast<std::size_t>(n) + 1);
    tr.xs.reserve((static_cast<std::size_t>(n) + 1) * d);
    tr.ps.reserve((static_cast<std::size_t>(n) + 1) * d);
  }
  Vec before;
  for (int i = 0; i < n; ++i) {
    const bool keep = opts.record || i == 0;
    if (keep) before = s;
    const double e = stepper.step(s, dt);
    if (keep) record_state(tr, t0 + i * dt, before, e, k);
    if (!s.allFinite()) {
      throw NumericalError("trajectory diverged at s=" + std::to_string(t0 + (i + 1) * dt));
    }
  }
  record_state(tr, t1, s, energy_at(h, s, d), k);
  return tr;
}

Trajectory integrate_flow(const HamiltonianModel& h, std::span<const double> x0, std::span<const double> p0, double t0,
                          double t1, double step, bool with_variational) {
  FlowOptions opts;
  if (with_variational) {
    const int d = h.dim();
    opts.tangent_seed = Mat::Zero(2 * d, d);
    opts.tangent_seed.topRows(d).setIdentity();
  }
  return integrate_flow(h, x0, p0, t0, t1, step, opts);
}

namespace {

struct Shot {
  Vec residual;
  Mat jacobian;  // ∂R/∂p
  std::vector<double> x_end;
};

Shot shoot(const HamiltonianModel& h, const TerminalCost& g, double t, std::span<const double> x, double horizon,
           double step, std::span<const double> p, bool with_jacobian) {
  const int d = h.dim();
  FlowOptions opts;
  opts.sign = -1.0;
  opts.record = false;
  if (with_jacobian) {
    opts.tangent_seed = Mat::Zero(2 * d, d);
    opts.tangent_seed.bottomRows(d).setIdentity();
  }
  const Trajectory tr = integrate_flow(h, x, p, t, horizon, step, opts);
  Shot out;
  out.x_end.assign(tr.x_end().begin(), tr.x_end().end());
  std::vector<double> grad(static_cast<std::size_t>(d));
  g.gradient(out.x_end, grad);
  out.residual.resize(d);
  for (int j = 0; j < d; ++j) out.residual(j) = tr.p_end()[j] - grad[j];
  if (with_jacobian) {
    const Mat& t_end = tr.tangent.back();
    out.jacobian = t_end.bottomRows(d) - g.hessian(out.x_end) * t_end.topRows(d);
  }
  return out;
}

bool singular(const Mat& j) {
  const Eigen::JacobiSVD<Mat> svd(j);
  const Vec sv = svd.singularValues();
  return !(sv(sv.size() - 1) > 1e-10 * std::max(1.0, sv(0)));
}

bool nearly_singular(const Mat& j) {
  const Eigen::JacobiSVD<Mat> svd(j);
  const Vec sv = svd.singularValues();
  return !(sv(sv.size() - 1) > 1e-8 * std::max(1.0, sv(0)));
}

Mat fd_jacobian(const HamiltonianModel& h, const TerminalCost& g, double t, std::span<const double> x,
                double horizon, double step, std::vector<double> p) {
  const int d = h.dim();
  Mat j(d, d);
  for (int c = 0; c < d; ++c) {
    const double e = 1e-6 * (1.0 + std::abs(p[c]));
    const double saved = p[c];
    p[c] = saved + e;
    const Vec plus = shoot(h, g, t, x, horizon, step, p, false).residual;
    p[c] = saved - e;
    const Vec minus = shoot(h, g, t, x, horizon, step, p, false).residual;
    p[c] = saved;
    j.col(c) = (plus - minus) / (2.0 * e);
  }
  return j;
}

struct StartOutcome {
  bool converged = false;
  std::vector<double> p;
  double residual = 0.0;
  int iterations = 0;
  bool singular_jacobian = false;
};

StartOutcome newton(const HamiltonianModel& h, const TerminalCost& g, double t, std::span<const double> x,
                    double horizon, double step, double tol, std::vector<double> p) {
  constexpr int kMaxIterations = 50;
  StartOutcome out;
  const int d = h.dim();
  try {
    Shot shot = shoot(h, g, t, x, horizon, step, p, true);
    double r = shot.residual.norm();
    for (int it = 0; it < kMaxIterations; ++it) {
      out.iterations = it;
      if (r <= tol) {
        out.converged = true;
        break;
      }
      Mat j = shot.jacobian;
      if (singular(j)) {
        j = fd_jacobian(h, g, t, x, horizon, step, p);
        if (singular(j)) {
          out.singular_jacobian = true;
          break;
        }
      }
      const Vec delta = j.fullPivLu().solve(-shot.residual);
      double lambda = 1.0;
      bool accepted = false;
      for (int half = 0; half < 30; ++half, lambda *= 0.5) {
        std::vector<double> trial(p);
        for (int c = 0; c < d; ++c) trial[c] += lambda * delta(c);
        try {
          Shot next = shoot(h, g, t, x, horizon, step, trial, true);
          const double rn = next.residual.norm();
          if (rn < r) {
            p = std::move(trial);
            shot = std::move(next);
            r = rn;
            accepted = true;
            break;
          }
        } catch (const NumericalError&) {
          // diverged: shorten the step
        }
      }
      if (!accepted) break;
      out.iterations = it + 1;
    }
    if (r <= tol) out.converged = true;
    out.residual = r;
    out.p = p;
    if (out.converged) out.singular_jacobian = nearly_singular(shot.jacobian);
  } catch (const NumericalError&) {
    out.converged = false;
  }
  return out;
}

}  // namespace

ShootingResult solve_terminal_bvp(const HamiltonianModel& h, const TerminalCost& g, double t, std::span<const double> x,
                                  double horizon, double step, double tol, int starts, std::uint64_t seed) {
  const int d = h.dim();
  if (!(horizon > t)) throw InputError("horizon must exceed the start time");
  if (static_cast<int>(x.size()) != d || g.dim() != d) throw InputError("dimension mismatch");
  if (starts < 1) throw InputError("at least one start is required");
  if (!(tol > 0.0)) throw InputError("tolerance must be positive");

  std::vector<double> center(static_cast<std::size_t>(d));
  g.gradient(x, center);
  const double radius = 2.0 * (1.0 + norm(center));
  std::vector<std::vector<double>> initial(static_cast<std::size_t>(starts), center);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unit;
  for (int i = 1; i < starts; ++i) {
    std::vector<double> dir(static_cast<std::size_t>(d));
    double len = 0.0;
    while (len < 1e-8) {
      len = 0.0;
      for (auto& v : dir) {
        v = normal(rng);
        len += v * v;
      }
      len = std::sqrt(len);
    }
    const double r = radius * std::pow(unit(rng), 1.0 / d);
    for (int j = 0; j < d; ++j) initial[i][j] += r * dir[j] / len;
  }

  std::vector<StartOutcome> outcomes(static_cast<std::size_t>(starts));
  parallel_for(outcomes.size(), [&](std::size_t i) { outcomes[i] = newton(h, g, t, x, horizon, step, tol, initial[i]); });

  ShootingResult result;
  for (const StartOutcome& o : outcomes) {
    if (!o.converged) continue;
    FlowOptions opts;
    opts.sign = -1.0;
    const Trajectory tr = integrate_flow(h, x, o.p, t, horizon, step, opts);
    bool duplicate = false;
    for (const ShootingSolution& s : result.solutions) {
      double dist = 0.0;
      for (int j = 0; j < d; ++j) dist += std::pow(s.trajectory.x_end()[j] - tr.x_end()[j], 2);
      if (std::sqrt(dist) <= 1e-6) duplicate = true;
    }
    if (duplicate) continue;
    ShootingSolution s;
    s.value = g.value(tr.x_end()) - tr.action.back();
    s.trajectory = tr;
    s.momentum = o.p;
    s.residual = o.residual;
    s.iterations = o.iterations;
    s.singular_jacobian = o.singular_jacobian;
    result.solutions.push_back(std::move(s));
  }
  if (result.solutions.empty()) throw NumericalError("shooting: no start converged");

  std::size_t best = 0;
  for (std::size_t i = 1; i < result.solutions.size(); ++i) {
    if (result.solutions[i].value < result.solutions[best].value) best = i;
  }
  const ShootingSolution& b = result.solutions[best];
  result.converged = true;
  result.trajectory = b.trajectory;
  result.momentum = b.momentum;
  result.residual = b.residual;
  result.value = b.value;
  result.iterations = b.iterations;
  result.singular_jacobian = b.singular_jacobian;
  return result;
}

namespace {

int default_points(int d) {
  switch (d) {
    case 1: return 401;
    case 2: return 41;
    case 3: return 11;
    default: return 7;
  }
}

struct Crossing {
  bool found = false;
  double tau = 0.0;
};

// Integration of a point stops once τ passes `cutoff`: any crossing beyond
// it cannot be the earliest, whatever order the points are visited in.
Crossing scan_point(const HamiltonianModel& h, const TerminalCost& g, std::span<const double> y, double horizon,
                    double step, const std::atomic<double>& cutoff) {
  const int d = h.dim();
  const Field field(h, 1.0, d);
  Stepper stepper(field);
  Vec s = Vec::Zero(field.size());
  std::vector<double> grad(static_cast<std::size_t>(d));
  g.gradient(y, grad);
  for (int j = 0; j < d; ++j) {
    s(j) = y[j];
    s(d + j) = grad[j];
  }
  Eigen::Map<Mat> t(s.data() + 2 * d + 1, 2 * d, d);
  t.topRows(d).setIdentity();
  t.bottomRows(d) = g.hessian(y);

  const auto det_of = [d](const Vec& state) {
    return Eigen::Map<const Mat>(state.data() + 2 * d + 1, 2 * d, d).topRows(d).determinant();
  };

  const int n = step_count(0.0, horizon, step);
  const double dt = horizon / n;
  Vec before;
  for (int i = 0; i < n; ++i) {
    if (i * dt > cutoff.load(std::memory_order_relaxed)) return {};
    before = s;
    stepper.step(s, dt);
    if (!s.allFinite()) throw NumericalError("characteristic diverged at tau=" + std::to_string((i + 1) * dt));
    if (det_of(s) <= 0.0) {
      double lo = 0.0, hi = dt;
      while (hi - lo > 1e-4 * 0.5) {
        const double mid = 0.5 * (lo + hi);
        Vec probe = before;
        stepper.step(probe, mid);
        (det_of(probe) > 0.0 ? lo : hi) = mid;
      }
      return {true, i * dt + 0.5 * (lo + hi)};
    }
  }
  return {};
}

}  // namespace

ConjugatePoint first_conjugate_time(const HamiltonianModel& h, const TerminalCost& g, double horizon, const Box& y_box,
                                    double step, int points_per_axis) {
  const int d = h.dim();
  if (y_box.dim() != d || g.dim() != d) throw InputError("dimension mismatch");
  if (!(horizon > 0.0)) throw InputError("horizon must be positive");
  const int m = points_per_axis > 0 ? points_per_axis : default_points(d);
  std::size_t total = 1;
  for (int j = 0; j < d; ++j) total *= static_cast<std::size_t>(m);

  const auto point = [&](std::size_t idx) {
    std::vector<double> y(static_cast<std::size_t>(d));
    for (int j = 0; j < d; ++j) {
      const std::size_t k = idx % static_cast<std::size_t>(m);
      idx /= static_cast<std::size_t>(m);
      y[j] = m == 1 ? 0.5 * (y_box.lo[j] + y_box.hi[j])
                    : y_box.lo[j] + (y_box.hi[j] - y_box.lo[j]) * static_cast<double>(k) / (m - 1);
    }
    return y;
  };

  // Visit points in bit-reversed order so early crossings tighten the
  // cutoff for the whole box quickly.
  std::size_t bits = 0;
  while ((std::size_t{1} << bits) < total) ++bits;
  std::vector<std::size_t> order;
  order.reserve(total);
  for (std::size_t r = 0; r < (std::size_t{1} << bits); ++r) {
    std::size_t v = 0;
    for (std::size_t b = 0; b < bits; ++b) v |= ((r >> b) & 1u) << (bits - 1 - b);
    if (v < total) order.push_back(v);
  }

  std::atomic<double> cutoff(std::numeric_limits<double>::infinity());
  std::vector<Crossing> crossings(total);
  parallel_for(total, [&](std::size_t k) {
    const std::size_t i = order[k];
    crossings[i] = scan_point(h, g, point(i), horizon, step, cutoff);
    if (crossings[i].found) {
      double cur = cutoff.load();
      while (crossings[i].tau < cur && !cutoff.compare_exchange_weak(cur, crossings[i].tau)) {
      }
    }
  });

  ConjugatePoint out;
  for (std::size_t i = 0; i < total; ++i) {
    if (crossings[i].found && (!out.found || crossings[i].tau < out.tau)) {
      out.found = true;
      out.tau = crossings[i].tau;
      out.y = point(i);
    }
  }
  if (out.found) out.s = horizon - out.tau;
  return out;
}

double verify_conjugacy(const HamiltonianModel& h, double alpha, std::span<const double> x0,
                        std::span<const double> p0, double t0, double t1, double step) {
  const int d = h.dim();
  std::vector<double> q0(p0.begin(), p0.end());
  for (int j = 0; j < d; ++j) q0[j] += alpha * x0[j];
  const Trajectory a = integrate_flow(h, x0, p0, t0, t1, step);
  const Trajectory b = integrate_flow(shift_hamiltonian(h, alpha), x0, q0, t0, t1, step);
  double worst = 0.0;
  for (int k = 0; k < a.size(); ++k) {
    double dx = 0.0, dp = 0.0;
    for (int j = 0; j < d; ++j) {
      dx += std::pow(a.x(k)[j] - b.x(k)[j], 2);
      dp += std::pow(a.p(k)[j] + alpha * a.x(k)[j] - b.p(k)[j], 2);
    }
    worst = std::max(worst, std::sqrt(dx) + std::sqrt(dp));
  }
  return worst;
}

void write_trajectory_csv(std::ostream& out, const Trajectory& tr) {
  const int d = tr.dim;
  const bool with_det = !tr.det_j.empty();
  out << "s";
  for (int j = 1; j <= d; ++j) out << ",X_" << j;
  for (int j = 1; j <= d; ++j) out << ",P_" << j;
  if (with_det) out << ",detJ";
  out << ",H\n";
  const auto old = out.precision(17);
  for (int k = 0; k < tr.size(); ++k) {
    out << tr.times[k];
    for (int j = 0; j < d; ++j) out << ',' << tr.x(k)[j];
    for (int j = 0; j < d; ++j) out << ',' << tr.p(k)[j];
    if (with_det) out << ',' << tr.det_j[k];
    out << ',' << tr.energy[k] << '\n';
  }
  out.precision(old);
}

}  // namespace canon_hjb
