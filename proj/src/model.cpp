#include "canon_hjb/model.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <string>

#include "canon_hjb/errors.hpp"
#include "canon_hjb/sampling.hpp"

namespace canon_hjb {

namespace {

using Buffer = std::array<double, kMaxVars>;

void check_family(const Expr& e, FamilySet want, const char* what) {
  if (e.families() != want) throw InputError(std::string(what) + ": expression has the wrong variable families");
}

// Inputs (x, y) packed into the tape layout.
Buffer pack(std::span<const double> x, std::span<const double> y) {
  Buffer b{};
  const std::size_t d = x.size();
  for (std::size_t i = 0; i < d; ++i) b[i] = x[i];
  for (std::size_t i = 0; i < y.size(); ++i) b[d + i] = y[i];
  return b;
}

}  // namespace

bool Box::contains(std::span<const double> x) const {
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] < lo[i] || x[i] > hi[i]) return false;
  }
  return true;
}

// ---- Lagrangian ----------------------------------------------------------

LagrangianModel::LagrangianModel(Expr base) : base_(std::move(base)), tape_(std::make_shared<Tape>(base_)) {
  check_family(base_, kLagrangianVars, "lagrangian");
}

double LagrangianModel::value(std::span<const double> x, std::span<const double> v) const {
  const Buffer b = pack(x, v);
  double xv = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) xv += x[i] * v[i];
  return tape_->value({b.data(), 2 * x.size()}) - shift_ * xv;
}

Jet2 LagrangianModel::jet(std::span<const double> x, std::span<const double> v) const {
  const Buffer b = pack(x, v);
  const std::size_t d = x.size();
  Jet2 j = tape_->jet2({b.data(), 2 * d});
  if (shift_ != 0.0) {
    double xv = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      xv += x[i] * v[i];
      j.gradient(i) -= shift_ * v[i];
      j.gradient(d + i) -= shift_ * x[i];
      j.hessian(i, d + i) -= shift_;
    }
    j.value() -= shift_ * xv;
  }
  return j;
}

void LagrangianModel::gradient(std::span<const double> x, std::span<const double> v, std::span<double> gx,
                               std::span<double> gv) const {
  const Buffer b = pack(x, v);
  const std::size_t d = x.size();
  Buffer g{};
  tape_->gradient({b.data(), 2 * d}, {g.data(), 2 * d});
  for (std::size_t i = 0; i < d; ++i) {
    gx[i] = g[i] - shift_ * v[i];
    gv[i] = g[d + i] - shift_ * x[i];
  }
}

LagrangianModel shift_lagrangian(const LagrangianModel& l, double alpha) {
  LagrangianModel out = l;
  out.shift_ += alpha;
  return out;
}

// ---- terminal cost -------------------------------------------------------

TerminalCost::TerminalCost(Expr base) : base_(std::move(base)), tape_(std::make_shared<Tape>(base_)) {
  check_family(base_, kTerminalVars, "terminal cost");
}

double TerminalCost::value(std::span<const double> x) const {
  double r2 = 0.0;
  for (double xi : x) r2 += xi * xi;
  return tape_->value(x) + 0.5 * shift_ * r2;
}

void TerminalCost::gradient(std::span<const double> x, std::span<double> out) const {
  tape_->gradient(x, out);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] += shift_ * x[i];
}

Mat TerminalCost::hessian(std::span<const double> x) const {
  const Jet2 j = tape_->jet2(x);
  const auto d = static_cast<Eigen::Index>(x.size());
  Mat h(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index k = 0; k < d; ++k) h(i, k) = j.hessian(i, k);
    h(i, i) += shift_;
  }
  return h;
}

TerminalCost shift_terminal(const TerminalCost& g, double alpha) {
  TerminalCost out = g;
  out.shift_ += alpha;
  return out;
}

// ---- Hamiltonian ---------------------------------------------------------

HamiltonianModel::HamiltonianModel(Expr base)
    : dim_(base.dim()), base_(std::move(base)), tape_(std::make_shared<Tape>(base_)) {
  check_family(base_, kHamiltonianVars, "hamiltonian");
}

HamiltonianModel HamiltonianModel::from_lagrangian(LagrangianModel l, LegendreOptions opts) {
  HamiltonianModel h;
  h.dim_ = l.dim();
  h.lagrangian_ = std::move(l);
  h.legendre_ = opts;
  return h;
}

const Expr& HamiltonianModel::base() const {
  if (!tape_) throw InputError("hamiltonian is defined through a Lagrangian and has no expression");
  return base_;
}

double HamiltonianModel::value(std::span<const double> x, std::span<const double> p) const {
  const auto d = static_cast<std::size_t>(dim_);
  Buffer b{};
  for (std::size_t i = 0; i < d; ++i) {
    b[i] = x[i];
    b[d + i] = p[i] - shift_ * x[i];
  }
  if (tape_) return tape_->value({b.data(), 2 * d});
  const Box box = Box::cube(dim_, -legendre_.box_half_width, legendre_.box_half_width);
  return legendre_maximize(*lagrangian_, {b.data(), d}, {b.data() + d, d}, box, legendre_.tol, legendre_.starts,
                           legendre_.max_iterations)
      .value;
}

double HamiltonianModel::value_and_dp(std::span<const double> x, std::span<const double> p,
                                      std::span<double> dp) const {
  const auto d = static_cast<std::size_t>(dim_);
  if (!tape_) {
    const HessianBlocks b = blocks(x, p);
    for (std::size_t i = 0; i < d; ++i) dp[i] = b.grad_p(static_cast<Eigen::Index>(i));
    return b.value;
  }
  Buffer b{};
  for (std::size_t i = 0; i < d; ++i) {
    b[i] = x[i];
    b[d + i] = p[i] - shift_ * x[i];
  }
  Buffer dir{};
  double v = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    dir[d + i] = 1.0;
    const Dual r = tape_->directional({b.data(), 2 * d}, {dir.data(), 2 * d});
    dir[d + i] = 0.0;
    dp[i] = r.d;
    v = r.v;
  }
  return v;
}

void HamiltonianModel::gradient(std::span<const double> x, std::span<const double> p, std::span<double> gx,
                                std::span<double> gp) const {
  const auto d = static_cast<std::size_t>(dim_);
  if (!tape_) {
    const HessianBlocks b = blocks(x, p);
    for (std::size_t i = 0; i < d; ++i) {
      gx[i] = b.grad_x(static_cast<Eigen::Index>(i));
      gp[i] = b.grad_p(static_cast<Eigen::Index>(i));
    }
    return;
  }
  Buffer b{};
  for (std::size_t i = 0; i < d; ++i) {
    b[i] = x[i];
    b[d + i] = p[i] - shift_ * x[i];
  }
  Buffer g{};
  tape_->gradient({b.data(), 2 * d}, {g.data(), 2 * d});
  for (std::size_t i = 0; i < d; ++i) {
    gp[i] = g[d + i];
    gx[i] = g[i] - shift_ * g[d + i];
  }
}

HessianBlocks HamiltonianModel::base_blocks(std::span<const double> x, std::span<const double> q) const {
  const auto d = static_cast<Eigen::Index>(dim_);
  HessianBlocks out;
  out.grad_x = Vec::Zero(d);
  out.grad_p = Vec::Zero(d);
  out.xx = Mat::Zero(d, d);
  out.xp = Mat::Zero(d, d);
  out.pp = Mat::Zero(d, d);

  if (tape_) {
    const Buffer b = pack(x, q);
    const Jet2 j = tape_->jet2({b.data(), static_cast<std::size_t>(2 * d)});
    out.value = j.value();
    for (Eigen::Index i = 0; i < d; ++i) {
      out.grad_x(i) = j.gradient(i);
      out.grad_p(i) = j.gradient(d + i);
      for (Eigen::Index k = 0; k < d; ++k) {
        out.xx(i, k) = j.hessian(i, k);
        out.xp(i, k) = j.hessian(i, d + k);
        out.pp(i, k) = j.hessian(d + i, d + k);
      }
    }
    return out;
  }

  // Conjugate duality at the maximizing velocity v*, with w = -v* the
  // argument L is evaluated at. A, B, C are the xx, xw, ww blocks of D²L.
  const Box box = Box::cube(dim_, -legendre_.box_half_width, legendre_.box_half_width);
  const LegendreResult r =
      legendre_maximize(*lagrangian_, x, q, box, legendre_.tol, legendre_.starts, legendre_.max_iterations);
  std::vector<double> w(r.velocity.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = -r.velocity[i];
  const Jet2 j = lagrangian_->jet(x, w);
  Mat a(d, d), bxw(d, d), c(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index k = 0; k < d; ++k) {
      a(i, k) = j.hessian(i, k);
      bxw(i, k) = j.hessian(i, d + k);
      c(i, k) = j.hessian(d + i, d + k);
    }
  }
  const Mat c_inv = c.inverse();
  out.value = r.value;
  for (Eigen::Index i = 0; i < d; ++i) {
    out.grad_p(i) = -w[static_cast<std::size_t>(i)];
    out.grad_x(i) = -j.gradient(i);
  }
  out.pp = sym_part(c_inv);
  out.xp = bxw * c_inv;
  out.xx = sym_part(-a + bxw * c_inv * bxw.transpose());
  return out;
}

HessianBlocks HamiltonianModel::blocks(std::span<const double> x, std::span<const double> p) const {
  const auto d = static_cast<std::size_t>(dim_);
  Buffer q{};
  for (std::size_t i = 0; i < d; ++i) q[i] = p[i] - shift_ * x[i];
  HessianBlocks b = base_blocks(x, {q.data(), d});
  if (shift_ == 0.0) return b;
  const double a = shift_;
  b.grad_x -= a * b.grad_p;
  b.xx = b.xx - a * (b.xp + b.xp.transpose()) + (a * a) * b.pp;
  b.xp = b.xp - a * b.pp;
  return b;
}

HamiltonianModel HamiltonianModel::materialize() const {
  const Expr& e = base();
  if (shift_ == 0.0) return HamiltonianModel(e);
  std::vector<NodePtr> repl(static_cast<std::size_t>(2 * dim_));
  for (int j = 0; j < dim_; ++j) {
    repl[static_cast<std::size_t>(dim_ + j)] =
        build::sub(build::variable(Family::p, j, dim_),
                   build::mul(build::constant(shift_), build::variable(Family::x, j, dim_)));
  }
  return HamiltonianModel(Expr(substitute(e.root_ptr(), repl), dim_, kHamiltonianVars));
}

HamiltonianModel shift_hamiltonian(const HamiltonianModel& h, double alpha) {
  HamiltonianModel out = h;
  out.shift_ += alpha;
  return out;
}

HessianBlocks hessian_blocks(const HamiltonianModel& h, std::span<const double> x, std::span<const double> p) {
  return h.blocks(x, p);
}

// ---- Legendre transform ----------------------------------------------------

LegendreResult legendre_maximize(const LagrangianModel& l, std::span<const double> x, std::span<const double> p,
                                 const Box& search_box, double tol, int starts, int max_iterations) {
  const int d = l.dim();
  const auto du = static_cast<std::size_t>(d);
  if (search_box.dim() != d) throw InputError("legendre: search box dimension mismatch");

  // Work in w = -v, maximizing psi(w) = -p·w - L(x, w).
  const auto psi = [&](const Vec& w) {
    double pw = 0.0;
    for (int i = 0; i < d; ++i) pw += p[static_cast<std::size_t>(i)] * w(i);
    return -pw - l.value(x, {w.data(), du});
  };

  double pnorm = 0.0;
  for (double pi : p) pnorm += pi * pi;
  pnorm = std::sqrt(pnorm);

  // Sobol points with a fixed rotation so no start sits exactly at v = 0.
  std::vector<double> unit = sobol_unit(d, starts);
  for (auto& u : unit) u = std::fmod(u + 0.1234567, 1.0);
  double best = -std::numeric_limits<double>::infinity();
  Vec best_w;
  std::string last_failure = "no starts";

  for (int s = 0; s < starts; ++s) {
    Vec w(d);
    for (int i = 0; i < d; ++i) {
      const double u = unit[static_cast<std::size_t>(s * d + i)];
      const double lo = -search_box.hi[static_cast<std::size_t>(i)];
      const double hi = -search_box.lo[static_cast<std::size_t>(i)];
      w(i) = lo + u * (hi - lo);
    }
    bool converged = false;
    for (int it = 0; it < max_iterations; ++it) {
      const Jet2 j = l.jet(x, {w.data(), du});
      Vec grad(d);
      Mat c(d, d);
      for (int i = 0; i < d; ++i) {
        grad(i) = -p[static_cast<std::size_t>(i)] - j.gradient(static_cast<std::size_t>(d + i));
        for (int k = 0; k < d; ++k) c(i, k) = j.hessian(static_cast<std::size_t>(d + i), static_cast<std::size_t>(d + k));
      }
      const double cmin = lambda_min(c);
      if (cmin < -1e-12 * (1.0 + c.norm())) {
        throw InputError("legendre: lagrangian is not convex in v near v = " + std::to_string(-w(0)));
      }
      if (grad.norm() <= tol) {
        converged = true;
        break;
      }
      // Newton ascent direction for psi: C^{-1} grad (lightly regularized
      // where C is singular, e.g. at v = 0 for quartic Lagrangians).
      const Mat creg = c + std::max(0.0, 1e-10 - cmin) * Mat::Identity(d, d);
      const Vec step = creg.ldlt().solve(grad);
      const double f0 = psi(w);
      double t = 1.0;
      Vec next = w + step;
      while (t > 1e-12 && !(psi(next) >= f0)) {
        t *= 0.5;
        next = w + t * step;
      }
      if ((next - w).norm() <= 1e-15 * (1.0 + w.norm())) {
        // Stalled at rounding level; accept if the gradient is small in relative terms.
        converged = grad.norm() <= std::max(tol, 1e-10 * (1.0 + pnorm));
        break;
      }
      w = next;
      bool inside = true;
      for (int i = 0; i < d; ++i) {
        const double v = -w(i);
        inside = inside && v >= search_box.lo[static_cast<std::size_t>(i)] - 1e-9 &&
                 v <= search_box.hi[static_cast<std::size_t>(i)] + 1e-9;
      }
      if (!inside) {
        last_failure = "iterate left the search box";
        break;
      }
    }
    if (!converged) continue;
    const double val = psi(w);
    if (val > best) {
      best = val;
      best_w = w;
    }
  }
  if (best_w.size() == 0) throw NumericalError("legendre: no start converged (" + last_failure + ")");
  LegendreResult r;
  r.value = best;
  r.velocity.resize(du);
  for (int i = 0; i < d; ++i) r.velocity[static_cast<std::size_t>(i)] = -best_w(i);
  return r;
}

double legendre_transform(const LagrangianModel& l, std::span<const double> x, std::span<const double> p,
                          const Box& search_box, double tol) {
  return legendre_maximize(l, x, p, search_box, tol).value;
}

}  // namespace canon_hjb
