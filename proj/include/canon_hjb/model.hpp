#pragma once

#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "canon_hjb/expr.hpp"
#include "canon_hjb/jet.hpp"
#include "canon_hjb/linalg.hpp"
#include "canon_hjb/tape.hpp"

namespace canon_hjb {

/// Axis-aligned box, one [lo, hi] pair per coordinate.
struct Box {
  std::vector<double> lo;
  std::vector<double> hi;

  int dim() const { return static_cast<int>(lo.size()); }
  static Box cube(int dim, double lo, double hi) {
    return {std::vector<double>(dim, lo), std::vector<double>(dim, hi)};
  }
  bool contains(std::span<const double> x) const;
};

/// Second derivatives of H(x, p) split into d×d blocks.
/// xp(i, j) = ∂²H / ∂x_i ∂p_j.
struct HessianBlocks {
  double value = 0.0;
  Vec grad_x;
  Vec grad_p;
  Mat xx;
  Mat xp;
  Mat pp;
};

/// L(x, v) - shift · x·v.
class LagrangianModel {
 public:
  explicit LagrangianModel(Expr base);

  int dim() const { return base_.dim(); }
  double shift() const { return shift_; }
  const Expr& base() const { return base_; }

  double value(std::span<const double> x, std::span<const double> v) const;
  /// Jet over the 2d inputs (x, v), shift included.
  Jet2 jet(std::span<const double> x, std::span<const double> v) const;
  void gradient(std::span<const double> x, std::span<const double> v, std::span<double> gx,
                std::span<double> gv) const;

  friend LagrangianModel shift_lagrangian(const LagrangianModel& l, double alpha);

 private:
  Expr base_;
  std::shared_ptr<const Tape> tape_;
  double shift_ = 0.0;
};

/// G(x) + (shift/2) |x|².
class TerminalCost {
 public:
  explicit TerminalCost(Expr base);

  int dim() const { return base_.dim(); }
  double shift() const { return shift_; }
  const Expr& base() const { return base_; }

  double value(std::span<const double> x) const;
  void gradient(std::span<const double> x, std::span<double> out) const;
  Mat hessian(std::span<const double> x) const;

  friend TerminalCost shift_terminal(const TerminalCost& g, double alpha);

 private:
  Expr base_;
  std::shared_ptr<const Tape> tape_;
  double shift_ = 0.0;
};

struct LegendreOptions {
  double box_half_width = 20.0;  // search box [-w, w]^d for the velocity
  int starts = 5;
  double tol = 1e-12;            // on |p + ∇_w L|
  int max_iterations = 200;
};

/// H(x, p) evaluated at the shifted momentum p - shift·x.
///
/// The base is either an expression in (x, p) or the Legendre transform
/// H(x, p) = sup_v { p·v - L(x, -v) } of a Lagrangian. Note the -v: for
/// Lagrangians even in v this is the usual convex conjugate, otherwise it is
/// the usual conjugate composed with p ↦ -p.
class HamiltonianModel {
 public:
  explicit HamiltonianModel(Expr base);
  static HamiltonianModel from_lagrangian(LagrangianModel l, LegendreOptions opts = {});

  int dim() const { return dim_; }
  double shift() const { return shift_; }
  bool is_expression() const { return static_cast<bool>(tape_); }
  const Expr& base() const;

  double value(std::span<const double> x, std::span<const double> p) const;
  /// H and ∂pH in one pass per momentum direction.
  double value_and_dp(std::span<const double> x, std::span<const double> p, std::span<double> dp) const;
  void gradient(std::span<const double> x, std::span<const double> p, std::span<double> gx,
                std::span<double> gp) const;
  HessianBlocks blocks(std::span<const double> x, std::span<const double> p) const;

  /// Same field with the shift folded into the expression (p_j → p_j - α x_j)
  /// and zero accumulated shift. Expression-backed models only.
  HamiltonianModel materialize() const;

  friend HamiltonianModel shift_hamiltonian(const HamiltonianModel& h, double alpha);

 private:
  HamiltonianModel() = default;
  HessianBlocks base_blocks(std::span<const double> x, std::span<const double> q) const;

  int dim_ = 0;
  Expr base_;
  std::shared_ptr<const Tape> tape_;
  std::optional<LagrangianModel> lagrangian_;
  LegendreOptions legendre_;
  double shift_ = 0.0;
};

HamiltonianModel shift_hamiltonian(const HamiltonianModel& h, double alpha);
TerminalCost shift_terminal(const TerminalCost& g, double alpha);
LagrangianModel shift_lagrangian(const LagrangianModel& l, double alpha);

HessianBlocks hessian_blocks(const HamiltonianModel& h, std::span<const double> x, std::span<const double> p);

struct LegendreResult {
  double value = 0.0;
  std::vector<double> velocity;  // maximizing v
};

/// sup_v { p·v - L(x, -v) } by damped Newton from quasi-random starts in
/// `search_box`. Throws InputError if L is detected non-convex in v and
/// NumericalError if no start converges.
LegendreResult legendre_maximize(const LagrangianModel& l, std::span<const double> x, std::span<const double> p,
                                 const Box& search_box, double tol, int starts = 5, int max_iterations = 200);

double legendre_transform(const LagrangianModel& l, std::span<const double> x, std::span<const double> p,
                          const Box& search_box, double tol);

}  // namespace canon_hjb
