#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "canon_hjb/model.hpp"

namespace canon_hjb {

/// Uniformly stamped path of (X, P) with optional tangent columns.
struct Trajectory {
  int dim = 0;
  std::vector<double> times;
  std::vector<double> xs;      // (steps + 1) × d
  std::vector<double> ps;      // (steps + 1) × d
  std::vector<double> energy;  // H(X, P)
  std::vector<double> action;  // ∫ σ (P·∂pH − H) ds from the first stamp
  std::vector<Mat> tangent;    // 2d × k per stamp: rows (∂X; ∂P), empty if not requested
  std::vector<double> det_j;   // det of the ∂X rows when k = d

  int size() const { return static_cast<int>(times.size()); }
  std::span<const double> x(int k) const { return {xs.data() + k * dim, static_cast<std::size_t>(dim)}; }
  std::span<const double> p(int k) const { return {ps.data() + k * dim, static_cast<std::size_t>(dim)}; }
  std::span<const double> x_end() const { return x(size() - 1); }
  std::span<const double> p_end() const { return p(size() - 1); }
};

struct FlowOptions {
  /// +1: Ẋ = ∂pH, Ṗ = −∂xH. −1 runs the same field reversed, which is the
  /// characteristic system of −∂t u + H(x, Du) = 0 in real time.
  double sign = 1.0;
  /// Initial tangent (2d × k). Empty means no variational integration.
  Mat tangent_seed;
  /// Keep every stamp (true) or only the endpoints.
  bool record = true;
};

/// Classical RK4 from t0 to t1 with the largest uniform step ≤ h.
/// Throws NumericalError on a non-finite state, with the first bad time.
Trajectory integrate_flow(const HamiltonianModel& h, std::span<const double> x0, std::span<const double> p0, double t0,
                          double t1, double step, const FlowOptions& opts = {});

/// Convenience form: with_variational seeds ∂X/∂x0 = I, ∂P/∂x0 = 0.
Trajectory integrate_flow(const HamiltonianModel& h, std::span<const double> x0, std::span<const double> p0, double t0,
                          double t1, double step, bool with_variational);

struct ShootingSolution {
  Trajectory trajectory;
  std::vector<double> momentum;  // initial p at time t
  double residual = 0.0;         // |P_T − ∇G(X_T)|
  double value = 0.0;            // u(t, x) carried along this characteristic
  int iterations = 0;
  bool singular_jacobian = false;
};

struct ShootingResult {
  bool converged = false;
  Trajectory trajectory;  // the distinct solution of least value
  std::vector<double> momentum;
  double residual = 0.0;
  double value = 0.0;
  int iterations = 0;
  bool singular_jacobian = false;
  std::vector<ShootingSolution> solutions;  // distinct, in start order
};

/// Newton shooting on the initial momentum for P_T = ∇G(X_T) along the
/// characteristic system of −∂t u + H = 0 run from t to T. Start 0 is ∇G(x);
/// the rest are uniform in the ball of radius 2(1 + |∇G(x)|) around it.
ShootingResult solve_terminal_bvp(const HamiltonianModel& h, const TerminalCost& g, double t, std::span<const double> x,
                                  double horizon, double step, double tol, int starts, std::uint64_t seed);

struct ConjugatePoint {
  bool found = false;
  double tau = 0.0;  // T − s
  double s = 0.0;
  std::vector<double> y;
};

/// Earliest τ = T − s at which det ∂X/∂y vanishes along the backward
/// characteristics issued from the terminal points y (momentum ∇G(y)).
/// y runs over a uniform grid of `points_per_axis` per axis of y_box.
ConjugatePoint first_conjugate_time(const HamiltonianModel& h, const TerminalCost& g, double horizon, const Box& y_box,
                                    double step, int points_per_axis = 0);

/// max over stamps of |X − X′| + |P + αX − P′|, where (X′, P′) follows H_α
/// from (x0, p0 + αx0).
double verify_conjugacy(const HamiltonianModel& h, double alpha, std::span<const double> x0,
                        std::span<const double> p0, double t0, double t1, double step);

/// Columns s, X_1..X_d, P_1..P_d, [detJ], H.
void write_trajectory_csv(std::ostream& out, const Trajectory& tr);

}  // namespace canon_hjb
