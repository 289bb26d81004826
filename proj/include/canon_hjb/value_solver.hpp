#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "canon_hjb/model.hpp"

namespace canon_hjb {

// ---- grid scheme -------------------------------------------------------------

struct GridSpec {
  std::vector<double> lo;  // one entry per axis (1 or 2 axes)
  std::vector<double> hi;
  std::vector<int> nodes;
  double horizon = 1.0;  // terminal time T; the solve runs from T down to 0
  double cfl = 0.5;
  std::optional<std::vector<double>> max_speed;  // per axis; defaulted if absent
  int snapshot_stride = 0;                       // 0: pick one keeping ≤ 256 slices
};

struct Grid {
  int dim = 1;
  std::vector<double> lo, hi, dx;
  std::vector<int> nodes;
  std::vector<double> max_speed;
  double horizon = 1.0;
  double cfl = 0.5;
  double dt = 0.0;
  int steps = 0;
  int snapshot_stride = 1;

  std::size_t size() const;
  double coord(int axis, int i) const { return lo[axis] + dx[axis] * i; }
};

/// Sampled sup of |∂p_k H| over the grid box crossed with the range of ∇G on
/// the grid, inflated by 2 about its centre.
std::vector<double> default_max_speed(const HamiltonianModel& h, const TerminalCost& g, const GridSpec& spec);

/// Resolves Δt = CFL / Σ_k(maxSpeed_k / Δx_k), rounded down so an integer
/// number of steps lands on t = 0.
Grid make_grid(const HamiltonianModel& h, const TerminalCost& g, const GridSpec& spec);

struct ValueField {
  Grid grid;
  std::string scheme;
  std::vector<double> times;               // stored slices, from T downwards
  std::vector<std::vector<double>> slices;  // row-major, x fastest
  std::uint64_t terminal_hash = 0;
  std::uint64_t final_hash = 0;

  const std::vector<double>& final_slice() const { return slices.back(); }
  /// Multilinear interpolation of the t = 0 slice.
  double value_at(std::span<const double> x) const;
};

/// Called on every time level, including the terminal one.
using SliceObserver = std::function<void(int level, double t, std::span<const double> u)>;

/// Monotone local Lax–Friedrichs scheme for −∂t u + H(x, Du) = 0, u(T) = G:
/// u^n = u^{n+1} − Δt [H(x, D_c u) − Σ_k (s_k/2)(D⁺_k u − D⁻_k u)], with s_k
/// the largest |∂p_k H| over the one-sided gradients at the node. Ghost nodes
/// are linearly extrapolated. Throws NumericalError on a CFL violation or a
/// non-finite value.
ValueField solve_grid(const HamiltonianModel& h, const TerminalCost& g, const Grid& grid,
                      const SliceObserver& observer = {});

/// Step-by-step driver behind solve_grid.
class GridSolver {
 public:
  GridSolver(const HamiltonianModel& h, const TerminalCost& g, const Grid& grid);
  double time() const { return time_; }
  int level() const { return level_; }
  bool done() const { return level_ == grid_.steps; }
  const std::vector<double>& values() const { return u_; }
  void step();

 private:
  const HamiltonianModel& h_;
  Grid grid_;
  std::vector<double> u_, next_;
  double time_ = 0.0;
  int level_ = 0;
};

struct ShiftDeviation {
  double max_deviation = 0.0;  // over interior nodes and all time levels
  double worst_time = 0.0;
  std::vector<double> worst_x;
  Grid grid;
};

/// Runs (H, G) and (H_α, G_α) in lockstep on one grid and measures
/// |u_α − u − (α/2)|x|²| on the interior 80% of nodes at every level.
/// Without a configured maxSpeed both runs use the larger of the two defaults.
ShiftDeviation verify_value_shift(const HamiltonianModel& h, const TerminalCost& g, double alpha, GridSpec spec);

/// Inclusive index range of the interior 80% of an axis with n nodes.
std::pair<int, int> interior_range(int n);

// ---- semiconcavity -------------------------------------------------------------

struct SemiconcavityRow {
  double t = 0.0;
  double min_d2 = 0.0;
  double max_d2 = 0.0;
  std::vector<double> axis_min;  // per axis
  std::vector<double> axis_max;
};

/// Centred second differences over interior nodes of one slice.
SemiconcavityRow second_differences(const Grid& grid, double t, std::span<const double> u);
std::vector<SemiconcavityRow> semiconcavity_profile(const ValueField& field);

// ---- Hopf–Lax oracle ------------------------------------------------------------

struct OracleResult {
  double value = 0.0;
  std::vector<std::vector<double>> argmins;
  bool on_boundary = false;  // a minimizer sits on the edge of the y-box
};

/// inf_y { |x − y|² / (2τ) + G(y) } for H = ½|p|², scanning a uniform grid of
/// scan_n points per axis of y_box (G cached), refining every local minimum
/// by ternary search and keeping all minimizers within 1e−9 of the least.
class HopfLax {
 public:
  HopfLax(const TerminalCost& g, Box y_box, int scan_n);
  OracleResult operator()(double tau, std::span<const double> x) const;

 private:
  double objective(double tau, std::span<const double> x, std::span<const double> y) const;
  const TerminalCost& g_;
  Box box_;
  int scan_n_;
  std::vector<double> cache_;
};

OracleResult hopf_lax_oracle(const TerminalCost& g, double t, std::span<const double> x, double horizon,
                             const Box& y_box, int scan_n);

// ---- direct action minimization ---------------------------------------------------

struct ActionCurve {
  std::vector<double> points;  // K × d, points[0..d) is the queried x
  double value = 0.0;          // discretized F_t(γ)
  double shifted_value = 0.0;  // discretized F_{t,α}(γ)
  double gradient_norm = 0.0;
  int iterations = 0;
};

struct ActionResult {
  double value = 0.0;
  std::vector<ActionCurve> curves;  // distinct minimizers within 1e−6 of the least value
  std::vector<ActionCurve> clusters;  // all distinct converged curves, best first
  bool multiple = false;
  double identity_error = 0.0;  // max |F_{t,α} − F_t − (α/2)|x|²| over all curves
};

struct ActionOptions {
  int mesh_points = 33;
  int starts = 8;
  std::uint64_t seed = 1;
  double alpha = 1.0;  // shift used for the per-curve identity check
  double grad_tol = 1e-10;
  int max_iterations = 500;
};

/// Minimizes the trapezoidal discretization of ∫_t^T L(γ, γ̇) ds + G(γ(T))
/// over piecewise-linear γ with γ(t) = x by descent along modified Newton
/// directions with backtracking; only local minima count as converged. Throws InputError if L is
/// detected non-convex in v along the initial curves, NumericalError if no
/// start converges, and NumericalError if the per-curve shift identity fails
/// beyond 1e−10.
ActionResult minimize_action(const LagrangianModel& l, const TerminalCost& g, double t, std::span<const double> x,
                             double horizon, const ActionOptions& opts = {});

/// Discretized F_t for a given curve (K × d points on a uniform mesh of [t, T]).
double discrete_action(const LagrangianModel& l, const TerminalCost& g, double t, double horizon,
                       std::span<const double> points);

// ---- export ------------------------------------------------------------------------

/// Header (t, x[, y], u); with `gnuplot`, slices (and rows in 2D) are
/// separated by blank lines and the header is a comment.
void write_field_csv(std::ostream& out, const ValueField& field, bool gnuplot = false);
void write_profile_csv(std::ostream& out, const std::vector<SemiconcavityRow>& rows, bool gnuplot = false);

std::uint64_t fnv1a(std::span<const double> values);
std::uint64_t fnv1a(std::string_view text);

}  // namespace canon_hjb
