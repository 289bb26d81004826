#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "canon_hjb/model.hpp"

namespace canon_hjb {

/// Parsed INI text: section → key → raw value, both sorted by name.
using IniDocument = std::map<std::string, std::map<std::string, std::string>>;

/// `[section]` headers, `key = value` lines, `#` / `;` comments. Duplicate
/// sections or keys are rejected.
IniDocument parse_ini(const std::string& text);

struct CertificateParams {
  int samples = 4096;
  int directions = 8;
  std::uint64_t seed = 1;
  double mu_min = 1e-6;
  double alpha_max = 4.0;
  double threshold_tol = 1e-3;
};

struct GridParams {
  std::optional<Box> box;  // defaults to the x-box
  std::vector<int> nodes;  // one per axis, or one broadcast
  double cfl = 0.5;
  std::optional<std::vector<double>> max_speed;
  int snapshot_stride = 0;
};

struct IntegratorParams {
  double step = 1e-3;
  double tol = 1e-10;
  int starts = 8;
  std::uint64_t seed = 1;
  int scan_points = 0;  // conjugate scan points per axis, 0: default
  int mesh_points = 33;
  std::optional<Box> y_box;  // terminal-point box for the conjugate scan; defaults to the x-box
};

struct ProblemSpec {
  int dim = 1;
  double horizon = 1.0;
  double t = 0.0;                // query time
  std::vector<double> x;         // query point
  std::vector<double> p;         // initial momentum for flow checks
  Box xbox, pbox, vbox;
  std::optional<Expr> hamiltonian;
  std::optional<Expr> lagrangian;
  Expr terminal;
  CertificateParams certificate;
  GridParams grid;
  IntegratorParams integrator;
  std::string canonical;  // normalized text the spec hash is taken over

  HamiltonianModel hamiltonian_model() const;  // Legendre transform when only L is given
  LagrangianModel lagrangian_model() const;    // throws InputError without [lagrangian]
  TerminalCost terminal_cost() const { return TerminalCost(terminal); }
  std::string hash() const;                    // 16 hex digits
};

/// Throws InputError with the offending section and key.
ProblemSpec parse_spec(const std::string& text);
ProblemSpec load_spec(const std::string& path);

}  // namespace canon_hjb
