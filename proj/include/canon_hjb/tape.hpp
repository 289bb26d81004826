#pragma once

#include <array>
#include <memory>
#include <span>
#include <vector>

#include "canon_hjb/expr.hpp"
#include "canon_hjb/jet.hpp"

namespace canon_hjb {

inline constexpr int kMaxVars = 16;

/// Postfix program compiled from an Expr. Immutable and safe to share
/// between threads; every evaluation uses its own stack.
class Tape {
 public:
  explicit Tape(const Expr& expr);

  int num_vars() const { return num_vars_; }

  double value(std::span<const double> point) const;

  /// Value and derivative along `direction`.
  Dual directional(std::span<const double> point, std::span<const double> direction) const;

  /// Value, first and second derivative along `direction`.
  DirJet directional2(std::span<const double> point, std::span<const double> direction) const;

  /// Full gradient (n directional first-order passes).
  void gradient(std::span<const double> point, std::span<double> out) const;

  /// Exact value/gradient/Hessian via n(n+1)/2 directional second-order jets.
  Jet2 jet2(std::span<const double> point) const;

 private:
  enum class Op : unsigned char { constant, variable, negate, add, sub, mul, div, pow, call };
  struct Instr {
    Op op;
    int arg = 0;        // variable slot or exponent
    Func func = Func::sin;
    double value = 0.0;
    const Node* node = nullptr;  // for error messages
  };

  template <class T>
  T run(const T* inputs) const;

  void compile(const NodePtr& n, int& depth);

  std::vector<Instr> code_;
  int max_depth_ = 0;
  int num_vars_ = 0;
  NodePtr root_;  // keeps Instr::node alive
};

/// Convenience: compile and evaluate once.
Jet2 eval_jet2(const Expr& expr, std::span<const double> point);

}  // namespace canon_hjb
