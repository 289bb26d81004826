#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

namespace canon_hjb {

/// First-order forward-mode number: value and one directional derivative.
struct Dual {
  double v = 0.0;
  double d = 0.0;
};

/// Truncated second-order Taylor number along one direction:
/// f(a + s·u) = v + d1·s + d2·s²/2 + O(s³).
struct DirJet {
  double v = 0.0;
  double d1 = 0.0;
  double d2 = 0.0;
};

/// Value, gradient and Hessian of a scalar field at a point.
/// The Hessian is stored as its upper triangle so (i,j) and (j,i) reads are
/// the same memory.
class Jet2 {
 public:
  Jet2() = default;
  explicit Jet2(std::size_t n) : n_(n), gradient_(n, 0.0), upper_(n * (n + 1) / 2, 0.0) {}

  std::size_t size() const { return n_; }
  double value() const { return value_; }
  double& value() { return value_; }
  const std::vector<double>& gradient() const { return gradient_; }
  double gradient(std::size_t i) const { return gradient_[i]; }
  double& gradient(std::size_t i) { return gradient_[i]; }
  double hessian(std::size_t i, std::size_t j) const { return upper_[index(i, j)]; }
  double& hessian(std::size_t i, std::size_t j) { return upper_[index(i, j)]; }

 private:
  std::size_t index(std::size_t i, std::size_t j) const {
    if (i > j) std::swap(i, j);
    return i * n_ - i * (i - 1) / 2 + (j - i);
  }

  std::size_t n_ = 0;
  double value_ = 0.0;
  std::vector<double> gradient_;
  std::vector<double> upper_;
};

// ---- arithmetic -----------------------------------------------------------

inline Dual operator+(Dual a, Dual b) { return {a.v + b.v, a.d + b.d}; }
inline Dual operator-(Dual a, Dual b) { return {a.v - b.v, a.d - b.d}; }
inline Dual operator-(Dual a) { return {-a.v, -a.d}; }
inline Dual operator*(Dual a, Dual b) { return {a.v * b.v, a.d * b.v + a.v * b.d}; }
inline Dual operator/(Dual a, Dual b) {
  const double q = a.v / b.v;
  return {q, (a.d - q * b.d) / b.v};
}

inline DirJet operator+(DirJet a, DirJet b) { return {a.v + b.v, a.d1 + b.d1, a.d2 + b.d2}; }
inline DirJet operator-(DirJet a, DirJet b) { return {a.v - b.v, a.d1 - b.d1, a.d2 - b.d2}; }
inline DirJet operator-(DirJet a) { return {-a.v, -a.d1, -a.d2}; }
inline DirJet operator*(DirJet a, DirJet b) {
  return {a.v * b.v, a.d1 * b.v + a.v * b.d1, a.d2 * b.v + 2.0 * a.d1 * b.d1 + a.v * b.d2};
}
inline DirJet operator/(DirJet a, DirJet b) {
  const double q = a.v / b.v;
  const double q1 = (a.d1 - q * b.d1) / b.v;
  const double q2 = (a.d2 - 2.0 * q1 * b.d1 - q * b.d2) / b.v;
  return {q, q1, q2};
}

// Chain rule given f(a), f'(a), f''(a).
inline double chain(double, double f0, double, double) { return f0; }
inline Dual chain(Dual a, double f0, double f1, double) { return {f0, f1 * a.d}; }
inline DirJet chain(DirJet a, double f0, double f1, double f2) {
  return {f0, f1 * a.d1, f2 * a.d1 * a.d1 + f1 * a.d2};
}

inline double value_of(double a) { return a; }
inline double value_of(Dual a) { return a.v; }
inline double value_of(DirJet a) { return a.v; }

}  // namespace canon_hjb
