#pragma once

#include <Eigen/Dense>

namespace canon_hjb {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

inline Mat sym_part(const Mat& a) { return 0.5 * (a + a.transpose()); }

/// Ascending eigenvalues of a symmetric matrix.
inline Vec sym_eigenvalues(const Mat& a) {
  if (a.rows() == 1) return Vec::Constant(1, a(0, 0));
  Eigen::SelfAdjointEigenSolver<Mat> solver(a, Eigen::EigenvaluesOnly);
  return solver.eigenvalues();
}

inline double lambda_min(const Mat& a) { return sym_eigenvalues(a)(0); }
inline double lambda_max(const Mat& a) {
  const Vec e = sym_eigenvalues(a);
  return e(e.size() - 1);
}
inline double spectral_norm_sym(const Mat& a) {
  const Vec e = sym_eigenvalues(a);
  return std::max(std::abs(e(0)), std::abs(e(e.size() - 1)));
}

}  // namespace canon_hjb
