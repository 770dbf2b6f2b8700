#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

#include "dhym/errors.hpp"

namespace dhym {

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kHalfPi = std::numbers::pi / 2.0;

// Sorted-descending eigenvalue vector of A[phi] at one point. Sorting is done
// at construction so the symmetric-function identities can assume the index
// conventions of the monotone ordering.
class Spectrum {
 public:
  explicit Spectrum(Eigen::VectorXd lambda) : lambda_(std::move(lambda)) {
    if (lambda_.size() == 0) throw InvalidParameter("Spectrum needs at least one eigenvalue");
    for (Eigen::Index i = 0; i < lambda_.size(); ++i) {
      if (!std::isfinite(lambda_[i])) throw InvalidParameter("Spectrum entries must be finite");
    }
    std::sort(lambda_.data(), lambda_.data() + lambda_.size(), std::greater<double>());
  }
  explicit Spectrum(std::initializer_list<double> values)
      : Spectrum(Eigen::Map<const Eigen::VectorXd>(values.begin(),
                                                   static_cast<Eigen::Index>(values.size()))) {}
  explicit Spectrum(std::span<const double> values)
      : Spectrum(Eigen::Map<const Eigen::VectorXd>(values.data(),
                                                   static_cast<Eigen::Index>(values.size()))) {}

  int n() const { return static_cast<int>(lambda_.size()); }
  double operator[](int i) const { return lambda_[i]; }
  const Eigen::VectorXd& values() const { return lambda_; }

 private:
  Eigen::VectorXd lambda_;
};

// Branch-tagged target angle: theta_hat lies in ((k-1)pi/2, k pi/2].
struct BranchedAngle {
  double theta_hat = 0.0;
  int branch_index = 0;

  static BranchedAngle from_angle(double theta_hat) {
    const int k = static_cast<int>(std::ceil(theta_hat / kHalfPi));
    return BranchedAngle{theta_hat, k};
  }
  // Flow-facing branch: strictly inside ((n-1)pi/2, n pi/2).
  static BranchedAngle top_branch(int n, double theta_hat) {
    BranchedAngle b{theta_hat, n};
    if (!b.in_top_branch(n)) {
      throw InvalidBranch("theta_hat = " + std::to_string(theta_hat) +
                          " is not in the top branch ((n-1)pi/2, n pi/2) for n = " +
                          std::to_string(n));
    }
    return b;
  }
  bool in_top_branch(int n) const {
    return theta_hat > (n - 1) * kHalfPi && theta_hat < n * kHalfPi;
  }
};

inline double theta(const Spectrum& s) {
  double acc = 0.0;
  for (int i = 0; i < s.n(); ++i) acc += std::atan(s[i]);
  return acc;
}

// Distance to the boundary of the calibrated strip S; positive inside.
inline double calibration_margin(const Spectrum& s, const BranchedAngle& th) {
  return kHalfPi - std::abs(theta(s) - th.theta_hat);
}

inline double tangent_phase(const Spectrum& s, const BranchedAngle& th) {
  const double t = theta(s);
  const double margin = kHalfPi - std::abs(t - th.theta_hat);
  if (!(margin > 0.0)) throw OutOfCalibratedRange(margin);
  return std::tan(t - th.theta_hat);
}

inline double volume_density(const Spectrum& s) {
  double prod = 1.0;
  for (int i = 0; i < s.n(); ++i) prod *= 1.0 + s[i] * s[i];
  return std::sqrt(prod);
}

struct PhaseEval {
  double theta = 0.0;
  double f = std::numeric_limits<double>::quiet_NaN();  // finite iff in_S
  double v = 1.0;
  bool in_S = false;
};

inline PhaseEval evaluate_phase(const Spectrum& s, const BranchedAngle& th) {
  PhaseEval e;
  e.theta = theta(s);
  e.v = volume_density(s);
  e.in_S = std::abs(e.theta - th.theta_hat) < kHalfPi;
  if (e.in_S) e.f = std::tan(e.theta - th.theta_hat);
  return e;
}

// f_i = (1+f^2)/(1+lambda_i^2); strictly positive on S (ellipticity).
inline Eigen::VectorXd grad_f(const Spectrum& s, const BranchedAngle& th) {
  const double f = tangent_phase(s, th);
  const double w = 1.0 + f * f;
  Eigen::VectorXd g(s.n());
  for (int i = 0; i < s.n(); ++i) g[i] = w / (1.0 + s[i] * s[i]);
  return g;
}

// Hessian of f in lambda: (1+f^2)(2f dtheta (x) dtheta + Hess theta), with
// Hess theta = diag(-2 lambda_i / (1+lambda_i^2)^2). The squared-denominator
// reading is the one the finite-difference oracle confirms.
inline Eigen::MatrixXd hessian_f(const Spectrum& s, const BranchedAngle& th) {
  const double f = tangent_phase(s, th);
  const double w = 1.0 + f * f;
  const int n = s.n();
  Eigen::VectorXd dtheta(n);
  for (int i = 0; i < n; ++i) dtheta[i] = 1.0 / (1.0 + s[i] * s[i]);
  Eigen::MatrixXd h = (2.0 * f * w) * (dtheta * dtheta.transpose());
  for (int i = 0; i < n; ++i) h(i, i) += w * (-2.0 * s[i] * dtheta[i] * dtheta[i]);
  return h;
}

// Dense 4-index container for the second matrix derivative of F at diag(lambda).
class FourthOrderTensor {
 public:
  explicit FourthOrderTensor(int n)
      : n_(n), data_(static_cast<std::size_t>(n) * n * n * n, 0.0) {}
  double& operator()(int i, int j, int r, int s) { return data_[flat(i, j, r, s)]; }
  double operator()(int i, int j, int r, int s) const { return data_[flat(i, j, r, s)]; }
  int dim() const { return n_; }

 private:
  std::size_t flat(int i, int j, int r, int s) const {
    return ((static_cast<std::size_t>(i) * n_ + j) * n_ + r) * n_ + s;
  }
  int n_;
  std::vector<double> data_;
};

struct MatrixDerivatives {
  Eigen::MatrixXd first;    // F^{ij} = delta_ij f_i
  FourthOrderTensor second; // F^{ij,rs}
};

// First and second derivatives of F(A) = f(lambda[A]) at the diagonal matrix
// diag(lambda). Repeated eigenvalues take the analytic limit of the divided
// difference (first-divided-difference calculus for spectral functions).
inline MatrixDerivatives matrix_derivatives_F(const Spectrum& s, const BranchedAngle& th) {
  const int n = s.n();
  const Eigen::VectorXd g = grad_f(s, th);
  const Eigen::MatrixXd h = hessian_f(s, th);
  MatrixDerivatives d{Eigen::MatrixXd::Zero(n, n), FourthOrderTensor(n)};
  for (int i = 0; i < n; ++i) d.first(i, i) = g[i];
  for (int i = 0; i < n; ++i)
    for (int r = 0; r < n; ++r) d.second(i, i, r, r) = h(i, r);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      const double gap = s[i] - s[j];
      const double scale = 1.0 + std::abs(s[i]) + std::abs(s[j]);
      const double dd = std::abs(gap) > 1e-8 * scale ? (g[i] - g[j]) / gap : h(i, i) - h(i, j);
      d.second(i, j, j, i) = dd;
    }
  }
  return d;
}

struct PhaseFlags {
  bool hypercritical = false;
  bool supercritical = false;
  bool almost_calibrated = false;
};

inline PhaseFlags classify(const Spectrum& s, const BranchedAngle& th) {
  const double t = theta(s);
  const int n = s.n();
  return PhaseFlags{t > (n - 1) * kHalfPi, t > (n - 2) * kHalfPi,
                    std::abs(t - th.theta_hat) < kHalfPi};
}

// Solves theta(partial, x) = sigma for the last eigenvalue; absent when the
// residual angle falls outside the arctan range.
inline std::optional<double> level_set_solve(std::span<const double> partial, double sigma) {
  double acc = 0.0;
  for (double v : partial) acc += std::atan(v);
  const double rest = sigma - acc;
  if (!(std::abs(rest) < kHalfPi)) return std::nullopt;
  return std::tan(rest);
}

struct SubsolutionResult {
  bool passes = false;
  Eigen::VectorXd margins;  // per axis: sum_{i != j} arctan(lambda_i) - (theta_hat - pi/2)
};

// Ray-limit reformulation of the boundedness in the C-subsolution definition:
// theta(lambda + s e_j) increases to sum_{i != j} arctan(lambda_i) + pi/2, so
// the intersection with {theta = theta_hat} is bounded iff every such limit
// strictly exceeds theta_hat.
inline SubsolutionResult subsolution_test(const Spectrum& s, const BranchedAngle& th) {
  const int n = s.n();
  const double rhs = th.theta_hat - kHalfPi;
  SubsolutionResult r;
  r.margins.resize(n);
  r.passes = true;
  for (int j = 0; j < n; ++j) {
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
      if (i != j) acc += std::atan(s[i]);
    }
    r.margins[j] = acc - rhs;
    if (!(r.margins[j] > 0.0)) r.passes = false;
  }
  return r;
}

}  // namespace dhym
