#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <complex>
#include <map>
#include <memory>
#include <mutex>
#include <vector>

#include "dhym/torus.hpp"

namespace dhym {

namespace detail {

inline double binomial(int n, int k) {
  double r = 1.0;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

// Shared Bernstein-basis extraction data for a fixed pencil degree n: the
// mixed densities D_j are the coefficients of det(s M + (1-s) Mhat) in the
// basis C(n,j) s^j (1-s)^{n-j}, recovered from n+1 Chebyshev nodes on [0,1].
struct PencilSolver {
  explicit PencilSolver(int n) : n_(n), nodes_(n + 1) {
    Eigen::MatrixXd v(n + 1, n + 1);
    for (int k = 0; k <= n; ++k) {
      const double s = 0.5 * (1.0 + std::cos((2.0 * k + 1.0) * kPi / (2.0 * (n + 1))));
      nodes_[k] = s;
      for (int j = 0; j <= n; ++j) {
        v(k, j) = binomial(n, j) * std::pow(s, j) * std::pow(1.0 - s, n - j);
      }
    }
    lu_.compute(v);
  }

  // All D_j of one pencil at once.
  Eigen::VectorXcd densities(const Eigen::MatrixXcd& mphi, const Eigen::MatrixXcd& mhat) const {
    Eigen::VectorXcd p(n_ + 1);
    for (int k = 0; k <= n_; ++k) {
      const Eigen::MatrixXcd blend = nodes_[k] * mphi + (1.0 - nodes_[k]) * mhat;
      p[k] = blend.determinant();
    }
    const Eigen::VectorXd re = lu_.solve(p.real());
    const Eigen::VectorXd im = lu_.solve(p.imag());
    Eigen::VectorXcd d(n_ + 1);
    for (int j = 0; j <= n_; ++j) d[j] = {re[j], im[j]};
    return d;
  }

  int n_;
  std::vector<double> nodes_;
  Eigen::PartialPivLU<Eigen::MatrixXd> lu_;
};

inline const PencilSolver& pencil_solver(int n) {
  static std::mutex mu;
  static std::map<int, std::unique_ptr<PencilSolver>> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto& slot = cache[n];
  if (!slot) slot = std::make_unique<PencilSolver>(n);
  return *slot;
}

}  // namespace detail

// D_j with det(s Mphi + t Mhat) = sum_j C(n,j) s^j t^{n-j} D_j; the pointwise
// density of the degree-j wedge term.
inline std::complex<double> mixed_density(const Eigen::MatrixXcd& mphi,
                                          const Eigen::MatrixXcd& mhat, int j) {
  const int n = static_cast<int>(mphi.rows());
  if (mhat.rows() != n || mphi.cols() != n || mhat.cols() != n) {
    throw InvalidParameter("mixed_density needs two n x n matrices");
  }
  if (j < 0 || j > n) throw InvalidParameter("mixed_density degree out of range");
  return detail::pencil_solver(n).densities(mphi, mhat)[j];
}

// CY(phi) = 1/(n+1) sum_j integral of phi * D_j(I + iA[phi], I + iB).
inline std::complex<double> calabi_yau(const TorusConfig& cfg, const ScalarField& phi) {
  const HermitianField a = matrix_field(cfg, phi);
  const auto& solver = detail::pencil_solver(cfg.n);
  Eigen::MatrixXcd mhat(cfg.n, cfg.n);
  for (int i = 0; i < cfg.n; ++i)
    for (int j = 0; j < cfg.n; ++j)
      mhat(i, j) = std::complex<double>(i == j ? 1.0 : 0.0, cfg.B(i, j));
  std::vector<std::vector<std::complex<double>>> terms(
      cfg.n + 1, std::vector<std::complex<double>>(a.count));
  parallel_for(a.count, [&](std::size_t p) {
    Eigen::MatrixXcd mphi(cfg.n, cfg.n);
    const double* block = a.at(p);
    for (int i = 0; i < cfg.n; ++i)
      for (int j = 0; j < cfg.n; ++j)
        mphi(i, j) = std::complex<double>(i == j ? 1.0 : 0.0, block[i * cfg.n + j]);
    const Eigen::VectorXcd d = solver.densities(mphi, mhat);
    for (int j = 0; j <= cfg.n; ++j) terms[j][p] = phi.values[p] * d[j];
  });
  std::complex<double> cy(0.0, 0.0);
  for (int j = 0; j <= cfg.n; ++j) {
    cy += quadrature_complex(cfg, std::span<const std::complex<double>>(terms[j]));
  }
  return cy / static_cast<double>(cfg.n + 1);
}

// C = Re(e^{-i theta_hat} CY), J = -Im(e^{-i theta_hat} CY).
inline std::pair<double, double> functionals_CJ(const TorusConfig& cfg, const ScalarField& phi,
                                                const BranchedAngle& th) {
  const std::complex<double> rotated =
      std::exp(std::complex<double>(0.0, -th.theta_hat)) * calabi_yau(cfg, phi);
  return {rotated.real(), -rotated.imag()};
}

// V(phi) = integral of the pointwise volume density.
inline double volume_functional(const TorusConfig& cfg, const ScalarField& phi) {
  const SpectrumField s = eigen_field(matrix_field(cfg, phi));
  ScalarField v;
  v.values.resize(s.count);
  parallel_for(s.count, [&](std::size_t p) {
    double prod = 1.0;
    for (double lam : s.at(p)) prod *= 1.0 + lam * lam;
    v.values[p] = std::sqrt(prod);
  });
  return quadrature(cfg, v);
}

struct FunctionalValues {
  std::complex<double> cy;
  double c_val = 0.0;
  double j_val = 0.0;
  double v_val = 0.0;
};

inline FunctionalValues evaluate_functionals(const TorusConfig& cfg, const ScalarField& phi,
                                             const BranchedAngle& th) {
  FunctionalValues out;
  out.cy = calabi_yau(cfg, phi);
  const std::complex<double> rotated = std::exp(std::complex<double>(0.0, -th.theta_hat)) * out.cy;
  out.c_val = rotated.real();
  out.j_val = -rotated.imag();
  out.v_val = volume_functional(cfg, phi);
  return out;
}

}  // namespace dhym
