#pragma once

// Test-only oracles. These deliberately go through value-level evaluations
// (finite differences, eigensolves of perturbed matrices, brute-force ray
// searches) so they stay independent of the closed-form derivative and
// subsolution paths they are used to check.

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <utility>

#include "dhym/concavity.hpp"
#include "dhym/phase.hpp"

namespace oracle {

using ScalarFn = std::function<double(const Eigen::VectorXd&)>;

inline Eigen::VectorXd fd_gradient(const ScalarFn& f, const Eigen::VectorXd& x) {
  const int n = static_cast<int>(x.size());
  Eigen::VectorXd g(n);
  for (int i = 0; i < n; ++i) {
    const double h = 1e-4 * (1.0 + std::abs(x[i]));
    Eigen::VectorXd xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    g[i] = (f(xp) - f(xm)) / (2.0 * h);
  }
  return g;
}

inline Eigen::MatrixXd fd_hessian(const ScalarFn& f, const Eigen::VectorXd& x) {
  const int n = static_cast<int>(x.size());
  Eigen::MatrixXd hess(n, n);
  const double f0 = f(x);
  for (int i = 0; i < n; ++i) {
    const double hi = 1e-4 * (1.0 + std::abs(x[i]));
    for (int j = i; j < n; ++j) {
      const double hj = 1e-4 * (1.0 + std::abs(x[j]));
      if (i == j) {
        Eigen::VectorXd xp = x, xm = x;
        xp[i] += hi;
        xm[i] -= hi;
        hess(i, i) = (f(xp) - 2.0 * f0 + f(xm)) / (hi * hi);
      } else {
        Eigen::VectorXd xpp = x, xpm = x, xmp = x, xmm = x;
        xpp[i] += hi; xpp[j] += hj;
        xpm[i] += hi; xpm[j] -= hj;
        xmp[i] -= hi; xmp[j] += hj;
        xmm[i] -= hi; xmm[j] -= hj;
        hess(i, j) = hess(j, i) = (f(xpp) - f(xpm) - f(xmp) + f(xmm)) / (4.0 * hi * hj);
      }
    }
  }
  return hess;
}

// f(lambda[A]) evaluated at diag(lambda) + t E via an eigensolve.
inline double matrix_f_value(const Eigen::VectorXd& lambda, const Eigen::MatrixXd& dir, double t,
                             const dhym::BranchedAngle& th) {
  const Eigen::MatrixXd a = Eigen::MatrixXd(lambda.asDiagonal()) + t * dir;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a, Eigen::EigenvaluesOnly);
  Eigen::VectorXd ev = es.eigenvalues();
  return dhym::tangent_phase(dhym::Spectrum(ev), th);
}

// First/second directional finite differences of A -> f(lambda[A]).
inline std::pair<double, double> fd_matrix_directional(const Eigen::VectorXd& lambda,
                                                       const Eigen::MatrixXd& dir,
                                                       const dhym::BranchedAngle& th) {
  const double h = 1e-4 * (1.0 + lambda.cwiseAbs().maxCoeff());
  const double fp = matrix_f_value(lambda, dir, h, th);
  const double fm = matrix_f_value(lambda, dir, -h, th);
  const double f0 = matrix_f_value(lambda, dir, 0.0, th);
  return {(fp - fm) / (2.0 * h), (fp - 2.0 * f0 + fm) / (h * h)};
}

// Brute-force check of the C-subsolution boundedness along the axis rays.
// theta(lambda + s e_j) is strictly increasing in s with a finite limit, so
// the translate set is bounded iff the phase at s = S_max already exceeds
// theta_hat on every axis; when it does and a crossing exists, bisection
// locates the single bounded crossing.
struct RayVerdict {
  bool bounded = false;
  double largest_crossing = 0.0;  // over axes with a crossing
};

inline RayVerdict ray_search(const dhym::Spectrum& s, double theta_hat, double s_max = 1e6) {
  const int n = s.n();
  RayVerdict v;
  v.bounded = true;
  for (int j = 0; j < n; ++j) {
    auto theta_at = [&](double t) {
      double acc = 0.0;
      for (int i = 0; i < n; ++i) acc += std::atan(s[i] + (i == j ? t : 0.0));
      return acc;
    };
    const double far = theta_at(s_max);
    if (!(far > theta_hat)) {
      v.bounded = false;
      continue;
    }
    if (theta_at(0.0) < theta_hat) {
      double lo = 0.0, hi = s_max;
      for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        (theta_at(mid) < theta_hat ? lo : hi) = mid;
      }
      v.largest_crossing = std::max(v.largest_crossing, hi);
    }
  }
  return v;
}

// Deterministic spectrum generator for oracle sweeps: Cauchy entries clipped
// to a moderate box so determinant conditioning stays clean.
inline dhym::Spectrum random_spectrum(dhym::Rng& rng, int n, double clip = 50.0) {
  Eigen::VectorXd lam(n);
  for (int i = 0; i < n; ++i) lam[i] = std::clamp(rng.cauchy(), -clip, clip);
  return dhym::Spectrum(lam);
}

// Mixture generator for the subsolution sweeps: half the draws push every
// arctan toward pi/2 so passing spectra appear at a workable rate; the other
// half stays Cauchy so failures and mixed margins are well represented.
inline dhym::Spectrum subsolution_candidate(dhym::Rng& rng, int n) {
  Eigen::VectorXd lam(n);
  if (rng.uniform01() < 0.5) {
    for (int i = 0; i < n; ++i) lam[i] = std::tan(rng.uniform(1.42, dhym::kHalfPi - 1e-3));
  } else {
    for (int i = 0; i < n; ++i) lam[i] = std::clamp(rng.cauchy(), -50.0, 50.0);
  }
  return dhym::Spectrum(lam);
}

}  // namespace oracle
