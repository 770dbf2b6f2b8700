#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include "dhym/phase.hpp"

namespace dhym {

// Deterministic sampling helper; mt19937_64 has a standard-specified sequence
// and the uniform/cauchy maps below avoid distribution-class variance across
// standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}
  double uniform01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }
  double cauchy() { return std::tan(kPi * (uniform01() - 0.5)); }
  std::uint64_t raw() { return gen_(); }

 private:
  std::mt19937_64 gen_;
};

// T(lambda) = tan((n-1)pi/2 - theta(lambda)); the comparison scalar of the
// concavity proof. Poles of the outer tangent are rejected.
inline double build_T(const Spectrum& s) {
  const double x = (s.n() - 1) * kHalfPi - theta(s);
  if (std::abs(std::remainder(x - kHalfPi, kPi)) < 1e-12) throw TangentPole();
  return std::tan(x);
}

// M = ((T + delta_ij lambda_i) / ((1+lambda_i^2)(1+lambda_j^2))); positive
// semidefinite exactly where the tan-concavity bound needs it.
inline Eigen::MatrixXd build_M(const Spectrum& s) {
  const double T = build_T(s);
  const int n = s.n();
  Eigen::MatrixXd m(n, n);
  for (int i = 0; i < n; ++i) {
    const double wi = 1.0 + s[i] * s[i];
    for (int j = 0; j < n; ++j) {
      const double wj = 1.0 + s[j] * s[j];
      m(i, j) = ((i == j ? T + s[i] : T)) / (wi * wj);
    }
  }
  return m;
}

struct MinorIdentityReport {
  std::vector<int> subset;
  double det_direct = 0.0;
  double det_formula = 0.0;
  double relative_error = 0.0;
};

// Checks det Mtilde_I = prod_{i in I} lambda_i * (1 + sum_{i in I} T/lambda_i)
// against a direct determinant, where Mtilde = (T + delta_ij lambda_i).
inline MinorIdentityReport minor_identity_check(const Spectrum& s, const std::vector<int>& subset) {
  if (subset.empty()) throw InvalidParameter("minor_identity_check needs a nonempty subset");
  for (int i : subset) {
    if (i < 0 || i >= s.n()) throw InvalidParameter("subset index out of range");
    if (std::abs(s[i]) < 1e-14) throw ZeroEigenvalue(i);
  }
  const double T = build_T(s);
  const int m = static_cast<int>(subset.size());
  Eigen::MatrixXd mt(m, m);
  for (int a = 0; a < m; ++a)
    for (int b = 0; b < m; ++b) mt(a, b) = T + (a == b ? s[subset[a]] : 0.0);
  MinorIdentityReport rep;
  rep.subset = subset;
  rep.det_direct = mt.determinant();
  double prod = 1.0, invsum = 0.0;
  for (int i : subset) {
    prod *= s[i];
    invsum += T / s[i];
  }
  rep.det_formula = prod * (1.0 + invsum);
  rep.relative_error = std::abs(rep.det_direct - rep.det_formula) / (1.0 + std::abs(rep.det_direct));
  return rep;
}

struct ConcavityReport {
  long samples = 0;
  double worst_hessian_eig = -std::numeric_limits<double>::infinity();  // scaled by 1+||H||_F
  std::optional<Spectrum> worst_sample;
  bool passed = false;
  long case1_samples = 0;  // theta >= (n-1)pi/2
  long case2_samples = 0;  // theta_hat - pi/2 < theta < (n-1)pi/2
};

namespace detail {

// Draws a point of S: theta* uniform in the feasible phase window, the first
// n-1 eigenvalues heavy-tailed (Cauchy clipped to |.| <= 1e3), the last one
// solved on the level set. Infeasible draws return nullopt.
inline std::optional<Spectrum> sample_strip_point(int n, double theta_hat, Rng& rng) {
  constexpr double eps = 1e-3;
  const double lo = std::max(theta_hat - kHalfPi, -n * kHalfPi) + eps;
  const double hi = std::min(theta_hat + kHalfPi, n * kHalfPi) - eps;
  const double target = rng.uniform(lo, hi);
  std::vector<double> lam(static_cast<std::size_t>(n));
  for (int i = 0; i < n - 1; ++i) lam[i] = std::clamp(rng.cauchy(), -1e3, 1e3);
  const auto last = level_set_solve(std::span<const double>(lam.data(), n - 1), target);
  if (!last) return std::nullopt;
  lam[n - 1] = *last;
  return Spectrum(std::span<const double>(lam));
}

inline void check_sampler_window(int n, double theta_hat) {
  constexpr double eps = 1e-3;
  const double lo = std::max(theta_hat - kHalfPi, -n * kHalfPi) + eps;
  const double hi = std::min(theta_hat + kHalfPi, n * kHalfPi) - eps;
  if (!(lo < hi)) throw InvalidParameter("empty phase window for theta_hat");
}

}  // namespace detail

// Monte-Carlo certification of tan-concavity on S for a top-branch theta_hat:
// records the worst largest Hessian eigenvalue normalized by 1 + ||H||_F.
inline ConcavityReport certify_concavity(int n, double theta_hat, long sample_count,
                                         std::uint64_t seed) {
  if (sample_count < 1) throw InvalidParameter("sample_count must be >= 1");
  const BranchedAngle th = BranchedAngle::top_branch(n, theta_hat);
  detail::check_sampler_window(n, theta_hat);
  Rng rng(seed);
  ConcavityReport rep;
  const double case_split = (n - 1) * kHalfPi;
  long attempts_left = 1000 * sample_count;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver;
  while (rep.samples < sample_count && attempts_left-- > 0) {
    const auto s = detail::sample_strip_point(n, theta_hat, rng);
    if (!s) continue;
    const Eigen::MatrixXd h = hessian_f(*s, th);
    solver.compute(h, Eigen::EigenvaluesOnly);
    const double scaled = solver.eigenvalues().maxCoeff() / (1.0 + h.norm());
    ++rep.samples;
    (theta(*s) >= case_split ? rep.case1_samples : rep.case2_samples)++;
    if (scaled > rep.worst_hessian_eig) {
      rep.worst_hessian_eig = scaled;
      rep.worst_sample = *s;
    }
  }
  if (rep.samples < sample_count) throw InvalidParameter("sampler starved; phase window too thin");
  rep.passed = rep.worst_hessian_eig <= 1e-9;
  return rep;
}

// Random search for a concavity violation; a witness is a point of S whose
// Hessian has an eigenvalue above 1e-6. Intended for theta_hat below the top
// branch; above it the search comes back empty. Total on all inputs.
inline std::optional<Spectrum> find_nonconcavity(int n, double theta_hat_below, long budget,
                                                 std::uint64_t seed) {
  constexpr double eps = 1e-3;
  if (!(std::max(theta_hat_below - kHalfPi, -n * kHalfPi) + eps <
        std::min(theta_hat_below + kHalfPi, n * kHalfPi) - eps)) {
    return std::nullopt;  // S is empty for this angle
  }
  const BranchedAngle th = BranchedAngle::from_angle(theta_hat_below);
  Rng rng(seed);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver;
  long examined = 0;
  long attempts_left = budget <= 0 ? 0 : 1000 * budget;
  while (examined < budget && attempts_left-- > 0) {
    const auto s = detail::sample_strip_point(n, theta_hat_below, rng);
    if (!s) continue;
    ++examined;
    const Eigen::MatrixXd h = hessian_f(*s, th);
    solver.compute(h, Eigen::EigenvaluesOnly);
    if (solver.eigenvalues().maxCoeff() > 1e-6) return s;
  }
  return std::nullopt;
}

}  // namespace dhym
