#pragma once

#include <Eigen/Dense>
#include <fftw3.h>

#include <cmath>
#include <complex>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <vector>

#include "dhym/parallel.hpp"
#include "dhym/phase.hpp"

namespace dhym {

// Flat torus [0, 2pi)^n sampled on a uniform N^n grid, with the constant
// reference matrix B standing in for the invariant reference form. The flat
// Kahler form is the identity, so A[phi] = B + Hess(phi).
struct TorusConfig {
  int n = 0;
  int N = 0;
  Eigen::MatrixXd B;
  double volume = 0.0;  // (2pi)^n by convention

  static TorusConfig create(int n, int N, const Eigen::MatrixXd& B) {
    if (n < 1 || n > 6) throw InvalidParameter("dimension n must be in [1, 6]");
    if (N < 8 || N % 2 != 0) throw InvalidParameter("grid size N must be even and >= 8");
    if (B.rows() != n || B.cols() != n) throw InvalidParameter("B must be n x n");
    if (!B.allFinite()) throw InvalidParameter("B must be finite");
    if ((B - B.transpose()).cwiseAbs().maxCoeff() > 1e-14) {
      throw InvalidParameter("B must be symmetric to 1e-14");
    }
    TorusConfig cfg;
    cfg.n = n;
    cfg.N = N;
    cfg.B = 0.5 * (B + B.transpose());
    cfg.volume = std::pow(2.0 * kPi, n);
    return cfg;
  }

  std::size_t points() const {
    std::size_t p = 1;
    for (int i = 0; i < n; ++i) p *= static_cast<std::size_t>(N);
    return p;
  }
};

// Periodic real grid function, row-major over the axes.
struct ScalarField {
  std::vector<double> values;
};

inline ScalarField zero_field(const TorusConfig& cfg) { return ScalarField{std::vector<double>(cfg.points(), 0.0)}; }

// Per-point real symmetric n x n matrices, contiguous row-major blocks.
struct HermitianField {
  int n = 0;
  std::size_t count = 0;
  std::vector<double> data;  // count * n * n

  double* at(std::size_t p) { return data.data() + p * n * n; }
  const double* at(std::size_t p) const { return data.data() + p * n * n; }
  Eigen::Map<const Eigen::MatrixXd> matrix(std::size_t p) const {
    return Eigen::Map<const Eigen::MatrixXd>(at(p), n, n);
  }
};

// Per-point sorted-descending eigenvalues.
struct SpectrumField {
  int n = 0;
  std::size_t count = 0;
  std::vector<double> lambdas;  // count * n

  std::span<const double> at(std::size_t p) const {
    return std::span<const double>(lambdas.data() + p * n, static_cast<std::size_t>(n));
  }
};

struct ZInvariant {
  std::complex<double> z;
  BranchedAngle theta_hat;
  double modulus = 0.0;
};

// FFT workspace for one (n, N) pair: spectral Hessians and the 2/3-rule
// de-aliasing filter. Plans are FFTW_ESTIMATE for deterministic algorithm
// choice; the mutex serializes buffer use across threads.
class SpectralEngine {
 public:
  SpectralEngine(int n, int N) : n_(n), N_(N) {
    count_ = 1;
    for (int i = 0; i < n_; ++i) count_ *= static_cast<std::size_t>(N_);
    buf_a_ = fftw_alloc_complex(count_);
    buf_b_ = fftw_alloc_complex(count_);
    spectrum_.resize(count_);
    std::vector<int> dims(static_cast<std::size_t>(n_), N_);
    fwd_ = fftw_plan_dft(n_, dims.data(), buf_a_, buf_b_, FFTW_FORWARD, FFTW_ESTIMATE);
    bwd_ = fftw_plan_dft(n_, dims.data(), buf_a_, buf_b_, FFTW_BACKWARD, FFTW_ESTIMATE);
    freq_.resize(static_cast<std::size_t>(N_));
    for (int i = 0; i < N_; ++i) freq_[i] = i < N_ / 2 ? i : i - N_;
  }
  ~SpectralEngine() {
    fftw_destroy_plan(fwd_);
    fftw_destroy_plan(bwd_);
    fftw_free(buf_a_);
    fftw_free(buf_b_);
  }
  SpectralEngine(const SpectralEngine&) = delete;
  SpectralEngine& operator=(const SpectralEngine&) = delete;

  int dim() const { return n_; }
  int grid() const { return N_; }
  std::size_t points() const { return count_; }

  // Fills out[pair_index(a,b)] with d^2 phi / dx_a dx_b, spectrally exact for
  // band-limited phi. Mixed derivatives zero the Nyquist mode (product of two
  // odd-order factors); pure second derivatives keep -k^2 at Nyquist.
  void hessian_components(std::span<const double> phi,
                          std::vector<std::vector<double>>& out) {
    std::lock_guard<std::mutex> lock(mu_);
    load_forward(phi);
    const double inv = 1.0 / static_cast<double>(count_);
    std::vector<int> idx(static_cast<std::size_t>(n_), 0);
    for (int a = 0; a < n_; ++a) {
      for (int b = a; b < n_; ++b) {
        auto& comp = out[pair_index(a, b)];
        comp.resize(count_);
        std::fill(idx.begin(), idx.end(), 0);
        for (std::size_t p = 0; p < count_; ++p) {
          const int ka = freq_[idx[a]];
          const int kb = freq_[idx[b]];
          double mult;
          if (a == b) {
            mult = -static_cast<double>(ka) * ka;
          } else if (std::abs(ka) * 2 == N_ || std::abs(kb) * 2 == N_) {
            mult = 0.0;
          } else {
            mult = -static_cast<double>(ka) * kb;
          }
          const std::complex<double> v = spectrum_[p] * (mult * inv);
          buf_a_[p][0] = v.real();
          buf_a_[p][1] = v.imag();
          advance(idx);
        }
        fftw_execute(bwd_);
        for (std::size_t p = 0; p < count_; ++p) comp[p] = buf_b_[p][0];
      }
    }
  }

  // Zeroes every mode with some axis frequency above floor(N/3) in place.
  void dealias_two_thirds(std::vector<double>& phi) {
    std::lock_guard<std::mutex> lock(mu_);
    load_forward(phi);
    const int keep = N_ / 3;
    const double inv = 1.0 / static_cast<double>(count_);
    std::vector<int> idx(static_cast<std::size_t>(n_), 0);
    for (std::size_t p = 0; p < count_; ++p) {
      bool ok = true;
      for (int a = 0; a < n_; ++a) {
        if (std::abs(freq_[idx[a]]) > keep) {
          ok = false;
          break;
        }
      }
      const std::complex<double> v = ok ? spectrum_[p] * inv : std::complex<double>(0.0, 0.0);
      buf_a_[p][0] = v.real();
      buf_a_[p][1] = v.imag();
      advance(idx);
    }
    fftw_execute(bwd_);
    for (std::size_t p = 0; p < count_; ++p) phi[p] = buf_b_[p][0];
  }

  int pair_index(int a, int b) const {  // upper-triangular enumeration, a <= b
    return a * n_ - a * (a - 1) / 2 + (b - a);
  }
  int pair_count() const { return n_ * (n_ + 1) / 2; }

 private:
  void load_forward(std::span<const double> phi) {
    if (phi.size() != count_) throw InvalidParameter("field size does not match grid");
    for (std::size_t p = 0; p < count_; ++p) {
      buf_a_[p][0] = phi[p];
      buf_a_[p][1] = 0.0;
    }
    fftw_execute(fwd_);
    for (std::size_t p = 0; p < count_; ++p) spectrum_[p] = {buf_b_[p][0], buf_b_[p][1]};
  }
  void advance(std::vector<int>& idx) const {  // row-major odometer
    for (int a = n_ - 1; a >= 0; --a) {
      if (++idx[a] < N_) return;
      idx[a] = 0;
    }
  }

  int n_, N_;
  std::size_t count_;
  fftw_complex* buf_a_ = nullptr;
  fftw_complex* buf_b_ = nullptr;
  fftw_plan fwd_ = nullptr;
  fftw_plan bwd_ = nullptr;
  std::vector<std::complex<double>> spectrum_;
  std::vector<int> freq_;
  std::mutex mu_;
};

namespace detail {

inline SpectralEngine& engine_for(int n, int N) {
  static std::mutex mu;
  static std::map<std::pair<int, int>, std::unique_ptr<SpectralEngine>> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto& slot = cache[{n, N}];
  if (!slot) slot = std::make_unique<SpectralEngine>(n, N);
  return *slot;
}

// Descending eigenvalues of one symmetric block.
inline void point_eigenvalues(const double* a, int n, double* lam) {
  if (n == 1) {
    lam[0] = a[0];
    return;
  }
  if (n == 2) {
    const double mean = 0.5 * (a[0] + a[3]);
    const double disc = std::hypot(0.5 * (a[0] - a[3]), a[1]);
    lam[0] = mean + disc;
    lam[1] = mean - disc;
    return;
  }
  Eigen::Map<const Eigen::MatrixXd> m(a, n, n);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(m, Eigen::EigenvaluesOnly);
  for (int i = 0; i < n; ++i) lam[i] = solver.eigenvalues()[n - 1 - i];
}

inline std::complex<double> det_I_plus_iA(const double* a, int n) {
  if (n == 1) return {1.0, a[0]};
  if (n == 2) {
    const double tr = a[0] + a[3];
    const double det = a[0] * a[3] - a[1] * a[2];
    return {1.0 - det, tr};
  }
  Eigen::MatrixXcd m(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) m(i, j) = std::complex<double>(i == j ? 1.0 : 0.0, a[i * n + j]);
  return m.determinant();
}

}  // namespace detail

// Per-point Hessian of phi by frequency-space differentiation.
inline HermitianField hessian_field(const TorusConfig& cfg, const ScalarField& phi) {
  auto& eng = detail::engine_for(cfg.n, cfg.N);
  std::vector<std::vector<double>> comps(eng.pair_count());
  eng.hessian_components(phi.values, comps);
  HermitianField h;
  h.n = cfg.n;
  h.count = cfg.points();
  h.data.assign(h.count * cfg.n * cfg.n, 0.0);
  parallel_for(h.count, [&](std::size_t p) {
    double* block = h.data.data() + p * cfg.n * cfg.n;
    for (int a = 0; a < cfg.n; ++a) {
      for (int b = a; b < cfg.n; ++b) {
        const double v = comps[eng.pair_index(a, b)][p];
        block[a * cfg.n + b] = v;
        block[b * cfg.n + a] = v;
      }
    }
  });
  return h;
}

// A[phi] = B + Hess(phi) pointwise (invariant reduction, alpha = identity).
inline HermitianField matrix_field(const TorusConfig& cfg, const ScalarField& phi) {
  HermitianField h = hessian_field(cfg, phi);
  parallel_for(h.count, [&](std::size_t p) {
    double* block = h.data.data() + p * cfg.n * cfg.n;
    for (int a = 0; a < cfg.n; ++a)
      for (int b = 0; b < cfg.n; ++b) block[a * cfg.n + b] += cfg.B(a, b);
  });
  return h;
}

inline SpectrumField eigen_field(const HermitianField& field) {
  SpectrumField s;
  s.n = field.n;
  s.count = field.count;
  s.lambdas.resize(field.count * field.n);
  parallel_for(field.count, [&](std::size_t p) {
    detail::point_eigenvalues(field.at(p), field.n, s.lambdas.data() + p * field.n);
  });
  return s;
}

// Discrete integral against alpha^n: volume times the grid mean (trapezoid on
// a periodic uniform grid), with a fixed-order pairwise reduction.
inline double quadrature(const TorusConfig& cfg, const ScalarField& field) {
  if (field.values.size() != cfg.points()) throw InvalidParameter("field size does not match grid");
  return cfg.volume * pairwise_mean(std::span<const double>(field.values));
}

inline std::complex<double> quadrature_complex(const TorusConfig& cfg,
                                               std::span<const std::complex<double>> values) {
  if (values.size() != cfg.points()) throw InvalidParameter("field size does not match grid");
  return cfg.volume * pairwise_mean(values);
}

// Raw complex Z = integral of det(I + i A[phi]), without the branch lift.
inline std::complex<double> compute_Z_raw(const TorusConfig& cfg, const ScalarField& phi) {
  const HermitianField a = matrix_field(cfg, phi);
  std::vector<std::complex<double>> dets(a.count);
  parallel_for(a.count, [&](std::size_t p) { dets[p] = detail::det_I_plus_iA(a.at(p), a.n); });
  return cfg.volume * pairwise_mean(std::span<const std::complex<double>>(dets));
}

// Z = integral of det(I + i A[phi]); branch-lifts arg Z into
// ((k-1)pi/2, k pi/2) for the requested branch (default k = n).
inline ZInvariant compute_Z(const TorusConfig& cfg, const ScalarField& phi, int branch = 0) {
  const int k = branch == 0 ? cfg.n : branch;
  const std::complex<double> z = compute_Z_raw(cfg, phi);
  const double mod = std::abs(z);
  if (mod < 1e-12) throw ZeroInvariant();
  const double principal = std::arg(z);
  const double lo = (k - 1) * kHalfPi;
  const double hi = k * kHalfPi;
  const double base = std::round((0.5 * (lo + hi) - principal) / (2.0 * kPi));
  for (int dm = -1; dm <= 1; ++dm) {
    const double lifted = principal + 2.0 * kPi * (base + dm);
    if (lifted > lo && lifted < hi) {
      return ZInvariant{z, BranchedAngle{lifted, k}, mod};
    }
  }
  throw BranchUnavailable(principal, k);
}

}  // namespace dhym
