#pragma once

#include <cmath>
#include <complex>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "dhym/functionals.hpp"
#include "dhym/torus.hpp"

namespace dhym {

enum class Scheme { TLPF, LBMCF };

inline const char* scheme_name(Scheme s) { return s == Scheme::TLPF ? "TLPF" : "LBMCF"; }

struct FlowState {
  ScalarField phi;
  double t = 0.0;
  long step = 0;
  double dt_last = 0.0;
};

struct DiagnosticsRow {
  double t = 0.0;
  double c_val = 0.0;
  double j_val = 0.0;
  double v_val = 0.0;
  double residual = 0.0;   // sup |tan(Theta - theta_hat)|
  double theta_min = 0.0;
  double theta_max = 0.0;
  double margin = 0.0;     // min over grid of pi/2 - |Theta - theta_hat|
  double z_drift = 0.0;    // relative |Z(phi_t) - Z(phi_0)|
};

struct RunSummary {
  bool converged = false;
  double t_final = 0.0;
  double residual_final = 0.0;
  double j_total_drop = 0.0;
  double c_drift = 0.0;      // max over recorded rows of |C - C0| / (1 + |C0|)
  double decay_rate = 0.0;   // fitted C2 from log-residual regression, final half
  double decay_r2 = 0.0;
  double osc_phi_max = 0.0;  // Harnack monitor: largest oscillation of phi seen
  std::vector<std::string> violations;
};

struct RunOptions {
  Scheme scheme = Scheme::TLPF;
  double stop_tol = 1e-8;
  double t_max = 1e4;
  double safety = 0.8;
  long record_every = 50;
};

struct FieldMode {
  std::vector<int> freq;
  double amplitude = 0.0;
  double phase_shift = 0.0;
};

// phi = sum of amplitude * cos(k . x + shift); rejects modes the grid cannot
// represent below Nyquist.
inline ScalarField build_initial_field(const TorusConfig& cfg, const std::vector<FieldMode>& modes) {
  for (const auto& m : modes) {
    if (static_cast<int>(m.freq.size()) != cfg.n) {
      throw InvalidParameter("mode frequency vector must have length n");
    }
    for (int k : m.freq) {
      if (std::abs(k) >= cfg.N / 2) throw InvalidParameter("mode frequency at or above Nyquist");
    }
    if (!std::isfinite(m.amplitude) || !std::isfinite(m.phase_shift)) {
      throw InvalidParameter("mode amplitude/phase must be finite");
    }
  }
  ScalarField phi = zero_field(cfg);
  const std::size_t count = cfg.points();
  parallel_for(count, [&](std::size_t p) {
    std::size_t rem = p;
    int idx[8];
    for (int a = cfg.n - 1; a >= 0; --a) {
      idx[a] = static_cast<int>(rem % cfg.N);
      rem /= cfg.N;
    }
    double v = 0.0;
    for (const auto& m : modes) {
      long acc = 0;
      for (int a = 0; a < cfg.n; ++a) acc += static_cast<long>(m.freq[a]) * idx[a];
      v += m.amplitude * std::cos(2.0 * kPi * static_cast<double>(acc) / cfg.N + m.phase_shift);
    }
    phi.values[p] = v;
  });
  return phi;
}

// Grid points where |Theta - theta_hat| >= pi/2; empty means phi lies in H.
inline std::vector<std::size_t> almost_calibrated_violations(const TorusConfig& cfg,
                                                             const ScalarField& phi,
                                                             const BranchedAngle& th) {
  const SpectrumField s = eigen_field(matrix_field(cfg, phi));
  std::vector<std::size_t> bad;
  for (std::size_t p = 0; p < s.count; ++p) {
    double t = 0.0;
    for (double lam : s.at(p)) t += std::atan(lam);
    if (!(std::abs(t - th.theta_hat) < kHalfPi)) bad.push_back(p);
  }
  return bad;
}

namespace detail {

struct StageStats {
  double theta_min = std::numeric_limits<double>::infinity();
  double theta_max = -std::numeric_limits<double>::infinity();
  double min_margin = std::numeric_limits<double>::infinity();
  double max_sum_f = 0.0;  // max over grid of trace of the linearized diffusion
  double sup_rhs = 0.0;    // sup |tan(Theta - theta_hat)|; inf once outside S
  std::size_t first_exit = SIZE_MAX;  // lowest grid index with margin <= 0
};

// One RHS evaluation: fills rhs and the stage statistics in a single pass
// over the grid. For n = 2 the phase comes from arg det(I + iA) directly;
// theta lies in (-pi, pi) there, so the principal value is exact.
class FlowEngine {
 public:
  FlowEngine(const TorusConfig& cfg, const BranchedAngle& th, Scheme scheme)
      : cfg_(cfg), th_(th), scheme_(scheme), eng_(engine_for(cfg.n, cfg.N)),
        count_(cfg.points()), comps_(eng_.pair_count()) {}

  const TorusConfig& config() const { return cfg_; }

  StageStats eval(const std::vector<double>& phi, std::vector<double>& rhs, bool throw_on_exit) {
    eng_.hessian_components(std::span<const double>(phi), comps_);
    rhs.resize(count_);
    const std::size_t shards = plan_shards(count_);
    std::vector<StageStats> parts(shards);
    if (cfg_.n == 2) {
      const double b11 = cfg_.B(0, 0), b12 = cfg_.B(0, 1), b22 = cfg_.B(1, 1);
      const auto& h11 = comps_[0];
      const auto& h12 = comps_[1];
      const auto& h22 = comps_[2];
      parallel_blocks(count_, shards, [&](std::size_t lo, std::size_t hi, std::size_t sh) {
        StageStats st;
        for (std::size_t p = lo; p < hi; ++p) {
          const double a = b11 + h11[p];
          const double b = b12 + h12[p];
          const double c = b22 + h22[p];
          const double tr = a + c;
          const double det = a * c - b * b;
          const double theta_p = std::atan2(tr, 1.0 - det);
          const double sum_inv = (2.0 + a * a + 2.0 * b * b + c * c) /
                                 ((1.0 - det) * (1.0 - det) + tr * tr);
          accumulate(st, p, theta_p, sum_inv, rhs);
        }
        parts[sh] = st;
      });
    } else {
      parallel_blocks(count_, shards, [&](std::size_t lo, std::size_t hi, std::size_t sh) {
        StageStats st;
        double block[36];
        double lam[6];
        for (std::size_t p = lo; p < hi; ++p) {
          for (int a = 0; a < cfg_.n; ++a) {
            for (int b = a; b < cfg_.n; ++b) {
              const double v = cfg_.B(a, b) + comps_[eng_.pair_index(a, b)][p];
              block[a * cfg_.n + b] = v;
              block[b * cfg_.n + a] = v;
            }
          }
          point_eigenvalues(block, cfg_.n, lam);
          double theta_p = 0.0, sum_inv = 0.0;
          for (int i = 0; i < cfg_.n; ++i) {
            theta_p += std::atan(lam[i]);
            sum_inv += 1.0 / (1.0 + lam[i] * lam[i]);
          }
          accumulate(st, p, theta_p, sum_inv, rhs);
        }
        parts[sh] = st;
      });
    }
    StageStats total;
    for (const auto& st : parts) {
      total.theta_min = std::min(total.theta_min, st.theta_min);
      total.theta_max = std::max(total.theta_max, st.theta_max);
      if (st.min_margin < total.min_margin) total.min_margin = st.min_margin;
      total.max_sum_f = std::max(total.max_sum_f, st.max_sum_f);
      total.sup_rhs = std::max(total.sup_rhs, st.sup_rhs);
      total.first_exit = std::min(total.first_exit, st.first_exit);
    }
    if (throw_on_exit && !(total.min_margin > 0.0)) {
      throw LeftCalibratedRange(total.first_exit, total.min_margin);
    }
    return total;
  }

  // Classical RK4 update from a precomputed first stage, then the 2/3-rule
  // spectral truncation of the new potential.
  void advance(FlowState& state, double dt, const std::vector<double>& k1) {
    const bool strict = scheme_ == Scheme::TLPF;
    stage_.resize(count_);
    auto blend = [&](const std::vector<double>& k, double coeff) {
      for (std::size_t p = 0; p < count_; ++p) stage_[p] = state.phi.values[p] + coeff * k[p];
    };
    blend(k1, 0.5 * dt);
    eval(stage_, k2_, strict);
    blend(k2_, 0.5 * dt);
    eval(stage_, k3_, strict);
    blend(k3_, dt);
    eval(stage_, k4_, strict);
    const double w = dt / 6.0;
    for (std::size_t p = 0; p < count_; ++p) {
      state.phi.values[p] += w * (k1[p] + 2.0 * k2_[p] + 2.0 * k3_[p] + k4_[p]);
    }
    eng_.dealias_two_thirds(state.phi.values);
    state.t += dt;
    state.step += 1;
    state.dt_last = dt;
  }

 private:
  void accumulate(StageStats& st, std::size_t p, double theta_p, double sum_inv,
                  std::vector<double>& rhs) const {
    st.theta_min = std::min(st.theta_min, theta_p);
    st.theta_max = std::max(st.theta_max, theta_p);
    const double d = theta_p - th_.theta_hat;
    const double margin = kHalfPi - std::abs(d);
    if (margin < st.min_margin) st.min_margin = margin;
    if (margin > 0.0) {
      const double f = std::tan(d);
      st.sup_rhs = std::max(st.sup_rhs, std::abs(f));
      st.max_sum_f = std::max(st.max_sum_f, (1.0 + f * f) * sum_inv);
      rhs[p] = scheme_ == Scheme::TLPF ? f : d;
    } else {
      st.sup_rhs = std::numeric_limits<double>::infinity();
      st.max_sum_f = std::numeric_limits<double>::infinity();
      if (p < st.first_exit) st.first_exit = p;
      rhs[p] = scheme_ == Scheme::TLPF ? std::numeric_limits<double>::quiet_NaN() : d;
    }
  }

  const TorusConfig& cfg_;
  BranchedAngle th_;
  Scheme scheme_;
  SpectralEngine& eng_;
  std::size_t count_;
  std::vector<std::vector<double>> comps_;
  std::vector<double> stage_, k2_, k3_, k4_;
};

}  // namespace detail

// Pointwise tangent phase of the matrix field; the TLPF velocity.
inline ScalarField tlpf_rhs(const TorusConfig& cfg, const ScalarField& phi,
                            const BranchedAngle& th) {
  detail::FlowEngine engine(cfg, th, Scheme::TLPF);
  ScalarField out;
  engine.eval(phi.values, out.values, /*throw_on_exit=*/true);
  return out;
}

// Pointwise Theta - theta_hat; the comparison flow's velocity. Total.
inline ScalarField lbmcf_rhs(const TorusConfig& cfg, const ScalarField& phi,
                             const BranchedAngle& th) {
  detail::FlowEngine engine(cfg, th, Scheme::LBMCF);
  ScalarField out;
  engine.eval(phi.values, out.values, /*throw_on_exit=*/false);
  return out;
}

// Explicit-scheme step bound: dt = safety / (k_max^2 max_x sum_i f_i), with
// k_max = N/2 and sum_i f_i the trace of the linearized diffusion.
inline double cfl_dt(const TorusConfig& cfg, const ScalarField& phi, const BranchedAngle& th,
                     double safety = 0.8) {
  if (!(safety > 0.0) || !std::isfinite(safety)) {
    throw InvalidParameter("cfl safety factor must be positive");
  }
  detail::FlowEngine engine(cfg, th, Scheme::TLPF);
  std::vector<double> scratch;
  const auto stats = engine.eval(phi.values, scratch, /*throw_on_exit=*/false);
  if (!(stats.min_margin > 0.0)) throw OutOfCalibratedRange(stats.min_margin);
  const double kmax = cfg.N / 2;
  return safety / (kmax * kmax * stats.max_sum_f);
}

// One RK4 step; dt should come from cfl_dt. TLPF stages must stay in S.
inline FlowState step_rk4(const TorusConfig& cfg, const FlowState& state, const BranchedAngle& th,
                          Scheme scheme, double dt) {
  if (!(dt > 0.0) || !std::isfinite(dt)) throw InvalidParameter("dt must be positive");
  detail::FlowEngine engine(cfg, th, scheme);
  std::vector<double> k1;
  engine.eval(state.phi.values, k1, scheme == Scheme::TLPF);
  FlowState next = state;
  engine.advance(next, dt, k1);
  return next;
}

namespace detail {

struct DiagnosticsSample {
  DiagnosticsRow row;
  double lambda_n_min = 0.0;
  double f_trace_min = 0.0;
  double f_trace_max = 0.0;
  std::complex<double> z_raw;
};

inline DiagnosticsSample compute_diagnostics(const TorusConfig& cfg, const ScalarField& phi,
                                             const BranchedAngle& th, double t,
                                             std::complex<double> z0) {
  DiagnosticsSample d;
  d.row.t = t;
  const FunctionalValues fv = evaluate_functionals(cfg, phi, th);
  d.row.c_val = fv.c_val;
  d.row.j_val = fv.j_val;
  d.row.v_val = fv.v_val;
  const SpectrumField s = eigen_field(matrix_field(cfg, phi));
  double tmin = std::numeric_limits<double>::infinity();
  double tmax = -tmin;
  double margin = std::numeric_limits<double>::infinity();
  double sup_rhs = 0.0;
  double lam_min = std::numeric_limits<double>::infinity();
  double fmin = std::numeric_limits<double>::infinity();
  double fmax = 0.0;
  for (std::size_t p = 0; p < s.count; ++p) {
    double theta_p = 0.0, sum_inv = 0.0;
    const auto lam = s.at(p);
    for (double x : lam) {
      theta_p += std::atan(x);
      sum_inv += 1.0 / (1.0 + x * x);
    }
    lam_min = std::min(lam_min, lam[lam.size() - 1]);
    tmin = std::min(tmin, theta_p);
    tmax = std::max(tmax, theta_p);
    const double dd = theta_p - th.theta_hat;
    const double m = kHalfPi - std::abs(dd);
    margin = std::min(margin, m);
    if (m > 0.0) {
      const double f = std::tan(dd);
      sup_rhs = std::max(sup_rhs, std::abs(f));
      const double trace = (1.0 + f * f) * sum_inv;
      fmin = std::min(fmin, trace);
      fmax = std::max(fmax, trace);
    } else {
      sup_rhs = std::numeric_limits<double>::infinity();
      fmax = std::numeric_limits<double>::infinity();
    }
  }
  d.row.residual = sup_rhs;
  d.row.theta_min = tmin;
  d.row.theta_max = tmax;
  d.row.margin = margin;
  d.z_raw = compute_Z_raw(cfg, phi);
  d.row.z_drift = std::abs(d.z_raw - z0) / std::abs(z0);
  d.lambda_n_min = lam_min;
  d.f_trace_min = fmin;
  d.f_trace_max = fmax;
  return d;
}

inline void fit_decay(const std::vector<DiagnosticsRow>& rows, RunSummary& summary) {
  if (rows.empty()) return;
  const double t_half = rows.back().t / 2.0;
  std::vector<double> xs, ys;
  for (const auto& r : rows) {
    if (r.t >= t_half && r.residual > 0.0 && std::isfinite(r.residual)) {
      xs.push_back(r.t);
      ys.push_back(std::log(r.residual));
    }
  }
  if (xs.size() < 3) return;
  const double n = static_cast<double>(xs.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sx += xs[i];
    sy += ys[i];
    sxx += xs[i] * xs[i];
    sxy += xs[i] * ys[i];
    syy += ys[i] * ys[i];
  }
  const double varx = sxx - sx * sx / n;
  const double vary = syy - sy * sy / n;
  const double cov = sxy - sx * sy / n;
  if (varx <= 0.0) return;
  const double slope = cov / varx;
  summary.decay_rate = -slope;
  summary.decay_r2 = vary > 0.0 ? (cov * cov) / (varx * vary) : 1.0;
}

}  // namespace detail

using RecordCallback = std::function<void(const FlowState&, const DiagnosticsRow&)>;

// Time integration with monotonicity/preservation monitors. Stops when the
// residual sup|tan(Theta - theta_hat)| falls to stop_tol (converged) or at
// t_max. A mid-run exit from the calibrated strip aborts with the partial
// trajectory and a violation entry: the continuum flow cannot exit, so this
// is a discretization finding, not a crash.
inline std::pair<std::vector<DiagnosticsRow>, RunSummary> run_flow(
    const TorusConfig& cfg, const ScalarField& phi0, const BranchedAngle& th,
    const RunOptions& opts, const RecordCallback& on_record = {}) {
  if (!th.in_top_branch(cfg.n)) {
    throw InvalidBranch("run_flow needs theta_hat in the top branch");
  }
  if (!(opts.stop_tol > 0.0)) throw InvalidParameter("stop_tol must be positive");
  if (!(opts.safety > 0.0)) throw InvalidParameter("safety must be positive");
  if (opts.record_every < 1) throw InvalidParameter("record_every must be >= 1");
  if (!(opts.t_max >= 0.0)) throw InvalidParameter("t_max must be nonnegative");
  if (opts.scheme == Scheme::TLPF) {
    auto bad = almost_calibrated_violations(cfg, phi0, th);
    if (!bad.empty()) throw NotAlmostCalibrated(std::move(bad));
  }

  const std::complex<double> z0 = compute_Z_raw(cfg, phi0);
  const double abs_z0 = std::abs(z0);
  detail::FlowEngine engine(cfg, th, opts.scheme);
  FlowState state{phi0, 0.0, 0, 0.0};

  std::vector<DiagnosticsRow> rows;
  RunSummary summary;
  const auto initial = detail::compute_diagnostics(cfg, state.phi, th, 0.0, z0);
  const double theta_min0 = initial.row.theta_min;
  const double theta_max0 = initial.row.theta_max;
  const double lam_n_floor = initial.lambda_n_min - 0.1 * std::abs(initial.lambda_n_min) - 1e-9;
  const double f_lo = initial.f_trace_min / 2.0;
  const double f_hi = 2.0 * initial.f_trace_max;
  const double c0 = initial.row.c_val;
  const double j0 = initial.row.j_val;

  double phi_min = *std::min_element(phi0.values.begin(), phi0.values.end());
  double phi_max = *std::max_element(phi0.values.begin(), phi0.values.end());
  summary.osc_phi_max = phi_max - phi_min;

  auto note = [&summary](const std::string& v) { summary.violations.push_back(v); };

  bool has_prev = false;
  DiagnosticsRow prev_row;
  auto record = [&](const detail::DiagnosticsSample& d) {
    const DiagnosticsRow& r = d.row;
    if (r.theta_min < theta_min0 - 1e-6 || r.theta_max > theta_max0 + 1e-6) {
      note("phase_bounds at t=" + std::to_string(r.t));
    }
    if (has_prev) {
      if (r.j_val > prev_row.j_val + 1e-12 * (1.0 + std::abs(prev_row.j_val))) {
        note("j_monotonicity at t=" + std::to_string(r.t));
      }
      if (r.v_val > prev_row.v_val + 1e-12 * (1.0 + std::abs(prev_row.v_val))) {
        note("v_monotonicity at t=" + std::to_string(r.t));
      }
    }
    if (opts.scheme == Scheme::TLPF && !(r.margin > 0.0)) {
      note("margin at t=" + std::to_string(r.t));
    }
    if (r.z_drift > 1e-8) note("z_drift at t=" + std::to_string(r.t));
    // The v cos / v sin integrals are the components of e^{-i theta_hat} Z:
    // the first must stay at |Z|, the second at zero.
    const std::complex<double> rotated = std::polar(1.0, -th.theta_hat) * d.z_raw;
    if (std::abs(rotated.real() - abs_z0) > 1e-8 * abs_z0) {
      note("identity_cos at t=" + std::to_string(r.t));
    }
    if (std::abs(rotated.imag()) > 1e-8 * r.v_val) {
      note("identity_sin at t=" + std::to_string(r.t));
    }
    const double c_dev = std::abs(r.c_val - c0) / (1.0 + std::abs(c0));
    summary.c_drift = std::max(summary.c_drift, c_dev);
    // C is conserved along the tangent flow only; the comparison flow moves it.
    if (opts.scheme == Scheme::TLPF && c_dev > 1e-6) {
      note("c_drift at t=" + std::to_string(r.t));
    }
    if (d.lambda_n_min < lam_n_floor) note("lambda_n_bound at t=" + std::to_string(r.t));
    if (d.f_trace_min < f_lo || d.f_trace_max > f_hi) {
      note("f_trace_range at t=" + std::to_string(r.t));
    }
    rows.push_back(r);
    prev_row = r;
    has_prev = true;
    const double lo = *std::min_element(state.phi.values.begin(), state.phi.values.end());
    const double hi = *std::max_element(state.phi.values.begin(), state.phi.values.end());
    summary.osc_phi_max = std::max(summary.osc_phi_max, hi - lo);
    if (on_record) on_record(state, r);
  };

  record(initial);

  std::vector<double> k1;
  const double kmax = cfg.N / 2;
  long last_recorded_step = 0;
  while (true) {
    detail::StageStats stats;
    try {
      stats = engine.eval(state.phi.values, k1, opts.scheme == Scheme::TLPF);
    } catch (const LeftCalibratedRange& e) {
      note(std::string("left_calibrated_range: ") + e.what());
      break;
    }
    if (stats.sup_rhs <= opts.stop_tol) {
      summary.converged = true;
      break;
    }
    if (state.t >= opts.t_max) break;
    if (!std::isfinite(stats.max_sum_f) || !(stats.max_sum_f > 0.0)) {
      note("left_calibrated_range: diffusion trace unavailable outside S");
      break;
    }
    const double dt = opts.safety / (kmax * kmax * stats.max_sum_f);
    try {
      engine.advance(state, dt, k1);
    } catch (const LeftCalibratedRange& e) {
      note(std::string("left_calibrated_range: ") + e.what());
      break;
    }
    if (state.step % opts.record_every == 0) {
      record(detail::compute_diagnostics(cfg, state.phi, th, state.t, z0));
      last_recorded_step = state.step;
    }
  }
  if (state.step != last_recorded_step || rows.empty()) {
    record(detail::compute_diagnostics(cfg, state.phi, th, state.t, z0));
  }
  summary.t_final = state.t;
  summary.residual_final = rows.back().residual;
  summary.j_total_drop = j0 - rows.back().j_val;
  detail::fit_decay(rows, summary);
  return {std::move(rows), std::move(summary)};
}

struct SubsolutionFieldReport {
  bool pass = false;
  double worst_margin = 0.0;          // min over grid and axes of the ray margins
  std::size_t worst_point = 0;
  double necessary_phase_margin = 0.0;   // min theta - (n/(n-1))(theta_hat - pi/2)
};

// Pointwise C-subsolution test over the grid; the worst margin is the
// quantitative delta available to the (delta, K) construction.
inline SubsolutionFieldReport check_subsolution_field(const TorusConfig& cfg,
                                                      const ScalarField& phi,
                                                      const BranchedAngle& th) {
  const SpectrumField s = eigen_field(matrix_field(cfg, phi));
  SubsolutionFieldReport rep;
  rep.pass = true;
  rep.worst_margin = std::numeric_limits<double>::infinity();
  rep.necessary_phase_margin = std::numeric_limits<double>::infinity();
  const double bound = cfg.n > 1
      ? static_cast<double>(cfg.n) / (cfg.n - 1) * (th.theta_hat - kHalfPi)
      : -std::numeric_limits<double>::infinity();
  for (std::size_t p = 0; p < s.count; ++p) {
    const auto lam = s.at(p);
    const Spectrum spec{std::span<const double>(lam)};
    const SubsolutionResult r = subsolution_test(spec, th);
    const double m = r.margins.minCoeff();
    if (m < rep.worst_margin) {
      rep.worst_margin = m;
      rep.worst_point = p;
    }
    if (!r.passes) rep.pass = false;
    rep.necessary_phase_margin = std::min(rep.necessary_phase_margin, theta(spec) - bound);
  }
  return rep;
}

// Flags recorded steps whose phase range escapes the t = 0 bounds.
inline std::vector<std::size_t> phase_bounds_monitor(const std::vector<DiagnosticsRow>& rows,
                                                     double tol = 1e-6) {
  std::vector<std::size_t> bad;
  if (rows.empty()) return bad;
  const double lo = rows.front().theta_min - tol;
  const double hi = rows.front().theta_max + tol;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].theta_min < lo || rows[i].theta_max > hi) bad.push_back(i);
  }
  return bad;
}

}  // namespace dhym
