#include <catch_amalgamated.hpp>

#include <cmath>

#include "dhym/concavity.hpp"
#include "dhym/flow.hpp"

using dhym::BranchedAngle;
using dhym::FieldMode;
using dhym::ScalarField;
using dhym::Scheme;
using dhym::TorusConfig;
using Catch::Approx;

namespace {

TorusConfig ref_config(int N = 32) {
  Eigen::MatrixXd B(2, 2);
  B << 2.0, 0.0, 0.0, 2.0;
  return TorusConfig::create(2, N, B);
}

std::vector<FieldMode> ref_modes(double a1 = 0.3, double a2 = 0.2) {
  return {FieldMode{{1, 0}, a1, 0.0}, FieldMode{{1, 1}, a2, -dhym::kHalfPi}};
}

}  // namespace

TEST_CASE("initial field factory evaluates the requested modes") {
  const auto cfg = ref_config(16);
  const auto phi = dhym::build_initial_field(cfg, ref_modes());
  for (int i = 0; i < cfg.N; ++i) {
    for (int j = 0; j < cfg.N; ++j) {
      const double x1 = 2.0 * dhym::kPi * i / cfg.N;
      const double x2 = 2.0 * dhym::kPi * j / cfg.N;
      const double expect = 0.3 * std::cos(x1) + 0.2 * std::sin(x1 + x2);
      CHECK(phi.values[static_cast<std::size_t>(i) * cfg.N + j] == Approx(expect).margin(1e-14));
    }
  }
  CHECK_THROWS_AS(dhym::build_initial_field(cfg, {FieldMode{{8, 0}, 0.1, 0.0}}),
                  dhym::InvalidParameter);
  CHECK_THROWS_AS(dhym::build_initial_field(cfg, {FieldMode{{1}, 0.1, 0.0}}),
                  dhym::InvalidParameter);
}

TEST_CASE("tlpf_rhs at and near the stationary configuration") {
  const auto cfg = ref_config();
  const auto phi0 = dhym::zero_field(cfg);
  const auto z = dhym::compute_Z(cfg, phi0);
  SECTION("stationary state gives the zero field") {
    const auto rhs = dhym::tlpf_rhs(cfg, phi0, z.theta_hat);
    for (double v : rhs.values) CHECK(std::abs(v) <= 1e-14);
  }
  SECTION("shifted angle gives a constant field") {
    const auto th = BranchedAngle::top_branch(2, z.theta_hat.theta_hat + 0.3);
    const auto rhs = dhym::tlpf_rhs(cfg, phi0, th);
    for (double v : rhs.values) CHECK(v == Approx(-0.30933624960962325).margin(1e-13));
  }
  SECTION("out-of-strip state raises LeftCalibratedRange") {
    // A flat reference form has phase zero, far from the top-branch angle.
    Eigen::MatrixXd B0 = Eigen::MatrixXd::Zero(2, 2);
    const auto flat = TorusConfig::create(2, 16, B0);
    try {
      dhym::tlpf_rhs(flat, dhym::zero_field(flat), z.theta_hat);
      FAIL("expected LeftCalibratedRange");
    } catch (const dhym::LeftCalibratedRange& e) {
      CHECK(e.point() == 0);
      CHECK(e.margin() < 0.0);
    }
  }
}

TEST_CASE("rhs sign matches the phase excess") {
  const auto cfg = ref_config(16);
  const auto z = dhym::compute_Z(cfg, dhym::zero_field(cfg));
  const auto phi = dhym::build_initial_field(cfg, ref_modes(0.2, 0.1));
  const auto rhs = dhym::tlpf_rhs(cfg, phi, z.theta_hat);
  const auto s = dhym::eigen_field(dhym::matrix_field(cfg, phi));
  for (std::size_t p = 0; p < s.count; ++p) {
    double theta = 0.0;
    for (double lam : s.at(p)) theta += std::atan(lam);
    if (theta > z.theta_hat.theta_hat + 1e-12) CHECK(rhs.values[p] > 0.0);
    if (theta < z.theta_hat.theta_hat - 1e-12) CHECK(rhs.values[p] < 0.0);
  }
}

TEST_CASE("lbmcf_rhs basics and the cubic gap to tlpf_rhs") {
  const auto cfg = ref_config(16);
  const auto z = dhym::compute_Z(cfg, dhym::zero_field(cfg));
  SECTION("stationary zero") {
    const auto rhs = dhym::lbmcf_rhs(cfg, dhym::zero_field(cfg), z.theta_hat);
    for (double v : rhs.values) CHECK(std::abs(v) <= 1e-14);
  }
  SECTION("shifted angle constant") {
    const auto th = BranchedAngle::top_branch(2, z.theta_hat.theta_hat + 0.3);
    const auto rhs = dhym::lbmcf_rhs(cfg, dhym::zero_field(cfg), th);
    for (double v : rhs.values) CHECK(v == Approx(-0.3).margin(1e-13));
  }
  SECTION("tan x - x bound on random states") {
    dhym::Rng rng(3);
    for (int trial = 0; trial < 5; ++trial) {
      const auto phi = dhym::build_initial_field(
          cfg, {FieldMode{{1, 0}, rng.uniform(-0.25, 0.25), rng.uniform(0.0, 6.28)},
                FieldMode{{0, 1}, rng.uniform(-0.25, 0.25), rng.uniform(0.0, 6.28)}});
      const auto a = dhym::tlpf_rhs(cfg, phi, z.theta_hat);
      const auto b = dhym::lbmcf_rhs(cfg, phi, z.theta_hat);
      for (std::size_t p = 0; p < a.values.size(); ++p) {
        const double gap = std::abs(b.values[p]);
        REQUIRE(gap <= 0.5);
        CHECK(std::abs(a.values[p] - b.values[p]) <= gap * gap * gap);
      }
    }
  }
}

TEST_CASE("cfl_dt reference value and scalings") {
  const auto cfg = ref_config(32);
  const auto z = dhym::compute_Z(cfg, dhym::zero_field(cfg));
  const double dt = dhym::cfl_dt(cfg, dhym::zero_field(cfg), z.theta_hat);
  CHECK(dt == Approx(0.0078125).epsilon(1e-12));

  const auto cfg64 = ref_config(64);
  const double dt64 = dhym::cfl_dt(cfg64, dhym::zero_field(cfg64), z.theta_hat);
  CHECK(dt64 == Approx(dt / 4.0).epsilon(1e-12));

  CHECK_THROWS_AS(dhym::cfl_dt(cfg, dhym::zero_field(cfg), z.theta_hat, 0.0),
                  dhym::InvalidParameter);
  Eigen::MatrixXd B0 = Eigen::MatrixXd::Zero(2, 2);
  const auto flat = TorusConfig::create(2, 16, B0);
  CHECK_THROWS_AS(dhym::cfl_dt(flat, dhym::zero_field(flat), z.theta_hat),
                  dhym::OutOfCalibratedRange);
}

TEST_CASE("step_rk4 is exact on spatially uniform states") {
  const auto cfg = ref_config(16);
  const auto z = dhym::compute_Z(cfg, dhym::zero_field(cfg));
  const auto th = BranchedAngle::top_branch(2, z.theta_hat.theta_hat + 0.3);
  dhym::FlowState st{dhym::zero_field(cfg), 0.0, 0, 0.0};
  const double dt = 0.01;
  const auto next = dhym::step_rk4(cfg, st, th, Scheme::TLPF, dt);
  const double c = -0.30933624960962325;
  for (double v : next.phi.values) CHECK(v == Approx(c * dt).margin(1e-15));
  CHECK(next.step == 1);
  CHECK(next.t == Approx(dt));
}

TEST_CASE("step_rk4 leaves a stationary state fixed") {
  const auto cfg = ref_config(16);
  const auto z = dhym::compute_Z(cfg, dhym::zero_field(cfg));
  dhym::FlowState st{dhym::zero_field(cfg), 0.0, 0, 0.0};
  const auto next = dhym::step_rk4(cfg, st, z.theta_hat, Scheme::TLPF, 0.01);
  for (double v : next.phi.values) CHECK(std::abs(v) <= 1e-14);
}

TEST_CASE("step_rk4 temporal order via a Richardson interval") {
  // N = 32 keeps the 2/3-rule truncation away from the active harmonics, so
  // the one-interval error is purely the integrator's.
  const auto cfg = ref_config(32);
  const auto phi0 = dhym::build_initial_field(cfg, ref_modes());
  const auto z = dhym::compute_Z(cfg, phi0);
  dhym::FlowState base{phi0, 0.0, 0, 0.0};
  const double interval = dhym::cfl_dt(cfg, phi0, z.theta_hat);

  auto integrate = [&](int substeps) {
    dhym::FlowState st = base;
    const double h = interval / substeps;
    for (int k = 0; k < substeps; ++k) st = dhym::step_rk4(cfg, st, z.theta_hat, Scheme::TLPF, h);
    return st.phi;
  };
  const auto ref = integrate(16);
  auto err = [&](const ScalarField& phi) {
    double e = 0.0;
    for (std::size_t p = 0; p < phi.values.size(); ++p) {
      e = std::max(e, std::abs(phi.values[p] - ref.values[p]));
    }
    return e;
  };
  const double e1 = err(integrate(1));
  const double e2 = err(integrate(2));
  CHECK(e1 / e2 >= 12.0);
  CHECK(e1 / e2 <= 20.0);
}

TEST_CASE("run_flow converges on a small reference problem") {
  const auto cfg = ref_config(32);
  const auto phi0 = dhym::build_initial_field(cfg, ref_modes());
  const auto z = dhym::compute_Z(cfg, phi0);
  dhym::RunOptions opts;
  opts.stop_tol = 1e-7;
  opts.t_max = 400.0;
  opts.record_every = 25;
  const auto [rows, summary] = dhym::run_flow(cfg, phi0, z.theta_hat, opts);
  CHECK(summary.converged);
  CHECK(summary.residual_final <= 1e-7);
  CHECK(summary.violations.empty());
  CHECK(rows.size() >= 4);
  CHECK(rows.front().t == 0.0);
  CHECK(rows.back().residual <= 1e-7);
  CHECK(summary.j_total_drop >= 0.0);
  CHECK(summary.decay_rate > 0.0);
  CHECK(summary.decay_r2 >= 0.9);
  CHECK(dhym::phase_bounds_monitor(rows).empty());

  // Monotone J and V along the recorded trajectory; the preserved phase
  // bounds also cap the velocity by the initial worst tangent.
  const double vel_cap = std::max(std::abs(std::tan(rows[0].theta_min - z.theta_hat.theta_hat)),
                                  std::abs(std::tan(rows[0].theta_max - z.theta_hat.theta_hat)));
  for (std::size_t i = 1; i < rows.size(); ++i) {
    CHECK(rows[i].j_val <= rows[i - 1].j_val + 1e-12 * (1.0 + std::abs(rows[i - 1].j_val)));
    CHECK(rows[i].v_val <= rows[i - 1].v_val + 1e-12 * (1.0 + std::abs(rows[i - 1].v_val)));
    CHECK(rows[i].margin > 0.0);
    CHECK(rows[i].z_drift <= 1e-8);
    CHECK(rows[i].residual <= vel_cap + 1e-6);
  }

  // A converged limit solves the equation, hence passes the subsolution test.
  dhym::RunOptions replay = opts;
  dhym::ScalarField limit;
  dhym::run_flow(cfg, phi0, z.theta_hat, replay,
                 [&](const dhym::FlowState& st, const dhym::DiagnosticsRow&) { limit = st.phi; });
  const auto sub = dhym::check_subsolution_field(cfg, limit, z.theta_hat);
  CHECK(sub.pass);
  CHECK(sub.necessary_phase_margin > 0.0);
}

TEST_CASE("run_flow converges at step zero from the stationary state") {
  const auto cfg = ref_config(16);
  const auto z = dhym::compute_Z(cfg, dhym::zero_field(cfg));
  dhym::RunOptions opts;
  const auto [rows, summary] = dhym::run_flow(cfg, dhym::zero_field(cfg), z.theta_hat, opts);
  CHECK(summary.converged);
  CHECK(summary.t_final == 0.0);
  CHECK(rows.size() == 1);
}

TEST_CASE("run_flow rejects initial data outside H") {
  const auto cfg = ref_config(16);
  const auto z = dhym::compute_Z(cfg, dhym::zero_field(cfg));
  const auto big = dhym::build_initial_field(cfg, {FieldMode{{1, 0}, 3.0, 0.0}});
  try {
    dhym::RunOptions opts;
    dhym::run_flow(cfg, big, z.theta_hat, opts);
    FAIL("expected NotAlmostCalibrated");
  } catch (const dhym::NotAlmostCalibrated& e) {
    CHECK_FALSE(e.points().empty());
  }
  dhym::RunOptions lbm;
  lbm.scheme = Scheme::LBMCF;
  lbm.t_max = 1.0;
  CHECK_NOTHROW(dhym::run_flow(cfg, big, z.theta_hat, lbm));
}

TEST_CASE("cross-flow limits agree up to a constant") {
  const auto cfg = ref_config(32);
  const auto phi0 = dhym::build_initial_field(cfg, ref_modes());
  const auto z = dhym::compute_Z(cfg, phi0);
  dhym::RunOptions opts;
  opts.stop_tol = 1e-9;
  opts.t_max = 600.0;

  auto limit_of = [&](Scheme scheme) {
    dhym::RunOptions o = opts;
    o.scheme = scheme;
    dhym::ScalarField limit;
    const auto result = dhym::run_flow(cfg, phi0, z.theta_hat, o,
                                       [&](const dhym::FlowState& st, const dhym::DiagnosticsRow&) {
                                         limit = st.phi;
                                       });
    REQUIRE(result.second.converged);
    return limit;
  };
  const auto a = limit_of(Scheme::TLPF);
  const auto b = limit_of(Scheme::LBMCF);
  double ma = 0.0, mb = 0.0;
  for (double v : a.values) ma += v;
  for (double v : b.values) mb += v;
  ma /= static_cast<double>(a.values.size());
  mb /= static_cast<double>(b.values.size());
  double sup = 0.0;
  for (std::size_t p = 0; p < a.values.size(); ++p) {
    sup = std::max(sup, std::abs((a.values[p] - ma) - (b.values[p] - mb)));
  }
  CHECK(sup <= 1e-5);
}

TEST_CASE("check_subsolution_field on the reference and a failing configuration") {
  const auto cfg = ref_config(16);
  const auto z = dhym::compute_Z(cfg, dhym::zero_field(cfg));
  const auto pass = dhym::check_subsolution_field(cfg, dhym::zero_field(cfg), z.theta_hat);
  CHECK(pass.pass);
  CHECK(pass.worst_margin == Approx(0.4636476090008061).margin(1e-9));

  Eigen::MatrixXd B0 = Eigen::MatrixXd::Zero(2, 2);
  const auto flat = TorusConfig::create(2, 16, B0);
  const auto fail = dhym::check_subsolution_field(flat, dhym::zero_field(flat), z.theta_hat);
  CHECK_FALSE(fail.pass);
  CHECK(fail.worst_margin == Approx(-0.6435011087932844).margin(1e-9));
}

TEST_CASE("n = 2 fast path matches the eigenvalue route") {
  const auto cfg = ref_config(16);
  Eigen::MatrixXd B(2, 2);
  B << 2.0, 0.4, 0.4, 1.7;  // off-diagonal reference exercises the invariants
  const auto cfgB = TorusConfig::create(2, 16, B);
  const auto phi = dhym::build_initial_field(
      cfgB, {FieldMode{{1, 0}, 0.25, 0.3}, FieldMode{{1, 1}, 0.15, -0.7}});
  const auto z = dhym::compute_Z(cfgB, phi);
  const auto fast = dhym::tlpf_rhs(cfgB, phi, z.theta_hat);
  const auto s = dhym::eigen_field(dhym::matrix_field(cfgB, phi));
  for (std::size_t p = 0; p < s.count; ++p) {
    const dhym::Spectrum spec{s.at(p)};
    const double direct = dhym::tangent_phase(spec, z.theta_hat);
    CHECK(fast.values[p] == Approx(direct).margin(1e-13));
  }
}

TEST_CASE("one-dimensional flow converges through the generic path") {
  // N = 32 resolves the harmonics the nonlinearity generates from the base
  // mode; coarser grids trip the C-conservation monitor through the 2/3-rule
  // truncation bias rather than through the integrator.
  Eigen::MatrixXd B(1, 1);
  B << 1.0;
  const auto cfg = TorusConfig::create(1, 32, B);
  const auto phi0 = dhym::build_initial_field(cfg, {FieldMode{{1}, 0.3, 0.4}});
  const auto z = dhym::compute_Z(cfg, phi0);
  CHECK(z.theta_hat.branch_index == 1);
  dhym::RunOptions opts;
  opts.stop_tol = 1e-9;
  opts.t_max = 200.0;
  opts.record_every = 20;
  const auto [rows, summary] = dhym::run_flow(cfg, phi0, z.theta_hat, opts);
  CHECK(summary.converged);
  CHECK(summary.violations.empty());
  CHECK(rows.back().margin > 0.0);
}

TEST_CASE("three-dimensional stepping agrees with the pointwise operators") {
  Eigen::MatrixXd B = Eigen::MatrixXd::Identity(3, 3) * 2.0;
  const auto cfg = TorusConfig::create(3, 8, B);
  const auto phi = dhym::build_initial_field(
      cfg, {FieldMode{{1, 0, 0}, 0.2, 0.0}, FieldMode{{0, 1, 1}, 0.1, 0.5}});
  const auto z = dhym::compute_Z(cfg, phi);
  CHECK(z.theta_hat.branch_index == 3);
  const auto rhs = dhym::tlpf_rhs(cfg, phi, z.theta_hat);
  const auto s = dhym::eigen_field(dhym::matrix_field(cfg, phi));
  for (std::size_t p = 0; p < s.count; ++p) {
    const dhym::Spectrum spec{s.at(p)};
    CHECK(rhs.values[p] == Approx(dhym::tangent_phase(spec, z.theta_hat)).margin(1e-12));
  }
  // A few steps stay calibrated and reduce the residual.
  dhym::FlowState st{phi, 0.0, 0, 0.0};
  const double dt = dhym::cfl_dt(cfg, phi, z.theta_hat);
  for (int k = 0; k < 5; ++k) st = dhym::step_rk4(cfg, st, z.theta_hat, dhym::Scheme::TLPF, dt);
  const auto after = dhym::tlpf_rhs(cfg, st.phi, z.theta_hat);
  double sup0 = 0.0, sup1 = 0.0;
  for (std::size_t p = 0; p < rhs.values.size(); ++p) {
    sup0 = std::max(sup0, std::abs(rhs.values[p]));
    sup1 = std::max(sup1, std::abs(after.values[p]));
  }
  CHECK(sup1 < sup0);
}

TEST_CASE("phase_bounds_monitor flags synthetic excursions") {
  std::vector<dhym::DiagnosticsRow> rows(3);
  rows[0].theta_min = 2.0;
  rows[0].theta_max = 2.4;
  rows[1].theta_min = 2.05;
  rows[1].theta_max = 2.35;
  rows[2].theta_min = 1.9;  // injected violation
  rows[2].theta_max = 2.3;
  const auto bad = dhym::phase_bounds_monitor(rows);
  REQUIRE(bad.size() == 1);
  CHECK(bad[0] == 2);
}
