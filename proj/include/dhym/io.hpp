#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "dhym/flow.hpp"

namespace dhym {

static_assert(std::endian::native == std::endian::little,
              "snapshot format assumes a little-endian host");

// Fixed 17-significant-digit formatting so reruns produce byte-identical
// CSV output.
inline std::string format17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

// ---------------------------------------------------------------------------
// Field snapshots: <stem>.bin holds the raw row-major little-endian float64
// samples; <stem>.json holds the header (n, N, B, time).

inline void write_snapshot(const std::filesystem::path& stem, const TorusConfig& cfg,
                           const ScalarField& phi, double time) {
  nlohmann::json header;
  header["n"] = cfg.n;
  header["N"] = cfg.N;
  std::vector<double> b(static_cast<std::size_t>(cfg.n) * cfg.n);
  for (int i = 0; i < cfg.n; ++i)
    for (int j = 0; j < cfg.n; ++j) b[static_cast<std::size_t>(i) * cfg.n + j] = cfg.B(i, j);
  header["B"] = b;
  header["time"] = time;
  header["count"] = phi.values.size();
  header["dtype"] = "float64";
  header["order"] = "row-major";
  header["endianness"] = "little";
  {
    std::ofstream out(stem.string() + ".json");
    if (!out) throw InvalidParameter("cannot open snapshot header for writing: " + stem.string());
    out << header.dump(2) << "\n";
  }
  std::ofstream bin(stem.string() + ".bin", std::ios::binary);
  if (!bin) throw InvalidParameter("cannot open snapshot for writing: " + stem.string());
  bin.write(reinterpret_cast<const char*>(phi.values.data()),
            static_cast<std::streamsize>(phi.values.size() * sizeof(double)));
}

struct Snapshot {
  TorusConfig cfg;
  ScalarField phi;
  double time = 0.0;
};

inline Snapshot read_snapshot(const std::filesystem::path& stem) {
  std::ifstream hin(stem.string() + ".json");
  if (!hin) throw InvalidParameter("cannot open snapshot header: " + stem.string());
  nlohmann::json header = nlohmann::json::parse(hin);
  const int n = header.at("n").get<int>();
  const int N = header.at("N").get<int>();
  const auto b = header.at("B").get<std::vector<double>>();
  if (b.size() != static_cast<std::size_t>(n) * n) {
    throw InvalidParameter("snapshot header B has wrong size");
  }
  Eigen::MatrixXd B(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) B(i, j) = b[static_cast<std::size_t>(i) * n + j];
  Snapshot snap{TorusConfig::create(n, N, B), ScalarField{}, header.at("time").get<double>()};
  const std::size_t count = header.at("count").get<std::size_t>();
  if (count != snap.cfg.points()) throw InvalidParameter("snapshot count does not match grid");
  snap.phi.values.resize(count);
  std::ifstream bin(stem.string() + ".bin", std::ios::binary);
  if (!bin) throw InvalidParameter("cannot open snapshot data: " + stem.string());
  bin.read(reinterpret_cast<char*>(snap.phi.values.data()),
           static_cast<std::streamsize>(count * sizeof(double)));
  if (static_cast<std::size_t>(bin.gcount()) != count * sizeof(double)) {
    throw InvalidParameter("snapshot data truncated: " + stem.string());
  }
  return snap;
}

// ---------------------------------------------------------------------------
// Trajectory CSV: one row per recorded step.

inline constexpr const char* kCsvHeader = "t,C,J,V,residual,theta_min,theta_max,margin,z_drift";

inline std::string csv_row(const DiagnosticsRow& r) {
  return format17(r.t) + "," + format17(r.c_val) + "," + format17(r.j_val) + "," +
         format17(r.v_val) + "," + format17(r.residual) + "," + format17(r.theta_min) + "," +
         format17(r.theta_max) + "," + format17(r.margin) + "," + format17(r.z_drift);
}

// ---------------------------------------------------------------------------
// Run configuration.

struct RunConfig {
  int n = 2;
  int N = 64;
  std::vector<double> B;  // row-major n*n
  int theta_hat_branch = 0;  // 0 means "use n"
  std::vector<FieldMode> initial_modes;
  Scheme scheme = Scheme::TLPF;
  double stop_tol = 1e-8;
  double t_max = 1e4;
  double safety = 0.8;
  std::uint64_t seed = 0;
  long record_every = 50;
  std::string output_dir = "out";
  long snapshot_every = 0;  // 0: snapshot only the final state
};

inline RunConfig parse_run_config(const nlohmann::json& j) {
  RunConfig c;
  c.n = j.at("n").get<int>();
  c.N = j.at("N").get<int>();
  c.B = j.at("B").get<std::vector<double>>();
  c.theta_hat_branch = j.value("theta_hat_branch", c.n);
  for (const auto& m : j.at("initial_modes")) {
    FieldMode mode;
    mode.freq = m.at("freq").get<std::vector<int>>();
    mode.amplitude = m.at("amplitude").get<double>();
    mode.phase_shift = m.value("phase_shift", 0.0);
    c.initial_modes.push_back(std::move(mode));
  }
  const std::string scheme = j.value("scheme", "TLPF");
  if (scheme == "TLPF") {
    c.scheme = Scheme::TLPF;
  } else if (scheme == "LBMCF") {
    c.scheme = Scheme::LBMCF;
  } else {
    throw InvalidParameter("scheme must be TLPF or LBMCF");
  }
  c.stop_tol = j.value("stop_tol", 1e-8);
  c.t_max = j.value("t_max", 1e4);
  c.safety = j.value("safety", 0.8);
  c.seed = j.value("seed", std::uint64_t{0});
  c.record_every = j.value("record_every", 50L);
  c.output_dir = j.value("output_dir", std::string("out"));
  c.snapshot_every = j.value("snapshot_every", 0L);
  if (c.B.size() != static_cast<std::size_t>(c.n) * c.n) {
    throw InvalidParameter("config B must be a row-major n*n list");
  }
  if (c.record_every < 1) throw InvalidParameter("record_every must be >= 1");
  if (c.snapshot_every < 0) throw InvalidParameter("snapshot_every must be >= 0");
  return c;
}

inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json j;
  j["n"] = c.n;
  j["N"] = c.N;
  j["B"] = c.B;
  j["theta_hat_branch"] = c.theta_hat_branch == 0 ? c.n : c.theta_hat_branch;
  nlohmann::json modes = nlohmann::json::array();
  for (const auto& m : c.initial_modes) {
    modes.push_back({{"freq", m.freq}, {"amplitude", m.amplitude}, {"phase_shift", m.phase_shift}});
  }
  j["initial_modes"] = modes;
  j["scheme"] = scheme_name(c.scheme);
  j["stop_tol"] = c.stop_tol;
  j["t_max"] = c.t_max;
  j["safety"] = c.safety;
  j["seed"] = c.seed;
  j["record_every"] = c.record_every;
  j["output_dir"] = c.output_dir;
  j["snapshot_every"] = c.snapshot_every;
  return j;
}

inline std::uint64_t config_hash(const RunConfig& c) { return fnv1a64(to_json(c).dump()); }

inline TorusConfig torus_config_of(const RunConfig& c) {
  Eigen::MatrixXd B(c.n, c.n);
  for (int i = 0; i < c.n; ++i)
    for (int j = 0; j < c.n; ++j) B(i, j) = c.B[static_cast<std::size_t>(i) * c.n + j];
  return TorusConfig::create(c.n, c.N, B);
}

}  // namespace dhym
