#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "surge/data.hpp"
#include "surge/rng.hpp"

namespace surge {

// Desk-scale synthetic stand-in for the CFSv2/NOAA inputs: harmonic tide from
// two constituents, smooth background flow with occasional translating
// Gaussian vortices, and a surge response driven by a causal exponential
// kernel over onshore wind stress plus an inverse-barometer pressure term.
// Everything is deterministic from the seed.
struct SyntheticConfig {
  std::uint64_t seed = 7;
  std::int64_t n_windows = 512;
  std::int64_t window_len = 36;
  std::int64_t stride = 24;
  UtcTime train_end = make_utc(2021, 1, 1);
  double train_fraction = 0.75;  // positions the series so this share of windows is pre-split

  double tide_amp_semidiurnal_m = 0.30;  // 12.42 h constituent
  double tide_amp_diurnal_m = 0.15;      // 23.93 h constituent
  double noise_sigma_m = 0.01;

  double background_wind_ms = 4.5;
  double vortex_rate_per_hour = 1.0 / 132.0;
  double vortex_peak_wind_min_ms = 16.0;
  double vortex_peak_wind_max_ms = 30.0;
  double vortex_radius_min_cells = 2.0;
  double vortex_radius_max_cells = 4.0;
  double vortex_pressure_drop_min_pa = 1200.0;
  double vortex_pressure_drop_max_pa = 4200.0;

  double response_hours = 9.0;     // exponential kernel time constant
  double stress_gain = 3.0e-4;     // metres of surge per (m/s)^2 of onshore stress
  double pressure_ref_pa = 101325.0;
  double pressure_bg_amp_pa = 220.0;

  bool calm = false;  // zero wind at reference pressure: surge is identically 0
};

struct SyntheticData {
  GridSeries grid;
  GaugeSeries gauge;
  HarmonicSeries harmonic;
};

namespace detail {

struct Vortex {
  double x0, y0;       // entry position (cells)
  double vx, vy;       // translation (cells/hour)
  double radius;       // gaussian radius (cells)
  double peak_wind;    // m/s at r == radius
  double dp;           // core pressure drop (Pa)
  std::int64_t birth;  // hour index
};

}  // namespace detail

inline SyntheticData synthetic_storm_generate(const SyntheticConfig& cfg) {
  if (cfg.n_windows < 1) throw config_error("synthetic: n_windows must be >= 1");
  if (cfg.window_len < 1 || cfg.stride < 1) {
    throw config_error("synthetic: window_len and stride must be >= 1");
  }
  const std::int64_t total =
      (cfg.n_windows - 1) * cfg.stride + cfg.window_len;

  // place the series so that round(train_fraction * n) windows end at or
  // before train_end (chronological_split then reproduces that share)
  const std::int64_t n_train =
      std::max<std::int64_t>(1, std::llround(cfg.train_fraction * static_cast<double>(cfg.n_windows)));
  const UtcTime start =
      cfg.train_end - (cfg.stride * (n_train - 1) + cfg.window_len) * kSecondsPerHour;

  Rng rng_phase(derive_seed(cfg.seed, "phases"));
  Rng rng_vortex(derive_seed(cfg.seed, "vortices"));
  Rng rng_noise(derive_seed(cfg.seed, "noise"));

  constexpr std::int64_t R = GridSeries::kRows;
  constexpr std::int64_t C = GridSeries::kCols;
  const double two_pi = 2.0 * 3.14159265358979323846;

  // background flow: three slow constituents per component, random phases
  const double periods[3] = {53.0, 117.0, 251.0};
  const double weights[3] = {0.5, 0.35, 0.35};
  double phase_u[3], phase_v[3];
  for (int k = 0; k < 3; ++k) phase_u[k] = rng_phase.uniform(0.0, two_pi);
  for (int k = 0; k < 3; ++k) phase_v[k] = rng_phase.uniform(0.0, two_pi);
  const double phase_p = rng_phase.uniform(0.0, two_pi);
  const double phase_m2 = rng_phase.uniform(0.0, two_pi);
  const double phase_k1 = rng_phase.uniform(0.0, two_pi);

  SyntheticData out;
  GridSeries& grid = out.grid;
  grid.start = start;
  grid.steps = total;
  grid.data.resize(static_cast<std::size_t>(total * grid.frame_size()));

  std::vector<double> tide(static_cast<std::size_t>(total));
  std::vector<double> level(static_cast<std::size_t>(total));
  std::vector<detail::Vortex> active;

  const double decay = std::exp(-1.0 / cfg.response_hours);
  double conv = 0.0;

  for (std::int64_t t = 0; t < total; ++t) {
    const double th = static_cast<double>(t);

    double ubg = 0.0, vbg = 0.0;
    if (!cfg.calm) {
      for (int k = 0; k < 3; ++k) {
        ubg += cfg.background_wind_ms * weights[k] * std::sin(two_pi * th / periods[k] + phase_u[k]);
        vbg += cfg.background_wind_ms * weights[k] * std::sin(two_pi * th / periods[k] + phase_v[k]);
      }
    }
    const double pbg = cfg.calm
                           ? cfg.pressure_ref_pa
                           : cfg.pressure_ref_pa + cfg.pressure_bg_amp_pa * std::sin(two_pi * th / 169.3 + phase_p);

    if (!cfg.calm && rng_vortex.uniform() < cfg.vortex_rate_per_hour) {
      detail::Vortex v;
      const int edge = static_cast<int>(rng_vortex.bounded(4));  // 0 W, 1 E, 2 S, 3 N
      const double along = rng_vortex.uniform(2.0, 12.0);
      const double speed = rng_vortex.uniform(0.15, 0.40);
      const double heading = rng_vortex.uniform(-0.5, 0.5);
      switch (edge) {
        case 0: v.x0 = -3.0; v.y0 = along; v.vx = speed; v.vy = heading * speed; break;
        case 1: v.x0 = C + 2.0; v.y0 = along; v.vx = -speed; v.vy = heading * speed; break;
        case 2: v.x0 = along; v.y0 = -3.0; v.vx = heading * speed; v.vy = speed; break;
        default: v.x0 = along; v.y0 = R + 2.0; v.vx = heading * speed; v.vy = -speed; break;
      }
      v.radius = rng_vortex.uniform(cfg.vortex_radius_min_cells, cfg.vortex_radius_max_cells);
      v.peak_wind = rng_vortex.uniform(cfg.vortex_peak_wind_min_ms, cfg.vortex_peak_wind_max_ms);
      v.dp = rng_vortex.uniform(cfg.vortex_pressure_drop_min_pa, cfg.vortex_pressure_drop_max_pa);
      v.birth = t;
      active.push_back(v);
    }
    // retire vortices that have left the padded domain
    for (std::size_t i = 0; i < active.size();) {
      const auto& v = active[i];
      const double age = th - static_cast<double>(v.birth);
      const double x = v.x0 + v.vx * age;
      const double y = v.y0 + v.vy * age;
      const double margin = 3.0 * v.radius + 2.0;
      if (x < -margin || x > C + margin || y < -margin || y > R + margin) {
        active.erase(active.begin() + static_cast<std::ptrdiff_t>(i));
      } else {
        ++i;
      }
    }

    float* frame = grid.data.data() + t * grid.frame_size();
    double stress_sum = 0.0;
    std::int64_t stress_count = 0;
    double p_sum = 0.0;
    for (std::int64_t r = 0; r < R; ++r) {
      for (std::int64_t c = 0; c < C; ++c) {
        // mild west-east shear keeps the background spatially non-trivial
        const double shear = 1.0 + 0.15 * (static_cast<double>(c) - 7.0) / 7.0;
        double u = ubg * shear;
        double v = vbg;
        double p = pbg;
        for (const auto& vx : active) {
          const double age = th - static_cast<double>(vx.birth);
          const double cx = vx.x0 + vx.vx * age;
          const double cy = vx.y0 + vx.vy * age;
          const double dx = static_cast<double>(c) - cx;
          const double dy = static_cast<double>(r) - cy;
          const double q = (dx * dx + dy * dy) / (vx.radius * vx.radius);
          // tangential (counterclockwise) profile peaking at r == radius
          const double f = vx.peak_wind * std::exp(0.5 * (1.0 - q)) / vx.radius;
          u += -f * dy;
          v += f * dx;
          p += -vx.dp * std::exp(-0.5 * q);
        }
        frame[(r * C + c) * 3 + 0] = static_cast<float>(u);
        frame[(r * C + c) * 3 + 1] = static_cast<float>(v);
        frame[(r * C + c) * 3 + 2] = static_cast<float>(p);
        p_sum += p;
        if (c >= C - 5) {  // nearshore strip: the five easternmost columns
          stress_sum += std::sqrt(u * u + v * v) * u;  // onshore unit vector = +x
          ++stress_count;
        }
      }
    }
    const double stress = stress_sum / static_cast<double>(stress_count);
    const double p_mean = p_sum / static_cast<double>(R * C);

    conv = conv * decay + cfg.stress_gain * stress;
    const double inverse_barometer = -(p_mean - cfg.pressure_ref_pa) / (1025.0 * 9.81);
    const double surge = conv + inverse_barometer;

    tide[static_cast<std::size_t>(t)] =
        cfg.tide_amp_semidiurnal_m * std::sin(two_pi * th / 12.42 + phase_m2) +
        cfg.tide_amp_diurnal_m * std::sin(two_pi * th / 23.93 + phase_k1);
    level[static_cast<std::size_t>(t)] = tide[static_cast<std::size_t>(t)] + surge +
                                         rng_noise.normal(0.0, cfg.noise_sigma_m);
  }

  out.gauge.station_id = "synthetic";
  out.gauge.series.start = start;
  out.gauge.series.values = std::move(level);
  out.harmonic.station_id = "synthetic";
  out.harmonic.series.start = start;
  out.harmonic.series.values = std::move(tide);
  return out;
}

}  // namespace surge
