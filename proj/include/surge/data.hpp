#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <memory>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "surge/errors.hpp"
#include "surge/tensor.hpp"
#include "surge/time.hpp"

namespace surge {

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian; big-endian hosts are unsupported");

// Gaps up to this many hours are filled by linear interpolation; longer runs
// are still filled numerically but flagged, and windows touching them drop.
struct GapPolicy {
  std::int64_t max_interp_hours = 3;
};

struct GapSpan {
  std::int64_t start = 0;  // hour index of the first missing sample
  std::int64_t length = 0;
};

inline bool operator==(const GapSpan& a, const GapSpan& b) {
  return a.start == b.start && a.length == b.length;
}

// ---- hourly series (shared by gauge and harmonic records) ----

struct HourlySeries {
  UtcTime start = 0;
  std::vector<double> values;  // dense, finite; gap positions hold interpolants
  std::vector<GapSpan> gaps;   // every gap found at ingestion

  std::int64_t steps() const { return static_cast<std::int64_t>(values.size()); }
  UtcTime time_at(std::int64_t i) const { return start + i * kSecondsPerHour; }
  UtcTime end() const { return time_at(steps()); }

  std::vector<GapSpan> flagged(const GapPolicy& policy) const {
    std::vector<GapSpan> out;
    for (const auto& g : gaps) {
      if (g.length > policy.max_interp_hours) out.push_back(g);
    }
    return out;
  }
};

struct GaugeSeries {
  std::string station_id;
  HourlySeries series;
};

struct HarmonicSeries {
  std::string station_id;
  HourlySeries series;
};

// Builds a dense hourly series from sparse (timestamp, value) points.
// Timestamps must be strictly increasing on hour boundaries; interior gaps
// are linearly interpolated and recorded.
inline HourlySeries build_hourly_series(const std::vector<std::pair<UtcTime, double>>& points) {
  if (points.empty()) throw data_error("hourly series: no samples");
  for (const auto& [t, v] : points) {
    if (t % kSecondsPerHour != 0) {
      throw data_error("hourly series: timestamp " + format_utc(t) + " is not on an hour");
    }
    if (!std::isfinite(v)) {
      throw data_error("hourly series: non-finite value at " + format_utc(t));
    }
  }
  for (std::size_t i = 1; i < points.size(); ++i) {
    if (points[i].first <= points[i - 1].first) {
      throw data_error("hourly series: timestamps not strictly increasing at " +
                       format_utc(points[i].first));
    }
  }
  HourlySeries s;
  s.start = points[0].first;
  const std::int64_t total = (points.back().first - points[0].first) / kSecondsPerHour + 1;
  s.values.assign(static_cast<std::size_t>(total), 0.0);
  std::size_t pi = 0;
  std::int64_t last_present = -1;
  for (std::int64_t i = 0; i < total; ++i) {
    const UtcTime t = s.start + i * kSecondsPerHour;
    if (pi < points.size() && points[pi].first == t) {
      s.values[static_cast<std::size_t>(i)] = points[pi].second;
      if (last_present >= 0 && i - last_present > 1) {
        const std::int64_t glen = i - last_present - 1;
        s.gaps.push_back(GapSpan{last_present + 1, glen});
        const double v0 = s.values[static_cast<std::size_t>(last_present)];
        const double v1 = points[pi].second;
        for (std::int64_t k = 1; k <= glen; ++k) {
          s.values[static_cast<std::size_t>(last_present + k)] =
              v0 + (v1 - v0) * static_cast<double>(k) / static_cast<double>(glen + 1);
        }
      }
      last_present = i;
      ++pi;
    }
  }
  return s;
}

// ---- gauge/harmonic CSV (header: timestamp_iso8601,value_m) ----
//
// Gap hours are written as missing rows; reloading re-derives the same gap
// list and interpolants, so series round-trip bit-exactly.

inline void write_series_csv(const std::string& path, const HourlySeries& s) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot write " + path);
  out << "timestamp_iso8601,value_m\n";
  std::vector<bool> is_gap(static_cast<std::size_t>(s.steps()), false);
  for (const auto& g : s.gaps) {
    for (std::int64_t k = 0; k < g.length; ++k) is_gap[static_cast<std::size_t>(g.start + k)] = true;
  }
  char buf[64];
  for (std::int64_t i = 0; i < s.steps(); ++i) {
    if (is_gap[static_cast<std::size_t>(i)]) continue;
    std::snprintf(buf, sizeof(buf), "%.17g", s.values[static_cast<std::size_t>(i)]);
    out << format_utc(s.time_at(i)) << ',' << buf << '\n';
  }
  if (!out) throw io_error("write failed: " + path);
}

inline HourlySeries load_series_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot read " + path);
  std::string line;
  if (!std::getline(in, line)) throw data_error(path + ": empty file");
  if (line.rfind("timestamp_iso8601,", 0) != 0) {
    throw data_error(path + ": missing 'timestamp_iso8601,value_m' header line");
  }
  std::vector<std::pair<UtcTime, double>> points;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) {
      throw data_error(path + ":" + std::to_string(lineno) + ": expected 'timestamp,value'");
    }
    UtcTime t;
    double v;
    try {
      t = parse_utc(line.substr(0, comma));
      std::size_t used = 0;
      v = std::stod(line.substr(comma + 1), &used);
    } catch (const std::exception& e) {
      throw data_error(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    points.emplace_back(t, v);
  }
  return build_hourly_series(points);
}

// ---- gridded atmospheric series ----

struct GridBounds {
  double lon_min = -85.0, lon_max = -82.0;
  double lat_min = 26.0, lat_max = 29.0;
};

// Hourly (T,15,15,3) stack of [u-wind, v-wind, surface pressure] fields.
// Index (0,0) is the southwest corner; rows increase northward, columns
// eastward. Stored as float32, the container block format.
struct GridSeries {
  static constexpr std::int64_t kRows = 15;
  static constexpr std::int64_t kCols = 15;
  static constexpr std::int64_t kChannels = 3;

  UtcTime start = 0;
  std::int64_t steps = 0;
  GridBounds bbox;
  double resolution_deg = 0.25;
  std::array<std::string, 3> channel_names = {"u_wind_ms", "v_wind_ms", "surface_pressure_pa"};
  std::vector<float> data;  // (t, row, col, channel)
  std::vector<GapSpan> gaps;

  std::int64_t frame_size() const { return kRows * kCols * kChannels; }
  UtcTime time_at(std::int64_t i) const { return start + i * kSecondsPerHour; }
  UtcTime end() const { return time_at(steps); }
  const float* frame(std::int64_t t) const { return data.data() + t * frame_size(); }

  std::vector<GapSpan> flagged(const GapPolicy& policy) const {
    std::vector<GapSpan> out;
    for (const auto& g : gaps) {
      if (g.length > policy.max_interp_hours) out.push_back(g);
    }
    return out;
  }
};

inline constexpr const char* kGridMagic = "SURGE-GRID";
inline constexpr int kGridVersion = 1;

// Container: one '\n'-terminated JSON header line, then the raw little-endian
// float32 block in (t,row,col,channel) order. Gap hours are stored as NaN.
inline void write_grid_series(const std::string& path, const GridSeries& g) {
  nlohmann::json h;
  h["magic"] = kGridMagic;
  h["version"] = kGridVersion;
  h["start"] = format_utc(g.start);
  h["steps"] = g.steps;
  h["rows"] = GridSeries::kRows;
  h["cols"] = GridSeries::kCols;
  h["channels"] = g.channel_names;
  h["bbox"] = {{"lon_min", g.bbox.lon_min},
               {"lon_max", g.bbox.lon_max},
               {"lat_min", g.bbox.lat_min},
               {"lat_max", g.bbox.lat_max}};
  h["resolution_deg"] = g.resolution_deg;
  h["origin"] = "southwest; rows north-increasing, cols east-increasing";
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot write " + path);
  out << h.dump() << '\n';
  std::vector<float> block = g.data;
  const float qnan = std::numeric_limits<float>::quiet_NaN();
  for (const auto& gap : g.gaps) {
    for (std::int64_t k = 0; k < gap.length; ++k) {
      float* f = block.data() + (gap.start + k) * g.frame_size();
      std::fill(f, f + g.frame_size(), qnan);
    }
  }
  out.write(reinterpret_cast<const char*>(block.data()),
            static_cast<std::streamsize>(block.size() * sizeof(float)));
  if (!out) throw io_error("write failed: " + path);
}

inline GridSeries load_grid_series(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot read " + path);
  std::string header_line;
  if (!std::getline(in, header_line)) {
    throw data_error(path + ": missing header (at byte 0)");
  }
  const std::int64_t block_offset = static_cast<std::int64_t>(header_line.size()) + 1;
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(header_line);
  } catch (const std::exception& e) {
    throw data_error(path + ": malformed header JSON (at byte 0): " + e.what());
  }
  auto fail = [&](const std::string& msg) -> data_error {
    return data_error(path + ": " + msg + " (at byte 0)");
  };
  if (h.value("magic", "") != kGridMagic) throw fail("bad magic, expected SURGE-GRID");
  if (h.value("version", -1) != kGridVersion) {
    throw fail("unsupported version " + std::to_string(h.value("version", -1)));
  }
  GridSeries g;
  try {
    g.start = parse_utc(h.at("start").get<std::string>());
    g.steps = h.at("steps").get<std::int64_t>();
    const auto rows = h.at("rows").get<std::int64_t>();
    const auto cols = h.at("cols").get<std::int64_t>();
    if (rows != GridSeries::kRows) {
      throw data_error("grid height " + std::to_string(rows) + " != expected 15");
    }
    if (cols != GridSeries::kCols) {
      throw data_error("grid width " + std::to_string(cols) + " != expected 15");
    }
    const auto ch = h.at("channels").get<std::vector<std::string>>();
    if (ch.size() != 3) throw data_error("expected 3 channels, got " + std::to_string(ch.size()));
    std::copy(ch.begin(), ch.end(), g.channel_names.begin());
    g.bbox.lon_min = h.at("bbox").at("lon_min").get<double>();
    g.bbox.lon_max = h.at("bbox").at("lon_max").get<double>();
    g.bbox.lat_min = h.at("bbox").at("lat_min").get<double>();
    g.bbox.lat_max = h.at("bbox").at("lat_max").get<double>();
    g.resolution_deg = h.at("resolution_deg").get<double>();
  } catch (const data_error&) {
    throw;
  } catch (const std::exception& e) {
    throw fail(std::string("header field error: ") + e.what());
  }
  if (g.steps < 1) throw fail("steps must be >= 1");
  g.data.resize(static_cast<std::size_t>(g.steps * g.frame_size()));
  in.read(reinterpret_cast<char*>(g.data.data()),
          static_cast<std::streamsize>(g.data.size() * sizeof(float)));
  if (in.gcount() != static_cast<std::streamsize>(g.data.size() * sizeof(float))) {
    throw data_error(path + ": truncated data block (at byte " +
                     std::to_string(block_offset + in.gcount()) + ")");
  }
  char extra;
  if (in.read(&extra, 1)) {
    throw data_error(path + ": trailing bytes after data block (at byte " +
                     std::to_string(block_offset +
                                    static_cast<std::int64_t>(g.data.size() * sizeof(float))) +
                     ")");
  }

  // a timestep with any NaN counts as missing; runs are interpolated per cell
  std::vector<bool> missing(static_cast<std::size_t>(g.steps), false);
  for (std::int64_t t = 0; t < g.steps; ++t) {
    const float* f = g.frame(t);
    for (std::int64_t i = 0; i < g.frame_size(); ++i) {
      if (!std::isfinite(f[i])) {
        missing[static_cast<std::size_t>(t)] = true;
        break;
      }
    }
  }
  if (missing.front() || missing.back()) {
    throw data_error(path + ": gap at series boundary cannot be interpolated");
  }
  for (std::int64_t t = 1; t < g.steps; ++t) {
    if (!missing[static_cast<std::size_t>(t)]) continue;
    const std::int64_t gap_start = t;
    while (missing[static_cast<std::size_t>(t)]) ++t;
    const std::int64_t glen = t - gap_start;
    g.gaps.push_back(GapSpan{gap_start, glen});
    const float* before = g.frame(gap_start - 1);
    const float* after = g.frame(t);
    for (std::int64_t k = 1; k <= glen; ++k) {
      float* dst = g.data.data() + (gap_start + k - 1) * g.frame_size();
      const double w = static_cast<double>(k) / static_cast<double>(glen + 1);
      for (std::int64_t i = 0; i < g.frame_size(); ++i) {
        dst[i] = static_cast<float>(static_cast<double>(before[i]) +
                                    (static_cast<double>(after[i]) - before[i]) * w);
      }
    }
  }
  return g;
}

// ---- surge residual ----

// surge_t = level_t - tide_t. Series must be aligned one-to-one.
inline std::vector<double> compute_surge(const GaugeSeries& gauge,
                                         const HarmonicSeries& harmonic) {
  const auto& g = gauge.series;
  const auto& h = harmonic.series;
  if (g.start != h.start || g.steps() != h.steps()) {
    const UtcTime first_mismatch = g.start != h.start
                                       ? std::max(g.start, h.start)
                                       : std::min(g.end(), h.end());
    throw data_error("compute_surge: series misaligned, first mismatch at " +
                     format_utc(first_mismatch) + " (gauge " + format_utc(g.start) + "+" +
                     std::to_string(g.steps()) + "h, harmonic " + format_utc(h.start) + "+" +
                     std::to_string(h.steps()) + "h)");
  }
  std::vector<double> surge(g.values.size());
  for (std::size_t i = 0; i < surge.size(); ++i) surge[i] = g.values[i] - h.values[i];
  return surge;
}

// ---- standardization ----

struct ScalarStats {
  double mean = 0.0;
  double stddev = 1.0;
};

inline ScalarStats fit_scalar_stats(std::span<const double> xs, const std::string& what) {
  if (xs.empty()) throw config_error("standardizer: empty training data for " + what);
  double mean = 0.0;
  for (double v : xs) mean += v;
  mean /= static_cast<double>(xs.size());
  double var = 0.0;
  for (double v : xs) var += (v - mean) * (v - mean);
  var /= static_cast<double>(xs.size());
  if (var <= 0.0) throw config_error("standardizer: zero variance in " + what);
  return ScalarStats{mean, std::sqrt(var)};
}

// Per-channel z-score for atmospheric fields plus one scalar pair for water
// levels (the tidal input shares the level statistics: same unit and scale).
// Fitted exclusively on the training partition.
struct Standardizer {
  std::array<ScalarStats, 3> atmos;
  ScalarStats level;

  double standardize_level(double v) const { return (v - level.mean) / level.stddev; }
  double destandardize_level(double v) const { return v * level.stddev + level.mean; }
  double standardize_atmos(double v, std::int64_t channel) const {
    return (v - atmos[static_cast<std::size_t>(channel)].mean) /
           atmos[static_cast<std::size_t>(channel)].stddev;
  }
};

// ---- windowed samples ----

struct SplitSpec {
  UtcTime train_end = make_utc(2021, 1, 1);
};

// Windowed view over one (grid, gauge, harmonic) triple. Atmospheric windows
// are materialized lazily (windows may overlap at stride < T); tide and surge
// are small and held densely. target(t) := tide(t) + surge(t) identically.
struct SampleSet {
  std::shared_ptr<const GridSeries> grid;
  std::shared_ptr<const std::vector<double>> tide;
  std::shared_ptr<const std::vector<double>> surge;
  UtcTime base_start = 0;           // hour 0 of the common span
  std::int64_t grid_offset = 0;     // grid index of hour 0
  std::int64_t series_offset = 0;   // tide/surge index of hour 0
  std::vector<std::int64_t> starts; // window starts, hours since base_start
  std::int64_t window_len = 36;
  std::int64_t stride = 24;
  std::int64_t dropped_windows = 0;

  std::int64_t count() const { return static_cast<std::int64_t>(starts.size()); }
  UtcTime window_start_time(std::int64_t w) const {
    return base_start + starts[static_cast<std::size_t>(w)] * kSecondsPerHour;
  }
  double tide_at(std::int64_t w, std::int64_t h) const {
    return (*tide)[static_cast<std::size_t>(series_offset + starts[static_cast<std::size_t>(w)] + h)];
  }
  double surge_at(std::int64_t w, std::int64_t h) const {
    return (*surge)[static_cast<std::size_t>(series_offset + starts[static_cast<std::size_t>(w)] + h)];
  }
  double target_at(std::int64_t w, std::int64_t h) const { return tide_at(w, h) + surge_at(w, h); }
  const float* atmos_frame(std::int64_t w, std::int64_t h) const {
    return grid->frame(grid_offset + starts[static_cast<std::size_t>(w)] + h);
  }

  SampleSet with_starts(std::vector<std::int64_t> new_starts) const {
    SampleSet out = *this;
    out.starts = std::move(new_starts);
    out.dropped_windows = 0;
    return out;
  }
};

// Cuts overlapping windows of `window_len` hours every `stride` hours across
// the common span of the three series. Windows touching a flagged gap drop.
inline SampleSet window_samples(std::shared_ptr<const GridSeries> grid, const GaugeSeries& gauge,
                                const HarmonicSeries& harmonic, std::int64_t window_len,
                                std::int64_t stride, const GapPolicy& policy = {}) {
  if (window_len < 1 || stride < 1) {
    throw config_error("window_samples: window_len and stride must be positive");
  }
  auto surge = compute_surge(gauge, harmonic);

  const UtcTime span_start = std::max(grid->start, gauge.series.start);
  const UtcTime span_end = std::min(grid->end(), gauge.series.end());
  const std::int64_t span_hours = (span_end - span_start) / kSecondsPerHour;
  if (span_hours < window_len) {
    throw data_error("window_samples: series share no span of at least " +
                     std::to_string(window_len) + " hours");
  }

  SampleSet set;
  set.grid = grid;
  // tide input is the harmonic prediction; target = tide + surge
  set.tide = std::make_shared<std::vector<double>>(harmonic.series.values);
  set.surge = std::make_shared<std::vector<double>>(std::move(surge));
  set.base_start = span_start;
  set.grid_offset = (span_start - grid->start) / kSecondsPerHour;
  set.series_offset = (span_start - gauge.series.start) / kSecondsPerHour;
  set.window_len = window_len;
  set.stride = stride;

  // flagged hours (relative to span start) from all three sources
  std::vector<std::pair<std::int64_t, std::int64_t>> bad;  // [begin,end) hours
  auto add_flags = [&](const std::vector<GapSpan>& spans, UtcTime series_start) {
    for (const auto& s : spans) {
      const std::int64_t b = s.start + (series_start - span_start) / kSecondsPerHour;
      bad.emplace_back(b, b + s.length);
    }
  };
  add_flags(grid->flagged(policy), grid->start);
  add_flags(gauge.series.flagged(policy), gauge.series.start);
  add_flags(harmonic.series.flagged(policy), harmonic.series.start);

  const std::int64_t n_windows = (span_hours - window_len) / stride + 1;
  for (std::int64_t w = 0; w < n_windows; ++w) {
    const std::int64_t s = w * stride;
    bool drop = false;
    for (const auto& [b, e] : bad) {
      if (s < e && b < s + window_len) {
        drop = true;
        break;
      }
    }
    if (drop) {
      ++set.dropped_windows;
    } else {
      set.starts.push_back(s);
    }
  }
  if (set.starts.empty()) {
    throw data_error("window_samples: no usable windows (all dropped or span too short)");
  }
  return set;
}

// Fits the standardizer on the hours covered by the given (training) windows.
inline Standardizer fit_standardizer(const SampleSet& train) {
  if (train.count() == 0) throw config_error("standardizer: empty training partition");
  Standardizer st;
  std::vector<double> ch[3];
  std::vector<double> levels;
  const std::int64_t per_frame = GridSeries::kRows * GridSeries::kCols;
  for (std::int64_t w = 0; w < train.count(); ++w) {
    for (std::int64_t h = 0; h < train.window_len; ++h) {
      const float* f = train.atmos_frame(w, h);
      for (std::int64_t i = 0; i < per_frame; ++i) {
        ch[0].push_back(f[i * 3 + 0]);
        ch[1].push_back(f[i * 3 + 1]);
        ch[2].push_back(f[i * 3 + 2]);
      }
      levels.push_back(train.target_at(w, h));
    }
  }
  const char* names[3] = {"atmos channel u", "atmos channel v", "atmos channel pressure"};
  for (int c = 0; c < 3; ++c) st.atmos[static_cast<std::size_t>(c)] = fit_scalar_stats(ch[c], names[c]);
  st.level = fit_scalar_stats(levels, "water level");
  return st;
}

struct SplitResult {
  SampleSet train, val, test;
};

// train = windows ending strictly before train_end; the remainder is halved
// chronologically into val and test. Windows spanning a partition boundary
// are dropped so no leakage is possible even with overlapping windows.
inline SplitResult chronological_split(const SampleSet& samples, const SplitSpec& spec) {
  std::vector<std::int64_t> train, rest;
  for (std::int64_t w = 0; w < samples.count(); ++w) {
    const UtcTime end = samples.window_start_time(w) + samples.window_len * kSecondsPerHour;
    if (end < spec.train_end + kSecondsPerHour) {  // "ending before": end <= train_end
      train.push_back(samples.starts[static_cast<std::size_t>(w)]);
    } else {
      rest.push_back(samples.starts[static_cast<std::size_t>(w)]);
    }
  }
  if (train.empty()) throw config_error("chronological_split: empty training partition");

  // drop remainder windows overlapping the last training window
  const std::int64_t train_last_end = train.back() + samples.window_len;
  std::vector<std::int64_t> usable;
  for (auto s : rest) {
    if (s >= train_last_end) usable.push_back(s);
  }
  const std::size_t half = usable.size() / 2;
  std::vector<std::int64_t> val(usable.begin(), usable.begin() + static_cast<std::ptrdiff_t>(half));
  std::vector<std::int64_t> test(usable.begin() + static_cast<std::ptrdiff_t>(half), usable.end());
  if (!val.empty() && !test.empty()) {
    const std::int64_t val_last_end = val.back() + samples.window_len;
    std::vector<std::int64_t> test_clean;
    for (auto s : test) {
      if (s >= val_last_end) test_clean.push_back(s);
    }
    test = std::move(test_clean);
  }
  if (val.empty() || test.empty()) {
    throw config_error("chronological_split: empty validation or test partition (train_end " +
                       format_utc(spec.train_end) + " leaves " + std::to_string(usable.size()) +
                       " usable post-train windows)");
  }
  SplitResult out{samples.with_starts(std::move(train)), samples.with_starts(std::move(val)),
                  samples.with_starts(std::move(test))};
  return out;
}

}  // namespace surge
