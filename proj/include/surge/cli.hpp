#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "surge/checkpoint.hpp"
#include "surge/config.hpp"
#include "surge/hash.hpp"
#include "surge/noaa.hpp"
#include "surge/pipeline.hpp"
#include "surge/svg.hpp"
#include "surge/synthetic.hpp"

namespace surge::cli {

// Exit codes: 0 success (warnings allowed), 2 usage/config, 3 data, 4 runtime.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitRuntime = 4;

namespace fs = std::filesystem;

namespace detail {

inline bool g_quiet = false;

template <typename... Args>
void info(const char* fmt, Args... args) {
  if (detail::g_quiet) return;
  std::printf(fmt, args...);
  std::printf("\n");
}

inline void warn(const std::string& msg) { std::fprintf(stderr, "warning: %s\n", msg.c_str()); }

inline std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline const char* arch_color(ArchitectureKind k) {
  switch (k) {
    case ArchitectureKind::CnnLstm: return "#2ca02c";  // green, as in the case-study figure
    case ArchitectureKind::LstmOnly: return "#d62728";  // red
    case ArchitectureKind::Cnn3d: return "#1f77b4";     // blue
  }
  return "#000000";
}

struct DataDir {
  std::shared_ptr<GridSeries> grid;
  GaugeSeries gauge;
  HarmonicSeries harmonic;
  std::string grid_path, gauge_path, harmonic_path;
};

inline DataDir load_data_dir(const std::string& dir) {
  DataDir d;
  d.grid_path = (fs::path(dir) / "grid.ssg").string();
  d.gauge_path = (fs::path(dir) / "gauge.csv").string();
  d.harmonic_path = (fs::path(dir) / "harmonic.csv").string();
  for (const auto& p : {d.grid_path, d.gauge_path, d.harmonic_path}) {
    if (!fs::exists(p)) throw config_error("dataset file missing: " + p);
  }
  d.grid = std::make_shared<GridSeries>(load_grid_series(d.grid_path));
  d.gauge.station_id = "gauge";
  d.gauge.series = load_series_csv(d.gauge_path);
  d.harmonic.station_id = "harmonic";
  d.harmonic.series = load_series_csv(d.harmonic_path);
  return d;
}

inline std::string dataset_fingerprint(const DataDir& d, std::int64_t window_hours,
                                       std::int64_t stride, UtcTime train_end) {
  std::string acc = sha256_file_hex(d.grid_path) + sha256_file_hex(d.gauge_path) +
                    sha256_file_hex(d.harmonic_path) + "|T=" + std::to_string(window_hours) +
                    "|stride=" + std::to_string(stride) + "|train_end=" + format_utc(train_end);
  return "sha256:" + sha256_hex(acc);
}

struct Prepared {
  SplitResult split;
  Standardizer standardizer;
  std::string fingerprint;
};

inline Prepared prepare(const DataDir& d, std::int64_t window_hours, std::int64_t stride,
                        UtcTime train_end) {
  Prepared p;
  SampleSet samples = window_samples(d.grid, d.gauge, d.harmonic, window_hours, stride);
  p.split = chronological_split(samples, SplitSpec{train_end});
  p.standardizer = fit_standardizer(p.split.train);
  p.fingerprint = dataset_fingerprint(d, window_hours, stride, train_end);
  return p;
}

inline void write_text(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot write " + path);
  out << content;
  if (!out) throw io_error("write failed: " + path);
}

// flattened de-standardized prediction/measurement series over a partition
struct SeriesTable {
  std::vector<std::int64_t> window;
  std::vector<double> time;  // epoch seconds
  std::vector<double> measured_m;
  std::vector<double> predicted_m;
};

inline SeriesTable predict_table(ModelGraph& model, const SampleSet& part,
                                 const Standardizer& st, std::int64_t batch) {
  Dataset ds = as_dataset(part, st);
  SeriesTable t;
  for (std::int64_t i0 = 0; i0 < ds.count; i0 += batch) {
    const std::int64_t n = std::min(batch, ds.count - i0);
    std::vector<std::int64_t> sel(static_cast<std::size_t>(n));
    std::iota(sel.begin(), sel.end(), i0);
    Batch b = ds.gather(sel);
    Tensor pred = model.forward_infer(b.atmos, b.tide);
    const std::int64_t T = part.window_len;
    for (std::int64_t w = 0; w < n; ++w) {
      for (std::int64_t h = 0; h < T; ++h) {
        t.window.push_back(i0 + w);
        t.time.push_back(static_cast<double>(part.window_start_time(i0 + w) + h * kSecondsPerHour));
        t.measured_m.push_back(part.target_at(i0 + w, h));
        t.predicted_m.push_back(st.destandardize_level(pred.data()[(w * T + h)]));
      }
    }
  }
  return t;
}

// inserts NaN breaks between windows so plots do not bridge stride gaps
inline void series_with_breaks(const SeriesTable& t, std::vector<double>& xs,
                               std::vector<double>& measured, std::vector<double>& predicted) {
  for (std::size_t i = 0; i < t.time.size(); ++i) {
    if (i > 0 && t.window[i] != t.window[i - 1]) {
      xs.push_back(std::nan(""));
      measured.push_back(std::nan(""));
      predicted.push_back(std::nan(""));
    }
    xs.push_back(t.time[i]);
    measured.push_back(t.measured_m[i]);
    predicted.push_back(t.predicted_m[i]);
  }
}

inline void write_predictions_csv(const std::string& path, const SeriesTable& t) {
  std::string out = "window,step,timestamp_iso8601,measured_m,predicted_m\n";
  std::int64_t step = 0;
  for (std::size_t i = 0; i < t.time.size(); ++i) {
    step = (i > 0 && t.window[i] == t.window[i - 1]) ? step + 1 : 0;
    out += std::to_string(t.window[i]) + "," + std::to_string(step) + "," +
           format_utc(static_cast<UtcTime>(t.time[i])) + "," + num(t.measured_m[i]) + "," +
           num(t.predicted_m[i]) + "\n";
  }
  write_text(path, out);
}

inline void plot_timeseries(const std::string& path, const std::string& title,
                            const SeriesTable& t, ArchitectureKind kind) {
  std::vector<double> xs, measured, predicted;
  series_with_breaks(t, xs, measured, predicted);
  SvgChart chart(title, "time (UTC)", "water level (m, MSL)");
  chart.x_as_time(true);
  chart.add_line("measured", "#000000", xs, measured, false, 2.0);
  chart.add_line(arch_name(kind), arch_color(kind), xs, predicted);
  chart.write(path);
}

inline void plot_scatter(const std::string& path, const std::string& title,
                         const SeriesTable& t, ArchitectureKind kind) {
  const double cc = correlation_coefficient(t.predicted_m, t.measured_m);
  SvgChart chart(title, "verified water level (m, MSL)", "predicted water level (m, MSL)");
  chart.add_points("", arch_color(kind), t.measured_m, t.predicted_m);
  chart.add_diagonal_guide();
  char ann[64];
  std::snprintf(ann, sizeof(ann), "cc = %.3f", cc);
  chart.annotate(ann);
  chart.write(path);
}

// window index holding the largest |surge| in a partition; the synthetic
// analogue of an extreme-event case study
inline std::int64_t most_extreme_window(const SampleSet& part) {
  std::int64_t best = 0;
  double best_mag = -1.0;
  for (std::int64_t w = 0; w < part.count(); ++w) {
    for (std::int64_t h = 0; h < part.window_len; ++h) {
      const double mag = std::abs(part.surge_at(w, h));
      if (mag > best_mag) {
        best_mag = mag;
        best = w;
      }
    }
  }
  return best;
}

inline nlohmann::json metrics_to_json(const MetricsReport& report, const std::string& fingerprint,
                                      std::int64_t window_hours, std::int64_t stride,
                                      UtcTime train_end, std::int64_t lstm_units,
                                      double dropout) {
  nlohmann::json j;
  j["schema_version"] = 1;
  j["architecture"] = arch_name(report.arch);
  j["dataset_fingerprint"] = fingerprint;
  j["protocol"] = {{"learning_rate", report.cfg.learning_rate},
                   {"batch_size", report.cfg.batch_size},
                   {"epochs", report.cfg.epochs},
                   {"repeats", report.cfg.repeats},
                   {"seed", report.cfg.seed},
                   {"window_hours", window_hours},
                   {"stride_hours", stride},
                   {"train_end", format_utc(train_end)},
                   {"lstm_units", lstm_units},
                   {"dropout_rate", dropout}};
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& r : report.runs) {
    nlohmann::json run;
    run["run"] = r.run;
    run["init_seed"] = r.init_seed;
    run["diverged"] = r.diverged;
    if (r.diverged) {
      run["diverged_epoch"] = r.diverged_epoch;
    } else {
      run["train_loss"] = r.train_loss;
      run["train_r2"] = r.train_r2;
      run["test_loss"] = r.test_loss;
      run["test_r2"] = r.test_r2;
      run["val_loss"] = r.val_loss;
    }
    runs.push_back(std::move(run));
  }
  j["runs"] = runs;
  j["excluded_runs"] = report.excluded_runs;
  j["means"] = {{"train_loss", report.mean_train_loss},
                {"train_r2", report.mean_train_r2},
                {"test_loss", report.mean_test_loss},
                {"test_r2", report.mean_test_r2}};
  return j;
}

struct RunDirData {
  std::string dir;
  nlohmann::json metrics;
  nlohmann::json timing;
};

inline nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw config_error("cannot read " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw data_error(path + ": " + e.what());
  }
  return j;
}

}  // namespace detail

// ---- ingest ----

inline int cmd_ingest(const std::string& out_dir, bool synthetic, std::uint64_t seed,
                      std::int64_t windows, std::int64_t window_hours, std::int64_t stride,
                      const std::string& train_end_s, double train_fraction,
                      const std::string& grid_in, const std::string& gauge_in,
                      const std::string& harmonic_in, const std::string& station,
                      const std::string& begin_s, const std::string& end_s,
                      const std::string& cache_dir, HttpTransport* transport) {
  fs::create_directories(out_dir);
  const std::string grid_out = (fs::path(out_dir) / "grid.ssg").string();
  const std::string gauge_out = (fs::path(out_dir) / "gauge.csv").string();
  const std::string harmonic_out = (fs::path(out_dir) / "harmonic.csv").string();

  if (synthetic) {
    SyntheticConfig sc;
    sc.seed = seed;
    sc.n_windows = windows;
    sc.window_len = window_hours;
    sc.stride = stride;
    sc.train_fraction = train_fraction;
    if (!train_end_s.empty()) sc.train_end = parse_utc(train_end_s);
    SyntheticData data = synthetic_storm_generate(sc);
    write_grid_series(grid_out, data.grid);
    write_series_csv(gauge_out, data.gauge.series);
    write_series_csv(harmonic_out, data.harmonic.series);
  } else if (!station.empty()) {
    if (begin_s.empty() || end_s.empty()) {
      throw config_error("station ingest needs --begin and --end");
    }
    if (transport == nullptr) throw config_error("no transport available for station ingest");
    StationQuery q;
    q.station_id = station;
    q.begin = parse_utc(begin_s);
    q.end = parse_utc(end_s);
    NoaaClient client(*transport, CacheStore(cache_dir));
    GaugeSeries gauge = client.fetch_gauge(q);
    HarmonicSeries harmonic = client.fetch_predictions(q);
    write_series_csv(gauge_out, gauge.series);
    write_series_csv(harmonic_out, harmonic.series);
    if (!grid_in.empty()) {
      GridSeries g = load_grid_series(grid_in);
      write_grid_series(grid_out, g);
    } else {
      detail::info("note: no --grid source given; wrote gauge/harmonic CSVs only");
    }
  } else {
    if (grid_in.empty() || gauge_in.empty() || harmonic_in.empty()) {
      throw config_error("ingest needs --synthetic, --station, or all of --grid/--gauge/--harmonic");
    }
    GridSeries g = load_grid_series(grid_in);
    write_grid_series(grid_out, g);
    write_series_csv(gauge_out, load_series_csv(gauge_in));
    write_series_csv(harmonic_out, load_series_csv(harmonic_in));
  }

  // coverage summary
  if (fs::exists(grid_out)) {
    auto d = detail::load_data_dir(out_dir);
    const auto& gs = *d.grid;
    std::int64_t gap_hours = 0;
    for (const auto& g : gs.gaps) gap_hours += g.length;
    SampleSet samples = window_samples(d.grid, d.gauge, d.harmonic, window_hours, stride);
    detail::info("grid: %s .. %s (%lld hourly steps, %lld gap hours)",
                 format_utc(gs.start).c_str(), format_utc(gs.end()).c_str(),
                 static_cast<long long>(gs.steps), static_cast<long long>(gap_hours));
    detail::info("gauge: %s .. %s (%lld steps)", format_utc(d.gauge.series.start).c_str(),
                 format_utc(d.gauge.series.end()).c_str(),
                 static_cast<long long>(d.gauge.series.steps()));
    detail::info("windows: %lld of length %lldh at stride %lldh (%lld dropped at gaps)",
                 static_cast<long long>(samples.count()), static_cast<long long>(window_hours),
                 static_cast<long long>(stride), static_cast<long long>(samples.dropped_windows));
  } else {
    auto gauge = load_series_csv(gauge_out);
    detail::info("gauge: %s .. %s (%lld steps)", format_utc(gauge.start).c_str(),
                 format_utc(gauge.end()).c_str(), static_cast<long long>(gauge.steps()));
  }
  return kExitOk;
}

// ---- train ----

inline int cmd_train(const std::string& data_dir, const std::string& arch,
                     const TrainConfig& cfg, std::int64_t window_hours, std::int64_t stride,
                     UtcTime train_end, std::int64_t lstm_units, double dropout,
                     const std::string& out_dir, const KvConfig& resolved) {
  const ArchitectureKind kind = parse_arch(arch);
  auto data = detail::load_data_dir(data_dir);
  auto prep = detail::prepare(data, window_hours, stride, train_end);
  detail::info("windows: train=%lld val=%lld test=%lld",
               static_cast<long long>(prep.split.train.count()),
               static_cast<long long>(prep.split.val.count()),
               static_cast<long long>(prep.split.test.count()));

  fs::create_directories(fs::path(out_dir) / "checkpoints");
  fs::create_directories(fs::path(out_dir) / "plots");
  resolved.save((fs::path(out_dir) / "config.resolved").string());

  Dataset train_ds = as_dataset(prep.split.train, prep.standardizer);
  Dataset val_ds = as_dataset(prep.split.val, prep.standardizer);
  Dataset test_ds = as_dataset(prep.split.test, prep.standardizer);

  ModelHyper proto;
  proto.kind = kind;
  proto.steps = window_hours;
  proto.grid = GridSpec{GridSeries::kRows, GridSeries::kCols, GridSeries::kChannels};
  proto.lstm_units = lstm_units;
  proto.dropout_rate = dropout;

  HoldoutHooks hooks;
  hooks.warn = detail::warn;
  hooks.on_run = [&](int run, ModelGraph& model, const RunMetrics&) {
    const std::string ckpt =
        (fs::path(out_dir) / "checkpoints" / ("run_" + std::to_string(run) + ".ckpt")).string();
    save_checkpoint(ckpt, model, prep.standardizer, prep.fingerprint, stride, train_end);
    if (run == 0) {
      auto table = detail::predict_table(model, prep.split.test, prep.standardizer,
                                         cfg.batch_size);
      detail::write_predictions_csv((fs::path(out_dir) / "predictions_test.csv").string(),
                                    table);
      detail::plot_timeseries((fs::path(out_dir) / "plots" / "timeseries_test.svg").string(),
                              std::string("Test partition: ") + arch_name(kind), table, kind);
      detail::plot_scatter((fs::path(out_dir) / "plots" / "scatter_test.svg").string(),
                           std::string("Predicted vs verified: ") + arch_name(kind), table,
                           kind);
      // extreme-window case study
      const std::int64_t w = detail::most_extreme_window(prep.split.test);
      SampleSet focus = prep.split.test.with_starts(
          {prep.split.test.starts[static_cast<std::size_t>(w)]});
      auto focus_table = detail::predict_table(model, focus, prep.standardizer, 1);
      detail::plot_timeseries(
          (fs::path(out_dir) / "plots" / "timeseries_extreme.svg").string(),
          std::string("Extreme test window: ") + arch_name(kind), focus_table, kind);
    }
  };

  MetricsReport report = holdout_repeat(kind, proto, train_ds, val_ds, test_ds, cfg, hooks);

  // metrics.json is fully deterministic; wall-clock times go to timing.json
  nlohmann::json metrics = detail::metrics_to_json(report, prep.fingerprint, window_hours,
                                                   stride, train_end, lstm_units, dropout);
  detail::write_text((fs::path(out_dir) / "metrics.json").string(), metrics.dump(2) + "\n");
  nlohmann::json timing;
  timing["schema_version"] = 1;
  timing["runs"] = nlohmann::json::array();
  for (const auto& r : report.runs) {
    timing["runs"].push_back({{"run", r.run}, {"training_time_s", r.training_time_s}});
  }
  timing["mean_training_time_s"] = report.mean_training_time_s;
  detail::write_text((fs::path(out_dir) / "timing.json").string(), timing.dump(2) + "\n");

  {
    std::string csv = "run,epoch,train_loss,val_loss\n";
    for (const auto& r : report.runs) {
      for (std::size_t e = 0; e < r.curve.size(); ++e) {
        csv += std::to_string(r.run) + "," + std::to_string(e + 1) + "," +
               detail::num(r.curve[e].train_loss) + "," + detail::num(r.curve[e].val_loss) +
               "\n";
      }
    }
    detail::write_text((fs::path(out_dir) / "loss_curves.csv").string(), csv);
  }
  {
    SvgChart chart(std::string("Training and validation loss: ") + arch_name(kind), "epoch",
                   "MSE (standardized)");
    std::vector<double> epochs;
    for (std::int64_t e = 1; e <= cfg.epochs; ++e) epochs.push_back(static_cast<double>(e));
    bool first = true;
    for (const auto& r : report.runs) {
      if (r.diverged) continue;
      std::vector<double> tl, vl;
      for (const auto& p : r.curve) {
        tl.push_back(p.train_loss);
        vl.push_back(p.val_loss);
      }
      chart.add_line(first ? "train" : "", detail::arch_color(kind), epochs, tl, false,
                     first ? 2.0 : 1.0);
      chart.add_line(first ? "validation" : "", "#888888", epochs, vl, true, first ? 2.0 : 1.0);
      first = false;
    }
    chart.write((fs::path(out_dir) / "plots" / "loss_curves.svg").string());
  }

  detail::info("%s: mean train loss %.4f R2 %.3f | mean test loss %.4f R2 %.3f | %d run(s) excluded",
               arch_name(kind), report.mean_train_loss, report.mean_train_r2,
               report.mean_test_loss, report.mean_test_r2, report.excluded_runs);
  return kExitOk;
}

// ---- evaluate ----

inline int cmd_evaluate(const std::string& ckpt_path, const std::string& data_dir,
                        const std::string& partition, const std::string& window_spec,
                        std::int64_t batch, const std::string& out_dir) {
  LoadedCheckpoint loaded = load_checkpoint(ckpt_path);
  if (!loaded.standardizer) {
    throw config_error(ckpt_path + ": checkpoint lacks a standardizer; cannot evaluate");
  }
  auto data = detail::load_data_dir(data_dir);
  if (data.grid->kRows != loaded.model.hyper().grid.height ||
      data.grid->kCols != loaded.model.hyper().grid.width) {
    throw config_error("checkpoint grid " + std::to_string(loaded.model.hyper().grid.height) +
                       "x" + std::to_string(loaded.model.hyper().grid.width) +
                       " incompatible with dataset 15x15");
  }
  const std::int64_t T = loaded.model.hyper().steps;
  const std::string fp =
      detail::dataset_fingerprint(data, T, loaded.window_stride, loaded.train_end);
  if (!loaded.dataset_fingerprint.empty() && fp != loaded.dataset_fingerprint) {
    detail::warn("dataset fingerprint differs from the checkpoint's training dataset");
  }

  SampleSet samples = window_samples(data.grid, data.gauge, data.harmonic, T,
                                     loaded.window_stride);
  SampleSet selected = samples;
  std::string label;
  if (!window_spec.empty()) {
    const auto slash = window_spec.find('/');
    if (slash == std::string::npos) {
      throw config_error("--window expects START/END ISO-8601 timestamps");
    }
    const UtcTime ws = parse_utc(window_spec.substr(0, slash));
    const UtcTime we = parse_utc(window_spec.substr(slash + 1));
    std::vector<std::int64_t> starts;
    for (std::int64_t w = 0; w < samples.count(); ++w) {
      const UtcTime s = samples.window_start_time(w);
      if (s >= ws && s + T * kSecondsPerHour <= we) {
        starts.push_back(samples.starts[static_cast<std::size_t>(w)]);
      }
    }
    if (starts.empty()) {
      throw data_error("no complete windows inside " + window_spec);
    }
    selected = samples.with_starts(std::move(starts));
    label = window_spec;
  } else if (partition != "all") {
    SplitResult split = chronological_split(samples, SplitSpec{loaded.train_end});
    if (partition == "train") {
      selected = split.train;
    } else if (partition == "val") {
      selected = split.val;
    } else if (partition == "test") {
      selected = split.test;
    } else {
      throw config_error("unknown partition '" + partition + "'");
    }
    label = partition + " partition";
  } else {
    label = "all windows";
  }

  Dataset ds = as_dataset(selected, *loaded.standardizer);
  EvalSeries ev = evaluate_series(loaded.model, ds, batch);
  const double cc = correlation_coefficient(ev.pred, ev.truth);

  fs::create_directories(out_dir);
  auto table = detail::predict_table(loaded.model, selected, *loaded.standardizer, batch);
  detail::write_predictions_csv((fs::path(out_dir) / "predictions.csv").string(), table);
  detail::plot_timeseries((fs::path(out_dir) / "timeseries.svg").string(),
                          "Predicted vs measured (" + label + ")", table,
                          loaded.model.hyper().kind);
  detail::plot_scatter((fs::path(out_dir) / "scatter.svg").string(),
                       "Predicted vs verified (" + label + ")", table,
                       loaded.model.hyper().kind);
  nlohmann::json j;
  j["schema_version"] = 1;
  j["checkpoint"] = ckpt_path;
  j["selection"] = label;
  j["windows"] = selected.count();
  j["loss"] = ev.loss;
  j["r2"] = ev.r2;
  j["cc"] = cc;
  detail::write_text((fs::path(out_dir) / "eval.json").string(), j.dump(2) + "\n");
  detail::info("%s on %s: loss=%.6f R2=%.4f cc=%.4f (%lld windows)",
               arch_name(loaded.model.hyper().kind), label.c_str(), ev.loss, ev.r2, cc,
               static_cast<long long>(selected.count()));
  return kExitOk;
}

// ---- compare ----

inline int cmd_compare(const std::vector<std::string>& run_dirs, const std::string& out_dir) {
  if (run_dirs.size() < 2) {
    throw config_error("compare needs at least 2 run directories");
  }
  std::vector<detail::RunDirData> runs;
  for (const auto& dir : run_dirs) {
    detail::RunDirData r;
    r.dir = dir;
    r.metrics = detail::read_json((fs::path(dir) / "metrics.json").string());
    r.timing = detail::read_json((fs::path(dir) / "timing.json").string());
    runs.push_back(std::move(r));
  }
  const std::string fp = runs[0].metrics.value("dataset_fingerprint", "");
  for (const auto& r : runs) {
    if (r.metrics.value("dataset_fingerprint", "") != fp) {
      throw config_error("run " + r.dir +
                         " was trained on a different dataset/standardizer than " +
                         runs[0].dir + "; refusing to compare");
    }
  }

  // Table 1 layout: model, train loss/R2, test loss/R2, training time
  struct Row {
    std::string model;
    double train_loss, train_r2, test_loss, test_r2, time_s;
  };
  std::vector<Row> rows;
  for (const auto& r : runs) {
    Row row;
    row.model = r.metrics.at("architecture").get<std::string>();
    row.train_loss = r.metrics.at("means").at("train_loss").get<double>();
    row.train_r2 = r.metrics.at("means").at("train_r2").get<double>();
    row.test_loss = r.metrics.at("means").at("test_loss").get<double>();
    row.test_r2 = r.metrics.at("means").at("test_r2").get<double>();
    row.time_s = r.timing.at("mean_training_time_s").get<double>();
    rows.push_back(row);
  }
  std::size_t best_loss = 0, best_r2 = 0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].test_loss < rows[best_loss].test_loss) best_loss = i;
    if (rows[i].test_r2 > rows[best_r2].test_r2) best_r2 = i;
  }

  char line[256];
  std::string table;
  std::snprintf(line, sizeof(line), "%-10s %12s %10s %12s %10s %19s\n", "Model", "Train Loss",
                "Train R2", "Test Loss", "Test R2", "Training Time (s)");
  table += line;
  table += std::string(78, '-') + "\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto cell = [&](double v, bool best) {
      char b[32];
      std::snprintf(b, sizeof(b), best ? "*%.4f*" : "%.4f", v);
      return std::string(b);
    };
    std::snprintf(line, sizeof(line), "%-10s %12s %10.3f %12s %10s %19.1f\n",
                  rows[i].model.c_str(), cell(rows[i].train_loss, false).c_str(),
                  rows[i].train_r2, cell(rows[i].test_loss, i == best_loss).c_str(),
                  cell(rows[i].test_r2, i == best_r2).c_str(), rows[i].time_s);
    table += line;
  }
  table += "(* best test value per column)\n";

  fs::create_directories(out_dir);
  detail::write_text((fs::path(out_dir) / "comparison.txt").string(), table);
  if (!detail::g_quiet) std::fputs(table.c_str(), stdout);

  nlohmann::json cj;
  cj["schema_version"] = 1;
  cj["dataset_fingerprint"] = fp;
  cj["rows"] = nlohmann::json::array();
  for (const auto& row : rows) {
    cj["rows"].push_back({{"model", row.model},
                          {"train_loss", row.train_loss},
                          {"train_r2", row.train_r2},
                          {"test_loss", row.test_loss},
                          {"test_r2", row.test_r2},
                          {"training_time_s", row.time_s}});
  }
  cj["best_test_loss"] = rows[best_loss].model;
  cj["best_test_r2"] = rows[best_r2].model;
  detail::write_text((fs::path(out_dir) / "comparison.json").string(), cj.dump(2) + "\n");

  // overlaid loss curves (mean across repeats per architecture)
  {
    SvgChart chart("Training and validation loss", "epoch", "MSE (standardized)");
    for (const auto& r : runs) {
      std::ifstream in((fs::path(r.dir) / "loss_curves.csv").string());
      if (!in) continue;
      std::string csv_line;
      std::getline(in, csv_line);  // header
      std::map<std::int64_t, std::pair<double, double>> sums;
      std::map<std::int64_t, int> counts;
      while (std::getline(in, csv_line)) {
        std::int64_t run_i, epoch;
        double tl, vl;
        if (std::sscanf(csv_line.c_str(), "%lld,%lld,%lf,%lf", (long long*)&run_i,
                        (long long*)&epoch, &tl, &vl) == 4) {
          sums[epoch].first += tl;
          sums[epoch].second += vl;
          counts[epoch] += 1;
        }
      }
      std::vector<double> xs, tl, vl;
      for (const auto& [epoch, s] : sums) {
        xs.push_back(static_cast<double>(epoch));
        tl.push_back(s.first / counts[epoch]);
        vl.push_back(s.second / counts[epoch]);
      }
      const auto kind = parse_arch(r.metrics.at("architecture").get<std::string>());
      chart.add_line(std::string(arch_name(kind)) + " train", detail::arch_color(kind), xs, tl);
      chart.add_line(std::string(arch_name(kind)) + " val", detail::arch_color(kind), xs, vl,
                     true);
    }
    chart.write((fs::path(out_dir) / "loss_overlay.svg").string());
  }

  // overlaid test-partition predictions (measured black + one line per model)
  {
    SvgChart chart("Predicted vs measured water levels (test partition)", "time (UTC)",
                   "water level (m, MSL)");
    chart.x_as_time(true);
    bool measured_added = false;
    for (const auto& r : runs) {
      std::ifstream in((fs::path(r.dir) / "predictions_test.csv").string());
      if (!in) continue;
      std::string csv_line;
      std::getline(in, csv_line);
      std::vector<double> xs, measured, predicted;
      std::int64_t prev_window = -1;
      while (std::getline(in, csv_line)) {
        std::int64_t w, step;
        char ts[40];
        double m, p;
        if (std::sscanf(csv_line.c_str(), "%lld,%lld,%39[^,],%lf,%lf", (long long*)&w,
                        (long long*)&step, ts, &m, &p) == 5) {
          if (prev_window >= 0 && w != prev_window) {
            xs.push_back(std::nan(""));
            measured.push_back(std::nan(""));
            predicted.push_back(std::nan(""));
          }
          prev_window = w;
          xs.push_back(static_cast<double>(parse_utc(ts)));
          measured.push_back(m);
          predicted.push_back(p);
        }
      }
      if (!measured_added) {
        chart.add_line("measured", "#000000", xs, measured, false, 2.0);
        measured_added = true;
      }
      const auto kind = parse_arch(r.metrics.at("architecture").get<std::string>());
      chart.add_line(arch_name(kind), detail::arch_color(kind), xs, predicted);
    }
    chart.write((fs::path(out_dir) / "timeseries_overlay.svg").string());
  }
  return kExitOk;
}

// ---- cache ----

inline int cmd_cache(const std::string& op, const std::string& dir) {
  CacheStore store{fs::path(dir)};
  if (op == "list") {
    auto entries = store.list();
    detail::info("%zu cache entr%s in %s", entries.size(), entries.size() == 1 ? "y" : "ies",
                 dir.c_str());
    for (const auto& e : entries) {
      detail::info("  %s  %8ju bytes  %s  %s", e.fingerprint.substr(0, 16).c_str(),
                   static_cast<std::uintmax_t>(e.payload_bytes), e.fetched_at.c_str(),
                   e.query.c_str());
    }
    return kExitOk;
  }
  if (op == "clear") {
    const auto n = store.clear();
    detail::info("removed %zu file(s) from %s", n, dir.c_str());
    return kExitOk;
  }
  if (op == "verify") {
    auto report = store.verify();
    detail::info("%zu entr%s verified", report.entries, report.entries == 1 ? "y" : "ies");
    for (const auto& fp : report.corrupted) detail::warn("corrupted payload: " + fp);
    for (const auto& fp : report.missing) detail::warn("missing payload: " + fp);
    return report.ok() ? kExitOk : kExitData;
  }
  throw config_error("unknown cache operation '" + op + "' (list|clear|verify)");
}

// ---- argument parsing ----

struct CliOptions {
  HttpTransport* transport = nullptr;  // injected; null disables network commands
};

inline int run(std::vector<std::string> args, const CliOptions& opts = {}) {
  CLI::App app{"surge: surrogate storm-surge modeling toolkit"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path, out_dir;
  std::uint64_t seed = 1;
  bool quiet = false;
  app.add_option("--config", config_path, "flat key=value experiment config file");
  app.add_option("--seed", seed, "master seed");
  app.add_option("--out", out_dir, "output directory");
  app.add_flag("--quiet", quiet, "suppress informational output");

  // ingest
  auto* ingest = app.add_subcommand("ingest", "build dataset files (synthetic, files, or station)");
  bool synthetic = false;
  std::int64_t windows = 512, window_hours = 36, stride = 24;
  double train_fraction = 0.75;
  std::string train_end_s, grid_in, gauge_in, harmonic_in, station, begin_s, end_s;
  ingest->add_flag("--synthetic", synthetic, "generate the seeded synthetic dataset");
  ingest->add_option("--windows", windows, "number of windows the synthetic span covers");
  ingest->add_option("--window-hours", window_hours, "window length in hours");
  ingest->add_option("--stride", stride, "window stride in hours");
  ingest->add_option("--train-fraction", train_fraction,
                     "share of synthetic windows placed before the split point");
  ingest->add_option("--train-end", train_end_s, "training split boundary (ISO-8601)");
  ingest->add_option("--grid", grid_in, "existing grid container to validate and copy");
  ingest->add_option("--gauge", gauge_in, "existing gauge CSV");
  ingest->add_option("--harmonic", harmonic_in, "existing harmonic CSV");
  ingest->add_option("--station", station, "tide station id to fetch (needs network or cache)");
  ingest->add_option("--begin", begin_s, "fetch range start (ISO-8601)");
  ingest->add_option("--end", end_s, "fetch range end (ISO-8601, exclusive)");

  // train
  auto* train = app.add_subcommand("train", "train one architecture with the holdout protocol");
  std::string data_dir, arch = "cnn-lstm";
  double lr = 0.001, dropout = 0.2;
  std::int64_t batch = 64, epochs = 15, repeats = 5, lstm_units = 128;
  std::string t_train_end = "2021-01-01";
  std::int64_t t_window_hours = 36, t_stride = 24;
  train->add_option("--data", data_dir, "dataset directory from `surge ingest`")->required();
  train->add_option("--arch", arch, "cnn-lstm | lstm | 3d-cnn");
  train->add_option("--lr", lr, "Adam learning rate");
  train->add_option("--batch", batch, "minibatch size");
  train->add_option("--epochs", epochs, "training epochs");
  train->add_option("--repeats", repeats, "independent holdout repetitions");
  train->add_option("--window-hours", t_window_hours, "window length in hours");
  train->add_option("--stride", t_stride, "window stride in hours");
  train->add_option("--train-end", t_train_end, "chronological split boundary");
  train->add_option("--units", lstm_units, "LSTM units");
  train->add_option("--dropout", dropout, "dropout rate in [0,1)");

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "evaluate a checkpoint on a dataset");
  std::string ckpt_path, partition = "test", window_spec;
  evaluate->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
  evaluate->add_option("--data", data_dir, "dataset directory")->required();
  evaluate->add_option("--partition", partition, "train | val | test | all");
  evaluate->add_option("--window", window_spec, "case-study window START/END (ISO-8601)");

  // compare
  auto* compare = app.add_subcommand("compare", "compare completed run directories");
  std::vector<std::string> run_dirs;
  compare->add_option("runs", run_dirs, "run directories (>= 2)");

  // cache
  auto* cache = app.add_subcommand("cache", "manage the station-data cache");
  std::string cache_op, cache_dir;
  cache->add_option("op", cache_op, "list | clear | verify")->required();
  cache->add_option("--dir", cache_dir, "cache directory (default $SURGE_CACHE_DIR or ./noaa_cache)");

  std::reverse(args.begin(), args.end());  // CLI11 consumes in reverse
  try {
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitConfig;
  }

  detail::g_quiet = quiet;
  if (cache_dir.empty()) {
    const char* env = std::getenv("SURGE_CACHE_DIR");
    cache_dir = env != nullptr ? env : "noaa_cache";
  }

  try {
    KvConfig file_cfg;
    if (!config_path.empty()) file_cfg = KvConfig::load(config_path);
    // precedence: explicit flag > config file > built-in default
    auto resolve_i = [&](const CLI::Option* o, const char* key, std::int64_t& v) {
      if (o->count() == 0) v = file_cfg.get_int(key, v);
    };
    auto resolve_f = [&](const CLI::Option* o, const char* key, double& v) {
      if (o->count() == 0) v = file_cfg.get_real(key, v);
    };
    auto resolve_s = [&](const CLI::Option* o, const char* key, std::string& v) {
      if (o->count() == 0) v = file_cfg.get(key, v);
    };
    if (app.count("--seed") == 0) {
      seed = static_cast<std::uint64_t>(file_cfg.get_int("seed", static_cast<std::int64_t>(seed)));
    }
    if (app.count("--out") == 0) out_dir = file_cfg.get("out", out_dir);

    if (ingest->parsed()) {
      if (ingest->count("--synthetic") == 0) synthetic = file_cfg.get_bool("synthetic", synthetic);
      resolve_i(ingest->get_option("--windows"), "windows", windows);
      resolve_i(ingest->get_option("--window-hours"), "window_hours", window_hours);
      resolve_i(ingest->get_option("--stride"), "stride", stride);
      resolve_f(ingest->get_option("--train-fraction"), "train_fraction", train_fraction);
      resolve_s(ingest->get_option("--train-end"), "train_end", train_end_s);
      if (out_dir.empty()) throw config_error("ingest needs --out");
      return cmd_ingest(out_dir, synthetic, seed, windows, window_hours, stride, train_end_s,
                        train_fraction, grid_in, gauge_in, harmonic_in, station, begin_s, end_s,
                        cache_dir, opts.transport);
    }
    if (train->parsed()) {
      resolve_s(train->get_option("--arch"), "arch", arch);
      resolve_f(train->get_option("--lr"), "learning_rate", lr);
      resolve_i(train->get_option("--batch"), "batch_size", batch);
      resolve_i(train->get_option("--epochs"), "epochs", epochs);
      resolve_i(train->get_option("--repeats"), "repeats", repeats);
      resolve_i(train->get_option("--window-hours"), "window_hours", t_window_hours);
      resolve_i(train->get_option("--stride"), "stride", t_stride);
      resolve_s(train->get_option("--train-end"), "train_end", t_train_end);
      resolve_i(train->get_option("--units"), "lstm_units", lstm_units);
      resolve_f(train->get_option("--dropout"), "dropout_rate", dropout);
      if (out_dir.empty()) throw config_error("train needs --out");
      if (dropout < 0.0 || dropout >= 1.0) {
        throw config_error("dropout rate must be in [0,1)");
      }
      TrainConfig cfg;
      cfg.learning_rate = lr;
      cfg.batch_size = batch;
      cfg.epochs = epochs;
      cfg.repeats = repeats;
      cfg.seed = seed;
      cfg.validate();
      KvConfig resolved;
      resolved.set("command", "train");
      resolved.set("data", data_dir);
      resolved.set("arch", arch);
      resolved.set("learning_rate", detail::num(lr));
      resolved.set("batch_size", std::to_string(batch));
      resolved.set("epochs", std::to_string(epochs));
      resolved.set("repeats", std::to_string(repeats));
      resolved.set("seed", std::to_string(seed));
      resolved.set("window_hours", std::to_string(t_window_hours));
      resolved.set("stride", std::to_string(t_stride));
      resolved.set("train_end", t_train_end);
      resolved.set("lstm_units", std::to_string(lstm_units));
      resolved.set("dropout_rate", detail::num(dropout));
      resolved.set("out", out_dir);
      return cmd_train(data_dir, arch, cfg, t_window_hours, t_stride, parse_utc(t_train_end),
                       lstm_units, dropout, out_dir, resolved);
    }
    if (evaluate->parsed()) {
      if (out_dir.empty()) throw config_error("evaluate needs --out");
      return cmd_evaluate(ckpt_path, data_dir, partition, window_spec, batch, out_dir);
    }
    if (compare->parsed()) {
      if (out_dir.empty()) throw config_error("compare needs --out");
      return cmd_compare(run_dirs, out_dir);
    }
    if (cache->parsed()) {
      return cmd_cache(cache_op, cache_dir);
    }
    throw config_error("no subcommand given");
  } catch (const config_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitConfig;
  } catch (const divergence_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRuntime;
  } catch (const data_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitData;
  } catch (const parse_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitData;
  } catch (const metric_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitData;
  } catch (const transport_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitData;
  } catch (const io_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitData;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "fatal: %s\n", e.what());
    return kExitRuntime;
  }
}

}  // namespace surge::cli
