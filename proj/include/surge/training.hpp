#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "surge/metrics.hpp"
#include "surge/models.hpp"

namespace surge {

// Defaults follow the training protocol exactly: Adam at 0.001, batch 64,
// 15 epochs, 5 repetitions of the holdout run.
struct TrainConfig {
  double learning_rate = 0.001;
  std::int64_t batch_size = 64;
  std::int64_t epochs = 15;
  std::int64_t repeats = 5;
  std::uint64_t seed = 0;

  void validate() const {
    if (learning_rate <= 0) throw config_error("learning_rate must be positive");
    if (batch_size < 1) throw config_error("batch_size must be positive");
    if (epochs < 1) throw config_error("epochs must be positive");
    if (repeats < 1) throw config_error("repeats must be positive");
  }
};

inline Var mse_loss(Tape& tape, Var pred, Var truth) {
  if (pred.shape() != truth.shape()) {
    throw dimension_error("mse_loss: shapes " + shape_str(pred.shape()) + " vs " +
                          shape_str(truth.shape()));
  }
  Var d = sub(pred, truth);
  return reduce_mean(mul(d, d), {});
}

// Bias-corrected Adam. β1=0.9, β2=0.999, ε=1e-8.
class AdamState {
public:
  explicit AdamState(const std::vector<Parameter*>& params) {
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (const auto* p : params) {
      m_.emplace_back(static_cast<std::size_t>(p->value.numel()), 0.0);
      v_.emplace_back(static_cast<std::size_t>(p->value.numel()), 0.0);
    }
  }

  std::int64_t step_count() const { return t_; }

  void step(const std::vector<Parameter*>& params, double lr) {
    if (params.size() != m_.size()) {
      throw contract_error("adam: parameter list changed size");
    }
    ++t_;
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
      Parameter& p = *params[pi];
      const std::int64_t n = p.value.numel();
      const double* g = p.grad.data();
      for (std::int64_t i = 0; i < n; ++i) {
        if (!std::isfinite(g[i])) {
          throw data_error("adam: non-finite gradient in parameter '" + p.name + "'");
        }
      }
      // parameters are replaced, not mutated: older tapes may still share
      // the previous value buffer
      Tensor next = Tensor::uninitialized(p.value.shape());
      double* np = next.mutable_data();
      const double* old = p.value.data();
      double* m = m_[pi].data();
      double* v = v_[pi].data();
      for (std::int64_t i = 0; i < n; ++i) {
        m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * g[i];
        v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * g[i] * g[i];
        const double mhat = m[i] / c1;
        const double vhat = v[i] / c2;
        np[i] = old[i] - lr * mhat / (std::sqrt(vhat) + kEps);
      }
      p.value = std::move(next);
    }
  }

  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

private:
  std::int64_t t_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

// One training batch, already standardized.
struct Batch {
  Tensor atmos;   // (B,T,H,W,C)
  Tensor tide;    // (B,T,1)
  Tensor target;  // (B,T,1)
};

// A partition of samples plus a gatherer that materializes standardized
// batches on demand (windows may overlap, so slices are copied per batch).
struct Dataset {
  std::int64_t count = 0;
  std::function<Batch(const std::vector<std::int64_t>&)> gather;

  bool empty() const { return count == 0; }
};

struct EpochPoint {
  double train_loss;
  double val_loss;
};

struct FitResult {
  std::vector<EpochPoint> curve;
  double training_time_s = 0.0;
};

namespace detail {

inline std::vector<std::int64_t> iota_indices(std::int64_t n) {
  std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  return idx;
}

}  // namespace detail

// Mean loss over a partition in inference mode.
inline double evaluate_loss(ModelGraph& model, const Dataset& data, std::int64_t batch_size) {
  double weighted = 0.0;
  std::int64_t total = 0;
  auto idx = detail::iota_indices(data.count);
  for (std::int64_t i0 = 0; i0 < data.count; i0 += batch_size) {
    const auto n = std::min(batch_size, data.count - i0);
    std::vector<std::int64_t> sel(idx.begin() + i0, idx.begin() + i0 + n);
    Batch b = data.gather(sel);
    Tensor out = model.forward_infer(b.atmos, b.tide);
    weighted +=
        mse({out.data(), static_cast<std::size_t>(out.numel())},
            {b.target.data(), static_cast<std::size_t>(b.target.numel())}) *
        static_cast<double>(n);
    total += n;
  }
  return weighted / static_cast<double>(total);
}

struct EvalSeries {
  std::vector<double> pred;
  std::vector<double> truth;
  double loss = 0.0;
  double r2 = 0.0;
};

// Flattened infer-mode predictions over a partition, with loss and R².
inline EvalSeries evaluate_series(ModelGraph& model, const Dataset& data,
                                  std::int64_t batch_size) {
  EvalSeries out;
  auto idx = detail::iota_indices(data.count);
  for (std::int64_t i0 = 0; i0 < data.count; i0 += batch_size) {
    const auto n = std::min(batch_size, data.count - i0);
    std::vector<std::int64_t> sel(idx.begin() + i0, idx.begin() + i0 + n);
    Batch b = data.gather(sel);
    Tensor pred = model.forward_infer(b.atmos, b.tide);
    out.pred.insert(out.pred.end(), pred.data(), pred.data() + pred.numel());
    out.truth.insert(out.truth.end(), b.target.data(), b.target.data() + b.target.numel());
  }
  out.loss = mse(out.pred, out.truth);
  out.r2 = r_squared(out.pred, out.truth);
  return out;
}

// Shuffled-minibatch training for a fixed number of epochs. The last partial
// minibatch is kept. Per-epoch train loss is the sample-weighted mean of the
// batch losses (train mode); validation loss is evaluated in inference mode.
inline FitResult fit(ModelGraph& model, const Dataset& train, const Dataset& val,
                     const TrainConfig& cfg) {
  cfg.validate();
  if (train.empty()) throw data_error("fit: empty training set");
  if (val.empty()) throw data_error("fit: empty validation set");

  auto params = model.parameters();
  AdamState adam(params);
  Rng shuffle_rng(derive_seed(cfg.seed, "shuffle"));
  FitResult result;
  const auto t0 = std::chrono::steady_clock::now();

  auto order = detail::iota_indices(train.count);
  for (std::int64_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double weighted = 0.0;
    std::int64_t seen = 0;
    for (std::int64_t i0 = 0; i0 < train.count; i0 += cfg.batch_size) {
      const auto n = std::min(cfg.batch_size, train.count - i0);
      std::vector<std::int64_t> sel(order.begin() + i0, order.begin() + i0 + n);
      Batch b = train.gather(sel);
      model.zero_grad();
      double batch_loss;
      {
        Tape tape;
        Var pred = model.forward(tape, tape.leaf(b.atmos), tape.leaf(b.tide), Mode::Train);
        Var loss = mse_loss(tape, pred, tape.leaf(b.target));
        batch_loss = loss.value().scalar_value();
        if (!std::isfinite(batch_loss)) {
          throw divergence_error("fit: training loss diverged at epoch " +
                                     std::to_string(epoch),
                                 static_cast<int>(epoch));
        }
        tape.backward(loss);
      }
      adam.step(params, cfg.learning_rate);
      weighted += batch_loss * static_cast<double>(n);
      seen += n;
    }
    const double train_loss = weighted / static_cast<double>(seen);
    const double val_loss = evaluate_loss(model, val, cfg.batch_size);
    if (!std::isfinite(val_loss)) {
      throw divergence_error("fit: validation loss diverged at epoch " + std::to_string(epoch),
                             static_cast<int>(epoch));
    }
    result.curve.push_back(EpochPoint{train_loss, val_loss});
  }
  result.training_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

// ---- holdout repetition protocol ----

struct RunMetrics {
  int run = 0;
  std::uint64_t init_seed = 0;
  double train_loss = 0.0, train_r2 = 0.0;
  double test_loss = 0.0, test_r2 = 0.0;
  double val_loss = 0.0;
  double training_time_s = 0.0;
  bool diverged = false;
  int diverged_epoch = -1;
  std::vector<EpochPoint> curve;
};

struct MetricsReport {
  ArchitectureKind arch = ArchitectureKind::CnnLstm;
  TrainConfig cfg;
  std::vector<RunMetrics> runs;
  double mean_train_loss = 0.0, mean_train_r2 = 0.0;
  double mean_test_loss = 0.0, mean_test_r2 = 0.0;
  double mean_training_time_s = 0.0;
  int excluded_runs = 0;

  void finalize_means() {
    double tl = 0, tr = 0, sl = 0, sr = 0, tt = 0;
    int n = 0;
    excluded_runs = 0;
    for (const auto& r : runs) {
      if (r.diverged) {
        ++excluded_runs;
        continue;
      }
      tl += r.train_loss;
      tr += r.train_r2;
      sl += r.test_loss;
      sr += r.test_r2;
      tt += r.training_time_s;
      ++n;
    }
    const double d = n > 0 ? static_cast<double>(n) : 1.0;
    mean_train_loss = n ? tl / d : std::nan("");
    mean_train_r2 = n ? tr / d : std::nan("");
    mean_test_loss = n ? sl / d : std::nan("");
    mean_test_r2 = n ? sr / d : std::nan("");
    mean_training_time_s = n ? tt / d : std::nan("");
  }
};

struct HoldoutHooks {
  // called after each completed (non-diverged) run with the trained model
  std::function<void(int run, ModelGraph& model, const RunMetrics&)> on_run = nullptr;
  std::function<void(const std::string&)> warn = nullptr;
};

// Trains `cfg.repeats` models from fresh seeded initializations and reports
// per-run and mean metrics. Diverged runs are flagged and excluded from the
// means with a warning rather than silently averaged.
inline MetricsReport holdout_repeat(ArchitectureKind kind, const ModelHyper& proto,
                                    const Dataset& train, const Dataset& val,
                                    const Dataset& test, const TrainConfig& cfg,
                                    const HoldoutHooks& hooks = {}) {
  cfg.validate();
  MetricsReport report;
  report.arch = kind;
  report.cfg = cfg;
  for (int run = 0; run < cfg.repeats; ++run) {
    RunMetrics rm;
    rm.run = run;
    rm.init_seed = derive_seed(cfg.seed, arch_name(kind), static_cast<std::uint64_t>(run));
    ModelHyper hyper = proto;
    hyper.kind = kind;
    hyper.init_seed = rm.init_seed;
    ModelGraph model(hyper);
    TrainConfig run_cfg = cfg;
    run_cfg.seed = derive_seed(cfg.seed, "fit", static_cast<std::uint64_t>(run));
    try {
      FitResult fr = fit(model, train, val, run_cfg);
      rm.curve = fr.curve;
      rm.training_time_s = fr.training_time_s;
      EvalSeries tr = evaluate_series(model, train, cfg.batch_size);
      EvalSeries te = evaluate_series(model, test, cfg.batch_size);
      rm.train_loss = tr.loss;
      rm.train_r2 = tr.r2;
      rm.test_loss = te.loss;
      rm.test_r2 = te.r2;
      rm.val_loss = fr.curve.empty() ? 0.0 : fr.curve.back().val_loss;
      if (hooks.on_run) hooks.on_run(run, model, rm);
    } catch (const divergence_error& e) {
      rm.diverged = true;
      rm.diverged_epoch = e.epoch;
      rm.train_loss = rm.train_r2 = rm.test_loss = rm.test_r2 = std::nan("");
      if (hooks.warn) {
        hooks.warn("run " + std::to_string(run) + " of " + arch_name(kind) +
                   " diverged at epoch " + std::to_string(e.epoch) +
                   "; excluded from means");
      }
    }
    report.runs.push_back(std::move(rm));
  }
  report.finalize_means();
  return report;
}

}  // namespace surge
