#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "surge/layers.hpp"

namespace surge {

enum class ArchitectureKind { CnnLstm, LstmOnly, Cnn3d };

inline const char* arch_name(ArchitectureKind k) {
  switch (k) {
    case ArchitectureKind::CnnLstm: return "cnn-lstm";
    case ArchitectureKind::LstmOnly: return "lstm";
    case ArchitectureKind::Cnn3d: return "3d-cnn";
  }
  return "?";
}

inline ArchitectureKind parse_arch(const std::string& s) {
  if (s == "cnn-lstm" || s == "cnnlstm") return ArchitectureKind::CnnLstm;
  if (s == "lstm" || s == "lstm-only") return ArchitectureKind::LstmOnly;
  if (s == "3d-cnn" || s == "3dcnn" || s == "cnn3d") return ArchitectureKind::Cnn3d;
  throw config_error("unknown architecture '" + s + "' (expected cnn-lstm, lstm or 3d-cnn)");
}

struct GridSpec {
  std::int64_t height = 15;
  std::int64_t width = 15;
  std::int64_t channels = 3;
};

struct ModelHyper {
  ArchitectureKind kind = ArchitectureKind::CnnLstm;
  std::int64_t steps = 36;  // default sequence length (forward accepts any T)
  GridSpec grid;
  std::int64_t lstm_units = 128;
  double dropout_rate = 0.2;
  std::uint64_t init_seed = 0;
};

// An ordered layer composition: atmospheric encoder, per-step fusion of the
// tidal input by feature concatenation, then the dense head. Owns all
// Parameters; building is pure given (hyper, seed).
class ModelGraph {
public:
  explicit ModelGraph(const ModelHyper& hyper) : hyper_(hyper) {
    if (hyper.steps < 1 || hyper.grid.height < 1 || hyper.grid.width < 1 ||
        hyper.grid.channels < 1) {
      throw config_error("model: input extents must be positive");
    }
    if (hyper.lstm_units < 1) throw config_error("model: lstm_units must be positive");
    Rng rng(derive_seed(hyper.init_seed, "init"));
    const std::uint64_t drop_seed = derive_seed(hyper.init_seed, "dropout");
    const std::int64_t C = hyper.grid.channels;
    const std::int64_t flat = hyper.grid.height * hyper.grid.width;
    switch (hyper.kind) {
      case ArchitectureKind::CnnLstm: {
        enc<Conv2DLayer>("conv1", 3, 3, C, 32, 1, Padding::Same, rng);
        enc<BatchNormLayer>("bn1", 32);
        enc<ReluLayer>("relu1");
        enc<Conv2DLayer>("conv2", 3, 3, 32, 16, 1, Padding::Same, rng);
        enc<BatchNormLayer>("bn2", 16);
        enc<ReluLayer>("relu2");
        enc<FlattenLayer>("flatten", 3);
        enc<DenseLayer>("enc_dense", flat * 16, 16, Activation::Relu, rng);
        enc<LSTMLayer>("lstm", 16, hyper.lstm_units, rng);
        head<DenseLayer>("head_dense", hyper.lstm_units + 1, 64, Activation::Relu, rng);
        head<DropoutLayer>("dropout", hyper.dropout_rate, drop_seed);
        head<DenseLayer>("output", 64, 1, Activation::Linear, rng);
        break;
      }
      case ArchitectureKind::LstmOnly: {
        enc<FlattenLayer>("flatten", 3);
        enc<LSTMLayer>("lstm1", flat * C, hyper.lstm_units, rng);
        enc<LSTMLayer>("lstm2", hyper.lstm_units, hyper.lstm_units, rng);
        head<DenseLayer>("head_dense", hyper.lstm_units + 1, 64, Activation::Relu, rng);
        head<DropoutLayer>("dropout", hyper.dropout_rate, drop_seed);
        head<DenseLayer>("output", 64, 1, Activation::Linear, rng);
        break;
      }
      case ArchitectureKind::Cnn3d: {
        enc<Conv3DLayer>("conv1", 3, 3, 3, C, 64, 1, Padding::Same, rng);
        enc<BatchNormLayer>("bn1", 64);
        enc<ReluLayer>("relu1");
        enc<Conv3DLayer>("conv2", 3, 3, 3, 64, 32, 1, Padding::Same, rng);
        enc<BatchNormLayer>("bn2", 32);
        enc<ReluLayer>("relu2");
        enc<FlattenLayer>("flatten", 3);
        enc<DenseLayer>("enc_dense", flat * 32, 64, Activation::Relu, rng);
        head<DenseLayer>("head_dense", 64 + 1, 64, Activation::Relu, rng);
        head<DropoutLayer>("dropout", hyper.dropout_rate, drop_seed);
        head<DenseLayer>("output", 64, 1, Activation::Linear, rng);
        break;
      }
    }
  }

  const ModelHyper& hyper() const { return hyper_; }
  ArchitectureKind kind() const { return hyper_.kind; }

  // atmos: (T,H,W,C) or (B,T,H,W,C); tide: matching (T,1) or (B,T,1).
  // Output shape mirrors tide. Any sequence length T >= 1 is accepted.
  Var forward(Tape& tape, Var atmos, Var tide, Mode mode) {
    validate_inputs(atmos.value(), tide.value());
    Var h = atmos;
    for (auto& layer : encoder_) h = layer->forward(tape, h, mode);
    Var fused = concat({h, tide}, h.value().rank() - 1);
    for (auto& layer : head_) fused = layer->forward(tape, fused, mode);
    return fused;
  }

  Tensor forward_infer(const Tensor& atmos, const Tensor& tide) {
    Tape tape(false);
    return forward(tape, tape.leaf(atmos), tape.leaf(tide), Mode::Infer).value();
  }

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out;
    for (auto& l : encoder_) l->collect_params(out);
    for (auto& l : head_) l->collect_params(out);
    return out;
  }

  std::vector<std::pair<std::string, Tensor*>> buffers() {
    std::vector<std::pair<std::string, Tensor*>> out;
    for (auto& l : encoder_) l->collect_buffers(out);
    for (auto& l : head_) l->collect_buffers(out);
    return out;
  }

  std::int64_t parameter_count() {
    std::int64_t n = 0;
    for (auto* p : parameters()) n += p->value.numel();
    return n;
  }

  void zero_grad() {
    for (auto* p : parameters()) p->zero_grad();
  }

  std::vector<std::string> layer_kinds() const {
    std::vector<std::string> out;
    for (const auto& l : encoder_) out.emplace_back(l->kind());
    out.emplace_back("concat");
    for (const auto& l : head_) out.emplace_back(l->kind());
    return out;
  }

  std::size_t count_kind(const std::string& kind) const {
    std::size_t n = 0;
    for (const auto& k : layer_kinds()) {
      if (k == kind) ++n;
    }
    return n;
  }

  Layer* find_layer(const std::string& name) {
    for (auto& l : encoder_) {
      if (l->name() == name) return l.get();
    }
    for (auto& l : head_) {
      if (l->name() == name) return l.get();
    }
    return nullptr;
  }

private:
  void validate_inputs(const Tensor& atmos, const Tensor& tide) const {
    const Shape& as = atmos.shape();
    const Shape& ts = tide.shape();
    if (as.size() != 4 && as.size() != 5) {
      throw dimension_error("forward: atmos must be (T,H,W,C) or (B,T,H,W,C), got " +
                            shape_str(as));
    }
    if (ts.size() != as.size() - 2) {
      throw dimension_error("forward: tide rank does not match atmos: " + shape_str(ts) +
                            " vs " + shape_str(as));
    }
    const bool batched = as.size() == 5;
    const std::int64_t T = as[batched ? 1 : 0];
    if (as[batched ? 2 : 1] != hyper_.grid.height || as[batched ? 3 : 2] != hyper_.grid.width ||
        as[batched ? 4 : 3] != hyper_.grid.channels) {
      throw dimension_error("forward: atmos " + shape_str(as) + " does not match grid (" +
                            std::to_string(hyper_.grid.height) + "," +
                            std::to_string(hyper_.grid.width) + "," +
                            std::to_string(hyper_.grid.channels) + ")");
    }
    if (batched && ts[0] != as[0]) {
      throw dimension_error("forward: batch extents differ: " + shape_str(as) + " vs " +
                            shape_str(ts));
    }
    if (ts[batched ? 1 : 0] != T || ts.back() != 1) {
      throw dimension_error("forward: tide must be (.., " + std::to_string(T) + ", 1), got " +
                            shape_str(ts));
    }
    if (!atmos.all_finite() || !tide.all_finite()) {
      throw data_error("forward: non-finite values in model input");
    }
  }

  template <typename L, typename... Args>
  void enc(Args&&... args) {
    encoder_.push_back(std::make_unique<L>(std::forward<Args>(args)...));
  }

  template <typename L, typename... Args>
  void head(Args&&... args) {
    head_.push_back(std::make_unique<L>(std::forward<Args>(args)...));
  }

  ModelHyper hyper_;
  std::vector<std::unique_ptr<Layer>> encoder_;
  std::vector<std::unique_ptr<Layer>> head_;
};

struct BuildOptions {
  double dropout_rate = 0.2;
  std::uint64_t seed = 0;
};

inline ModelGraph build_cnn_lstm(std::int64_t steps, GridSpec grid, std::int64_t lstm_units,
                                 BuildOptions opts = {}) {
  return ModelGraph(ModelHyper{ArchitectureKind::CnnLstm, steps, grid, lstm_units,
                               opts.dropout_rate, opts.seed});
}

inline ModelGraph build_lstm(std::int64_t steps, GridSpec grid, std::int64_t lstm_units,
                             BuildOptions opts = {}) {
  return ModelGraph(ModelHyper{ArchitectureKind::LstmOnly, steps, grid, lstm_units,
                               opts.dropout_rate, opts.seed});
}

inline ModelGraph build_3dcnn(std::int64_t steps, GridSpec grid, BuildOptions opts = {}) {
  return ModelGraph(
      ModelHyper{ArchitectureKind::Cnn3d, steps, grid, 128, opts.dropout_rate, opts.seed});
}

inline ModelGraph build_model(ArchitectureKind kind, std::int64_t steps, GridSpec grid,
                              std::int64_t lstm_units, BuildOptions opts = {}) {
  return ModelGraph(ModelHyper{kind, steps, grid, lstm_units, opts.dropout_rate, opts.seed});
}

}  // namespace surge
