#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "surge/autodiff.hpp"
#include "surge/rng.hpp"

namespace surge {

enum class Mode { Train, Infer };

enum class Activation { Linear, Relu };

enum class Padding { Same, Valid };

inline const char* activation_name(Activation a) {
  return a == Activation::Relu ? "relu" : "linear";
}

// Glorot-uniform draw in row-major order; the shared convention for every
// weight tensor so checkpoints are reproducible from (seed, architecture).
inline Tensor glorot_uniform(const Shape& shape, std::int64_t fan_in, std::int64_t fan_out,
                             Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> data(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& v : data) v = rng.uniform(-limit, limit);
  return Tensor(shape, std::move(data));
}

class Layer {
public:
  virtual ~Layer() = default;
  virtual const char* kind() const = 0;
  virtual const std::string& name() const = 0;
  virtual Var forward(Tape& tape, Var x, Mode mode) = 0;
  virtual void collect_params(std::vector<Parameter*>& out) {}
  // Non-trainable state that must survive a checkpoint round trip.
  virtual void collect_buffers(std::vector<std::pair<std::string, Tensor*>>& out) {}
};

namespace detail {

inline std::vector<double>& scratch_cols() {
  thread_local std::vector<double> buf;
  return buf;
}

inline std::vector<double>& scratch_aux() {
  thread_local std::vector<double> buf;
  return buf;
}

inline std::int64_t conv_out_extent(std::int64_t in, std::int64_t k, std::int64_t stride,
                                    std::int64_t pad) {
  return (in + 2 * pad - k) / stride + 1;
}

}  // namespace detail

// ---- Dense: y = activation(x·W + b), applied per leading position ----

class DenseLayer : public Layer {
public:
  DenseLayer(std::string name, std::int64_t in, std::int64_t out, Activation activation,
             Rng& rng)
      : name_(std::move(name)),
        in_(in),
        out_(out),
        activation_(activation),
        weight_(name_ + ".weight", glorot_uniform({in, out}, in, out, rng)),
        bias_(name_ + ".bias", Tensor::zeros({out})) {
    if (in < 1 || out < 1) {
      throw config_error("dense " + name_ + ": extents must be positive");
    }
  }

  const char* kind() const override { return "dense"; }
  const std::string& name() const override { return name_; }
  std::int64_t in() const { return in_; }
  std::int64_t out() const { return out_; }
  Activation activation() const { return activation_; }
  Parameter& weight() { return weight_; }
  Parameter& bias() { return bias_; }

  Var forward(Tape& tape, Var x, Mode) override {
    const Shape& xs = x.shape();
    if (xs.empty() || xs.back() != in_) {
      throw dimension_error("dense " + name_ + ": input " + shape_str(xs) +
                            " does not end in " + std::to_string(in_));
    }
    const std::int64_t rows = x.value().numel() / in_;
    Var flat = reshape(x, {rows, in_});
    Var y = matmul(flat, tape.param(weight_));
    y = add(y, tape.param(bias_));
    if (activation_ == Activation::Relu) y = relu_op(y);
    Shape out_shape(xs.begin(), xs.end() - 1);
    out_shape.push_back(out_);
    return reshape(y, out_shape);
  }

  void collect_params(std::vector<Parameter*>& out) override {
    out.push_back(&weight_);
    out.push_back(&bias_);
  }

private:
  std::string name_;
  std::int64_t in_, out_;
  Activation activation_;
  Parameter weight_, bias_;
};

// ---- Conv2D, time-distributed over all leading axes ----
//
// Input (..,H,W,c_in) -> output (..,H',W',c_out); cross-correlation via
// per-chunk im2col + GEMM. The backward pass rebuilds the column matrix
// instead of keeping it alive, trading ~15% extra work for bounded memory.

class Conv2DLayer : public Layer {
public:
  Conv2DLayer(std::string name, std::int64_t kh, std::int64_t kw, std::int64_t c_in,
              std::int64_t c_out, std::int64_t stride, Padding padding, Rng& rng)
      : name_(std::move(name)),
        kh_(kh),
        kw_(kw),
        c_in_(c_in),
        c_out_(c_out),
        stride_(stride),
        padding_(padding),
        kernel_(name_ + ".kernel",
                glorot_uniform({kh, kw, c_in, c_out}, kh * kw * c_in, kh * kw * c_out, rng)),
        bias_(name_ + ".bias", Tensor::zeros({c_out})) {
    if (kh < 1 || kw < 1 || c_in < 1 || c_out < 1 || stride < 1) {
      throw config_error("conv2d " + name_ + ": extents must be positive");
    }
    if (padding == Padding::Same && (kh % 2 == 0 || kw % 2 == 0)) {
      throw config_error("conv2d " + name_ + ": same padding requires odd kernel extents");
    }
    if (padding == Padding::Same && stride != 1) {
      throw config_error("conv2d " + name_ + ": same padding requires stride 1");
    }
  }

  const char* kind() const override { return "conv2d"; }
  const std::string& name() const override { return name_; }
  Parameter& kernel() { return kernel_; }
  Parameter& bias() { return bias_; }

  Var forward(Tape& tape, Var x, Mode) override {
    const Shape& xs = x.shape();
    if (xs.size() < 3) {
      throw dimension_error("conv2d " + name_ + ": input rank must be >= 3, got " +
                            shape_str(xs));
    }
    const std::int64_t H = xs[xs.size() - 3];
    const std::int64_t W = xs[xs.size() - 2];
    const std::int64_t C = xs[xs.size() - 1];
    if (C != c_in_) {
      throw dimension_error("conv2d " + name_ + ": input has " + std::to_string(C) +
                            " channels, kernel expects " + std::to_string(c_in_));
    }
    const std::int64_t ph = padding_ == Padding::Same ? (kh_ - 1) / 2 : 0;
    const std::int64_t pw = padding_ == Padding::Same ? (kw_ - 1) / 2 : 0;
    const std::int64_t OH = detail::conv_out_extent(H, kh_, stride_, ph);
    const std::int64_t OW = detail::conv_out_extent(W, kw_, stride_, pw);
    if (OH < 1 || OW < 1) {
      throw dimension_error("conv2d " + name_ + ": kernel larger than input " + shape_str(xs));
    }
    const std::int64_t n_imgs = x.value().numel() / (H * W * C);
    const std::int64_t K = kh_ * kw_ * c_in_;
    const std::int64_t rows_per_img = OH * OW;

    Var kvar = tape.param(kernel_);
    Var bvar = tape.param(bias_);

    Shape out_shape(xs.begin(), xs.end() - 3);
    out_shape.push_back(OH);
    out_shape.push_back(OW);
    out_shape.push_back(c_out_);
    Tensor result = Tensor::uninitialized(std::move(out_shape));
    double* out = result.mutable_data();

    // bias seeds the accumulators, the GEMM accumulates on top
    for (std::int64_t r = 0; r < n_imgs * rows_per_img; ++r) {
      std::copy(bias_.value.data(), bias_.value.data() + c_out_, out + r * c_out_);
    }

    const std::int64_t chunk = std::max<std::int64_t>(1, 4096 / rows_per_img);
    auto& cols = detail::scratch_cols();
    cols.resize(static_cast<std::size_t>(chunk * rows_per_img * K));
    const double* xp = x.value().data();
    for (std::int64_t i0 = 0; i0 < n_imgs; i0 += chunk) {
      const std::int64_t ni = std::min(chunk, n_imgs - i0);
      for (std::int64_t i = 0; i < ni; ++i) {
        kern::im2col2d(xp + (i0 + i) * H * W * C, H, W, C, kh_, kw_, stride_, stride_, ph, pw,
                       OH, OW, cols.data() + i * rows_per_img * K);
      }
      kern::gemm_nn(ni * rows_per_img, c_out_, K, cols.data(), K, kernel_.value.data(), c_out_,
                    out + i0 * rows_per_img * c_out_, c_out_, true);
    }

    const std::int64_t kh = kh_, kw = kw_, stride = stride_;
    const std::int64_t c_out = c_out_;
    return tape.record(
        "conv2d", {x.id, kvar.id, bvar.id}, std::move(result),
        [x, kvar, bvar, H, W, C, kh, kw, stride, ph, pw, OH, OW, n_imgs, K, rows_per_img, chunk,
         c_out](Tape& t, Var out) {
          const double* g = t.grad(out).data();
          double* gx = t.grad_data(x);
          double* gk = t.grad_data(kvar);
          double* gb = t.grad_data(bvar);
          if (gb != nullptr) {
            for (std::int64_t r = 0; r < n_imgs * rows_per_img; ++r) {
              const double* src = g + r * c_out;
              for (std::int64_t c = 0; c < c_out; ++c) gb[c] += src[c];
            }
          }
          if (gx == nullptr && gk == nullptr) return;
          auto& cols = detail::scratch_cols();
          cols.resize(static_cast<std::size_t>(chunk * rows_per_img * K));
          auto& aux = detail::scratch_aux();
          // w^T once, then per-chunk: dW += cols^T·dOut, dcols = dOut·w^T
          std::vector<double> wt;
          if (gx != nullptr) {
            wt.resize(static_cast<std::size_t>(K * c_out));
            kern::transpose(K, c_out, kvar.value().data(), wt.data());
          }
          const double* xp = x.value().data();
          for (std::int64_t i0 = 0; i0 < n_imgs; i0 += chunk) {
            const std::int64_t ni = std::min(chunk, n_imgs - i0);
            if (gk != nullptr) {
              for (std::int64_t i = 0; i < ni; ++i) {
                kern::im2col2d(xp + (i0 + i) * H * W * C, H, W, C, kh, kw, stride, stride, ph,
                               pw, OH, OW, cols.data() + i * rows_per_img * K);
              }
              kern::gemm_tn(ni * rows_per_img, c_out, K, cols.data(), K,
                            g + i0 * rows_per_img * c_out, c_out, gk, c_out, true);
            }
            if (gx != nullptr) {
              aux.resize(static_cast<std::size_t>(ni * rows_per_img * K));
              kern::gemm_nn(ni * rows_per_img, K, c_out, g + i0 * rows_per_img * c_out, c_out,
                            wt.data(), K, aux.data(), K, false);
              for (std::int64_t i = 0; i < ni; ++i) {
                kern::col2im2d(aux.data() + i * rows_per_img * K, H, W, C, kh, kw, stride,
                               stride, ph, pw, OH, OW, gx + (i0 + i) * H * W * C);
              }
            }
          }
        });
  }

  void collect_params(std::vector<Parameter*>& out) override {
    out.push_back(&kernel_);
    out.push_back(&bias_);
  }

private:
  std::string name_;
  std::int64_t kh_, kw_, c_in_, c_out_, stride_;
  Padding padding_;
  Parameter kernel_, bias_;
};

// ---- Conv3D over (T,H,W) with channels last ----

class Conv3DLayer : public Layer {
public:
  Conv3DLayer(std::string name, std::int64_t kt, std::int64_t kh, std::int64_t kw,
              std::int64_t c_in, std::int64_t c_out, std::int64_t stride, Padding padding,
              Rng& rng)
      : name_(std::move(name)),
        kt_(kt),
        kh_(kh),
        kw_(kw),
        c_in_(c_in),
        c_out_(c_out),
        stride_(stride),
        padding_(padding),
        kernel_(name_ + ".kernel", glorot_uniform({kt, kh, kw, c_in, c_out}, kt * kh * kw * c_in,
                                                  kt * kh * kw * c_out, rng)),
        bias_(name_ + ".bias", Tensor::zeros({c_out})) {
    if (kt < 1 || kh < 1 || kw < 1 || c_in < 1 || c_out < 1 || stride < 1) {
      throw config_error("conv3d " + name_ + ": extents must be positive");
    }
    if (padding == Padding::Same && (kt % 2 == 0 || kh % 2 == 0 || kw % 2 == 0)) {
      throw config_error("conv3d " + name_ + ": same padding requires odd kernel extents");
    }
    if (padding == Padding::Same && stride != 1) {
      throw config_error("conv3d " + name_ + ": same padding requires stride 1");
    }
  }

  const char* kind() const override { return "conv3d"; }
  const std::string& name() const override { return name_; }
  Parameter& kernel() { return kernel_; }
  Parameter& bias() { return bias_; }

  Var forward(Tape& tape, Var x, Mode) override {
    const Shape& xs = x.shape();
    if (xs.size() < 4) {
      throw dimension_error("conv3d " + name_ + ": input rank must be >= 4, got " +
                            shape_str(xs));
    }
    const std::int64_t T = xs[xs.size() - 4];
    const std::int64_t H = xs[xs.size() - 3];
    const std::int64_t W = xs[xs.size() - 2];
    const std::int64_t C = xs[xs.size() - 1];
    if (C != c_in_) {
      throw dimension_error("conv3d " + name_ + ": input has " + std::to_string(C) +
                            " channels, kernel expects " + std::to_string(c_in_));
    }
    const bool same = padding_ == Padding::Same;
    const std::int64_t pt = same ? (kt_ - 1) / 2 : 0;
    const std::int64_t ph = same ? (kh_ - 1) / 2 : 0;
    const std::int64_t pw = same ? (kw_ - 1) / 2 : 0;
    const std::int64_t OT = detail::conv_out_extent(T, kt_, stride_, pt);
    const std::int64_t OH = detail::conv_out_extent(H, kh_, stride_, ph);
    const std::int64_t OW = detail::conv_out_extent(W, kw_, stride_, pw);
    if (OT < 1 || OH < 1 || OW < 1) {
      throw dimension_error("conv3d " + name_ + ": kernel larger than input " + shape_str(xs));
    }
    const std::int64_t n_vols = x.value().numel() / (T * H * W * C);
    const std::int64_t K = kt_ * kh_ * kw_ * c_in_;
    const std::int64_t rows_per_vol = OT * OH * OW;

    Var kvar = tape.param(kernel_);
    Var bvar = tape.param(bias_);

    Shape out_shape(xs.begin(), xs.end() - 4);
    out_shape.push_back(OT);
    out_shape.push_back(OH);
    out_shape.push_back(OW);
    out_shape.push_back(c_out_);
    Tensor result = Tensor::uninitialized(std::move(out_shape));
    double* out = result.mutable_data();
    for (std::int64_t r = 0; r < n_vols * rows_per_vol; ++r) {
      std::copy(bias_.value.data(), bias_.value.data() + c_out_, out + r * c_out_);
    }

    auto& cols = detail::scratch_cols();
    cols.resize(static_cast<std::size_t>(rows_per_vol * K));
    const double* xp = x.value().data();
    for (std::int64_t v = 0; v < n_vols; ++v) {
      kern::im2col3d(xp + v * T * H * W * C, T, H, W, C, kt_, kh_, kw_, stride_, stride_,
                     stride_, pt, ph, pw, OT, OH, OW, cols.data());
      kern::gemm_nn(rows_per_vol, c_out_, K, cols.data(), K, kernel_.value.data(), c_out_,
                    out + v * rows_per_vol * c_out_, c_out_, true);
    }

    const std::int64_t kt = kt_, kh = kh_, kw = kw_, stride = stride_, c_out = c_out_;
    return tape.record(
        "conv3d", {x.id, kvar.id, bvar.id}, std::move(result),
        [x, kvar, bvar, T, H, W, C, kt, kh, kw, stride, pt, ph, pw, OT, OH, OW, n_vols, K,
         rows_per_vol, c_out](Tape& t, Var out) {
          const double* g = t.grad(out).data();
          double* gx = t.grad_data(x);
          double* gk = t.grad_data(kvar);
          double* gb = t.grad_data(bvar);
          if (gb != nullptr) {
            for (std::int64_t r = 0; r < n_vols * rows_per_vol; ++r) {
              const double* src = g + r * c_out;
              for (std::int64_t c = 0; c < c_out; ++c) gb[c] += src[c];
            }
          }
          if (gx == nullptr && gk == nullptr) return;
          auto& cols = detail::scratch_cols();
          cols.resize(static_cast<std::size_t>(rows_per_vol * K));
          auto& aux = detail::scratch_aux();
          std::vector<double> wt;
          if (gx != nullptr) {
            wt.resize(static_cast<std::size_t>(K * c_out));
            kern::transpose(K, c_out, kvar.value().data(), wt.data());
            aux.resize(static_cast<std::size_t>(rows_per_vol * K));
          }
          const double* xp = x.value().data();
          for (std::int64_t v = 0; v < n_vols; ++v) {
            if (gk != nullptr) {
              kern::im2col3d(xp + v * T * H * W * C, T, H, W, C, kt, kh, kw, stride, stride,
                             stride, pt, ph, pw, OT, OH, OW, cols.data());
              kern::gemm_tn(rows_per_vol, c_out, K, cols.data(), K, g + v * rows_per_vol * c_out,
                            c_out, gk, c_out, true);
            }
            if (gx != nullptr) {
              kern::gemm_nn(rows_per_vol, K, c_out, g + v * rows_per_vol * c_out, c_out,
                            wt.data(), K, aux.data(), K, false);
              kern::col2im3d(aux.data(), T, H, W, C, kt, kh, kw, stride, stride, stride, pt, ph,
                             pw, OT, OH, OW, gx + v * T * H * W * C);
            }
          }
        });
  }

  void collect_params(std::vector<Parameter*>& out) override {
    out.push_back(&kernel_);
    out.push_back(&bias_);
  }

private:
  std::string name_;
  std::int64_t kt_, kh_, kw_, c_in_, c_out_, stride_;
  Padding padding_;
  Parameter kernel_, bias_;
};

// ---- LSTM returning the full hidden sequence ----
//
// Gate block order is fixed as [input, forget, cell, output]. Hidden and
// cell states start at zero; the forget-gate bias is initialized to +1.

class LSTMLayer : public Layer {
public:
  LSTMLayer(std::string name, std::int64_t in, std::int64_t units, Rng& rng)
      : name_(std::move(name)),
        in_(in),
        units_(units),
        w_ih_(name_ + ".w_ih", glorot_uniform({in, 4 * units}, in, 4 * units, rng)),
        w_hh_(name_ + ".w_hh", glorot_uniform({units, 4 * units}, units, 4 * units, rng)),
        bias_(name_ + ".bias", forget_one_bias(units)) {
    if (in < 1 || units < 1) {
      throw config_error("lstm " + name_ + ": extents must be positive");
    }
  }

  const char* kind() const override { return "lstm"; }
  const std::string& name() const override { return name_; }
  std::int64_t units() const { return units_; }
  std::int64_t in() const { return in_; }
  Parameter& w_ih() { return w_ih_; }
  Parameter& w_hh() { return w_hh_; }
  Parameter& bias() { return bias_; }

  Var forward(Tape& tape, Var x, Mode) override {
    const Shape& xs = x.shape();
    if (xs.size() < 2) {
      throw dimension_error("lstm " + name_ + ": input rank must be >= 2, got " + shape_str(xs));
    }
    const std::int64_t T = xs[xs.size() - 2];
    const std::int64_t F = xs[xs.size() - 1];
    if (F != in_) {
      throw dimension_error("lstm " + name_ + ": input extent " + std::to_string(F) +
                            " does not match " + std::to_string(in_));
    }
    const std::int64_t B = x.value().numel() / (T * F);
    const std::int64_t Hn = units_;
    const std::int64_t G = 4 * Hn;

    Var wi = tape.param(w_ih_);
    Var wh = tape.param(w_hh_);
    Var bb = tape.param(bias_);

    // saved activations for backprop through time
    auto& pool = surge::detail::BufferPool::instance();
    auto gates = pool.acquire(static_cast<std::size_t>(B * T * G));
    auto cells = pool.acquire(static_cast<std::size_t>(B * T * Hn));
    auto tanhc = pool.acquire(static_cast<std::size_t>(B * T * Hn));
    Shape out_shape(xs.begin(), xs.end() - 1);
    out_shape.back() = T;
    out_shape.push_back(Hn);
    Tensor result = Tensor::uninitialized(std::move(out_shape));
    double* hseq = result.mutable_data();

    std::vector<double> z(static_cast<std::size_t>(B * G));
    const double* xp = x.value().data();
    for (std::int64_t t = 0; t < T; ++t) {
      for (std::int64_t b = 0; b < B; ++b) {
        std::copy(bias_.value.data(), bias_.value.data() + G, z.data() + b * G);
      }
      kern::gemm_nn(B, G, F, xp + t * F, T * F, w_ih_.value.data(), G, z.data(), G, true);
      if (t > 0) {
        kern::gemm_nn(B, G, Hn, hseq + (t - 1) * Hn, T * Hn, w_hh_.value.data(), G, z.data(),
                      G, true);
      }
      for (std::int64_t b = 0; b < B; ++b) {
        const double* zb = z.data() + b * G;
        double* gt = gates->data() + (b * T + t) * G;
        double* ct = cells->data() + (b * T + t) * Hn;
        double* tc = tanhc->data() + (b * T + t) * Hn;
        double* ht = hseq + (b * T + t) * Hn;
        const double* cprev = t > 0 ? cells->data() + (b * T + t - 1) * Hn : nullptr;
        for (std::int64_t u = 0; u < Hn; ++u) {
          const double ig = sigmoid_scalar(zb[u]);
          const double fg = sigmoid_scalar(zb[Hn + u]);
          const double gg = std::tanh(zb[2 * Hn + u]);
          const double og = sigmoid_scalar(zb[3 * Hn + u]);
          const double c = fg * (cprev ? cprev[u] : 0.0) + ig * gg;
          gt[u] = ig;
          gt[Hn + u] = fg;
          gt[2 * Hn + u] = gg;
          gt[3 * Hn + u] = og;
          ct[u] = c;
          tc[u] = std::tanh(c);
          ht[u] = og * tc[u];
        }
      }
    }

    return tape.record(
        "lstm", {x.id, wi.id, wh.id, bb.id}, std::move(result),
        [x, wi, wh, bb, gates, cells, tanhc, B, T, F, Hn, G](Tape& t, Var out) {
          const double* gh_out = t.grad(out).data();
          double* gx = t.grad_data(x);
          double* gwi = t.grad_data(wi);
          double* gwh = t.grad_data(wh);
          double* gbb = t.grad_data(bb);
          const double* hseq = out.value().data();
          const double* xp = x.value().data();

          std::vector<double> wit(static_cast<std::size_t>(F * G));
          std::vector<double> wht(static_cast<std::size_t>(Hn * G));
          kern::transpose(F, G, wi.value().data(), wit.data());
          kern::transpose(Hn, G, wh.value().data(), wht.data());

          std::vector<double> dh(static_cast<std::size_t>(B * Hn), 0.0);
          std::vector<double> dc(static_cast<std::size_t>(B * Hn), 0.0);
          std::vector<double> dz(static_cast<std::size_t>(B * G));
          for (std::int64_t step = T - 1; step >= 0; --step) {
            for (std::int64_t b = 0; b < B; ++b) {
              const double* gt = gates->data() + (b * T + step) * G;
              const double* tc = tanhc->data() + (b * T + step) * Hn;
              const double* cprev = step > 0 ? cells->data() + (b * T + step - 1) * Hn : nullptr;
              const double* gout = gh_out + (b * T + step) * Hn;
              double* dhb = dh.data() + b * Hn;
              double* dcb = dc.data() + b * Hn;
              double* dzb = dz.data() + b * G;
              for (std::int64_t u = 0; u < Hn; ++u) {
                const double ig = gt[u], fg = gt[Hn + u], gg = gt[2 * Hn + u],
                             og = gt[3 * Hn + u];
                const double dht = dhb[u] + gout[u];
                const double dct = dcb[u] + dht * og * (1.0 - tc[u] * tc[u]);
                dzb[u] = dct * gg * ig * (1.0 - ig);
                dzb[Hn + u] = dct * (cprev ? cprev[u] : 0.0) * fg * (1.0 - fg);
                dzb[2 * Hn + u] = dct * ig * (1.0 - gg * gg);
                dzb[3 * Hn + u] = dht * tc[u] * og * (1.0 - og);
                dcb[u] = dct * fg;
              }
            }
            if (gbb != nullptr) {
              for (std::int64_t b = 0; b < B; ++b) {
                const double* dzb = dz.data() + b * G;
                for (std::int64_t j = 0; j < G; ++j) gbb[j] += dzb[j];
              }
            }
            if (gwi != nullptr) {
              kern::gemm_tn(B, G, F, xp + step * F, T * F, dz.data(), G, gwi, G, true);
            }
            if (gwh != nullptr && step > 0) {
              kern::gemm_tn(B, G, Hn, hseq + (step - 1) * Hn, T * Hn, dz.data(), G, gwh, G,
                            true);
            }
            if (gx != nullptr) {
              kern::gemm_nn(B, F, G, dz.data(), G, wit.data(), F, gx + step * F, T * F, true);
            }
            if (step > 0) {
              kern::gemm_nn(B, Hn, G, dz.data(), G, wht.data(), Hn, dh.data(), Hn, false);
            }
          }
        });
  }

  void collect_params(std::vector<Parameter*>& out) override {
    out.push_back(&w_ih_);
    out.push_back(&w_hh_);
    out.push_back(&bias_);
  }

private:
  static Tensor forget_one_bias(std::int64_t units) {
    std::vector<double> b(static_cast<std::size_t>(4 * units), 0.0);
    for (std::int64_t u = 0; u < units; ++u) b[units + u] = 1.0;
    return Tensor({4 * units}, std::move(b));
  }

  std::string name_;
  std::int64_t in_, units_;
  Parameter w_ih_, w_hh_, bias_;
};

// ---- BatchNorm over the last (feature) axis ----

class BatchNormLayer : public Layer {
public:
  BatchNormLayer(std::string name, std::int64_t features, double momentum = 0.9,
                 double epsilon = 1e-5)
      : name_(std::move(name)),
        features_(features),
        momentum_(momentum),
        epsilon_(epsilon),
        gamma_(name_ + ".gamma", Tensor::full({features}, 1.0)),
        beta_(name_ + ".beta", Tensor::zeros({features})),
        running_mean_(Tensor::zeros({features})),
        running_var_(Tensor::full({features}, 1.0)) {
    if (features < 1) throw config_error("batchnorm " + name_ + ": features must be positive");
  }

  const char* kind() const override { return "batchnorm"; }
  const std::string& name() const override { return name_; }
  Parameter& gamma() { return gamma_; }
  Parameter& beta() { return beta_; }
  Tensor& running_mean() { return running_mean_; }
  Tensor& running_var() { return running_var_; }
  double epsilon() const { return epsilon_; }

  Var forward(Tape& tape, Var x, Mode mode) override {
    const Shape& xs = x.shape();
    if (xs.empty() || xs.back() != features_) {
      throw dimension_error("batchnorm " + name_ + ": input " + shape_str(xs) +
                            " does not end in " + std::to_string(features_));
    }
    const std::int64_t C = features_;
    const std::int64_t N = x.value().numel() / C;
    const double* xp = x.value().data();
    Var gvar = tape.param(gamma_);
    Var bvar = tape.param(beta_);

    if (mode == Mode::Infer) {
      std::vector<double> scale(static_cast<std::size_t>(C)), shift(static_cast<std::size_t>(C));
      for (std::int64_t c = 0; c < C; ++c) {
        const double inv = 1.0 / std::sqrt(running_var_.data()[c] + epsilon_);
        scale[c] = gamma_.value.data()[c] * inv;
        shift[c] = beta_.value.data()[c] - running_mean_.data()[c] * scale[c];
      }
      Tensor result = Tensor::uninitialized(xs);
      double* out = result.mutable_data();
      for (std::int64_t i = 0; i < N; ++i) {
        for (std::int64_t c = 0; c < C; ++c) out[i * C + c] = xp[i * C + c] * scale[c] + shift[c];
      }
      auto rm = running_mean_;
      auto rv = running_var_;
      const double eps = epsilon_;
      return tape.record(
          "batchnorm_infer", {x.id, gvar.id, bvar.id}, std::move(result),
          [x, gvar, bvar, rm, rv, eps, N, C](Tape& t, Var out) {
            const double* g = t.grad(out).data();
            const double* xp = x.value().data();
            double* gx = t.grad_data(x);
            double* gg = t.grad_data(gvar);
            double* gb = t.grad_data(bvar);
            for (std::int64_t c = 0; c < C; ++c) {
              const double inv = 1.0 / std::sqrt(rv.data()[c] + eps);
              const double sc = gvar.value().data()[c] * inv;
              for (std::int64_t i = 0; i < N; ++i) {
                const double gi = g[i * C + c];
                if (gx) gx[i * C + c] += gi * sc;
                if (gg) gg[c] += gi * (xp[i * C + c] - rm.data()[c]) * inv;
                if (gb) gb[c] += gi;
              }
            }
          });
    }

    if (N < 2) {
      throw data_error("batchnorm " + name_ +
                       ": train mode needs at least 2 positions per feature, got " +
                       std::to_string(N));
    }
    auto mean = std::make_shared<std::vector<double>>(static_cast<std::size_t>(C), 0.0);
    auto invstd = std::make_shared<std::vector<double>>(static_cast<std::size_t>(C));
    for (std::int64_t i = 0; i < N; ++i) {
      for (std::int64_t c = 0; c < C; ++c) (*mean)[c] += xp[i * C + c];
    }
    for (auto& m : *mean) m /= static_cast<double>(N);
    std::vector<double> var(static_cast<std::size_t>(C), 0.0);
    for (std::int64_t i = 0; i < N; ++i) {
      for (std::int64_t c = 0; c < C; ++c) {
        const double d = xp[i * C + c] - (*mean)[c];
        var[c] += d * d;
      }
    }
    for (auto& v : var) v /= static_cast<double>(N);
    for (std::int64_t c = 0; c < C; ++c) (*invstd)[c] = 1.0 / std::sqrt(var[c] + epsilon_);

    // biased batch variance feeds both the normalization and the running stats
    {
      double* rm = running_mean_.mutable_data();
      double* rv = running_var_.mutable_data();
      for (std::int64_t c = 0; c < C; ++c) {
        rm[c] = momentum_ * rm[c] + (1.0 - momentum_) * (*mean)[c];
        rv[c] = momentum_ * rv[c] + (1.0 - momentum_) * var[c];
      }
    }

    auto xhat = surge::detail::BufferPool::instance().acquire(static_cast<std::size_t>(N * C));
    Tensor result = Tensor::uninitialized(xs);
    double* out = result.mutable_data();
    const double* gam = gamma_.value.data();
    const double* bet = beta_.value.data();
    for (std::int64_t i = 0; i < N; ++i) {
      for (std::int64_t c = 0; c < C; ++c) {
        const double xh = (xp[i * C + c] - (*mean)[c]) * (*invstd)[c];
        (*xhat)[i * C + c] = xh;
        out[i * C + c] = gam[c] * xh + bet[c];
      }
    }
    return tape.record(
        "batchnorm_train", {x.id, gvar.id, bvar.id}, std::move(result),
        [x, gvar, bvar, xhat, invstd, N, C](Tape& t, Var out) {
          const double* g = t.grad(out).data();
          double* gx = t.grad_data(x);
          double* gg = t.grad_data(gvar);
          double* gb = t.grad_data(bvar);
          std::vector<double> sum_g(static_cast<std::size_t>(C), 0.0);
          std::vector<double> sum_gx(static_cast<std::size_t>(C), 0.0);
          for (std::int64_t i = 0; i < N; ++i) {
            for (std::int64_t c = 0; c < C; ++c) {
              sum_g[c] += g[i * C + c];
              sum_gx[c] += g[i * C + c] * (*xhat)[i * C + c];
            }
          }
          if (gb) {
            for (std::int64_t c = 0; c < C; ++c) gb[c] += sum_g[c];
          }
          if (gg) {
            for (std::int64_t c = 0; c < C; ++c) gg[c] += sum_gx[c];
          }
          if (gx) {
            const double* gam = gvar.value().data();
            const double invn = 1.0 / static_cast<double>(N);
            for (std::int64_t i = 0; i < N; ++i) {
              for (std::int64_t c = 0; c < C; ++c) {
                gx[i * C + c] += gam[c] * (*invstd)[c] *
                                 (g[i * C + c] - sum_g[c] * invn -
                                  (*xhat)[i * C + c] * sum_gx[c] * invn);
              }
            }
          }
        });
  }

  void collect_params(std::vector<Parameter*>& out) override {
    out.push_back(&gamma_);
    out.push_back(&beta_);
  }

  void collect_buffers(std::vector<std::pair<std::string, Tensor*>>& out) override {
    out.emplace_back(name_ + ".running_mean", &running_mean_);
    out.emplace_back(name_ + ".running_var", &running_var_);
  }

private:
  std::string name_;
  std::int64_t features_;
  double momentum_, epsilon_;
  Parameter gamma_, beta_;
  Tensor running_mean_, running_var_;
};

// ---- Dropout (inverted scaling; inference is the identity) ----

class DropoutLayer : public Layer {
public:
  DropoutLayer(std::string name, double rate, std::uint64_t seed)
      : name_(std::move(name)), rate_(rate), seed_(seed), rng_(seed) {
    if (rate < 0.0 || rate >= 1.0) {
      throw config_error("dropout " + name_ + ": rate must be in [0,1), got " +
                         std::to_string(rate));
    }
  }

  const char* kind() const override { return "dropout"; }
  const std::string& name() const override { return name_; }
  double rate() const { return rate_; }

  void reseed(std::uint64_t seed) { rng_ = Rng(seed); }

  Var forward(Tape& tape, Var x, Mode mode) override {
    if (mode == Mode::Infer || rate_ == 0.0) return x;
    const std::int64_t n = x.value().numel();
    const double keep = 1.0 - rate_;
    const double scale = 1.0 / keep;
    auto mask = surge::detail::BufferPool::instance().acquire(static_cast<std::size_t>(n));
    Tensor result = Tensor::uninitialized(x.shape());
    double* out = result.mutable_data();
    const double* xp = x.value().data();
    for (std::int64_t i = 0; i < n; ++i) {
      const double m = rng_.uniform() < rate_ ? 0.0 : scale;
      (*mask)[i] = m;
      out[i] = xp[i] * m;
    }
    return tape.record("dropout", {x.id}, std::move(result), [x, mask, n](Tape& t, Var out) {
      double* gx = t.grad_data(x);
      if (gx == nullptr) return;
      const double* g = t.grad(out).data();
      for (std::int64_t i = 0; i < n; ++i) gx[i] += g[i] * (*mask)[i];
    });
  }

private:
  std::string name_;
  double rate_;
  std::uint64_t seed_;
  Rng rng_;
};

// ---- stateless graph steps ----

class ReluLayer : public Layer {
public:
  explicit ReluLayer(std::string name) : name_(std::move(name)) {}
  const char* kind() const override { return "relu"; }
  const std::string& name() const override { return name_; }
  Var forward(Tape&, Var x, Mode) override { return relu_op(x); }

private:
  std::string name_;
};

// Merges the trailing `trailing` axes into one feature axis.
class FlattenLayer : public Layer {
public:
  FlattenLayer(std::string name, std::int64_t trailing)
      : name_(std::move(name)), trailing_(trailing) {}
  const char* kind() const override { return "flatten"; }
  const std::string& name() const override { return name_; }

  Var forward(Tape&, Var x, Mode) override {
    const Shape& xs = x.shape();
    if (static_cast<std::int64_t>(xs.size()) < trailing_) {
      throw dimension_error("flatten " + name_ + ": input rank too small: " + shape_str(xs));
    }
    Shape out(xs.begin(), xs.end() - trailing_);
    std::int64_t f = 1;
    for (std::size_t i = xs.size() - static_cast<std::size_t>(trailing_); i < xs.size(); ++i) {
      f *= xs[i];
    }
    out.push_back(f);
    return reshape(x, out);
  }

private:
  std::string name_;
  std::int64_t trailing_;
};

}  // namespace surge
