#pragma once

#include "posenorm/tensor.hpp"

#include <cmath>
#include <cstring>
#include <limits>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace posenorm::nn {

/// A named tensor owned by a layer. Non-trainable entries (batch-norm running
/// statistics) travel with checkpoints but are never touched by optimizers.
template <typename Scalar>
struct Param {
  std::string name;
  Matrix<Scalar> value;
  Matrix<Scalar> grad;
  bool trainable = true;
  bool frozen = false;

  Param() = default;
  Param(std::string n, Eigen::Index rows, Eigen::Index cols, bool is_trainable = true)
      : name(std::move(n)),
        value(Matrix<Scalar>::Zero(rows, cols)),
        grad(Matrix<Scalar>::Zero(rows, cols)),
        trainable(is_trainable) {}

  Eigen::Index size() const { return value.size(); }
};

template <typename Scalar>
using ParamList = std::vector<Param<Scalar>*>;

template <typename Scalar>
void zero_grad(const ParamList<Scalar>& params) {
  for (auto* p : params) p->grad.setZero();
}

template <typename Scalar>
Eigen::Index count_trainable(const ParamList<Scalar>& params) {
  Eigen::Index n = 0;
  for (const auto* p : params)
    if (p->trainable) n += p->size();
  return n;
}

template <typename Scalar>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual MapBatch<Scalar> forward(const MapBatch<Scalar>& x, bool train) = 0;
  virtual MapBatch<Scalar> backward(const MapBatch<Scalar>& grad) = 0;
  virtual void collect(ParamList<Scalar>& /*out*/) {}
  virtual void init(std::mt19937_64& /*rng*/) {}
};

template <typename Scalar>
class Conv2d final : public Layer<Scalar> {
 public:
  Conv2d(const std::string& name, int in_channels, int out_channels, int kernel,
         int stride = 1, int padding = 0, bool bias = false)
      : in_(in_channels), out_(out_channels), k_(kernel), stride_(stride), pad_(padding),
        has_bias_(bias),
        weight_(name + ".weight", out_channels, Eigen::Index(kernel) * kernel * in_channels),
        bias_(name + ".bias", out_channels, 1) {}

  int out_size(int in) const { return (in + 2 * pad_ - k_) / stride_ + 1; }
  int in_channels() const { return in_; }
  int out_channels() const { return out_; }

  /// The first layer of a network never needs dL/dx.
  void set_input_grad(bool needed) { input_grad_ = needed; }

  Param<Scalar>& weight() { return weight_; }
  Param<Scalar>& bias() { return bias_; }

  void init(std::mt19937_64& rng) override {
    // He initialization over fan-out.
    const double stddev = std::sqrt(2.0 / (double(out_) * k_ * k_));
    std::normal_distribution<double> normal(0.0, stddev);
    for (Eigen::Index i = 0; i < weight_.value.size(); ++i)
      weight_.value.data()[i] = static_cast<Scalar>(normal(rng));
    bias_.value.setZero();
  }

  void collect(ParamList<Scalar>& out) override {
    out.push_back(&weight_);
    if (has_bias_) out.push_back(&bias_);
  }

  MapBatch<Scalar> forward(const MapBatch<Scalar>& x, bool /*train*/) override {
    require(x.channels() == in_, weight_.name + ": expected " + std::to_string(in_) +
                                     " input channels, got " + std::to_string(x.channels()));
    input_ = x;
    const int oh = out_size(x.height), ow = out_size(x.width);
    MapBatch<Scalar> out(out_, x.batch, oh, ow);
    const Eigen::Index po = Eigen::Index(oh) * ow;
    Matrix<Scalar> cols;
    for (int first = 0; first < x.batch; first += chunk(po)) {
      const int count = std::min(chunk(po), x.batch - first);
      im2col(x, first, count, cols);
      out.data.middleCols(first * po, count * po).noalias() = weight_.value * cols;
    }
    if (has_bias_) out.data.colwise() += bias_.value.col(0);
    return out;
  }

  MapBatch<Scalar> backward(const MapBatch<Scalar>& grad) override {
    const MapBatch<Scalar>& x = input_;
    const Eigen::Index po = grad.plane();
    MapBatch<Scalar> gx;
    if (input_grad_) gx = zeros_like(x);
    Matrix<Scalar> cols, gcols;
    for (int first = 0; first < x.batch; first += chunk(po)) {
      const int count = std::min(chunk(po), x.batch - first);
      const auto g = grad.data.middleCols(first * po, count * po);
      if (!weight_.frozen) {
        im2col(x, first, count, cols);
        weight_.grad.noalias() += g * cols.transpose();
      }
      if (input_grad_) {
        gcols.noalias() = weight_.value.transpose() * g;
        col2im(gcols, first, count, grad.height, grad.width, gx);
      }
    }
    if (has_bias_ && !bias_.frozen) bias_.grad.col(0) += grad.data.rowwise().sum();
    return gx;
  }

 private:
  int chunk(Eigen::Index po) const {
    constexpr Eigen::Index kMaxColElements = Eigen::Index(1) << 24;
    const Eigen::Index per_image = po * k_ * k_ * in_;
    return static_cast<int>(std::max<Eigen::Index>(1, kMaxColElements / per_image));
  }

  // Rows of `cols` are ordered (kh, kw, channel) so every kernel tap copies one
  // contiguous channel vector.
  void im2col(const MapBatch<Scalar>& x, int first, int count, Matrix<Scalar>& cols) const {
    const int oh = out_size(x.height), ow = out_size(x.width);
    const Eigen::Index po = Eigen::Index(oh) * ow;
    cols.resize(Eigen::Index(k_) * k_ * in_, count * po);
    const std::size_t bytes = sizeof(Scalar) * in_;
    for (int n = 0; n < count; ++n) {
      const Scalar* img = x.data.data() + (first + n) * x.plane() * in_;
      for (int r = 0; r < oh; ++r) {
        for (int c = 0; c < ow; ++c) {
          Scalar* dst = cols.data() + (n * po + Eigen::Index(r) * ow + c) * cols.rows();
          for (int kh = 0; kh < k_; ++kh) {
            const int ih = r * stride_ - pad_ + kh;
            for (int kw = 0; kw < k_; ++kw, dst += in_) {
              const int iw = c * stride_ - pad_ + kw;
              if (ih < 0 || ih >= x.height || iw < 0 || iw >= x.width)
                std::memset(dst, 0, bytes);
              else
                std::memcpy(dst, img + (Eigen::Index(ih) * x.width + iw) * in_, bytes);
            }
          }
        }
      }
    }
  }

  void col2im(const Matrix<Scalar>& cols, int first, int count, int oh, int ow,
              MapBatch<Scalar>& gx) const {
    const Eigen::Index po = Eigen::Index(oh) * ow;
    for (int n = 0; n < count; ++n) {
      Scalar* img = gx.data.data() + (first + n) * gx.plane() * in_;
      for (int r = 0; r < oh; ++r) {
        for (int c = 0; c < ow; ++c) {
          const Scalar* src = cols.data() + (n * po + Eigen::Index(r) * ow + c) * cols.rows();
          for (int kh = 0; kh < k_; ++kh) {
            const int ih = r * stride_ - pad_ + kh;
            for (int kw = 0; kw < k_; ++kw, src += in_) {
              const int iw = c * stride_ - pad_ + kw;
              if (ih < 0 || ih >= gx.height || iw < 0 || iw >= gx.width) continue;
              Scalar* dst = img + (Eigen::Index(ih) * gx.width + iw) * in_;
              for (int ch = 0; ch < in_; ++ch) dst[ch] += src[ch];
            }
          }
        }
      }
    }
  }

  int in_, out_, k_, stride_, pad_;
  bool has_bias_;
  bool input_grad_ = true;
  Param<Scalar> weight_, bias_;
  MapBatch<Scalar> input_;
};

/// Sum over columns of f(column), accumulated in double per block of columns.
template <typename Scalar, typename F>
Vector<Scalar> row_sums(const Matrix<Scalar>& x, F f) {
  constexpr Eigen::Index kBlock = 256;
  Vector<double> total = Vector<double>::Zero(x.rows());
  Vector<Scalar> acc(x.rows());
  for (Eigen::Index first = 0; first < x.cols(); first += kBlock) {
    acc.setZero();
    const Eigen::Index last = std::min(x.cols(), first + kBlock);
    for (Eigen::Index j = first; j < last; ++j) acc += f(x.col(j));
    total += acc.template cast<double>();
  }
  return total.template cast<Scalar>();
}

template <typename Scalar>
class BatchNorm2d final : public Layer<Scalar> {
 public:
  BatchNorm2d(const std::string& name, int channels, double momentum = 0.1, double eps = 1e-5)
      : momentum_(momentum), eps_(eps),
        gamma_(name + ".weight", channels, 1), beta_(name + ".bias", channels, 1),
        running_mean_(name + ".running_mean", channels, 1, false),
        running_var_(name + ".running_var", channels, 1, false) {
    gamma_.value.setOnes();
    running_var_.value.setOnes();
  }

  void init(std::mt19937_64&) override {
    gamma_.value.setOnes();
    beta_.value.setZero();
    running_mean_.value.setZero();
    running_var_.value.setOnes();
  }

  void collect(ParamList<Scalar>& out) override {
    out.push_back(&gamma_);
    out.push_back(&beta_);
    out.push_back(&running_mean_);
    out.push_back(&running_var_);
  }

  MapBatch<Scalar> forward(const MapBatch<Scalar>& x, bool train) override {
    train_ = train;
    const Eigen::Index n = x.data.cols();
    Vector<Scalar> mean;
    if (train) {
      mean = row_sums(x.data, [](auto c) { return c; }) / Scalar(n);
      const Vector<Scalar> var =
          row_sums(x.data, [&](auto c) { return (c - mean).array().square().matrix(); }) / Scalar(n);
      inv_std_ = (var.array() + Scalar(eps_)).rsqrt();
      if (!running_mean_.frozen) {
        const Scalar m = Scalar(momentum_);
        const Scalar unbias = n > 1 ? Scalar(double(n) / double(n - 1)) : Scalar(1);
        running_mean_.value.col(0) = (1 - m) * running_mean_.value.col(0) + m * mean;
        running_var_.value.col(0) = (1 - m) * running_var_.value.col(0) + m * unbias * var;
      }
    } else {
      mean = running_mean_.value.col(0);
      inv_std_ = (running_var_.value.col(0).array() + Scalar(eps_)).rsqrt();
    }
    xhat_.resize(x.data.rows(), n);
    Matrix<Scalar> out(x.data.rows(), n);
    const Vector<Scalar> gamma = gamma_.value.col(0), beta = beta_.value.col(0);
    for (Eigen::Index j = 0; j < n; ++j) {
      xhat_.col(j) = (x.data.col(j) - mean).cwiseProduct(inv_std_);
      out.col(j) = xhat_.col(j).cwiseProduct(gamma) + beta;
    }
    return shaped_like(x, std::move(out));
  }

  MapBatch<Scalar> backward(const MapBatch<Scalar>& grad) override {
    const Vector<Scalar> scale = (gamma_.value.col(0).array() * inv_std_.array()).matrix();
    const Eigen::Index n = grad.data.cols();
    const Vector<Scalar> sum_g = row_sums(grad.data, [](auto c) { return c; });
    Vector<Scalar> sum_gx = Vector<Scalar>::Zero(grad.data.rows());
    for (Eigen::Index j = 0; j < n; ++j) sum_gx += grad.data.col(j).cwiseProduct(xhat_.col(j));
    if (!gamma_.frozen) {
      gamma_.grad.col(0) += sum_gx;
      beta_.grad.col(0) += sum_g;
    }
    Matrix<Scalar> gx(grad.data.rows(), n);
    if (!train_) {
      for (Eigen::Index j = 0; j < n; ++j) gx.col(j) = grad.data.col(j).cwiseProduct(scale);
      return shaped_like(grad, std::move(gx));
    }
    const Vector<Scalar> mean_g = sum_g / Scalar(n), mean_gx = sum_gx / Scalar(n);
    for (Eigen::Index j = 0; j < n; ++j)
      gx.col(j) = (grad.data.col(j) - mean_g - xhat_.col(j).cwiseProduct(mean_gx)).cwiseProduct(scale);
    return shaped_like(grad, std::move(gx));
  }

 private:
  double momentum_, eps_;
  Param<Scalar> gamma_, beta_, running_mean_, running_var_;
  Matrix<Scalar> xhat_;
  Vector<Scalar> inv_std_;
  bool train_ = true;
};

template <typename Scalar>
class ReLU final : public Layer<Scalar> {
 public:
  MapBatch<Scalar> forward(const MapBatch<Scalar>& x, bool) override {
    output_ = x.data.cwiseMax(Scalar(0));
    return shaped_like(x, output_);
  }
  MapBatch<Scalar> backward(const MapBatch<Scalar>& grad) override {
    return shaped_like(grad, Matrix<Scalar>((output_.array() > Scalar(0)).select(grad.data, Scalar(0))));
  }

 private:
  Matrix<Scalar> output_;
};

template <typename Scalar>
class Sigmoid final : public Layer<Scalar> {
 public:
  MapBatch<Scalar> forward(const MapBatch<Scalar>& x, bool) override {
    // kept strictly inside (0, 1) where the float result would round to an endpoint
    constexpr Scalar lo = std::numeric_limits<Scalar>::min();
    constexpr Scalar hi = Scalar(1) - std::numeric_limits<Scalar>::epsilon() / Scalar(2);
    output_ = (Scalar(1) + (-x.data.array()).exp()).inverse().max(lo).min(hi).matrix();
    return shaped_like(x, output_);
  }
  MapBatch<Scalar> backward(const MapBatch<Scalar>& grad) override {
    return shaped_like(grad, Matrix<Scalar>(grad.data.array() * output_.array() * (Scalar(1) - output_.array())));
  }

 private:
  Matrix<Scalar> output_;
};

/// Max pooling; windows that fall partly outside the input take the max over
/// the in-bounds cells (floor output size).
template <typename Scalar>
class MaxPool2d final : public Layer<Scalar> {
 public:
  MaxPool2d(int kernel, int stride, int padding = 0)
      : k_(kernel), stride_(stride), pad_(padding) {}

  int out_size(int in) const { return (in + 2 * pad_ - k_) / stride_ + 1; }

  MapBatch<Scalar> forward(const MapBatch<Scalar>& x, bool) override {
    in_h_ = x.height;
    in_w_ = x.width;
    const int oh = out_size(x.height), ow = out_size(x.width), ch = x.channels();
    MapBatch<Scalar> out(ch, x.batch, oh, ow);
    argmax_.resize(ch, out.data.cols());
    for (int n = 0; n < x.batch; ++n) {
      for (int r = 0; r < oh; ++r) {
        for (int c = 0; c < ow; ++c) {
          const Eigen::Index j = n * out.plane() + Eigen::Index(r) * ow + c;
          Scalar* best = out.data.col(j).data();
          int* arg = argmax_.col(j).data();
          std::fill(best, best + ch, -std::numeric_limits<Scalar>::infinity());
          for (int kh = 0; kh < k_; ++kh) {
            const int ih = r * stride_ - pad_ + kh;
            if (ih < 0 || ih >= x.height) continue;
            for (int kw = 0; kw < k_; ++kw) {
              const int iw = c * stride_ - pad_ + kw;
              if (iw < 0 || iw >= x.width) continue;
              const Eigen::Index src = n * x.plane() + Eigen::Index(ih) * x.width + iw;
              const Scalar* v = x.data.col(src).data();
              for (int q = 0; q < ch; ++q) {
                if (v[q] > best[q]) {
                  best[q] = v[q];
                  arg[q] = static_cast<int>(src);
                }
              }
            }
          }
        }
      }
    }
    return out;
  }

  MapBatch<Scalar> backward(const MapBatch<Scalar>& grad) override {
    MapBatch<Scalar> gx(grad.channels(), grad.batch, in_h_, in_w_);
    for (Eigen::Index j = 0; j < grad.data.cols(); ++j)
      for (Eigen::Index q = 0; q < grad.data.rows(); ++q)
        gx.data(q, argmax_(q, j)) += grad.data(q, j);
    return gx;
  }

 private:
  int k_, stride_, pad_;
  int in_h_ = 0, in_w_ = 0;
  Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic> argmax_;
};

/// Fixed bilinear resampling (half-pixel centers, edge clamping), applied as
/// one (H_in*W_in) x (H_out*W_out) linear map per image.
template <typename Scalar>
class BilinearResize final : public Layer<Scalar> {
 public:
  BilinearResize(int in_h, int in_w, int out_h, int out_w)
      : in_h_(in_h), in_w_(in_w), out_h_(out_h), out_w_(out_w) {
    const Matrix<Scalar> rows = axis_weights(in_h, out_h);
    const Matrix<Scalar> cols = axis_weights(in_w, out_w);
    weights_ = Matrix<Scalar>::Zero(Eigen::Index(in_h) * in_w, Eigen::Index(out_h) * out_w);
    for (int oh = 0; oh < out_h; ++oh)
      for (int ow = 0; ow < out_w; ++ow)
        for (int ih = 0; ih < in_h; ++ih) {
          if (rows(ih, oh) == Scalar(0)) continue;
          for (int iw = 0; iw < in_w; ++iw)
            weights_(Eigen::Index(ih) * in_w + iw, Eigen::Index(oh) * out_w + ow) =
                rows(ih, oh) * cols(iw, ow);
        }
  }

  MapBatch<Scalar> forward(const MapBatch<Scalar>& x, bool) override {
    require(x.height == in_h_ && x.width == in_w_, "BilinearResize: unexpected input size");
    MapBatch<Scalar> out(x.channels(), x.batch, out_h_, out_w_);
    for (int n = 0; n < x.batch; ++n) out.image(n).noalias() = x.image(n) * weights_;
    return out;
  }

  MapBatch<Scalar> backward(const MapBatch<Scalar>& grad) override {
    MapBatch<Scalar> gx(grad.channels(), grad.batch, in_h_, in_w_);
    for (int n = 0; n < grad.batch; ++n)
      gx.image(n).noalias() = grad.image(n) * weights_.transpose();
    return gx;
  }

 private:
  static Matrix<Scalar> axis_weights(int in, int out) {
    Matrix<Scalar> w = Matrix<Scalar>::Zero(in, out);
    const double scale = double(in) / double(out);
    for (int o = 0; o < out; ++o) {
      double src = std::max(0.0, (o + 0.5) * scale - 0.5);
      int lo = std::min(static_cast<int>(src), in - 1);
      int hi = std::min(lo + 1, in - 1);
      const double frac = src - lo;
      w(lo, o) += Scalar(1.0 - frac);
      w(hi, o) += Scalar(frac);
    }
    return w;
  }

  int in_h_, in_w_, out_h_, out_w_;
  Matrix<Scalar> weights_;
};

template <typename Scalar>
class Sequential final : public Layer<Scalar> {
 public:
  template <typename L, typename... Args>
  L& add(Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *layer;
    layers_.push_back(std::move(layer));
    return ref;
  }

  MapBatch<Scalar> forward(const MapBatch<Scalar>& x, bool train) override {
    MapBatch<Scalar> cur = x;
    for (auto& l : layers_) cur = l->forward(cur, train);
    return cur;
  }

  MapBatch<Scalar> backward(const MapBatch<Scalar>& grad) override {
    MapBatch<Scalar> cur = grad;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) cur = (*it)->backward(cur);
    return cur;
  }

  void collect(ParamList<Scalar>& out) override {
    for (auto& l : layers_) l->collect(out);
  }

  void init(std::mt19937_64& rng) override {
    for (auto& l : layers_) l->init(rng);
  }

  bool empty() const { return layers_.empty(); }

 private:
  std::vector<std::unique_ptr<Layer<Scalar>>> layers_;
};

/// ResNet basic block: conv3x3-BN-ReLU-conv3x3-BN plus a (projected) shortcut,
/// followed by ReLU.
template <typename Scalar>
class BasicBlock final : public Layer<Scalar> {
 public:
  BasicBlock(const std::string& name, int in, int out, int stride)
      : conv1_(name + ".conv1", in, out, 3, stride, 1),
        bn1_(name + ".bn1", out),
        conv2_(name + ".conv2", out, out, 3, 1, 1),
        bn2_(name + ".bn2", out) {
    if (stride != 1 || in != out) {
      shortcut_.template add<Conv2d<Scalar>>(name + ".downsample.0", in, out, 1, stride, 0);
      shortcut_.template add<BatchNorm2d<Scalar>>(name + ".downsample.1", out);
    }
  }

  MapBatch<Scalar> forward(const MapBatch<Scalar>& x, bool train) override {
    MapBatch<Scalar> main =
        bn2_.forward(conv2_.forward(relu1_.forward(bn1_.forward(conv1_.forward(x, train), train),
                                                   train),
                                    train),
                     train);
    if (shortcut_.empty())
      main.data += x.data;
    else
      main.data += shortcut_.forward(x, train).data;
    return relu_out_.forward(main, train);
  }

  MapBatch<Scalar> backward(const MapBatch<Scalar>& grad) override {
    const MapBatch<Scalar> g = relu_out_.backward(grad);
    MapBatch<Scalar> gx =
        conv1_.backward(bn1_.backward(relu1_.backward(conv2_.backward(bn2_.backward(g)))));
    if (shortcut_.empty())
      gx.data += g.data;
    else
      gx.data += shortcut_.backward(g).data;
    return gx;
  }

  void collect(ParamList<Scalar>& out) override {
    conv1_.collect(out);
    bn1_.collect(out);
    conv2_.collect(out);
    bn2_.collect(out);
    shortcut_.collect(out);
  }

  void init(std::mt19937_64& rng) override {
    conv1_.init(rng);
    bn1_.init(rng);
    conv2_.init(rng);
    bn2_.init(rng);
    shortcut_.init(rng);
  }

 private:
  Conv2d<Scalar> conv1_;
  BatchNorm2d<Scalar> bn1_;
  ReLU<Scalar> relu1_;
  Conv2d<Scalar> conv2_;
  BatchNorm2d<Scalar> bn2_;
  Sequential<Scalar> shortcut_;
  ReLU<Scalar> relu_out_;
};

}  // namespace posenorm::nn
