#pragma once

#include "posenorm/nn.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <unordered_map>

namespace posenorm::nn {

/// Raised when an optimizer is asked to update a parameter that has been frozen.
class FrozenParameterError : public std::logic_error {
 public:
  explicit FrozenParameterError(const std::string& name)
      : std::logic_error("attempted update of frozen parameter '" + name + "'") {}
};

enum class OptimizerKind { sgd, adam };

struct OptimizerSpec {
  OptimizerKind kind = OptimizerKind::sgd;
  double learning_rate = 0.1;
  double momentum = 0.9;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
};

/// SGD with momentum or Adam; L2 weight decay is added to the gradient.
template <typename Scalar>
class Optimizer {
 public:
  explicit Optimizer(OptimizerSpec spec) : spec_(spec), lr_(spec.learning_rate) {}

  void set_learning_rate(double lr) { lr_ = lr; }
  double learning_rate() const { return lr_; }

  void step(const ParamList<Scalar>& params) {
    for (const auto* p : params)
      if (p->trainable && p->frozen) throw FrozenParameterError(p->name);
    ++t_;
    for (auto* p : params) {
      if (!p->trainable) continue;
      Matrix<Scalar> g = p->grad;
      if (spec_.weight_decay != 0.0) g += Scalar(spec_.weight_decay) * p->value;
      if (spec_.kind == OptimizerKind::sgd) {
        auto [it, fresh] = first_.try_emplace(p, Matrix<Scalar>::Zero(g.rows(), g.cols()));
        Matrix<Scalar>& buf = it->second;
        if (fresh)
          buf = g;
        else
          buf = Scalar(spec_.momentum) * buf + g;
        p->value -= Scalar(lr_) * buf;
      } else {
        auto& m = first_.try_emplace(p, Matrix<Scalar>::Zero(g.rows(), g.cols())).first->second;
        auto& v = second_.try_emplace(p, Matrix<Scalar>::Zero(g.rows(), g.cols())).first->second;
        m = Scalar(spec_.beta1) * m + Scalar(1 - spec_.beta1) * g;
        v = Scalar(spec_.beta2) * v + Scalar(1 - spec_.beta2) * g.cwiseAbs2();
        const double c1 = 1.0 - std::pow(spec_.beta1, double(t_));
        const double c2 = 1.0 - std::pow(spec_.beta2, double(t_));
        p->value.array() -= Scalar(lr_ / c1) * m.array() /
                            ((v.array() / Scalar(c2)).sqrt() + Scalar(spec_.adam_eps));
      }
    }
  }

 private:
  OptimizerSpec spec_;
  double lr_;
  long t_ = 0;
  std::unordered_map<const Param<Scalar>*, Matrix<Scalar>> first_, second_;
};

}  // namespace posenorm::nn
