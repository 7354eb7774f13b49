#pragma once

#include "posenorm/nn.hpp"

#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace posenorm {

enum class Arch { convnet4, resnet18mod };

std::string to_string(Arch arch);
Arch arch_from_string(const std::string& name);

struct BackboneConfig {
  Arch arch = Arch::convnet4;
  int input_size = 84;
  /// convnet4: stage1..stage3 (default stage2); resnet18mod: layer1..layer3 (default layer3).
  std::string tap_point;
  /// ImageNet initialisation is not shipped; only from-scratch training is supported.
  bool pretrained = false;
};

/// Default input size and tap point for an architecture.
BackboneConfig default_backbone(Arch arch);

/// F' (tap) and F (final) for a batch.
template <typename Scalar>
struct FeatureMaps {
  MapBatch<Scalar> intermediate;
  MapBatch<Scalar> final;
};

/// Feature-map extractor with an intermediate tap feeding the pose head.
template <typename Scalar>
class Backbone {
 public:
  explicit Backbone(BackboneConfig config) : config_(std::move(config)) {
    if (config_.pretrained)
      throw std::invalid_argument("backbone: pretrained weights are not available; train from scratch");
    if (config_.tap_point.empty()) config_.tap_point = default_backbone(config_.arch).tap_point;
    if (config_.arch == Arch::convnet4)
      build_convnet4();
    else
      build_resnet18mod();
    if (config_.arch == Arch::convnet4 && config_.input_size == 84 &&
        (out_channels_ != 64 || out_size_ != 10))
      throw std::logic_error("convnet4 must map 84x84 input to 64x10x10");
    if (config_.arch == Arch::resnet18mod && config_.input_size == 224 &&
        (out_channels_ != 32 || out_size_ != 14))
      throw std::logic_error("resnet18mod must map 224x224 input to 32x14x14");
  }

  Backbone(const Backbone&) = delete;
  Backbone& operator=(const Backbone&) = delete;

  const BackboneConfig& config() const { return config_; }
  int out_channels() const { return out_channels_; }
  int out_size() const { return out_size_; }
  int tap_channels() const { return tap_channels_; }
  int tap_size() const { return tap_size_; }

  void init(std::mt19937_64& rng) {
    pre_.init(rng);
    post_.init(rng);
  }

  nn::ParamList<Scalar> params() {
    nn::ParamList<Scalar> out;
    pre_.collect(out);
    post_.collect(out);
    return out;
  }

  FeatureMaps<Scalar> forward(const MapBatch<Scalar>& images, bool train) {
    if (images.height != config_.input_size || images.width != config_.input_size ||
        images.channels() != 3)
      throw std::invalid_argument("backbone: expected 3x" + std::to_string(config_.input_size) +
                                  "x" + std::to_string(config_.input_size) + " input, got " +
                                  images.shape_string());
    FeatureMaps<Scalar> out;
    out.intermediate = pre_.forward(images, train);
    out.final = post_.forward(out.intermediate, train);
    return out;
  }

  /// Backpropagates dL/dF and, optionally, dL/dF' arriving from the pose head.
  void backward(const MapBatch<Scalar>& grad_final, const MapBatch<Scalar>* grad_tap) {
    MapBatch<Scalar> g = post_.backward(grad_final);
    if (grad_tap) g.data += grad_tap->data;
    pre_.backward(g);
  }

 private:
  void build_convnet4() {
    const std::vector<std::string> stages = {"stage1", "stage2", "stage3", "stage4"};
    check_tap({"stage1", "stage2", "stage3"});
    int size = config_.input_size, channels = 3;
    nn::Sequential<Scalar>* target = &pre_;
    for (int i = 0; i < 4; ++i) {
      const std::string name = "backbone." + stages[i];
      auto& conv = target->template add<nn::Conv2d<Scalar>>(name + ".conv", channels, 64, 3, 1, 1);
      if (i == 0) conv.set_input_grad(false);
      target->template add<nn::BatchNorm2d<Scalar>>(name + ".bn", 64);
      target->template add<nn::ReLU<Scalar>>();
      channels = 64;
      // 84 -> 42 -> 21 -> 10; the last stage keeps 10x10.
      if (i < 3) {
        target->template add<nn::MaxPool2d<Scalar>>(2, 2);
        size /= 2;
      }
      if (stages[i] == config_.tap_point) {
        tap_channels_ = channels;
        tap_size_ = size;
        target = &post_;
      }
    }
    out_channels_ = channels;
    out_size_ = size;
  }

  void build_resnet18mod() {
    check_tap({"layer1", "layer2", "layer3"});
    int size = config_.input_size;
    auto& stem = pre_.template add<nn::Conv2d<Scalar>>("backbone.conv1", 3, 64, 7, 2, 3);
    stem.set_input_grad(false);
    size = stem.out_size(size);
    pre_.template add<nn::BatchNorm2d<Scalar>>("backbone.bn1", 64);
    pre_.template add<nn::ReLU<Scalar>>();
    size = pre_.template add<nn::MaxPool2d<Scalar>>(3, 2, 1).out_size(size);

    struct Spec { const char* name; int channels; int stride; };
    // layer4 keeps stride 1 so the final map stays at the layer3 resolution.
    const Spec layers[] = {{"layer1", 64, 1}, {"layer2", 128, 2}, {"layer3", 256, 2}, {"layer4", 512, 1}};
    int channels = 64;
    nn::Sequential<Scalar>* target = &pre_;
    for (const Spec& l : layers) {
      const std::string name = std::string("backbone.") + l.name;
      target->template add<nn::BasicBlock<Scalar>>(name + ".0", channels, l.channels, l.stride);
      target->template add<nn::BasicBlock<Scalar>>(name + ".1", l.channels, l.channels, 1);
      if (l.stride == 2) size = (size + 2 - 3) / 2 + 1;
      channels = l.channels;
      if (config_.tap_point == l.name) {
        tap_channels_ = channels;
        tap_size_ = size;
        target = &post_;
      }
    }
    // 1x1 reduction 512 -> 32 with batch norm, no nonlinearity.
    post_.template add<nn::Conv2d<Scalar>>("backbone.reduce.conv", 512, 32, 1, 1, 0);
    post_.template add<nn::BatchNorm2d<Scalar>>("backbone.reduce.bn", 32);
    out_channels_ = 32;
    out_size_ = size;
  }

  void check_tap(const std::vector<std::string>& valid) const {
    for (const auto& v : valid)
      if (v == config_.tap_point) return;
    std::string list;
    for (const auto& v : valid) list += (list.empty() ? "" : ", ") + v;
    throw std::invalid_argument("backbone: tap point '" + config_.tap_point + "' is not one of " +
                                list + " for " + to_string(config_.arch));
  }

  BackboneConfig config_;
  nn::Sequential<Scalar> pre_, post_;
  int out_channels_ = 0, out_size_ = 0, tap_channels_ = 0, tap_size_ = 0;
};

}  // namespace posenorm
