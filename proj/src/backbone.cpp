#include "posenorm/backbone.hpp"

namespace posenorm {

std::string to_string(Arch arch) {
  return arch == Arch::convnet4 ? "convnet4" : "resnet18mod";
}

Arch arch_from_string(const std::string& name) {
  if (name == "convnet4") return Arch::convnet4;
  if (name == "resnet18mod") return Arch::resnet18mod;
  throw std::invalid_argument("unknown backbone '" + name + "' (expected convnet4 or resnet18mod)");
}

BackboneConfig default_backbone(Arch arch) {
  BackboneConfig c;
  c.arch = arch;
  if (arch == Arch::convnet4) {
    c.input_size = 84;
    c.tap_point = "stage2";
  } else {
    c.input_size = 224;
    c.tap_point = "layer3";
  }
  return c;
}

}  // namespace posenorm
