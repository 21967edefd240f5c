#pragma once

#include "zeropur/classifier.hpp"
#include "zeropur/rng.hpp"

namespace zp::testing {

inline ClassifierSpec small_spec(std::size_t classes = 4) {
  ClassifierSpec s;
  s.height = s.width = 8;
  s.num_classes = classes;
  s.widths = {4, 6, 8};
  return s;
}

// Fresh classifiers start with a zero output layer, which makes every input
// gradient vanish. Tests that need gradients fill it with noise.
inline Classifier untrained_with_head(const ClassifierSpec& spec, std::uint64_t seed) {
  Classifier m = Classifier::tiny_resnet(spec, seed);
  auto params = m.parameters();
  const auto& names = m.parameter_names();
  Rng rng(seed ^ 0xfcULL);
  for (std::size_t k = 0; k < names.size(); ++k) {
    if (names[k] != "fc.weight") continue;
    for (std::size_t i = 0; i < params[k].numel(); ++i) params[k].set(i, 0.5 * rng.normal());
  }
  m.set_parameters(std::move(params));
  return m;
}

}  // namespace zp::testing
