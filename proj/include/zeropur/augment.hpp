#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "zeropur/rng.hpp"
#include "zeropur/tensor.hpp"

namespace zp {

enum class Augmentation { vanilla, base, strong };

Augmentation parse_augmentation(const std::string& name);
const char* augmentation_name(Augmentation preset);

/// Ordered list of transforms a preset applies.
/// vanilla: none; base: ResizeCrop, HorizontalFlip; strong: all seven.
std::vector<std::string> augmentation_ops(Augmentation preset);

/// Augments one CHW f32 image in place using draws from `rng`.
void augment_image(Augmentation preset, std::span<float> chw, std::size_t channels, std::size_t height,
                   std::size_t width, Rng& rng);

/// Gathers images[indices] into a new f32 batch and augments each one with an
/// RNG stream derived from (seed, epoch, dataset index).
Tensor augment_batch(const Tensor& images, std::span<const std::size_t> indices, Augmentation preset,
                     std::uint64_t seed, std::uint64_t epoch);

}  // namespace zp
