#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "zeropur/tensor.hpp"

namespace zp {

/// Images [N,C,H,W] in [0,1] with integer labels in [0, num_classes).
struct LabeledDataset {
  Tensor images;
  std::vector<int> labels;
  std::size_t num_classes = 0;
  std::string split;

  std::size_t size() const { return labels.size(); }
  /// Samples [begin, end).
  LabeledDataset slice(std::size_t begin, std::size_t end) const;
  /// Throws FormatError if pixels leave [0,1], labels leave range, or sizes disagree.
  void validate() const;
};

/// The four procedural shape classes, in label order.
inline constexpr const char* kShapeClasses[] = {"disk", "square", "cross", "stripes"};

/// 32x32 RGB images of the four shape classes with randomised position, scale,
/// colours and pixel noise. Labels cycle 0,1,2,3,... so classes are balanced.
/// Sample i depends only on (seed, i).
LabeledDataset gen_shapes_dataset(std::uint64_t seed, std::size_t n_per_class, std::string split = "train");

/// CIFAR-10 binary batch: 3073-byte records (label byte + 3072 CHW pixel bytes).
/// Throws FormatError("record k incomplete ...") on a short trailing record.
LabeledDataset load_cifar10_bin(const std::filesystem::path& path);

/// Per-class label counts.
std::vector<std::size_t> label_histogram(const LabeledDataset& data);

}  // namespace zp
