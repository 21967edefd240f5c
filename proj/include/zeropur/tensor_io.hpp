#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "zeropur/tensor.hpp"

namespace zp {

using NamedTensor = std::pair<std::string, Tensor>;

/// Tensor table file: "ZPWT", u32 version (1), u32 count, then per tensor
/// u16 name length, UTF-8 name, u8 rank, u32 dims[rank], f32 LE payload.
/// Used for model weights and for adversarial / purified batch dumps.
void save_tensors(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_tensors(const std::filesystem::path& path);

/// In-memory variants of the same format.
std::string encode_tensors(const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> decode_tensors(const std::string& bytes);

}  // namespace zp
