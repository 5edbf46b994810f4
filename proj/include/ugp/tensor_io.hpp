#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace ugp {

/// Ordered list of named arrays; order is preserved on disk.
using NamedTensors = std::vector<std::pair<std::string, torch::Tensor>>;

/// Portable little-endian container: magic "UGPTENS1", entry count, then per
/// entry the name, dtype code, rank, dims and raw contiguous data.
void write_tensors(const std::filesystem::path& path, const NamedTensors& tensors);
NamedTensors read_tensors(const std::filesystem::path& path);

/// Parameters and buffers of a module under `prefix`.
NamedTensors module_state(const torch::nn::Module& module, const std::string& prefix = "");
/// Copies matching entries into the module; throws FormatError if any
/// parameter or buffer is missing or has another shape.
void load_module_state(torch::nn::Module& module, const NamedTensors& tensors, const std::string& prefix = "");

}  // namespace ugp
