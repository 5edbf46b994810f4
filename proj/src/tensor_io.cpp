#include "ugp/tensor_io.hpp"

#include "ugp/errors.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>

namespace ugp {

static_assert(std::endian::native == std::endian::little, "tensor container assumes a little-endian host");

namespace {

constexpr std::array<char, 8> kMagic{'U', 'G', 'P', 'T', 'E', 'N', 'S', '1'};

uint8_t dtype_code(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat32: return 0;
    case torch::kFloat64: return 1;
    case torch::kUInt8: return 2;
    case torch::kInt64: return 3;
    case torch::kInt32: return 4;
    default: throw FormatError(std::string("unsupported dtype ") + c10::toString(t));
  }
}

torch::ScalarType dtype_from_code(uint8_t code) {
  switch (code) {
    case 0: return torch::kFloat32;
    case 1: return torch::kFloat64;
    case 2: return torch::kUInt8;
    case 3: return torch::kInt64;
    case 4: return torch::kInt32;
    default: throw FormatError("unknown dtype code " + std::to_string(code));
  }
}

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw FormatError("truncated tensor container");
  return value;
}

}  // namespace

void write_tensors(const std::filesystem::path& path, const NamedTensors& tensors) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IOError("cannot write " + path.string());
  out.write(kMagic.data(), kMagic.size());
  put<uint64_t>(out, tensors.size());
  for (const auto& [name, tensor] : tensors) {
    auto t = tensor.detach().cpu().contiguous();
    put<uint32_t>(out, static_cast<uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<uint8_t>(out, dtype_code(t.scalar_type()));
    put<uint8_t>(out, static_cast<uint8_t>(t.dim()));
    for (auto d : t.sizes()) put<int64_t>(out, d);
    out.write(static_cast<const char*>(t.data_ptr()), static_cast<std::streamsize>(t.nbytes()));
  }
  if (!out) throw IOError("short write to " + path.string());
}

NamedTensors read_tensors(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw NotFound(path.string());
  std::ifstream in(path, std::ios::binary);
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw FormatError("not a tensor container: " + path.string());
  const auto count = get<uint64_t>(in);
  NamedTensors out;
  out.reserve(count);
  for (uint64_t i = 0; i < count; ++i) {
    const auto len = get<uint32_t>(in);
    std::string name(len, '\0');
    in.read(name.data(), len);
    const auto dtype = dtype_from_code(get<uint8_t>(in));
    const auto rank = get<uint8_t>(in);
    std::vector<int64_t> dims(rank);
    for (auto& d : dims) d = get<int64_t>(in);
    auto t = torch::empty(dims, torch::TensorOptions().dtype(dtype));
    in.read(static_cast<char*>(t.data_ptr()), static_cast<std::streamsize>(t.nbytes()));
    if (!in) throw FormatError("truncated tensor data for '" + name + "'");
    out.emplace_back(std::move(name), std::move(t));
  }
  return out;
}

NamedTensors module_state(const torch::nn::Module& module, const std::string& prefix) {
  NamedTensors out;
  for (const auto& item : module.named_parameters(true)) out.emplace_back(prefix + item.key(), item.value().detach().clone());
  for (const auto& item : module.named_buffers(true)) out.emplace_back(prefix + item.key(), item.value().detach().clone());
  return out;
}

void load_module_state(torch::nn::Module& module, const NamedTensors& tensors, const std::string& prefix) {
  std::map<std::string, const torch::Tensor*> lookup;
  for (const auto& [name, t] : tensors) lookup[name] = &t;
  torch::NoGradGuard guard;
  auto assign = [&](const std::string& key, torch::Tensor& target) {
    auto it = lookup.find(prefix + key);
    if (it == lookup.end()) throw FormatError("missing tensor '" + prefix + key + "'");
    if (it->second->sizes() != target.sizes()) throw FormatError("shape mismatch for '" + prefix + key + "'");
    target.copy_(*it->second);
  };
  for (auto& item : module.named_parameters(true)) assign(item.key(), item.value());
  for (auto& item : module.named_buffers(true)) assign(item.key(), item.value());
}

}  // namespace ugp
