#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "fundus/nn/module.hpp"

namespace fundus::nn {

inline constexpr char kContainerMagic[8] = {'F', 'N', 'D', 'S', 'W', 'G', 'T', '\0'};
inline constexpr std::uint32_t kContainerVersion = 1;

using NamedTensor = std::pair<std::string, Tensor>;

/// Versioned weight container:
///   magic "FNDSWGT\0" | u32 version | u32 header bytes | header (JSON text)
///   | u32 tensor count | per tensor: u32 name bytes, name, 4 x i32 NCHW
///   shape, float32 data. All integers and floats little-endian.
struct Container {
  std::string header;  // JSON object describing what the tensors belong to
  std::vector<NamedTensor> tensors;

  const Tensor* find(const std::string& name) const;
};

void write_container(const std::filesystem::path& path, const Container& c);
Container read_container(const std::filesystem::path& path);

/// Snapshot of every parameter and buffer whose name starts with `prefix`
/// (the prefix is stripped from the stored names).
std::vector<NamedTensor> export_params(Module& m, const std::string& prefix = "");

/// Copies container tensors into the module's parameters. Every parameter
/// under `prefix` must be present with identical shape; otherwise a Load
/// error names the first offending tensor.
void import_params(Module& m, const Container& c, const std::string& prefix = "");

/// (name, shape) list of the parameters under `prefix`, prefix stripped.
std::vector<std::pair<std::string, Shape>> shape_manifest(Module& m, const std::string& prefix = "");

}  // namespace fundus::nn
