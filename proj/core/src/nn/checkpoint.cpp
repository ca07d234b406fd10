#include "fundus/nn/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "fundus/error.hpp"

namespace fundus::nn {

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is, const std::string& what) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  require(is.good(), ErrorCode::Load, "truncated container while reading " + what);
  return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
         static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

bool starts_with(const std::string& s, const std::string& prefix) {
  return s.size() >= prefix.size() && s.compare(0, prefix.size(), prefix) == 0;
}

std::string strip(const std::string& name, const std::string& prefix) {
  if (prefix.empty()) return name;
  return name.substr(prefix.size() + 1);
}

bool under(const std::string& name, const std::string& prefix) {
  return prefix.empty() || (starts_with(name, prefix) && name.size() > prefix.size() && name[prefix.size()] == '.');
}

static_assert(sizeof(float) == 4);

}  // namespace

const Tensor* Container::find(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return &t;
  return nullptr;
}

void write_container(const std::filesystem::path& path, const Container& c) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  require(os.good(), ErrorCode::Io, "cannot write '" + path.string() + "'");
  os.write(kContainerMagic, sizeof(kContainerMagic));
  put_u32(os, kContainerVersion);
  put_u32(os, static_cast<std::uint32_t>(c.header.size()));
  os.write(c.header.data(), static_cast<std::streamsize>(c.header.size()));
  put_u32(os, static_cast<std::uint32_t>(c.tensors.size()));
  for (const auto& [name, t] : c.tensors) {
    put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    const Shape& s = t.shape();
    for (int d : {s.n, s.c, s.h, s.w}) put_u32(os, static_cast<std::uint32_t>(d));
    os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(float)));
  }
  require(os.good(), ErrorCode::Io, "failed writing '" + path.string() + "'");
}

Container read_container(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  require(is.good(), ErrorCode::NotFound, "cannot open weight file '" + path.string() + "'");
  char magic[8];
  is.read(magic, 8);
  require(is.good() && std::memcmp(magic, kContainerMagic, 8) == 0, ErrorCode::Load,
          "'" + path.string() + "' is not a weight container");
  const auto version = get_u32(is, "version");
  require(version == kContainerVersion, ErrorCode::Load,
          "unsupported container version " + std::to_string(version));
  Container c;
  c.header.resize(get_u32(is, "header size"));
  is.read(c.header.data(), static_cast<std::streamsize>(c.header.size()));
  const auto count = get_u32(is, "tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name(get_u32(is, "name size"), '\0');
    is.read(name.data(), static_cast<std::streamsize>(name.size()));
    Shape s;
    s.n = static_cast<int>(get_u32(is, name));
    s.c = static_cast<int>(get_u32(is, name));
    s.h = static_cast<int>(get_u32(is, name));
    s.w = static_cast<int>(get_u32(is, name));
    Tensor t(s);
    is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(float)));
    require(is.good(), ErrorCode::Load, "truncated data for tensor '" + name + "'");
    c.tensors.emplace_back(std::move(name), std::move(t));
  }
  return c;
}

std::vector<NamedTensor> export_params(Module& m, const std::string& prefix) {
  std::vector<NamedTensor> out;
  for (const auto& p : parameters(m))
    if (under(p.name, prefix)) out.emplace_back(strip(p.name, prefix), *p.value);
  return out;
}

void import_params(Module& m, const Container& c, const std::string& prefix) {
  for (auto& p : parameters(m)) {
    if (!under(p.name, prefix)) continue;
    const std::string key = strip(p.name, prefix);
    const Tensor* t = c.find(key);
    require(t != nullptr, ErrorCode::Load, "weight file lacks tensor '" + key + "'");
    require(t->shape() == p.value->shape(), ErrorCode::Load,
            "tensor '" + key + "' has shape " + t->shape().to_string() + ", expected " +
                p.value->shape().to_string());
    *p.value = *t;
  }
}

std::vector<std::pair<std::string, Shape>> shape_manifest(Module& m, const std::string& prefix) {
  std::vector<std::pair<std::string, Shape>> out;
  for (const auto& p : parameters(m))
    if (under(p.name, prefix)) out.emplace_back(strip(p.name, prefix), p.value->shape());
  return out;
}

}  // namespace fundus::nn
