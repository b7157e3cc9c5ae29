#include "apa/container.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace apa {

using nlohmann::json;

namespace {
constexpr char kMagic[4] = {'A', 'P', 'A', 'C'};
constexpr uint32_t kVersion = 1;

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<char*>(b), 4);
}

void put_u64(std::ostream& os, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<char*>(b), 8);
}

uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
  return v;
}

uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

[[noreturn]] void corrupt(const std::string& path, const std::string& why) {
  throw std::runtime_error("container manifest invalid at " + path + ": " + why);
}
}  // namespace

Container Container::from_params(const nn::ParamStore& params, json meta) {
  Container c;
  c.meta = std::move(meta);
  c.tensors = params.tensors;
  return c;
}

nn::ParamStore Container::to_params() const {
  nn::ParamStore ps;
  ps.tensors = tensors;
  return ps;
}

void save_container(const std::string& path, const Container& c) {
  json manifest;
  manifest["meta"] = c.meta.is_null() ? json::object() : c.meta;
  json tens = json::object();
  uint64_t offset = 0;
  for (const auto& [name, t] : c.tensors) {
    json entry;
    entry["dtype"] = "f64";
    entry["shape"] = t.shape();
    entry["offset"] = offset;
    entry["count"] = t.numel();
    tens[name] = entry;
    offset += static_cast<uint64_t>(t.numel()) * sizeof(double);
  }
  manifest["tensors"] = tens;
  std::string mstr = manifest.dump();

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("save_container: cannot open " + path);
  os.write(kMagic, 4);
  put_u32(os, kVersion);
  put_u64(os, mstr.size());
  os.write(mstr.data(), static_cast<std::streamsize>(mstr.size()));
  for (const auto& [name, t] : c.tensors)
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.numel() * sizeof(double)));
  if (!os) throw std::runtime_error("save_container: write failure for " + path);
}

Container load_container(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_container: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) corrupt(path, "bad magic");
  uint32_t version = get_u32(is);
  if (version != kVersion) corrupt(path, "unsupported version");
  uint64_t mlen = get_u64(is);
  if (!is || mlen > (1ull << 30)) corrupt(path, "manifest length");
  std::string mstr(mlen, '\0');
  is.read(mstr.data(), static_cast<std::streamsize>(mlen));
  if (!is) corrupt(path, "truncated manifest");
  json manifest = json::parse(mstr, nullptr, false);
  if (manifest.is_discarded() || !manifest.contains("tensors") ||
      !manifest["tensors"].is_object())
    corrupt(path, "manifest is not valid JSON with a tensors object");

  Container c;
  c.meta = manifest.value("meta", json::object());
  // nlohmann objects iterate in sorted key order, matching save order.
  for (auto& [name, entry] : manifest["tensors"].items()) {
    if (!entry.contains("shape") || !entry.contains("count") ||
        entry.value("dtype", "") != "f64")
      corrupt(path, "bad tensor entry for '" + name + "'");
    std::vector<int> shape = entry["shape"].get<std::vector<int>>();
    int64_t count = entry["count"].get<int64_t>();
    Tensor t(shape);
    if (t.numel() != count) corrupt(path, "shape/count mismatch for '" + name + "'");
    is.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(count * sizeof(double)));
    if (!is) corrupt(path, "truncated payload at '" + name + "'");
    c.tensors.emplace(name, std::move(t));
  }
  return c;
}

}  // namespace apa
