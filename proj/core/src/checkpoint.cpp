#include "uio/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are little-endian f64");

namespace uio {

namespace {

constexpr char kMagic[8] = {'U', 'I', 'O', 'C', 'K', 'P', 'T', '\n'};
constexpr uint32_t kVersion = 1;

void write_u32(std::ostream& f, uint32_t v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

uint32_t read_u32(std::istream& f) {
  uint32_t v = 0;
  f.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

}  // namespace

void Checkpoint::put(const std::string& name, Tensor t) {
  if (name.empty()) throw std::invalid_argument("Checkpoint::put: empty tensor name");
  tensors_[name] = std::move(t);
}

const Tensor& Checkpoint::get(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw std::out_of_range("Checkpoint: no tensor named " + name);
  return it->second;
}

std::vector<std::string> Checkpoint::names() const {
  std::vector<std::string> out;
  out.reserve(tensors_.size());
  for (const auto& [name, t] : tensors_) out.push_back(name);
  return out;
}

void Checkpoint::save(const std::string& path) const {
  nlohmann::json header;
  header["version"] = kVersion;
  header["meta"] = nlohmann::json::parse(meta_json);
  header["tensors"] = nlohmann::json::array();
  uint64_t offset = 0;
  for (const auto& [name, t] : tensors_) {
    header["tensors"].push_back(
        {{"name", name}, {"shape", t.shape}, {"offset", offset}, {"dtype", "f64"}});
    offset += t.data.size() * sizeof(double);
  }
  std::string header_text = header.dump();

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("Checkpoint: cannot open for write: " + path);
  f.write(kMagic, sizeof(kMagic));
  write_u32(f, kVersion);
  write_u32(f, static_cast<uint32_t>(header_text.size()));
  f.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
  for (const auto& [name, t] : tensors_)
    f.write(reinterpret_cast<const char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(double)));
  if (!f) throw std::runtime_error("Checkpoint: write failed: " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("Checkpoint: cannot open: " + path);
  char magic[8];
  f.read(magic, sizeof(magic));
  if (!f || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("Checkpoint: bad magic in " + path);
  uint32_t version = read_u32(f);
  if (version != kVersion)
    throw std::runtime_error("Checkpoint: unsupported version " + std::to_string(version));
  uint32_t header_len = read_u32(f);
  std::string header_text(header_len, '\0');
  f.read(header_text.data(), header_len);
  if (!f) throw std::runtime_error("Checkpoint: truncated header in " + path);
  nlohmann::json header = nlohmann::json::parse(header_text);

  Checkpoint out;
  out.meta_json = header.at("meta").dump();
  uint64_t expected_offset = 0;
  for (const auto& entry : header.at("tensors")) {
    std::string name = entry.at("name").get<std::string>();
    if (entry.at("dtype").get<std::string>() != "f64")
      throw std::runtime_error("Checkpoint: unsupported dtype for " + name);
    if (entry.at("offset").get<uint64_t>() != expected_offset)
      throw std::runtime_error("Checkpoint: non-contiguous offset for " + name);
    Tensor t(entry.at("shape").get<std::vector<int>>());
    f.read(reinterpret_cast<char*>(t.data.data()),
           static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    if (!f) throw std::runtime_error("Checkpoint: truncated payload for " + name);
    expected_offset += t.data.size() * sizeof(double);
    out.tensors_[name] = std::move(t);
  }
  return out;
}

}  // namespace uio
