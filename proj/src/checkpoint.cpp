#include "rcnn/checkpoint.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "rcnn/errors.hpp"

namespace rcnn {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out) throw DataError("short write to " + path.string());
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("SHA-256 digest failed");
  }
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return os.str();
}

void save_checkpoint(const std::filesystem::path& dir, const ParameterList& tensors, const Json& config) {
  std::filesystem::create_directories(dir);
  std::string blob;
  Json entries = Json::array();
  std::size_t offset = 0;
  for (const auto& [name, t] : tensors) {
    Json e;
    e["name"] = name;
    e["shape"] = t.shape();
    e["dtype"] = "float32";
    e["offset"] = offset;
    e["count"] = t.size();
    entries.push_back(std::move(e));
    for (double v : t.values()) {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
      for (int b = 0; b < 4; ++b) blob.push_back(static_cast<char>((bits >> (8 * b)) & 0xFFu));
    }
    offset += t.size() * 4;
  }
  Json manifest;
  manifest["format_version"] = kCheckpointFormatVersion;
  manifest["byte_order"] = "little";
  manifest["config"] = config;
  manifest["tensors"] = std::move(entries);
  write_file(dir / "weights.bin", blob);
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw DataError("checkpoint directory not found: " + dir.string());
  Json manifest;
  try {
    manifest = Json::parse(read_file(dir / "manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed checkpoint manifest: " + std::string(e.what()));
  }
  if (manifest.value("format_version", 0) != kCheckpointFormatVersion) {
    throw DataError("unsupported checkpoint format version in " + dir.string());
  }
  const std::string blob = read_file(dir / "weights.bin");
  Checkpoint ck;
  ck.config = manifest.value("config", Json::object());
  for (const auto& e : manifest.at("tensors")) {
    const auto name = e.at("name").get<std::string>();
    const auto shape = e.at("shape").get<Shape>();
    const auto offset = e.at("offset").get<std::size_t>();
    const auto count = e.at("count").get<std::size_t>();
    if (e.at("dtype").get<std::string>() != "float32") throw DataError("tensor " + name + ": unsupported dtype");
    if (shape_size(shape) != count || offset + count * 4 > blob.size()) {
      throw DataError("tensor " + name + ": manifest entry inconsistent with weights.bin");
    }
    std::vector<double> values(count);
    for (std::size_t i = 0; i < count; ++i) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) {
        bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(blob[offset + i * 4 + b])) << (8 * b);
      }
      values[i] = static_cast<double>(std::bit_cast<float>(bits));
    }
    ck.tensors.push_back({name, Tensor(shape, std::move(values))});
  }
  return ck;
}

void assign_tensors(const Checkpoint& checkpoint, const ParameterList& targets, std::string_view prefix) {
  for (const auto& [name, target] : targets) {
    if (!prefix.empty() && name.rfind(prefix, 0) != 0) continue;
    const NamedTensor* found = nullptr;
    for (const auto& src : checkpoint.tensors) {
      if (src.name == name) {
        found = &src;
        break;
      }
    }
    if (found == nullptr) throw DataError("checkpoint is missing tensor " + name);
    if (found->tensor.shape() != target.shape()) {
      throw DataError("checkpoint tensor " + name + " has shape " + shape_string(found->tensor.shape()) +
                      ", model expects " + shape_string(target.shape()));
    }
    Tensor dst = target;
    std::copy(found->tensor.values().begin(), found->tensor.values().end(), dst.values().begin());
  }
}

}  // namespace rcnn
