#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "rcnn/config.hpp"
#include "rcnn/tensor.hpp"

namespace rcnn {

inline constexpr int kCheckpointFormatVersion = 1;

// A checkpoint is a directory holding
//   manifest.json  format version, config echo, and per tensor its name,
//                  shape, dtype, byte offset and element count
//   weights.bin    raw little-endian float32 values, row-major, concatenated
//                  in manifest order
// Weights are rounded to float32 on save, so save(load(save(x))) reproduces
// both files byte for byte.
void save_checkpoint(const std::filesystem::path& dir, const ParameterList& tensors, const Json& config);

struct Checkpoint {
  ParameterList tensors;
  Json config;
};

Checkpoint load_checkpoint(const std::filesystem::path& dir);

// Copies checkpoint tensors into same-named, same-shaped targets. Every target
// must be present in the checkpoint; extra checkpoint tensors are ignored.
void assign_tensors(const Checkpoint& checkpoint, const ParameterList& targets, std::string_view prefix = {});

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);
std::string sha256_hex(std::string_view bytes);

}  // namespace rcnn
