#pragma once

// Named-tensor checkpoint file:
//   "SHPK1" | u64 little-endian header length | UTF-8 JSON header |
//   little-endian f64 payloads in manifest order.
// The header is a JSON object holding caller metadata (architecture config
// and so on) plus a "tensors" manifest of {name, dtype: "f64", shape,
// offset}, where offset counts bytes from the start of the payload block.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "shapkit/tensor.hpp"

namespace shapkit {

struct NamedTensor {
  std::string name;
  tk::Tensor tensor;
};

struct Checkpoint {
  nlohmann::json metadata;  // header without the "tensors" manifest
  std::vector<NamedTensor> tensors;

  const tk::Tensor& find(const std::string& name) const;
};

std::string encode_checkpoint(const nlohmann::json& metadata,
                              const std::vector<NamedTensor>& tensors);
Checkpoint decode_checkpoint(const std::string& bytes);

void write_checkpoint(const std::filesystem::path& path,
                      const nlohmann::json& metadata,
                      const std::vector<NamedTensor>& tensors);
Checkpoint read_checkpoint(const std::filesystem::path& path);

// Little-endian helpers shared with the dataset file format.
void append_u64_le(std::string& out, std::uint64_t v);
void append_f64_le(std::string& out, double v);
std::uint64_t read_u64_le(const std::string& in, std::size_t offset);
double read_f64_le(const std::string& in, std::size_t offset);

std::string read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::string& bytes);

}  // namespace shapkit
