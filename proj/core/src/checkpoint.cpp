#include "shapkit/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "shapkit/errors.hpp"

namespace shapkit {

namespace {

constexpr char kMagic[] = "SHPK1";
constexpr std::size_t kMagicLength = 5;

}  // namespace

void append_u64_le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void append_f64_le(std::string& out, double v) {
  append_u64_le(out, std::bit_cast<std::uint64_t>(v));
}

std::uint64_t read_u64_le(const std::string& in, std::size_t offset) {
  if (offset + 8 > in.size()) throw UsageError("truncated binary file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[offset + i]))
         << (8 * i);
  }
  return v;
}

double read_f64_le(const std::string& in, std::size_t offset) {
  return std::bit_cast<double>(read_u64_le(in, offset));
}

std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw UsageError("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(is), {});
}

void write_file_bytes(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw UsageError("cannot write " + path.string());
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw UsageError("failed writing " + path.string());
}

const tk::Tensor& Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t.tensor;
  }
  throw UsageError("checkpoint has no tensor named '" + name + "'");
}

std::string encode_checkpoint(const nlohmann::json& metadata,
                              const std::vector<NamedTensor>& tensors) {
  if (!metadata.is_object()) throw UsageError("checkpoint metadata must be an object");
  nlohmann::json header = metadata;
  nlohmann::json manifest = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& t : tensors) {
    manifest.push_back({{"name", t.name},
                        {"dtype", "f64"},
                        {"shape", t.tensor.shape()},
                        {"offset", offset}});
    offset += 8 * t.tensor.size();
  }
  header["tensors"] = manifest;
  const std::string text = header.dump();

  std::string out(kMagic, kMagicLength);
  append_u64_le(out, text.size());
  out += text;
  out.reserve(out.size() + offset);
  for (const auto& t : tensors) {
    for (double v : t.tensor.data()) append_f64_le(out, v);
  }
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < kMagicLength + 8 ||
      std::memcmp(bytes.data(), kMagic, kMagicLength) != 0) {
    throw UsageError("not a SHPK1 checkpoint");
  }
  const std::uint64_t header_length = read_u64_le(bytes, kMagicLength);
  const std::size_t header_begin = kMagicLength + 8;
  if (header_begin + header_length > bytes.size()) {
    throw UsageError("checkpoint header is truncated");
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(header_begin, header_length));
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  const std::size_t payload = header_begin + header_length;

  Checkpoint ckpt;
  for (const auto& entry : header.at("tensors")) {
    if (entry.at("dtype") != "f64") throw UsageError("unsupported tensor dtype");
    tk::Shape shape = entry.at("shape").get<tk::Shape>();
    const std::uint64_t offset = entry.at("offset").get<std::uint64_t>();
    const std::size_t count = tk::shape_size(shape);
    if (payload + offset + 8 * count > bytes.size()) {
      throw UsageError("checkpoint payload is truncated");
    }
    std::vector<double> data(count);
    for (std::size_t i = 0; i < count; ++i) {
      data[i] = read_f64_le(bytes, payload + offset + 8 * i);
    }
    ckpt.tensors.push_back(
        {entry.at("name").get<std::string>(), tk::Tensor::from(std::move(shape), std::move(data))});
  }
  header.erase("tensors");
  ckpt.metadata = std::move(header);
  return ckpt;
}

void write_checkpoint(const std::filesystem::path& path,
                      const nlohmann::json& metadata,
                      const std::vector<NamedTensor>& tensors) {
  write_file_bytes(path, encode_checkpoint(metadata, tensors));
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file_bytes(path));
}

}  // namespace shapkit
