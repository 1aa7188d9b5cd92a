#pragma once

// Versioned model container:
//   "HERDLIFE" | u32 version | u64 header bytes | JSON header | f64 LE tensor data
// The JSON header lists every tensor with its shape, in data order.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "herdlife/error.hpp"
#include "herdlife/tensor.hpp"

namespace herdlife {

inline constexpr char kCheckpointMagic[8] = {'H', 'E', 'R', 'D', 'L', 'I', 'F', 'E'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  nlohmann::json header = nlohmann::json::object();
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor& tensor(const std::string& name) const {
    for (const auto& [n, t] : tensors) {
      if (n == name) return t;
    }
    throw CheckpointError("checkpoint has no tensor '" + name + "'");
  }
};

namespace detail {

template <typename U>
void put_le(std::string& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
}

template <typename U>
U get_le(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(U) > in.size()) throw CheckpointError("checkpoint truncated");
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += sizeof(U);
  return value;
}

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& ckpt) {
  nlohmann::json header = ckpt.header;
  nlohmann::json directory = nlohmann::json::array();
  for (const auto& [name, t] : ckpt.tensors) directory.push_back({{"name", name}, {"shape", t.shape()}});
  header["tensors"] = directory;
  const std::string text = header.dump();
  std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  detail::put_le<std::uint64_t>(out, text.size());
  out += text;
  for (const auto& [name, t] : ckpt.tensors)
    for (double v : t.values()) detail::put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  return out;
}

inline Checkpoint deserialize_checkpoint(const std::string& bytes) {
  if (bytes.size() < sizeof kCheckpointMagic || std::memcmp(bytes.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0) {
    throw CheckpointError("not a herdlife checkpoint (bad magic)");
  }
  std::size_t pos = sizeof kCheckpointMagic;
  const auto version = detail::get_le<std::uint32_t>(bytes, pos);
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  const auto header_size = detail::get_le<std::uint64_t>(bytes, pos);
  if (header_size > bytes.size() - pos) throw CheckpointError("checkpoint truncated in header");
  Checkpoint ckpt;
  try {
    ckpt.header = nlohmann::json::parse(bytes.substr(pos, header_size));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint header: ") + e.what());
  }
  pos += header_size;
  try {
    for (const auto& entry : ckpt.header.at("tensors")) {
      Shape shape = entry.at("shape").get<Shape>();
      Tensor t(shape);
      for (double& v : t.values()) v = std::bit_cast<double>(detail::get_le<std::uint64_t>(bytes, pos));
      ckpt.tensors.emplace_back(entry.at("name").get<std::string>(), std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("corrupt tensor directory: ") + e.what());
  } catch (const ShapeError& e) {
    throw CheckpointError(std::string("corrupt tensor directory: ") + e.what());
  }
  if (pos != bytes.size()) throw CheckpointError("checkpoint has trailing bytes");
  ckpt.header.erase("tensors");
  return ckpt;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write " + path.string());
  const std::string bytes = serialize_checkpoint(ckpt);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("write failed for " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace herdlife
