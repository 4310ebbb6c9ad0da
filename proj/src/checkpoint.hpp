#pragma once

// Binary checkpoint: "KSEG" magic, format version, JSON architecture
// descriptor, then per parameter (name, trainable flag, buffer flag, shape,
// raw little-endian 32-bit floats). Round-trips bit-exactly.

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "models.hpp"

namespace kseg {

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <class V>
void write_pod(std::ostream& os, const V& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <class V>
V read_pod(std::istream& is) {
  V v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(V));
  require(bool(is), ErrorClass::Io, "checkpoint: truncated file");
  return v;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const nlohmann::json& descriptor,
                            const ParamStore<float>& store) {
  std::ofstream os(path, std::ios::binary);
  require(bool(os), ErrorClass::Io, "cannot write checkpoint " + path);
  os.write("KSEG", 4);
  detail::write_pod(os, kCheckpointVersion);
  const std::string desc = descriptor.dump();
  detail::write_pod(os, static_cast<std::uint32_t>(desc.size()));
  os.write(desc.data(), static_cast<std::streamsize>(desc.size()));
  detail::write_pod(os, static_cast<std::uint32_t>(store.entries().size()));
  for (const auto& e : store.entries()) {
    detail::write_pod(os, static_cast<std::uint32_t>(e.name.size()));
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    detail::write_pod(os, static_cast<std::uint8_t>(e.tensor.trainable() ? 1 : 0));
    detail::write_pod(os, static_cast<std::uint8_t>(e.is_buffer ? 1 : 0));
    detail::write_pod(os, static_cast<std::uint32_t>(e.tensor.shape().size()));
    for (std::size_t d : e.tensor.shape())
      detail::write_pod(os, static_cast<std::uint64_t>(d));
    os.write(reinterpret_cast<const char*>(e.tensor.data().data()),
             static_cast<std::streamsize>(e.tensor.size() * sizeof(float)));
  }
  require(bool(os), ErrorClass::Io, "short write while saving checkpoint " + path);
}

inline nlohmann::json read_checkpoint_descriptor(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  require(bool(is), ErrorClass::Io, "cannot open checkpoint " + path);
  char magic[4];
  is.read(magic, 4);
  require(bool(is) && std::string(magic, 4) == "KSEG", ErrorClass::Io,
          "not a KSEG checkpoint: " + path);
  const auto version = detail::read_pod<std::uint32_t>(is);
  require(version == kCheckpointVersion, ErrorClass::Io, "unsupported checkpoint version");
  const auto len = detail::read_pod<std::uint32_t>(is);
  std::string desc(len, '\0');
  is.read(desc.data(), len);
  require(bool(is), ErrorClass::Io, "checkpoint: truncated descriptor");
  return nlohmann::json::parse(desc);
}

// Fills an already-built model's store; names and shapes must match exactly.
inline void load_checkpoint_into(const std::string& path, ParamStore<float>& store) {
  std::ifstream is(path, std::ios::binary);
  require(bool(is), ErrorClass::Io, "cannot open checkpoint " + path);
  is.seekg(4 + sizeof(std::uint32_t));
  const auto len = detail::read_pod<std::uint32_t>(is);
  is.seekg(len, std::ios::cur);
  const auto count = detail::read_pod<std::uint32_t>(is);
  require(count == store.entries().size(), ErrorClass::State,
          "checkpoint/architecture mismatch: parameter count differs");
  for (auto& e : store.entries()) {
    const auto name_len = detail::read_pod<std::uint32_t>(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    require(name == e.name, ErrorClass::State,
            "checkpoint/architecture mismatch at parameter " + e.name);
    const bool trainable = detail::read_pod<std::uint8_t>(is) != 0;
    detail::read_pod<std::uint8_t>(is);  // buffer flag, implied by architecture
    const auto ndim = detail::read_pod<std::uint32_t>(is);
    Shape shape(ndim);
    for (auto& d : shape) d = static_cast<std::size_t>(detail::read_pod<std::uint64_t>(is));
    require(shape == e.tensor.shape(), ErrorClass::State,
            "checkpoint/architecture mismatch: shape of " + e.name);
    is.read(reinterpret_cast<char*>(e.tensor.data().data()),
            static_cast<std::streamsize>(e.tensor.size() * sizeof(float)));
    require(bool(is), ErrorClass::Io, "checkpoint: truncated tensor data");
    e.tensor.set_trainable(trainable);
  }
}

}  // namespace kseg
