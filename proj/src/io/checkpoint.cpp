// SPDX-License-Identifier: Apache-2.0
#include "imvae/io/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace imvae::io {

namespace {

constexpr const char* kMagicLine = "IMVAE-CHECKPOINT";

std::vector<unsigned char> to_le_bytes(const Tensor& t) {
  std::vector<unsigned char> out(t.size() * sizeof(double));
  for (std::size_t i = 0; i < t.size(); ++i) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(t[i]);
    for (int b = 0; b < 8; ++b) out[i * 8 + static_cast<std::size_t>(b)] = static_cast<unsigned char>(bits >> (8 * b));
  }
  return out;
}

Tensor from_le_bytes(const unsigned char* bytes, const Shape& shape) {
  Tensor t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= std::uint64_t{bytes[i * 8 + static_cast<std::size_t>(b)]} << (8 * b);
    t[i] = std::bit_cast<double>(bits);
  }
  return t;
}

std::uint32_t crc_bytes(const std::vector<unsigned char>& bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed large buffers in chunks.
  std::size_t off = 0;
  while (off < bytes.size()) {
    std::size_t len = std::min<std::size_t>(bytes.size() - off, 1u << 30);
    crc = crc32(crc, bytes.data() + off, static_cast<uInt>(len));
    off += len;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

void Checkpoint::put(const std::string& name, const Tensor& value) {
  for (auto& t : tensors)
    if (t.name == name) {
      t.value = value;
      return;
    }
  tensors.push_back({name, value});
}

bool Checkpoint::contains(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return true;
  return false;
}

const Tensor& Checkpoint::get(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t.value;
  throw CheckpointManifestError("checkpoint has no tensor named '" + name + "'");
}

void Checkpoint::read_into(const std::string& name, Tensor& dst) const {
  const Tensor& src = get(name);
  if (src.shape() != dst.shape())
    throw CheckpointShapeError("tensor '" + name + "' has shape " + shape_to_string(src.shape()) + ", model expects " +
                               shape_to_string(dst.shape()));
  dst = src;
}

std::uint32_t crc32_of(const Tensor& t) { return crc_bytes(to_le_bytes(t)); }

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  nlohmann::json manifest = nlohmann::json::array();
  std::vector<std::vector<unsigned char>> payloads;
  std::uint64_t offset = 0;
  for (const auto& t : ckpt.tensors) {
    payloads.push_back(to_le_bytes(t.value));
    manifest.push_back({{"name", t.name},
                        {"shape", t.value.shape()},
                        {"offset", offset},
                        {"bytes", payloads.back().size()},
                        {"crc32", crc_bytes(payloads.back())}});
    offset += payloads.back().size();
  }
  nlohmann::json header = {{"format_version", ckpt.format_version},
                           {"config", ckpt.config},
                           {"meta", ckpt.meta},
                           {"tensors", manifest},
                           {"payload_bytes", offset}};

  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp);
    out << kMagicLine << '\n' << header.dump() << '\n';
    for (const auto& p : payloads) out.write(reinterpret_cast<const char*>(p.data()), static_cast<std::streamsize>(p.size()));
    if (!out) throw IoError("write failed for " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw IoError("cannot move " + tmp + " to " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  std::string magic, header_line;
  if (!std::getline(in, magic) || magic != kMagicLine) throw CheckpointError(path + " is not a checkpoint file");
  if (!std::getline(in, header_line)) throw CheckpointManifestError(path + ": missing header");
  std::vector<unsigned char> payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_line);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointManifestError(path + ": malformed header: " + e.what());
  }

  Checkpoint ckpt;
  try {
    ckpt.format_version = header.at("format_version").get<int>();
    if (ckpt.format_version != kCheckpointFormatVersion)
      throw CheckpointVersionError(path + ": format version " + std::to_string(ckpt.format_version) +
                                   " is not supported (this build reads version " +
                                   std::to_string(kCheckpointFormatVersion) + ")");
    ckpt.config = header.at("config");
    ckpt.meta = header.at("meta");
    std::uint64_t declared = header.at("payload_bytes").get<std::uint64_t>();
    if (declared != payload.size())
      throw CheckpointManifestError(path + ": manifest declares " + std::to_string(declared) +
                                    " payload bytes, file holds " + std::to_string(payload.size()));

    std::uint64_t expected_offset = 0;
    for (const auto& entry : header.at("tensors")) {
      std::string name = entry.at("name").get<std::string>();
      Shape shape = entry.at("shape").get<Shape>();
      std::uint64_t offset = entry.at("offset").get<std::uint64_t>();
      std::uint64_t bytes = entry.at("bytes").get<std::uint64_t>();
      if (shape.empty() || offset != expected_offset || bytes != shape_size(shape) * sizeof(double) ||
          offset + bytes > payload.size())
        throw CheckpointManifestError(path + ": manifest entry for '" + name + "' is inconsistent");
      std::vector<unsigned char> chunk(payload.begin() + static_cast<std::ptrdiff_t>(offset),
                                       payload.begin() + static_cast<std::ptrdiff_t>(offset + bytes));
      if (crc_bytes(chunk) != entry.at("crc32").get<std::uint32_t>())
        throw CheckpointChecksumError(path + ": checksum mismatch for tensor '" + name + "'");
      ckpt.tensors.push_back({name, from_le_bytes(chunk.data(), shape)});
      expected_offset = offset + bytes;
    }
    if (expected_offset != payload.size())
      throw CheckpointManifestError(path + ": manifest does not cover the payload");
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointManifestError(path + ": malformed header: " + e.what());
  }
  return ckpt;
}

}  // namespace imvae::io
