#include "ddsi/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "ddsi/error.hpp"

namespace ddsi {

namespace {

constexpr std::size_t kHeaderBytes = 4 + 4 * 4;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t x) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(x >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t at) {
  std::uint32_t x = 0;
  for (int i = 0; i < 4; ++i) x |= static_cast<std::uint32_t>(b[at + static_cast<std::size_t>(i)]) << (8 * i);
  return x;
}

std::uint32_t checked_u32(std::int64_t v) {
  if (v < 0 || v > static_cast<std::int64_t>(UINT32_MAX)) {
    throw Error(Errc::InvalidDims, "dimension does not fit in u32", v);
  }
  return static_cast<std::uint32_t>(v);
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const ModelParams& p) {
  std::vector<std::uint8_t> out;
  out.reserve(kHeaderBytes + 4 * static_cast<std::size_t>(p.size()));
  out.insert(out.end(), std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  put_u32(out, kCheckpointVersion);
  put_u32(out, checked_u32(p.dims.vocab));
  put_u32(out, checked_u32(p.dims.dim));
  put_u32(out, checked_u32(p.dims.docs));
  for (auto t : p.tensors()) {
    for (double x : t) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(x)));
  }
  return out;
}

ModelParams deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kHeaderBytes || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    throw Error(Errc::CheckpointVersionMismatch, "bad checkpoint magic");
  }
  const auto version = get_u32(bytes, 4);
  if (version != kCheckpointVersion) {
    throw Error(Errc::CheckpointVersionMismatch,
                "checkpoint version " + std::to_string(version) + ", expected " +
                    std::to_string(kCheckpointVersion),
                version);
  }
  Dims dims{get_u32(bytes, 8), get_u32(bytes, 12), get_u32(bytes, 16)};
  if (dims.vocab < 1 || dims.dim < 1 || dims.docs < 1) {
    throw Error(Errc::InvalidDims, "checkpoint has an empty dimension");
  }
  const auto expected = kHeaderBytes + 4 * static_cast<std::size_t>(param_count(dims));
  if (bytes.size() != expected) {
    throw Error(Errc::ShapeMismatch, "checkpoint is " + std::to_string(bytes.size()) +
                                         " bytes, expected " + std::to_string(expected));
  }
  ModelParams p;
  static_cast<ParamTensors&>(p) = ParamTensors::zeros(dims);
  std::size_t at = kHeaderBytes;
  for (auto t : p.tensors()) {
    for (double& x : t) {
      x = static_cast<double>(std::bit_cast<float>(get_u32(bytes, at)));
      at += 4;
    }
  }
  return p;
}

void save_checkpoint(const ModelParams& p, const std::filesystem::path& path) {
  auto bytes = serialize_checkpoint(p);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::Io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(Errc::Io, "short write to " + path.string());
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::Io, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

ModelParams round_to_f32(ModelParams p) {
  for (auto t : p.tensors()) {
    for (double& x : t) x = static_cast<double>(static_cast<float>(x));
  }
  return p;
}

}  // namespace ddsi
