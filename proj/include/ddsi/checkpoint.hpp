#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "ddsi/model.hpp"

namespace ddsi {

inline constexpr char kCheckpointMagic[4] = {'D', 'D', 'S', 'I'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Layout: magic "DDSI", u32 version, u32 V, u32 d, u32 N, then little-endian
/// f32 arrays embed, hidden_w, hidden_b, cls_w, cls_b (row-major).
/// Parameters are held in double and narrowed to f32 on write.
std::vector<std::uint8_t> serialize_checkpoint(const ModelParams& p);
ModelParams deserialize_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const ModelParams& p, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);

/// Rounds every parameter to the nearest f32, i.e. what a save/load cycle yields.
ModelParams round_to_f32(ModelParams p);

}  // namespace ddsi
