#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "itss/nn.hpp"
#include "itss/subspace.hpp"
#include "itss/train.hpp"

// Binary artifact files. Layout (all integers little-endian):
//
//   magic "ITSS" | u32 version (1) | u8 kind | u32 meta_len | meta JSON
//   | u32 layer_count | per layer { layout descriptor | payload }
//   | u32 CRC32 of everything before the footer
//
// layout descriptor: u64 layer_id, u32 tensor_count, then per tensor
// u32 name_len + UTF-8 name + u32 rank + u64 dims.
//
// payload per kind:
//   trajectory (1): u64 D, f64 origin[D], u64 t, t * f64[D]
//   basis      (2): u64 D, u64 d, f64 origin[D], f64 sigma[d], f64 V[D*d]
//   state      (3): u64 h, u64 d, h * f64[d]
//
// Round trips are bit-exact. Bad magic, version, kind or checksum raise
// ArtifactError; truncation surfaces as a checksum/length error, never a
// silent misparse.

namespace itss::io {

std::uint32_t crc32(const void* data, std::size_t len);

void save_trajectory(const train::Trajectory& traj, const std::filesystem::path& path);
train::Trajectory load_trajectory(const std::filesystem::path& path);

void save_basis(const subspace::SubspaceBasis& basis, const std::filesystem::path& path);
subspace::SubspaceBasis load_basis(const std::filesystem::path& path);

void save_state(const subspace::LowDimState& state,
                const std::vector<nn::LayerLayout>& layouts,
                const std::filesystem::path& path);
std::pair<subspace::LowDimState, std::vector<nn::LayerLayout>> load_state(
    const std::filesystem::path& path);

}  // namespace itss::io
