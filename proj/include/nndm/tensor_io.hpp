#pragma once

#include "nndm/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace nndm {

// Binary tensor encoding, little-endian throughout:
//   bytes 0..5   magic "NNDMT\0"
//   bytes 6..7   format version (u16, currently 1)
//   bytes 8..9   rank (u16, 1..3)
//   bytes 10..11 reserved, zero
//   bytes 12..23 dims (3 x u32; slots past `rank` are zero)
//   then prod(dims) row-major f32 values.
inline constexpr std::size_t kTensorHeaderBytes = 24;
inline constexpr std::uint16_t kTensorFormatVersion = 1;

std::string encode_tensor(const Tensor& tensor);

/// Decodes one tensor starting at `offset` and advances `offset` past it.
/// Throws DataError on bad magic, unsupported version or truncation.
Tensor decode_tensor(std::string_view bytes, std::size_t& offset);

void write_tensor_file(const std::filesystem::path& path, const Tensor& tensor);
Tensor read_tensor_file(const std::filesystem::path& path);

std::string read_file_bytes(const std::filesystem::path& path);
/// Writes to a temporary sibling, then renames into place.
void write_file_bytes(const std::filesystem::path& path, std::string_view bytes);

}  // namespace nndm
