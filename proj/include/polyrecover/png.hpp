#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "polyrecover/raster.hpp"

// Minimal PNG codec for binary canvases.
//
// Encoder settings are fixed so equal canvases give equal bytes: 8-bit
// grayscale (color type 0), no interlace, filter type 0 on every row, one
// IDAT chunk holding a zlib stream at level 9, window 15, memLevel 8,
// Z_RLE strategy. No ancillary chunks are written.
namespace polyrecover {

std::vector<std::uint8_t> encode_png(const Canvas& canvas);

// Accepts any conforming 8-bit grayscale PNG (all five row filters, split
// IDAT chunks) whose samples are 0 or 255. Throws DecodeError otherwise.
Canvas decode_png(std::span<const std::uint8_t> bytes);

// Throw IoError on filesystem failures.
void write_png_file(const std::filesystem::path& path, const Canvas& canvas);
Canvas read_png_file(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace polyrecover
