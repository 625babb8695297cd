#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "keymark/geometry/image.hpp"

namespace keymark::geometry {

// PNG encoding is deterministic: identical rasters give identical bytes.
std::vector<std::uint8_t> encode_png(const RgbImage& image);
std::vector<std::uint8_t> encode_png(const BinaryMask& mask);  // 8-bit gray, 0/255

void write_png(const std::filesystem::path& path, const RgbImage& image);
void write_png(const std::filesystem::path& path, const BinaryMask& mask);
RgbImage read_png_rgb(const std::filesystem::path& path);
RgbImage decode_png_rgb(const std::vector<std::uint8_t>& bytes);
BinaryMask read_png_mask(const std::filesystem::path& path);  // foreground where gray >= 128

// 16-bit binary PGM holding depth in millimeters; 0 stays the invalid sentinel.
void write_pgm16(const std::filesystem::path& path, const DepthImage& depth);
DepthImage read_pgm16(const std::filesystem::path& path, double far_plane = kDefaultFarPlane);

void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

}  // namespace keymark::geometry
