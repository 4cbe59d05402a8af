#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "vlime/raster.hpp"

namespace vlime::io {

namespace fs = std::filesystem;

// Raster files. The format is chosen by extension: .png, .ppm, .pgm (binary
// P6/P5, maxval 255). Grayscale PNGs load with 1 channel, RGB/RGBA with 3
// (alpha dropped).
Image read_image(const fs::path& path);
void write_image(const fs::path& path, const Image& img);

std::vector<std::uint8_t> encode_png(const Image& img);
Image decode_png(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_pnm(const Image& img);
Image decode_pnm(std::span<const std::uint8_t> bytes);

// Heatmap raw format (.hm): "HMAP", u32 LE width, u32 LE height, then
// width*height float32 LE values, row-major.
std::vector<std::uint8_t> encode_heatmap(const Heatmap& map);
Heatmap decode_heatmap(std::span<const std::uint8_t> bytes);
void write_heatmap(const fs::path& path, const Heatmap& map);
Heatmap read_heatmap(const fs::path& path);

// Lossy visualization: value v in [0,1] -> round(v*255), clamped.
Image heatmap_to_gray(const Heatmap& map);
void write_heatmap_png(const fs::path& path, const Heatmap& map);

// 16-bit binary PGM (P5, maxval 65535, big-endian samples) of integer labels.
void write_label_pgm16(const fs::path& path, int width, int height,
                       std::span<const int> labels);

std::vector<std::uint8_t> read_file(const fs::path& path);

// Writes to a temporary sibling and renames it over `path`.
void write_file_atomic(const fs::path& path, std::span<const std::uint8_t> bytes);
void write_file_atomic(const fs::path& path, const std::string& text);

// Little-endian helpers shared by the binary formats.
void put_u32le(std::vector<std::uint8_t>& out, std::uint32_t v);
void put_f32le(std::vector<std::uint8_t>& out, float v);
std::uint32_t get_u32le(std::span<const std::uint8_t> in, std::size_t offset);
float get_f32le(std::span<const std::uint8_t> in, std::size_t offset);

}  // namespace vlime::io
