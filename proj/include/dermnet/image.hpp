#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace dermnet {

/// 8-bit interleaved RGB, row-major.
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(std::size_t w, std::size_t h, std::uint8_t fill = 0) : width(w), height(h), pixels(w * h * 3, fill) {}

  std::uint8_t at(std::size_t x, std::size_t y, std::size_t c) const { return pixels[(y * width + x) * 3 + c]; }
  std::uint8_t& at(std::size_t x, std::size_t y, std::size_t c) { return pixels[(y * width + x) * 3 + c]; }

  friend bool operator==(const Image&, const Image&) = default;
};

enum class ImageFormat { png, jpeg, unknown };

/// Sniffs the container from its signature bytes.
ImageFormat detect_format(std::span<const std::uint8_t> bytes);

/// Decodes PNG or JPEG to 8-bit RGB. Grey, palette, alpha and 16-bit inputs
/// are converted. Throws ImageDecodeError.
Image decode_image(std::span<const std::uint8_t> bytes);
Image read_image(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_png(const Image& image);
void write_png(const Image& image, const std::filesystem::path& path);

}  // namespace dermnet
