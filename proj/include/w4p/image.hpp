#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace w4p {

// Interleaved RGB, row-major, channel values in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<float> pixels;  // height * width * 3

  float at(int y, int x, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  float& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  bool empty() const { return pixels.empty(); }
};

Image make_image(int height, int width, float fill = 0.0f);
Image load_image(const std::filesystem::path& path);
Image decode_image(std::span<const std::uint8_t> bytes);
void save_image(const Image& image, const std::filesystem::path& path);
std::vector<std::uint8_t> encode_png(const Image& image);
// Bilinear resample.
Image resize_image(const Image& image, int height, int width);

std::vector<std::uint8_t> base64_decode(std::string_view text);

}  // namespace w4p
