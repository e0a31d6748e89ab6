#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

namespace rft {

/// Interleaved H×W×C float image. Color images are RGB with values in [0, 1].
struct Image {
  int width = 0;
  int height = 0;
  int channels = 3;
  std::vector<float> data;

  Image() = default;
  Image(int w, int h, int c = 3, float fill = 0.0f)
      : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {}

  bool empty() const { return data.empty(); }
  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }

  float& at(int x, int y, int c = 0) {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  float at(int x, int y, int c = 0) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }

  bool operator==(const Image&) const = default;
};

/// Decodes a PNG/JPEG/... file into RGB floats in [0, 1]. Throws IoError on failure.
Image load_image(const std::filesystem::path& path);

/// Encodes an RGB (or single-channel) image; values are clamped to [0, 1] and
/// quantized to 8 bits. The format follows the file extension.
void save_image(const Image& image, const std::filesystem::path& path);

/// Round-trips the image through an in-memory JPEG encode/decode at the given quality.
Image jpeg_recompress(const Image& image, int quality);

/// Bilinear resize with half-pixel centers (matches align_corners=false).
Image resize_bilinear(const Image& image, int new_width, int new_height);

/// Downscales so that max(width, height) <= max_dim; returns the input when already small enough.
Image limit_max_dim(const Image& image, int max_dim);

/// Bilinear sample at a real pixel position (pixel centers at integer coordinates).
/// Coordinates outside [0, w-1]×[0, h-1] are clamped to the border.
float sample_bilinear(const Image& image, double x, double y, int c);

Image clamp01(Image image);

}  // namespace rft
