#pragma once

// 8-bit PNG read/write (libpng simplified API) and conversions between
// 8-bit rasters, RGB tensors and masks.

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "eclad/errors.hpp"
#include "eclad/tensor.hpp"

namespace eclad {

struct Image8 {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;  // 1 (gray) or 3 (RGB)
  std::vector<std::uint8_t> pixels;

  friend bool operator==(const Image8&, const Image8&) = default;
};

inline void write_png(const std::filesystem::path& path, const Image8& img) {
  if (img.channels != 1 && img.channels != 3) throw InvalidArgument("write_png: 1 or 3 channels");
  if (img.pixels.size() != img.height * img.width * img.channels) {
    throw InvalidArgument("write_png: pixel buffer size mismatch");
  }
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = img.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&image, path.c_str(), 0, img.pixels.data(), 0, nullptr)) {
    std::string msg = image.message;
    png_image_free(&image);
    throw IoError("cannot write PNG " + path.string() + ": " + msg);
  }
}

/// Reads a PNG, converting to `channels` (1 = gray, 3 = RGB).
inline Image8 read_png(const std::filesystem::path& path, std::size_t channels) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw IoError("cannot read PNG " + path.string() + ": " + image.message);
  }
  image.format = channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  Image8 out;
  out.height = image.height;
  out.width = image.width;
  out.channels = channels;
  out.pixels.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
    std::string msg = image.message;
    png_image_free(&image);
    throw IoError("cannot decode PNG " + path.string() + ": " + msg);
  }
  return out;
}

inline std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

/// Tensor with values in [0,1] (1 or 3 channels) to an 8-bit raster.
inline Image8 to_image8(const Tensor3& t) {
  if (t.channels() != 1 && t.channels() != 3) throw InvalidArgument("to_image8: 1 or 3 channels");
  Image8 img{t.height(), t.width(), t.channels(), {}};
  img.pixels.resize(t.size());
  std::transform(t.data().begin(), t.data().end(), img.pixels.begin(), to_byte);
  return img;
}

inline Tensor3 to_tensor(const Image8& img) {
  Tensor3 t(img.height, img.width, img.channels);
  std::transform(img.pixels.begin(), img.pixels.end(), t.data().begin(),
                 [](std::uint8_t b) { return static_cast<float>(b) / 255.0f; });
  return t;
}

inline Image8 mask_to_image8(const Mask2& m) {
  Image8 img{m.height(), m.width(), 1, std::vector<std::uint8_t>(m.size())};
  for (std::size_t i = 0; i < m.size(); ++i) img.pixels[i] = m[i] ? 255 : 0;
  return img;
}

inline Mask2 image8_to_mask(const Image8& img) {
  if (img.channels != 1) throw InvalidArgument("image8_to_mask: expected grayscale");
  Mask2 m(img.height, img.width);
  for (std::size_t i = 0; i < m.size(); ++i) m.set(i, img.pixels[i] >= 128);
  return m;
}

inline Tensor3 read_rgb(const std::filesystem::path& path) { return to_tensor(read_png(path, 3)); }
inline void write_rgb(const std::filesystem::path& path, const Tensor3& t) { write_png(path, to_image8(t)); }
inline Mask2 read_mask(const std::filesystem::path& path) { return image8_to_mask(read_png(path, 1)); }
inline void write_mask(const std::filesystem::path& path, const Mask2& m) {
  write_png(path, mask_to_image8(m));
}

}  // namespace eclad
