#pragma once

// Dense h x w x c tensors, binary masks, scalar fields and the low-level
// kernels built on them: upscaling, channel concatenation and the exact
// Euclidean distance transform.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "eclad/errors.hpp"

namespace eclad {

enum class UpscaleMode { nearest, bilinear, bicubic };

inline std::string_view to_string(UpscaleMode mode) {
  switch (mode) {
    case UpscaleMode::nearest: return "nearest";
    case UpscaleMode::bilinear: return "bilinear";
    case UpscaleMode::bicubic: return "bicubic";
  }
  return "bilinear";
}

inline UpscaleMode parse_upscale_mode(std::string_view name) {
  if (name == "nearest") return UpscaleMode::nearest;
  if (name == "bilinear") return UpscaleMode::bilinear;
  if (name == "bicubic") return UpscaleMode::bicubic;
  throw InvalidArgument("unknown upscale mode '" + std::string(name) + "'");
}

/// Row-major (row, col, channel) field of 32-bit reals.
class Tensor3 {
 public:
  Tensor3() = default;
  Tensor3(std::size_t height, std::size_t width, std::size_t channels, float fill = 0.0f)
      : height_(height), width_(width), channels_(channels),
        data_(height * width * channels, fill) {}

  Tensor3(std::size_t height, std::size_t width, std::size_t channels, std::vector<float> data)
      : height_(height), width_(width), channels_(channels), data_(std::move(data)) {
    if (data_.size() != height_ * width_ * channels_) {
      throw InvalidArgument("tensor data length " + std::to_string(data_.size()) +
                            " does not match shape " + shape_string());
    }
  }

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t channels() const { return channels_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  float& at(std::size_t row, std::size_t col, std::size_t ch) {
    return data_[(row * width_ + col) * channels_ + ch];
  }
  float at(std::size_t row, std::size_t col, std::size_t ch) const {
    return data_[(row * width_ + col) * channels_ + ch];
  }

  std::span<float> pixel(std::size_t row, std::size_t col) {
    return {data_.data() + (row * width_ + col) * channels_, channels_};
  }
  std::span<const float> pixel(std::size_t row, std::size_t col) const {
    return {data_.data() + (row * width_ + col) * channels_, channels_};
  }
  std::span<const float> pixel(std::size_t flat) const {
    return {data_.data() + flat * channels_, channels_};
  }

  std::vector<float>& data() { return data_; }
  const std::vector<float>& data() const { return data_; }

  bool same_shape(const Tensor3& other) const {
    return height_ == other.height_ && width_ == other.width_ && channels_ == other.channels_;
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
  }

  std::string shape_string() const {
    return "(" + std::to_string(height_) + "," + std::to_string(width_) + "," +
           std::to_string(channels_) + ")";
  }

  friend bool operator==(const Tensor3&, const Tensor3&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::size_t channels_ = 0;
  std::vector<float> data_;
};

/// Binary row-major mask.
class Mask2 {
 public:
  Mask2() = default;
  Mask2(std::size_t height, std::size_t width, bool fill = false)
      : height_(height), width_(width), bits_(height * width, fill ? 1 : 0) {}

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t size() const { return bits_.size(); }

  bool operator()(std::size_t row, std::size_t col) const { return bits_[row * width_ + col] != 0; }
  bool operator[](std::size_t flat) const { return bits_[flat] != 0; }
  void set(std::size_t row, std::size_t col, bool v) { bits_[row * width_ + col] = v ? 1 : 0; }
  void set(std::size_t flat, bool v) { bits_[flat] = v ? 1 : 0; }

  std::size_t count() const {
    return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
  }
  bool any() const { return count() > 0; }
  bool same_dims(const Mask2& other) const {
    return height_ == other.height_ && width_ == other.width_;
  }

  Mask2 complement() const {
    Mask2 out(height_, width_);
    for (std::size_t i = 0; i < bits_.size(); ++i) out.bits_[i] = bits_[i] ? 0 : 1;
    return out;
  }

  friend bool operator==(const Mask2&, const Mask2&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<std::uint8_t> bits_;
};

/// Scalar row-major field.
class Field2 {
 public:
  Field2() = default;
  Field2(std::size_t height, std::size_t width, double fill = 0.0)
      : height_(height), width_(width), values_(height * width, fill) {}

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t size() const { return values_.size(); }

  double operator()(std::size_t row, std::size_t col) const { return values_[row * width_ + col]; }
  double& operator()(std::size_t row, std::size_t col) { return values_[row * width_ + col]; }
  double operator[](std::size_t flat) const { return values_[flat]; }
  double& operator[](std::size_t flat) { return values_[flat]; }

  const std::vector<double>& values() const { return values_; }

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<double> values_;
};

namespace detail {

// Half-pixel-center source coordinate, clamped to the valid sample range.
inline double source_coord(std::size_t dst, std::size_t src_dim, std::size_t dst_dim) {
  const double scale = static_cast<double>(src_dim) / static_cast<double>(dst_dim);
  const double s = (static_cast<double>(dst) + 0.5) * scale - 0.5;
  return std::clamp(s, 0.0, static_cast<double>(src_dim - 1));
}

inline double keys_kernel(double x) {
  constexpr double a = -0.5;
  x = std::abs(x);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  return 0.0;
}

struct AxisTaps {
  std::vector<std::size_t> index;  // taps_per_sample entries per output sample
  std::vector<double> weight;
  std::size_t taps_per_sample = 1;
};

inline AxisTaps axis_taps(std::size_t src_dim, std::size_t dst_dim, UpscaleMode mode) {
  AxisTaps taps;
  const auto last = static_cast<std::ptrdiff_t>(src_dim) - 1;
  auto clamp_index = [last](std::ptrdiff_t i) {
    return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(i, 0, last));
  };
  switch (mode) {
    case UpscaleMode::nearest: {
      taps.taps_per_sample = 1;
      const double scale = static_cast<double>(src_dim) / static_cast<double>(dst_dim);
      for (std::size_t d = 0; d < dst_dim; ++d) {
        const auto i = static_cast<std::ptrdiff_t>(std::floor((static_cast<double>(d) + 0.5) * scale));
        taps.index.push_back(clamp_index(i));
        taps.weight.push_back(1.0);
      }
      break;
    }
    case UpscaleMode::bilinear: {
      taps.taps_per_sample = 2;
      for (std::size_t d = 0; d < dst_dim; ++d) {
        const double s = source_coord(d, src_dim, dst_dim);
        const auto i0 = static_cast<std::ptrdiff_t>(std::floor(s));
        const double t = s - static_cast<double>(i0);
        taps.index.push_back(clamp_index(i0));
        taps.index.push_back(clamp_index(i0 + 1));
        taps.weight.push_back(1.0 - t);
        taps.weight.push_back(t);
      }
      break;
    }
    case UpscaleMode::bicubic: {
      taps.taps_per_sample = 4;
      for (std::size_t d = 0; d < dst_dim; ++d) {
        const double s = source_coord(d, src_dim, dst_dim);
        const auto i0 = static_cast<std::ptrdiff_t>(std::floor(s));
        const double t = s - static_cast<double>(i0);
        for (std::ptrdiff_t k = -1; k <= 2; ++k) {
          taps.index.push_back(clamp_index(i0 + k));
          taps.weight.push_back(keys_kernel(t - static_cast<double>(k)));
        }
      }
      break;
    }
  }
  return taps;
}

}  // namespace detail

/// Resamples `src` to (target_h, target_w) with half-pixel-center mapping.
inline Tensor3 upscale(const Tensor3& src, std::size_t target_h, std::size_t target_w,
                       UpscaleMode mode) {
  if (src.empty() || src.height() == 0 || src.width() == 0 || src.channels() == 0) {
    throw InvalidArgument("upscale: empty source tensor");
  }
  if (target_h == 0 || target_w == 0) throw InvalidArgument("upscale: zero-sized target");

  if (target_h == src.height() && target_w == src.width()) return src;

  const auto rows = detail::axis_taps(src.height(), target_h, mode);
  const auto cols = detail::axis_taps(src.width(), target_w, mode);
  const std::size_t channels = src.channels();
  Tensor3 out(target_h, target_w, channels);
  std::vector<double> acc(channels);

  for (std::size_t r = 0; r < target_h; ++r) {
    for (std::size_t c = 0; c < target_w; ++c) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::size_t i = 0; i < rows.taps_per_sample; ++i) {
        const std::size_t sr = rows.index[r * rows.taps_per_sample + i];
        const double wr = rows.weight[r * rows.taps_per_sample + i];
        if (wr == 0.0) continue;
        for (std::size_t j = 0; j < cols.taps_per_sample; ++j) {
          const std::size_t sc = cols.index[c * cols.taps_per_sample + j];
          const double w = wr * cols.weight[c * cols.taps_per_sample + j];
          if (w == 0.0) continue;
          const auto px = src.pixel(sr, sc);
          for (std::size_t ch = 0; ch < channels; ++ch) acc[ch] += w * px[ch];
        }
      }
      auto dst = out.pixel(r, c);
      for (std::size_t ch = 0; ch < channels; ++ch) dst[ch] = static_cast<float>(acc[ch]);
    }
  }
  return out;
}

/// Channel-wise concatenation preserving list order.
inline Tensor3 concat_channels(std::span<const Tensor3> parts) {
  if (parts.empty()) throw InvalidArgument("concat_channels: empty part list");
  const std::size_t h = parts.front().height();
  const std::size_t w = parts.front().width();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.height() != h || p.width() != w) {
      throw InvalidArgument("concat_channels: spatial dims " + p.shape_string() +
                            " do not match " + parts.front().shape_string());
    }
    total += p.channels();
  }
  if (parts.size() == 1) return parts.front();

  Tensor3 out(h, w, total);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      auto dst = out.pixel(r, c);
      std::size_t offset = 0;
      for (const auto& p : parts) {
        const auto src = p.pixel(r, c);
        std::copy(src.begin(), src.end(), dst.begin() + static_cast<std::ptrdiff_t>(offset));
        offset += p.channels();
      }
    }
  }
  return out;
}

inline Tensor3 concat_channels(const std::vector<Tensor3>& parts) {
  return concat_channels(std::span<const Tensor3>(parts));
}

/// Distance assigned to every pixel when a mask has no true pixel.
inline double edt_cap(std::size_t height, std::size_t width) {
  const auto h = static_cast<double>(height);
  const auto w = static_cast<double>(width);
  return std::sqrt(h * h + w * w);
}

namespace detail {

// One-dimensional squared distance transform of a sampled function
// (lower envelope of parabolas rooted at each sample).
inline void sq_dt_1d(std::span<const double> f, std::span<double> d, std::vector<std::ptrdiff_t>& v,
                     std::vector<double>& z) {
  const auto n = static_cast<std::ptrdiff_t>(f.size());
  constexpr double kInf = std::numeric_limits<double>::infinity();
  v.assign(static_cast<std::size_t>(n), 0);
  z.assign(static_cast<std::size_t>(n) + 1, 0.0);

  // Skip leading samples with no seed; they never support the envelope.
  std::ptrdiff_t first = 0;
  while (first < n && !std::isfinite(f[static_cast<std::size_t>(first)])) ++first;
  if (first == n) {
    std::fill(d.begin(), d.end(), kInf);
    return;
  }

  std::ptrdiff_t k = 0;
  v[0] = first;
  z[0] = -kInf;
  z[1] = kInf;
  auto at = [&](std::ptrdiff_t i) { return f[static_cast<std::size_t>(i)]; };
  for (std::ptrdiff_t q = first + 1; q < n; ++q) {
    if (!std::isfinite(at(q))) continue;
    double s = 0.0;
    while (true) {
      const std::ptrdiff_t p = v[static_cast<std::size_t>(k)];
      s = ((at(q) + static_cast<double>(q * q)) - (at(p) + static_cast<double>(p * p))) /
          (2.0 * static_cast<double>(q - p));
      if (s <= z[static_cast<std::size_t>(k)] && k > 0) {
        --k;
        continue;
      }
      break;
    }
    ++k;
    v[static_cast<std::size_t>(k)] = q;
    z[static_cast<std::size_t>(k)] = s;
    z[static_cast<std::size_t>(k) + 1] = kInf;
  }
  k = 0;
  for (std::ptrdiff_t q = 0; q < n; ++q) {
    while (z[static_cast<std::size_t>(k) + 1] < static_cast<double>(q)) ++k;
    const std::ptrdiff_t p = v[static_cast<std::size_t>(k)];
    d[static_cast<std::size_t>(q)] = static_cast<double>((q - p) * (q - p)) + at(p);
  }
}

}  // namespace detail

/// Exact Euclidean distance from every pixel to the nearest true pixel of
/// `seeds`. Without any seed every value is edt_cap(h, w).
inline Field2 edt(const Mask2& seeds) {
  const std::size_t h = seeds.height();
  const std::size_t w = seeds.width();
  if (!seeds.any()) return Field2(h, w, edt_cap(h, w));

  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> grid(h * w);
  for (std::size_t i = 0; i < h * w; ++i) grid[i] = seeds[i] ? 0.0 : kInf;

  std::vector<std::ptrdiff_t> v;
  std::vector<double> z;
  std::vector<double> line(std::max(h, w));
  std::vector<double> out(std::max(h, w));

  for (std::size_t c = 0; c < w; ++c) {
    for (std::size_t r = 0; r < h; ++r) line[r] = grid[r * w + c];
    detail::sq_dt_1d(std::span<const double>(line.data(), h), std::span<double>(out.data(), h), v, z);
    for (std::size_t r = 0; r < h; ++r) grid[r * w + c] = out[r];
  }
  Field2 result(h, w);
  for (std::size_t r = 0; r < h; ++r) {
    std::copy_n(grid.begin() + static_cast<std::ptrdiff_t>(r * w), w, line.begin());
    detail::sq_dt_1d(std::span<const double>(line.data(), w), std::span<double>(out.data(), w), v, z);
    for (std::size_t c = 0; c < w; ++c) result(r, c) = std::sqrt(out[c]);
  }
  return result;
}

}  // namespace eclad
