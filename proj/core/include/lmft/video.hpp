#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

namespace lmft {

/// Dense T×C×H×W video with values in [0,1], stored t-major then c, h, w.
struct VideoTensor {
  std::size_t frames = 0;
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> values;

  VideoTensor() = default;
  VideoTensor(std::size_t t, std::size_t c, std::size_t h, std::size_t w, float fill = 0.0f)
      : frames(t), channels(c), height(h), width(w), values(t * c * h * w, fill) {}

  std::size_t index(std::size_t t, std::size_t c, std::size_t y, std::size_t x) const {
    return ((t * channels + c) * height + y) * width + x;
  }
  float& at(std::size_t t, std::size_t c, std::size_t y, std::size_t x) { return values[index(t, c, y, x)]; }
  float at(std::size_t t, std::size_t c, std::size_t y, std::size_t x) const { return values[index(t, c, y, x)]; }

  bool operator==(const VideoTensor&) const = default;
};

/// ".vten": "LMFT", u32 version, u32 T, C, H, W, then T·C·H·W f32 values,
/// all little-endian.
inline constexpr std::uint32_t kVtenVersion = 1;

void write_vten(std::ostream& os, const VideoTensor& v);
VideoTensor read_vten(std::istream& is);
void save_vten(const std::filesystem::path& path, const VideoTensor& v);
VideoTensor load_vten(const std::filesystem::path& path);

}  // namespace lmft
