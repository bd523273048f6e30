#include "lmft/video.hpp"

#include <fstream>
#include <limits>
#include <string>

#include "lmft/binary_io.hpp"

namespace lmft {

namespace {
constexpr char kMagic[5] = "LMFT";
constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 31;
}  // namespace

void write_vten(std::ostream& os, const VideoTensor& v) {
  os.write(kMagic, 4);
  io::write_le<std::uint32_t>(os, kVtenVersion);
  for (std::size_t e : {v.frames, v.channels, v.height, v.width}) {
    io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(e));
  }
  for (float x : v.values) io::write_le<float>(os, x);
  if (!os) throw std::runtime_error("vten write failed");
}

VideoTensor read_vten(std::istream& is) {
  io::expect_magic(is, kMagic, "vten");
  const auto version = io::read_le<std::uint32_t>(is, "vten version");
  if (version != kVtenVersion) throw io::FormatError("vten: unsupported version " + std::to_string(version));
  std::uint32_t dims[4];
  for (auto& d : dims) {
    d = io::read_le<std::uint32_t>(is, "vten header");
    if (d == 0) throw io::FormatError("vten: zero extent in header");
  }
  std::uint64_t n = 1;
  for (auto d : dims) {
    n *= d;
    if (n > kMaxElements) throw io::FormatError("vten: header extents overflow");
  }
  VideoTensor v(dims[0], dims[1], dims[2], dims[3]);
  const auto bytes = static_cast<std::streamsize>(n * sizeof(float));
  std::vector<char> raw(static_cast<std::size_t>(bytes));
  if (!is.read(raw.data(), bytes)) {
    throw io::TruncatedError("vten: payload shorter than header-declared " + std::to_string(n) + " values");
  }
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t bits = 0;
    for (int b = 3; b >= 0; --b) bits = (bits << 8) | static_cast<unsigned char>(raw[i * 4 + static_cast<std::size_t>(b)]);
    v.values[i] = std::bit_cast<float>(bits);
  }
  return v;
}

void save_vten(const std::filesystem::path& path, const VideoTensor& v) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_vten(os, v);
}

VideoTensor load_vten(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open video " + path.string());
  return read_vten(is);
}

}  // namespace lmft
