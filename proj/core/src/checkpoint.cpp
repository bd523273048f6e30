#include "lmft/nn/checkpoint.hpp"

#include <fstream>
#include <limits>

#include "lmft/binary_io.hpp"

namespace lmft::nn {

namespace {

constexpr char kMagic[5] = "LMCK";
constexpr std::uint32_t kMaxRank = 8;
constexpr std::uint32_t kMaxName = 4096;

}  // namespace

const Tensor* CheckpointFile::find_tensor(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t.value;
  return nullptr;
}

const CheckpointSection* CheckpointFile::find_section(const std::string& tag) const {
  for (const auto& s : sections)
    if (s.tag == tag) return &s;
  return nullptr;
}

void write_checkpoint(std::ostream& os, const CheckpointFile& ckpt) {
  os.write(kMagic, 4);
  io::write_le<std::uint32_t>(os, kCheckpointVersion);
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, value] : ckpt.tensors) {
    io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(value.rank()));
    for (std::size_t e : value.shape()) io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(e));
    for (float v : value.storage()) io::write_le<float>(os, v);
  }
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(ckpt.sections.size()));
  for (const auto& s : ckpt.sections) {
    if (s.tag.size() != 4) throw std::invalid_argument("checkpoint section tag must be 4 bytes: " + s.tag);
    os.write(s.tag.data(), 4);
    io::write_le<std::uint64_t>(os, s.payload.size());
    os.write(s.payload.data(), static_cast<std::streamsize>(s.payload.size()));
  }
  if (!os) throw std::runtime_error("checkpoint write failed");
}

CheckpointFile read_checkpoint(std::istream& is) {
  io::expect_magic(is, kMagic, "checkpoint");
  const auto version = io::read_le<std::uint32_t>(is, "checkpoint version");
  if (version != kCheckpointVersion) {
    throw io::FormatError("checkpoint: unsupported version " + std::to_string(version));
  }
  CheckpointFile out;
  const auto count = io::read_le<std::uint32_t>(is, "tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = io::read_le<std::uint32_t>(is, "name length");
    if (name_len > kMaxName) throw io::FormatError("checkpoint: implausible name length");
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) throw io::TruncatedError("checkpoint: truncated name");
    const auto rank = io::read_le<std::uint32_t>(is, "rank");
    if (rank > kMaxRank) throw io::FormatError("checkpoint: implausible rank for " + name);
    Shape shape(rank);
    std::uint64_t n = 1;
    for (auto& e : shape) {
      e = io::read_le<std::uint32_t>(is, "extent");
      if (e == 0) throw io::FormatError("checkpoint: zero extent in " + name);
      n *= e;
      if (n > (std::uint64_t{1} << 32)) throw io::FormatError("checkpoint: tensor too large: " + name);
    }
    std::vector<float> data(n);
    for (auto& v : data) v = io::read_le<float>(is, "tensor values");
    out.tensors.push_back({std::move(name), Tensor(std::move(shape), std::move(data))});
  }
  const auto sections = io::read_le<std::uint32_t>(is, "section count");
  for (std::uint32_t i = 0; i < sections; ++i) {
    CheckpointSection s;
    s.tag.resize(4);
    if (!is.read(s.tag.data(), 4)) throw io::TruncatedError("checkpoint: truncated section tag");
    const auto len = io::read_le<std::uint64_t>(is, "section length");
    if (len > (std::uint64_t{1} << 30)) throw io::FormatError("checkpoint: implausible section length");
    s.payload.resize(len);
    if (!is.read(s.payload.data(), static_cast<std::streamsize>(len))) {
      throw io::TruncatedError("checkpoint: truncated section " + s.tag);
    }
    out.sections.push_back(std::move(s));
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const CheckpointFile& ckpt) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_checkpoint(os, ckpt);
}

CheckpointFile load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
  return read_checkpoint(is);
}

}  // namespace lmft::nn
