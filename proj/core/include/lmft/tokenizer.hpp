#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lmft/video.hpp"

// Motion-focused tokenization: tubelet partition, per-token motion energy
// and threshold-based token selection.

namespace lmft {

class TokenizerError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct GridExtents {
  std::size_t n_t = 0;
  std::size_t n_x = 0;
  std::size_t n_y = 0;

  std::size_t count() const { return n_t * n_x * n_y; }
  std::size_t slice() const { return n_x * n_y; }
  std::size_t flat(std::size_t t, std::size_t x, std::size_t y) const { return (t * n_x + x) * n_y + y; }
  bool operator==(const GridExtents&) const = default;
};

/// Non-overlapping t_p×p×p tubelets. Token (t,x,y) covers frames
/// [t·t_p, (t+1)·t_p), rows [x·p, (x+1)·p) and columns [y·p, (y+1)·p).
/// Each block is laid out frame, channel, row, column.
struct PatchGrid {
  GridExtents extents;
  std::size_t tubelet = 0;
  std::size_t channels = 0;
  std::size_t patch = 0;
  std::vector<float> blocks;

  std::size_t block_size() const { return tubelet * channels * patch * patch; }
  std::span<const float> block(std::size_t t, std::size_t x, std::size_t y) const {
    return std::span<const float>(blocks).subspan(extents.flat(t, x, y) * block_size(), block_size());
  }
};

/// A stack of C×p×p maps indexed by (t,x,y); used for representative
/// patches (n_t slices) and difference maps (n_t − 1 slices).
struct PatchStack {
  GridExtents extents;
  std::size_t channels = 0;
  std::size_t patch = 0;
  std::vector<float> maps;

  std::size_t map_size() const { return channels * patch * patch; }
  std::span<const float> map(std::size_t t, std::size_t x, std::size_t y) const {
    return std::span<const float>(maps).subspan(extents.flat(t, x, y) * map_size(), map_size());
  }
};

/// Scalar per-token energies; raw, normalized, or the full motion tensor.
struct EnergyGrid {
  GridExtents extents;
  std::vector<double> values;

  double at(std::size_t t, std::size_t x, std::size_t y) const { return values[extents.flat(t, x, y)]; }
};

/// Normalized energies with a prepended all-ones first slice.
using MotionEnergyTensor = EnergyGrid;

enum class NormalizeScope { video, location };

struct SelectionMask {
  GridExtents extents;
  std::vector<std::uint8_t> bits;

  bool at(std::size_t t, std::size_t x, std::size_t y) const { return bits[extents.flat(t, x, y)] != 0; }
  std::size_t retained() const;
  bool operator==(const SelectionMask&) const = default;
};

struct TokenIndex {
  std::uint32_t t = 0;
  std::uint32_t x = 0;
  std::uint32_t y = 0;
  auto operator<=>(const TokenIndex&) const = default;
};

/// Retained tokens in canonical (t,x,y) order, each with its original index.
struct TokenSequence {
  std::string video_id;
  GridExtents extents;
  std::size_t block_size = 0;
  std::vector<TokenIndex> indices;
  std::vector<float> blocks;

  std::size_t size() const { return indices.size(); }
  std::span<const float> block(std::size_t i) const {
    return std::span<const float>(blocks).subspan(i * block_size, block_size);
  }
};

PatchGrid partition_video(const VideoTensor& v, std::size_t patch, std::size_t tubelet);
VideoTensor reassemble_video(const PatchGrid& grid);

PatchStack temporal_average(const PatchGrid& grid);
/// |rep[t+1] − rep[t]| for t in [0, n_t − 1). Empty (n_t = 0 slices) when n_t == 1.
PatchStack motion_differences(const PatchStack& reps);
/// Channel-and-spatial mean of each difference map.
EnergyGrid patch_energy(const PatchStack& diffs);
/// Min-max normalization; max == min maps everything to zero.
EnergyGrid normalize_energies(const EnergyGrid& raw, NormalizeScope scope = NormalizeScope::video);
/// Prepends a slice of ones to n_t − 1 normalized slices.
MotionEnergyTensor assemble_energy_tensor(const EnergyGrid& normalized, std::size_t n_x, std::size_t n_y);

/// Full pipeline from a partitioned video to its motion energy tensor.
MotionEnergyTensor compute_motion_energy(const PatchGrid& grid, NormalizeScope scope = NormalizeScope::video);

/// Keeps token (t,x,y) iff energy > tau (strict). tau must lie in (0,1).
SelectionMask select_tokens(const MotionEnergyTensor& energy, double tau);
SelectionMask full_mask(const GridExtents& extents);
double drop_ratio(const SelectionMask& mask);
TokenSequence gather_tokens(const PatchGrid& grid, const SelectionMask& mask, std::string video_id = {});

/// "<id> <n_t> <n_x> <n_y> <bits>" with bits in canonical order.
std::string format_mask_line(const std::string& video_id, const SelectionMask& mask);
SelectionMask parse_mask_line(const std::string& line, std::string* video_id = nullptr);

NormalizeScope parse_normalize_scope(const std::string& s);
std::string to_string(NormalizeScope scope);

}  // namespace lmft
