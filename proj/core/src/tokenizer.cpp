#include "lmft/tokenizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace lmft {

std::size_t SelectionMask::retained() const {
  return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

PatchGrid partition_video(const VideoTensor& v, std::size_t patch, std::size_t tubelet) {
  if (patch == 0 || tubelet == 0) throw TokenizerError("patch side and tubelet length must be positive");
  if (v.frames == 0 || v.channels == 0 || v.height == 0 || v.width == 0) throw TokenizerError("empty video");
  if (v.frames % tubelet != 0) {
    throw TokenizerError("frame count " + std::to_string(v.frames) + " not divisible by tubelet " +
                         std::to_string(tubelet));
  }
  if (v.height % patch != 0 || v.width % patch != 0) {
    throw TokenizerError("spatial extents " + std::to_string(v.height) + "x" + std::to_string(v.width) +
                         " not divisible by patch " + std::to_string(patch));
  }
  PatchGrid g;
  g.extents = {v.frames / tubelet, v.height / patch, v.width / patch};
  g.tubelet = tubelet;
  g.channels = v.channels;
  g.patch = patch;
  g.blocks.resize(v.values.size());
  const std::size_t bs = g.block_size();
  for (std::size_t t = 0; t < g.extents.n_t; ++t)
    for (std::size_t x = 0; x < g.extents.n_x; ++x)
      for (std::size_t y = 0; y < g.extents.n_y; ++y) {
        float* dst = g.blocks.data() + g.extents.flat(t, x, y) * bs;
        for (std::size_t f = 0; f < tubelet; ++f)
          for (std::size_t c = 0; c < v.channels; ++c)
            for (std::size_t i = 0; i < patch; ++i) {
              const float* src = &v.values[v.index(t * tubelet + f, c, x * patch + i, y * patch)];
              std::copy_n(src, patch, dst);
              dst += patch;
            }
      }
  return g;
}

VideoTensor reassemble_video(const PatchGrid& g) {
  const std::size_t p = g.patch;
  VideoTensor v(g.extents.n_t * g.tubelet, g.channels, g.extents.n_x * p, g.extents.n_y * p);
  const std::size_t bs = g.block_size();
  for (std::size_t t = 0; t < g.extents.n_t; ++t)
    for (std::size_t x = 0; x < g.extents.n_x; ++x)
      for (std::size_t y = 0; y < g.extents.n_y; ++y) {
        const float* src = g.blocks.data() + g.extents.flat(t, x, y) * bs;
        for (std::size_t f = 0; f < g.tubelet; ++f)
          for (std::size_t c = 0; c < g.channels; ++c)
            for (std::size_t i = 0; i < p; ++i) {
              std::copy_n(src, p, &v.values[v.index(t * g.tubelet + f, c, x * p + i, y * p)]);
              src += p;
            }
      }
  return v;
}

PatchStack temporal_average(const PatchGrid& g) {
  PatchStack out;
  out.extents = g.extents;
  out.channels = g.channels;
  out.patch = g.patch;
  const std::size_t ms = out.map_size();
  out.maps.assign(g.extents.count() * ms, 0.0f);
  const std::size_t bs = g.block_size();
  std::vector<double> acc(ms);
  for (std::size_t k = 0; k < g.extents.count(); ++k) {
    std::fill(acc.begin(), acc.end(), 0.0);
    const float* src = g.blocks.data() + k * bs;
    for (std::size_t f = 0; f < g.tubelet; ++f)
      for (std::size_t j = 0; j < ms; ++j) acc[j] += src[f * ms + j];
    for (std::size_t j = 0; j < ms; ++j) out.maps[k * ms + j] = static_cast<float>(acc[j] / static_cast<double>(g.tubelet));
  }
  return out;
}

PatchStack motion_differences(const PatchStack& reps) {
  PatchStack out;
  out.channels = reps.channels;
  out.patch = reps.patch;
  const std::size_t nt = reps.extents.n_t;
  out.extents = {nt > 0 ? nt - 1 : 0, reps.extents.n_x, reps.extents.n_y};
  const std::size_t slice = reps.extents.slice() * reps.map_size();
  out.maps.resize(out.extents.n_t * slice);
  for (std::size_t t = 0; t + 1 < nt; ++t) {
    const float* a = reps.maps.data() + t * slice;
    const float* b = a + slice;
    float* d = out.maps.data() + t * slice;
    for (std::size_t j = 0; j < slice; ++j) d[j] = std::abs(b[j] - a[j]);
  }
  return out;
}

EnergyGrid patch_energy(const PatchStack& diffs) {
  EnergyGrid e;
  e.extents = diffs.extents;
  e.values.resize(diffs.extents.count());
  const std::size_t ms = diffs.map_size();
  for (std::size_t k = 0; k < e.values.size(); ++k) {
    const float* m = diffs.maps.data() + k * ms;
    double s = 0.0;
    for (std::size_t j = 0; j < ms; ++j) s += m[j];
    e.values[k] = s / static_cast<double>(ms);
  }
  return e;
}

namespace {

void minmax_inplace(std::vector<double>& vals, std::size_t start, std::size_t stride, std::size_t count) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < count; ++i) {
    lo = std::min(lo, vals[start + i * stride]);
    hi = std::max(hi, vals[start + i * stride]);
  }
  const double span = hi - lo;
  for (std::size_t i = 0; i < count; ++i) {
    double& v = vals[start + i * stride];
    v = span > 0.0 ? std::clamp((v - lo) / span, 0.0, 1.0) : 0.0;
  }
}

}  // namespace

EnergyGrid normalize_energies(const EnergyGrid& raw, NormalizeScope scope) {
  EnergyGrid out = raw;
  if (out.values.empty()) return out;
  if (scope == NormalizeScope::video) {
    minmax_inplace(out.values, 0, 1, out.values.size());
  } else {
    const std::size_t slice = raw.extents.slice();
    for (std::size_t loc = 0; loc < slice; ++loc) minmax_inplace(out.values, loc, slice, raw.extents.n_t);
  }
  return out;
}

MotionEnergyTensor assemble_energy_tensor(const EnergyGrid& normalized, std::size_t n_x, std::size_t n_y) {
  if (normalized.extents.n_x != n_x || normalized.extents.n_y != n_y ||
      normalized.values.size() != normalized.extents.count()) {
    throw TokenizerError("energy tensor shape mismatch");
  }
  MotionEnergyTensor e;
  e.extents = {normalized.extents.n_t + 1, n_x, n_y};
  e.values.assign(n_x * n_y, 1.0);
  e.values.insert(e.values.end(), normalized.values.begin(), normalized.values.end());
  return e;
}

MotionEnergyTensor compute_motion_energy(const PatchGrid& grid, NormalizeScope scope) {
  const auto diffs = motion_differences(temporal_average(grid));
  return assemble_energy_tensor(normalize_energies(patch_energy(diffs), scope), grid.extents.n_x, grid.extents.n_y);
}

SelectionMask select_tokens(const MotionEnergyTensor& energy, double tau) {
  if (!(tau > 0.0 && tau < 1.0)) throw TokenizerError("threshold must lie in (0,1), got " + std::to_string(tau));
  SelectionMask m;
  m.extents = energy.extents;
  m.bits.resize(energy.values.size());
  for (std::size_t k = 0; k < energy.values.size(); ++k) m.bits[k] = energy.values[k] > tau ? 1 : 0;
  return m;
}

SelectionMask full_mask(const GridExtents& extents) {
  return SelectionMask{extents, std::vector<std::uint8_t>(extents.count(), 1)};
}

double drop_ratio(const SelectionMask& mask) {
  const std::size_t n = mask.bits.size();
  if (n == 0) return 0.0;
  return static_cast<double>(n - mask.retained()) / static_cast<double>(n);
}

TokenSequence gather_tokens(const PatchGrid& grid, const SelectionMask& mask, std::string video_id) {
  if (!(mask.extents == grid.extents)) throw TokenizerError("mask and grid extents differ");
  TokenSequence seq;
  seq.video_id = std::move(video_id);
  seq.extents = grid.extents;
  seq.block_size = grid.block_size();
  const std::size_t kept = mask.retained();
  seq.indices.reserve(kept);
  seq.blocks.reserve(kept * seq.block_size);
  const auto& ext = grid.extents;
  for (std::size_t t = 0; t < ext.n_t; ++t)
    for (std::size_t x = 0; x < ext.n_x; ++x)
      for (std::size_t y = 0; y < ext.n_y; ++y) {
        if (!mask.at(t, x, y)) continue;
        seq.indices.push_back({static_cast<std::uint32_t>(t), static_cast<std::uint32_t>(x),
                               static_cast<std::uint32_t>(y)});
        const auto b = grid.block(t, x, y);
        seq.blocks.insert(seq.blocks.end(), b.begin(), b.end());
      }
  return seq;
}

std::string format_mask_line(const std::string& video_id, const SelectionMask& mask) {
  std::string bits(mask.bits.size(), '0');
  for (std::size_t i = 0; i < bits.size(); ++i) bits[i] = mask.bits[i] ? '1' : '0';
  std::ostringstream os;
  os << video_id << ' ' << mask.extents.n_t << ' ' << mask.extents.n_x << ' ' << mask.extents.n_y << ' ' << bits;
  return os.str();
}

SelectionMask parse_mask_line(const std::string& line, std::string* video_id) {
  std::istringstream is(line);
  std::string id, bits;
  SelectionMask m;
  if (!(is >> id >> m.extents.n_t >> m.extents.n_x >> m.extents.n_y >> bits)) {
    throw TokenizerError("malformed mask line");
  }
  if (bits.size() != m.extents.count()) throw TokenizerError("mask bitstring length mismatch");
  m.bits.resize(bits.size());
  for (std::size_t i = 0; i < bits.size(); ++i) {
    if (bits[i] != '0' && bits[i] != '1') throw TokenizerError("mask bitstring has non-binary character");
    m.bits[i] = bits[i] == '1' ? 1 : 0;
  }
  if (video_id) *video_id = id;
  return m;
}

NormalizeScope parse_normalize_scope(const std::string& s) {
  if (s == "video") return NormalizeScope::video;
  if (s == "location") return NormalizeScope::location;
  throw TokenizerError("normalize_scope must be 'video' or 'location', got '" + s + "'");
}

std::string to_string(NormalizeScope scope) { return scope == NormalizeScope::video ? "video" : "location"; }

}  // namespace lmft
