#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "siam/config.hpp"
#include "siam/tensor.hpp"

namespace siam {

/// [batch, time, channel, height, width] clip tensor with values in [0, 1].
using VideoBatch = Tensor<float>;

// ------------------------------------------------------------------ IDX

enum class IdxType : std::uint8_t { U8 = 0x08, I8 = 0x09, I16 = 0x0B, I32 = 0x0C, F32 = 0x0D, F64 = 0x0E };

/// Decoded IDX array. Values are held as doubles, which represent every
/// supported element type exactly.
struct IdxArray {
  IdxType type = IdxType::U8;
  Shape shape;
  std::vector<double> values;
};

/// Big-endian IDX: two zero bytes, type code, rank, rank x u32 extents, payload.
IdxArray parse_idx(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> write_idx(const IdxArray& array);
/// U8 payloads divided by 255; other types are returned unchanged.
std::vector<double> rescale_unit(const IdxArray& array);

// ------------------------------------------------------------------ digits

constexpr Index kGlyphSize = 28;

struct DigitSet {
  Tensor<float> glyphs;  // [n, 28, 28]
  std::vector<std::uint8_t> labels;
  Index size() const { return glyphs.rank() == 3 ? glyphs.dim(0) : 0; }
};

/// Anti-aliased stroke renderings of 0-9, `variants` jittered copies each.
DigitSet procedural_digits(Index variants, std::uint64_t seed = 0);
/// MNIST image file (u8, [n, 28, 28]); labels are left empty.
DigitSet load_idx_digits(const std::string& path);
/// The configured digit source: the IDX file when set, else procedural glyphs.
DigitSet digits_for(const MovingConfig& config);

// ------------------------------------------------------------------ moving digits

struct BounceEvent {
  Index sequence = 0;
  Index digit = 0;
  Index frame = 0;
  int axis = 0;  // 0 vertical, 1 horizontal
  double velocity_before[2]{};
  double velocity_after[2]{};
};

struct PlacementRecord {
  Index sequence = 0;
  Index frame = 0;
  Index digit = 0;
  Index row = 0;  // rendered top-left corner
  Index col = 0;
};

struct MovingTrace {
  std::vector<BounceEvent> bounces;
  std::vector<PlacementRecord> placements;
};

/// n sequences of [frames, 1, canvas_h, canvas_w]. Sequence i draws from an RNG
/// seeded by (config.seed, i), so any subset can be regenerated independently.
VideoBatch generate_moving(const MovingConfig& config, const DigitSet& digits, Index n_sequences,
                           MovingTrace* trace = nullptr);

// ------------------------------------------------------------------ SVT container

/// "SVT1", u32 dtype code (1 = float32), u32 extents [n, T, C, H, W], float32
/// payload; all little-endian.
std::vector<std::uint8_t> write_svt(const VideoBatch& batch);
VideoBatch parse_svt(std::span<const std::uint8_t> bytes);
void save_svt(const std::string& path, const VideoBatch& batch);
VideoBatch load_svt(const std::string& path);

std::vector<std::uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, std::span<const std::uint8_t> bytes);

/// Frames [0, t_in) and [t_in, t_in + t_out) of every clip.
std::pair<VideoBatch, VideoBatch> split_io(const VideoBatch& batch, Index t_in, Index t_out);

/// Throws ShapeError/NumericError unless `batch` is a rank-5 clip tensor with
/// finite values in [0, 1].
void validate_video(const VideoBatch& batch);

}  // namespace siam
