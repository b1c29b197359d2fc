#include "siam/data.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

namespace siam {

namespace {

// Element count above which extents are rejected outright (2^36 values).
constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 36;

std::uint32_t read_be32(const std::uint8_t* p) {
  return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) | p[3];
}
std::uint32_t read_le32(const std::uint8_t* p) {
  return (std::uint32_t{p[3]} << 24) | (std::uint32_t{p[2]} << 16) | (std::uint32_t{p[1]} << 8) | p[0];
}
void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}
void put_le32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int s = 0; s <= 24; s += 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

std::size_t element_size(IdxType t) {
  switch (t) {
    case IdxType::U8:
    case IdxType::I8: return 1;
    case IdxType::I16: return 2;
    case IdxType::I32:
    case IdxType::F32: return 4;
    case IdxType::F64: return 8;
  }
  return 0;
}

bool known_idx_type(std::uint8_t code) {
  return code == 0x08 || code == 0x09 || code == 0x0B || code == 0x0C || code == 0x0D || code == 0x0E;
}

// Big-endian element decode.
double decode_idx(IdxType t, const std::uint8_t* p) {
  switch (t) {
    case IdxType::U8: return p[0];
    case IdxType::I8: return static_cast<std::int8_t>(p[0]);
    case IdxType::I16: return static_cast<std::int16_t>((std::uint16_t{p[0]} << 8) | p[1]);
    case IdxType::I32: return static_cast<std::int32_t>(read_be32(p));
    case IdxType::F32: return std::bit_cast<float>(read_be32(p));
    case IdxType::F64: {
      const std::uint64_t hi = read_be32(p), lo = read_be32(p + 4);
      return std::bit_cast<double>((hi << 32) | lo);
    }
  }
  return 0.0;
}

std::uint64_t checked_count(const Shape& shape, const char* format) {
  std::uint64_t n = 1;
  for (Index e : shape) {
    if (e <= 0) throw ParseError(ParseErrorKind::BadExtents, std::string(format) + ": zero extent in " + to_string(shape));
    n *= static_cast<std::uint64_t>(e);
    if (n > kMaxElements) {
      throw ParseError(ParseErrorKind::BadExtents, std::string(format) + ": extents " + to_string(shape) + " too large");
    }
  }
  return n;
}

void check_payload(std::size_t expected, std::size_t actual, const char* format) {
  if (actual < expected) {
    throw ParseError(ParseErrorKind::Truncated, std::string(format) + ": truncated payload, expected " +
                                                    std::to_string(expected) + " bytes, got " + std::to_string(actual));
  }
  if (actual > expected) {
    throw ParseError(ParseErrorKind::TrailingBytes, std::string(format) + ": " + std::to_string(actual - expected) +
                                                        " unexpected trailing bytes");
  }
}

}  // namespace

IdxArray parse_idx(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) {
    throw ParseError(ParseErrorKind::Truncated,
                     "idx: header needs 4 bytes, got " + std::to_string(bytes.size()));
  }
  if (bytes[0] != 0 || bytes[1] != 0) throw ParseError(ParseErrorKind::BadMagic, "idx: bad magic (first two bytes must be zero)");
  if (!known_idx_type(bytes[2])) {
    throw ParseError(ParseErrorKind::UnsupportedDtype, "idx: unsupported type code " + std::to_string(bytes[2]));
  }
  IdxArray out;
  out.type = static_cast<IdxType>(bytes[2]);
  const std::size_t rank = bytes[3];
  if (rank == 0) throw ParseError(ParseErrorKind::BadExtents, "idx: rank 0");
  const std::size_t header = 4 + 4 * rank;
  if (bytes.size() < header) {
    throw ParseError(ParseErrorKind::Truncated, "idx: truncated header, expected " + std::to_string(header) +
                                                    " bytes, got " + std::to_string(bytes.size()));
  }
  for (std::size_t i = 0; i < rank; ++i) out.shape.push_back(read_be32(bytes.data() + 4 + 4 * i));
  const std::uint64_t count = checked_count(out.shape, "idx");
  const std::size_t width = element_size(out.type);
  check_payload(static_cast<std::size_t>(count) * width, bytes.size() - header, "idx");
  out.values.resize(static_cast<std::size_t>(count));
  const std::uint8_t* p = bytes.data() + header;
  for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] = decode_idx(out.type, p + i * width);
  return out;
}

std::vector<std::uint8_t> write_idx(const IdxArray& a) {
  if (a.shape.empty() || a.shape.size() > 255) throw ShapeError("idx: rank must be 1..255");
  if (static_cast<std::uint64_t>(a.values.size()) != checked_count(a.shape, "idx")) {
    throw ShapeError("idx: " + std::to_string(a.values.size()) + " values for shape " + to_string(a.shape));
  }
  std::vector<std::uint8_t> out{0, 0, static_cast<std::uint8_t>(a.type), static_cast<std::uint8_t>(a.shape.size())};
  for (Index e : a.shape) put_be32(out, static_cast<std::uint32_t>(e));
  for (double v : a.values) {
    switch (a.type) {
      case IdxType::U8: out.push_back(static_cast<std::uint8_t>(v)); break;
      case IdxType::I8: out.push_back(static_cast<std::uint8_t>(static_cast<std::int8_t>(v))); break;
      case IdxType::I16: {
        const auto u = static_cast<std::uint16_t>(static_cast<std::int16_t>(v));
        out.push_back(static_cast<std::uint8_t>(u >> 8));
        out.push_back(static_cast<std::uint8_t>(u));
        break;
      }
      case IdxType::I32: put_be32(out, static_cast<std::uint32_t>(static_cast<std::int32_t>(v))); break;
      case IdxType::F32: put_be32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v))); break;
      case IdxType::F64: {
        const auto u = std::bit_cast<std::uint64_t>(v);
        put_be32(out, static_cast<std::uint32_t>(u >> 32));
        put_be32(out, static_cast<std::uint32_t>(u));
        break;
      }
    }
  }
  return out;
}

std::vector<double> rescale_unit(const IdxArray& a) {
  std::vector<double> out = a.values;
  if (a.type == IdxType::U8) {
    for (double& v : out) v /= 255.0;
  }
  return out;
}

std::vector<std::uint8_t> write_svt(const VideoBatch& batch) {
  if (batch.rank() != 5) throw ShapeError("svt: expected a rank-5 clip tensor, got " + to_string(batch.shape()));
  std::vector<std::uint8_t> out{'S', 'V', 'T', '1'};
  out.reserve(28 + static_cast<std::size_t>(batch.size()) * 4);
  put_le32(out, 1);
  for (Index e : batch.shape()) {
    if (e > static_cast<Index>(UINT32_MAX)) throw ShapeError("svt: extent exceeds u32");
    put_le32(out, static_cast<std::uint32_t>(e));
  }
  for (float v : batch.span()) put_le32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

VideoBatch parse_svt(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) throw ParseError(ParseErrorKind::Truncated, "svt: header needs 28 bytes, got " + std::to_string(bytes.size()));
  if (bytes[0] != 'S' || bytes[1] != 'V' || bytes[2] != 'T') throw ParseError(ParseErrorKind::BadMagic, "svt: bad magic");
  if (bytes[3] != '1') {
    throw ParseError(ParseErrorKind::UnsupportedVersion,
                     std::string("svt: unsupported version '") + static_cast<char>(bytes[3]) + "'");
  }
  if (bytes.size() < 28) {
    throw ParseError(ParseErrorKind::Truncated, "svt: header needs 28 bytes, got " + std::to_string(bytes.size()));
  }
  const std::uint32_t dtype = read_le32(bytes.data() + 4);
  if (dtype != 1) throw ParseError(ParseErrorKind::UnsupportedDtype, "svt: unsupported dtype code " + std::to_string(dtype));
  Shape shape;
  for (int i = 0; i < 5; ++i) shape.push_back(read_le32(bytes.data() + 8 + 4 * i));
  const std::uint64_t count = checked_count(shape, "svt");
  check_payload(static_cast<std::size_t>(count) * 4, bytes.size() - 28, "svt");
  VideoBatch out(shape);
  float* d = out.mutable_data();
  for (std::size_t i = 0; i < count; ++i) {
    d[i] = std::bit_cast<float>(read_le32(bytes.data() + 28 + 4 * i));
    if (!std::isfinite(d[i])) {
      throw ParseError(ParseErrorKind::NonFinite, "svt: non-finite value at element " + std::to_string(i));
    }
  }
  return out;
}

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ParseError(ParseErrorKind::Io, "cannot open " + path);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ParseError(ParseErrorKind::Io, "cannot write " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw ParseError(ParseErrorKind::Io, "short write to " + path);
}

void save_svt(const std::string& path, const VideoBatch& batch) { write_file(path, write_svt(batch)); }
VideoBatch load_svt(const std::string& path) { return parse_svt(read_file(path)); }

std::pair<VideoBatch, VideoBatch> split_io(const VideoBatch& batch, Index t_in, Index t_out) {
  if (batch.rank() != 5) throw ShapeError("split_io: expected [B, T, C, H, W], got " + to_string(batch.shape()));
  if (t_in < 1 || t_out < 1 || t_in + t_out > batch.dim(1)) {
    throw ShapeError("split_io: " + std::to_string(t_in) + " + " + std::to_string(t_out) + " frames requested, clips have " +
                     std::to_string(batch.dim(1)));
  }
  const Index b = batch.dim(0), t = batch.dim(1);
  const Index frame = batch.dim(2) * batch.dim(3) * batch.dim(4);
  VideoBatch in({b, t_in, batch.dim(2), batch.dim(3), batch.dim(4)});
  VideoBatch out({b, t_out, batch.dim(2), batch.dim(3), batch.dim(4)});
  float* pi = in.mutable_data();
  float* po = out.mutable_data();
  for (Index s = 0; s < b; ++s) {
    const float* src = batch.data() + s * t * frame;
    std::memcpy(pi + s * t_in * frame, src, static_cast<std::size_t>(t_in * frame) * sizeof(float));
    std::memcpy(po + s * t_out * frame, src + t_in * frame, static_cast<std::size_t>(t_out * frame) * sizeof(float));
  }
  return {in, out};
}

void validate_video(const VideoBatch& batch) {
  if (batch.rank() != 5) throw ShapeError("expected a [B, T, C, H, W] clip tensor, got " + to_string(batch.shape()));
  if (!batch.all_finite()) throw NumericError("clip tensor contains non-finite values");
  if (batch.array().minCoeff() < 0.0f || batch.array().maxCoeff() > 1.0f) {
    throw NumericError("clip values must lie in [0, 1]");
  }
}

}  // namespace siam
