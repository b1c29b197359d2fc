#include <algorithm>
#include <cmath>
#include <numbers>

#include "siam/data.hpp"
#include "siam/rng.hpp"

namespace siam {

namespace {

struct Point {
  double x, y;
};
using Stroke = std::vector<Point>;

// Points on an ellipse arc in a unit box, y pointing down, angles in degrees.
Stroke arc(double cx, double cy, double rx, double ry, double a0, double a1, int n = 24) {
  Stroke s;
  for (int i = 0; i <= n; ++i) {
    const double a = (a0 + (a1 - a0) * i / n) * std::numbers::pi / 180.0;
    s.push_back({cx + rx * std::cos(a), cy + ry * std::sin(a)});
  }
  return s;
}

std::vector<Stroke> digit_strokes(int digit) {
  switch (digit) {
    case 0: return {arc(0.5, 0.5, 0.27, 0.4, 0, 360, 40)};
    case 1: return {{{0.36, 0.24}, {0.52, 0.1}, {0.52, 0.9}}};
    case 2: {
      Stroke s = arc(0.5, 0.32, 0.24, 0.22, 190, 380);
      s.push_back({0.24, 0.9});
      s.push_back({0.78, 0.9});
      return {s};
    }
    case 3: {
      Stroke top = arc(0.48, 0.3, 0.22, 0.2, -160, 90);
      Stroke bottom = arc(0.48, 0.7, 0.25, 0.2, -90, 160);
      return {top, bottom};
    }
    case 4: return {{{0.66, 0.9}, {0.66, 0.1}, {0.2, 0.64}, {0.82, 0.64}}};
    case 5: {
      Stroke s{{0.76, 0.1}, {0.32, 0.1}, {0.28, 0.46}};
      Stroke bowl = arc(0.5, 0.66, 0.25, 0.23, -130, 150);
      return {s, bowl};
    }
    case 6: return {{{0.7, 0.1}, {0.48, 0.26}, {0.32, 0.5}, {0.27, 0.68}}, arc(0.5, 0.68, 0.23, 0.22, 0, 360, 32)};
    case 7: return {{{0.2, 0.1}, {0.8, 0.1}, {0.42, 0.9}}};
    case 8: return {arc(0.5, 0.29, 0.19, 0.19, 0, 360, 32), arc(0.5, 0.7, 0.23, 0.21, 0, 360, 32)};
    case 9: return {arc(0.5, 0.32, 0.22, 0.22, 0, 360, 32), {{0.72, 0.32}, {0.66, 0.6}, {0.56, 0.9}}};
    default: return {};
  }
}

double segment_distance(Point p, Point a, Point b) {
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0 ? ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return std::hypot(p.x - (a.x + t * dx), p.y - (a.y + t * dy));
}

// Renders strokes into a 28x28 glyph. The unit box maps to a jittered ~20px
// square; coverage falls off linearly over one pixel at the stroke edge.
void render_glyph(const std::vector<Stroke>& strokes, Rng& rng, float* out) {
  const double scale = rng.uniform(17.0, 21.0);
  const double shear = rng.uniform(-0.25, 0.25);
  const double half_width = rng.uniform(1.1, 1.9);
  const double ox = 14.0 - scale / 2 + rng.uniform(-1.5, 1.5);
  const double oy = 14.0 - scale / 2 + rng.uniform(-1.0, 1.0);
  std::vector<Stroke> placed;
  for (const Stroke& s : strokes) {
    Stroke p;
    for (Point q : s) p.push_back({ox + scale * (q.x + shear * (0.5 - q.y)), oy + scale * q.y});
    placed.push_back(std::move(p));
  }
  for (Index r = 0; r < kGlyphSize; ++r) {
    for (Index c = 0; c < kGlyphSize; ++c) {
      const Point centre{c + 0.5, r + 0.5};
      double d = 1e9;
      for (const Stroke& s : placed) {
        for (std::size_t i = 0; i + 1 < s.size(); ++i) d = std::min(d, segment_distance(centre, s[i], s[i + 1]));
      }
      out[r * kGlyphSize + c] = static_cast<float>(std::clamp(half_width + 0.5 - d, 0.0, 1.0));
    }
  }
}

// Reflects one coordinate into [0, limit], negating the velocity at each wall.
template <typename OnBounce>
void advance_axis(double& p, double& v, double limit, OnBounce&& on_bounce) {
  if (limit <= 0.0) {
    p = 0.0;
    return;
  }
  p += v;
  while (p < 0.0 || p > limit) {
    const double before = v;
    p = p < 0.0 ? -p : 2.0 * limit - p;
    v = -v;
    on_bounce(before, v);
  }
}

}  // namespace

DigitSet procedural_digits(Index variants, std::uint64_t seed) {
  if (variants < 1) throw ConfigError("digit variants must be >= 1");
  DigitSet set;
  set.glyphs = Tensor<float>({10 * variants, kGlyphSize, kGlyphSize});
  float* g = set.glyphs.mutable_data();
  for (int digit = 0; digit < 10; ++digit) {
    const auto strokes = digit_strokes(digit);
    for (Index v = 0; v < variants; ++v) {
      const Index slot = digit * variants + v;
      Rng rng(mix_seed(seed, static_cast<std::uint64_t>(slot)));
      render_glyph(strokes, rng, g + slot * kGlyphSize * kGlyphSize);
      set.labels.push_back(static_cast<std::uint8_t>(digit));
    }
  }
  return set;
}

DigitSet load_idx_digits(const std::string& path) {
  const IdxArray a = parse_idx(read_file(path));
  if (a.type != IdxType::U8 || a.shape.size() != 3 || a.shape[1] != kGlyphSize || a.shape[2] != kGlyphSize) {
    throw ParseError(ParseErrorKind::BadExtents,
                     "idx digits: expected u8 [n, 28, 28], got shape " + to_string(a.shape));
  }
  const auto unit = rescale_unit(a);
  DigitSet set;
  Eigen::ArrayXf values(static_cast<Index>(unit.size()));
  for (std::size_t i = 0; i < unit.size(); ++i) values[static_cast<Index>(i)] = static_cast<float>(unit[i]);
  set.glyphs = Tensor<float>(a.shape, std::move(values));
  return set;
}

DigitSet digits_for(const MovingConfig& config) {
  return config.idx_path.empty() ? procedural_digits(config.digit_variants, config.seed)
                                 : load_idx_digits(config.idx_path);
}

VideoBatch generate_moving(const MovingConfig& config, const DigitSet& digits, Index n_sequences, MovingTrace* trace) {
  validate(config);
  if (digits.size() == 0) throw ConfigError("generate_moving: empty digit set");
  if (n_sequences < 1) throw ConfigError("generate_moving: empty dataset (n = " + std::to_string(n_sequences) + ")");
  const Index h = config.canvas_height, w = config.canvas_width, frames = config.frames;
  const double limit[2] = {static_cast<double>(h - kGlyphSize), static_cast<double>(w - kGlyphSize)};
  VideoBatch out({n_sequences, frames, 1, h, w});
  float* canvas = out.mutable_data();
  const float* glyphs = digits.glyphs.data();

  for (Index s = 0; s < n_sequences; ++s) {
    Rng rng(mix_seed(config.seed, static_cast<std::uint64_t>(s)));
    struct Sprite {
      Index glyph;
      double pos[2];
      double vel[2];
    };
    std::vector<Sprite> sprites;
    for (Index d = 0; d < config.n_digits; ++d) {
      Sprite sp;
      sp.glyph = static_cast<Index>(rng.below(static_cast<std::uint64_t>(digits.size())));
      sp.pos[0] = rng.uniform(0.0, limit[0]);
      sp.pos[1] = rng.uniform(0.0, limit[1]);
      const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
      const double speed = rng.uniform(config.speed_min, config.speed_max);
      sp.vel[0] = speed * std::sin(theta);
      sp.vel[1] = speed * std::cos(theta);
      sprites.push_back(sp);
    }
    for (Index f = 0; f < frames; ++f) {
      float* frame = canvas + (s * frames + f) * h * w;
      for (Index d = 0; d < config.n_digits; ++d) {
        Sprite& sp = sprites[static_cast<std::size_t>(d)];
        const Index row = std::llround(sp.pos[0]);
        const Index col = std::llround(sp.pos[1]);
        if (trace) trace->placements.push_back({s, f, d, row, col});
        const float* g = glyphs + sp.glyph * kGlyphSize * kGlyphSize;
        for (Index r = 0; r < kGlyphSize; ++r) {
          float* dst = frame + (row + r) * w + col;
          for (Index c = 0; c < kGlyphSize; ++c) dst[c] = std::max(dst[c], g[r * kGlyphSize + c]);
        }
      }
      if (f + 1 == frames) break;
      for (Index d = 0; d < config.n_digits; ++d) {
        Sprite& sp = sprites[static_cast<std::size_t>(d)];
        for (int axis = 0; axis < 2; ++axis) {
          advance_axis(sp.pos[axis], sp.vel[axis], limit[axis], [&](double before, double after) {
            if (!trace) return;
            BounceEvent e;
            e.sequence = s;
            e.digit = d;
            e.frame = f + 1;
            e.axis = axis;
            e.velocity_before[0] = sp.vel[0];
            e.velocity_before[1] = sp.vel[1];
            e.velocity_before[axis] = before;
            e.velocity_after[0] = sp.vel[0];
            e.velocity_after[1] = sp.vel[1];
            e.velocity_after[axis] = after;
            trace->bounces.push_back(e);
          });
        }
      }
    }
  }
  return out;
}

}  // namespace siam
