#include <Eigen/Dense>

#include <algorithm>
#include <string>

#include "siam/ops.hpp"

namespace siam {

Index conv_output_extent(Index in, Index kernel, Index stride, Index padding, Index dilation, const char* axis) {
  if (kernel < 1 || stride < 1 || dilation < 1 || padding < 0) {
    throw ShapeError(std::string("conv: invalid kernel/stride/dilation/padding on ") + axis + " axis");
  }
  const Index span = dilation * (kernel - 1) + 1;
  if (in + 2 * padding < span) {
    throw ShapeError(std::string("conv: dilated kernel extent ") + std::to_string(span) + " exceeds padded " + axis +
                     " extent " + std::to_string(in + 2 * padding));
  }
  return (in + 2 * padding - span) / stride + 1;
}

Index same_padding(Index kernel, Index dilation) {
  if (kernel % 2 == 0) {
    throw ShapeError("same padding needs an odd kernel, got extent " + std::to_string(kernel));
  }
  return dilation * (kernel - 1) / 2;
}

namespace {

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Map = Eigen::Map<RowMatrix<Scalar>>;
template <typename Scalar>
using CMap = Eigen::Map<const RowMatrix<Scalar>>;

// Upper bound on im2col buffer elements; larger problems are processed in row chunks.
constexpr Index kColumnBudget = Index{1} << 22;
// Packing several small samples into one product stays within cache.
constexpr Index kPackBudget = Index{1} << 17;

struct Problem {
  Index n, c, d, h, w;
  Index co, cg, cog;
  Index kd, kh, kw;
  Index od, oh, ow;
  std::array<Index, 3> stride, pad, dil;
  Index groups;

  Index in_plane() const { return d * h * w; }
  Index out_plane() const { return od * oh * ow; }
  Index taps() const { return kd * kh * kw; }
  bool depthwise() const { return groups == c && co == c; }
  bool pointwise() const {
    return kd == 1 && kh == 1 && kw == 1 && groups == 1 && pad == std::array<Index, 3>{0, 0, 0} &&
           stride == std::array<Index, 3>{1, 1, 1};
  }
};

template <typename Scalar>
Problem make_problem(const Tensor<Scalar>& input, const Tensor<Scalar>& weight, const NoDeduce<Tensor<Scalar>>* bias,
                     const ConvGeometry& geo, bool is3d) {
  const Index rank = is3d ? 5 : 4;
  const char* name = is3d ? "conv3d" : "conv2d";
  if (input.rank() != rank) {
    throw ShapeError(std::string(name) + ": input must have rank " + std::to_string(rank) + ", got " +
                     to_string(input.shape()));
  }
  if (weight.rank() != rank) {
    throw ShapeError(std::string(name) + ": weight must have rank " + std::to_string(rank) + ", got " +
                     to_string(weight.shape()));
  }
  Problem p{};
  p.groups = geo.groups;
  p.n = input.dim(0);
  p.c = input.dim(1);
  p.d = is3d ? input.dim(2) : 1;
  p.h = input.dim(-2);
  p.w = input.dim(-1);
  p.co = weight.dim(0);
  p.kd = is3d ? weight.dim(2) : 1;
  p.kh = weight.dim(-2);
  p.kw = weight.dim(-1);
  if (p.groups < 1) throw ShapeError(std::string(name) + ": groups must be positive");
  if (p.c % p.groups != 0) {
    throw ShapeError(std::string(name) + ": input channels (axis 1, " + std::to_string(p.c) +
                     ") not divisible by groups=" + std::to_string(p.groups));
  }
  if (p.co % p.groups != 0) {
    throw ShapeError(std::string(name) + ": output channels (weight axis 0, " + std::to_string(p.co) +
                     ") not divisible by groups=" + std::to_string(p.groups));
  }
  p.cg = p.c / p.groups;
  p.cog = p.co / p.groups;
  if (weight.dim(1) != p.cg) {
    throw ShapeError(std::string(name) + ": weight axis 1 is " + std::to_string(weight.dim(1)) +
                     " but C_in/groups is " + std::to_string(p.cg));
  }
  if (bias != nullptr && bias->shape() != Shape{p.co}) {
    throw ShapeError(std::string(name) + ": bias must be [" + std::to_string(p.co) + "], got " +
                     to_string(bias->shape()));
  }
  p.stride = geo.stride;
  p.pad = geo.padding;
  p.dil = geo.dilation;
  p.od = conv_output_extent(p.d, p.kd, p.stride[0], p.pad[0], p.dil[0], "time");
  p.oh = conv_output_extent(p.h, p.kh, p.stride[1], p.pad[1], p.dil[1], "height");
  p.ow = conv_output_extent(p.w, p.kw, p.stride[2], p.pad[2], p.dil[2], "width");
  return p;
}

// Range of output columns ox with 0 <= ox*stride + offset < extent.
inline std::pair<Index, Index> valid_range(Index offset, Index stride, Index extent, Index out_extent) {
  Index lo = offset >= 0 ? 0 : (-offset + stride - 1) / stride;
  Index hi = extent - 1 - offset < 0 ? -1 : (extent - 1 - offset) / stride;
  hi = std::min(hi, out_extent - 1);
  return {lo, hi + 1};
}

// ------------------------------------------------------------------ depthwise

template <typename Scalar>
void depthwise_forward(const Problem& p, const Scalar* in, const Scalar* wt, const Scalar* bias, Scalar* out) {
  const Index planes = p.n * p.c;
#pragma omp parallel for schedule(static)
  for (Index pl = 0; pl < planes; ++pl) {
    const Index ch = pl % p.c;
    const Scalar* src = in + pl * p.in_plane();
    Scalar* dst = out + pl * p.out_plane();
    const Scalar* k = wt + ch * p.taps();
    std::fill(dst, dst + p.out_plane(), bias != nullptr ? bias[ch] : Scalar(0));
    for (Index z = 0; z < p.od; ++z) {
      for (Index y = 0; y < p.oh; ++y) {
        Scalar* orow = dst + (z * p.oh + y) * p.ow;
        for (Index a = 0; a < p.kd; ++a) {
          const Index iz = z * p.stride[0] - p.pad[0] + a * p.dil[0];
          if (iz < 0 || iz >= p.d) continue;
          for (Index b = 0; b < p.kh; ++b) {
            const Index iy = y * p.stride[1] - p.pad[1] + b * p.dil[1];
            if (iy < 0 || iy >= p.h) continue;
            const Scalar* irow = src + (iz * p.h + iy) * p.w;
            for (Index c = 0; c < p.kw; ++c) {
              const Scalar kv = k[(a * p.kh + b) * p.kw + c];
              const Index off = c * p.dil[2] - p.pad[2];
              const auto [lo, hi] = valid_range(off, p.stride[2], p.w, p.ow);
              for (Index x = lo; x < hi; ++x) orow[x] += kv * irow[x * p.stride[2] + off];
            }
          }
        }
      }
    }
  }
}

template <typename Scalar>
void depthwise_backward(const Problem& p, const Scalar* in, const Scalar* wt, const Scalar* gout, Scalar* gin,
                        Scalar* gw) {
#pragma omp parallel for schedule(static)
  for (Index ch = 0; ch < p.c; ++ch) {
    const Scalar* k = wt + ch * p.taps();
    for (Index s = 0; s < p.n; ++s) {
      const Index pl = s * p.c + ch;
      const Scalar* src = in + pl * p.in_plane();
      const Scalar* g = gout + pl * p.out_plane();
      Scalar* gi = gin != nullptr ? gin + pl * p.in_plane() : nullptr;
      for (Index z = 0; z < p.od; ++z) {
        for (Index y = 0; y < p.oh; ++y) {
          const Scalar* grow = g + (z * p.oh + y) * p.ow;
          for (Index a = 0; a < p.kd; ++a) {
            const Index iz = z * p.stride[0] - p.pad[0] + a * p.dil[0];
            if (iz < 0 || iz >= p.d) continue;
            for (Index b = 0; b < p.kh; ++b) {
              const Index iy = y * p.stride[1] - p.pad[1] + b * p.dil[1];
              if (iy < 0 || iy >= p.h) continue;
              const Index row = (iz * p.h + iy) * p.w;
              for (Index c = 0; c < p.kw; ++c) {
                const Index tap = (a * p.kh + b) * p.kw + c;
                const Index off = c * p.dil[2] - p.pad[2];
                const auto [lo, hi] = valid_range(off, p.stride[2], p.w, p.ow);
                if (gw != nullptr) {
                  Scalar acc(0);
                  for (Index x = lo; x < hi; ++x) acc += grow[x] * src[row + x * p.stride[2] + off];
                  gw[ch * p.taps() + tap] += acc;
                }
                if (gi != nullptr) {
                  const Scalar kv = k[tap];
                  for (Index x = lo; x < hi; ++x) gi[row + x * p.stride[2] + off] += kv * grow[x];
                }
              }
            }
          }
        }
      }
    }
  }
}

// ------------------------------------------------------------------ pointwise

template <typename Scalar>
void pointwise_forward(const Problem& p, const Scalar* in, const Scalar* wt, const Scalar* bias, Scalar* out) {
  const Index plane = p.in_plane();
  CMap<Scalar> w(wt, p.co, p.c);
  for (Index s = 0; s < p.n; ++s) {
    Map<Scalar> y(out + s * p.co * plane, p.co, plane);
    y.noalias() = w * CMap<Scalar>(in + s * p.c * plane, p.c, plane);
    if (bias != nullptr) {
      y.colwise() += Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(bias, p.co);
    }
  }
}

template <typename Scalar>
void pointwise_backward(const Problem& p, const Scalar* in, const Scalar* wt, const Scalar* gout, Scalar* gin,
                        Scalar* gw) {
  const Index plane = p.in_plane();
  CMap<Scalar> w(wt, p.co, p.c);
  for (Index s = 0; s < p.n; ++s) {
    CMap<Scalar> g(gout + s * p.co * plane, p.co, plane);
    if (gin != nullptr) Map<Scalar>(gin + s * p.c * plane, p.c, plane).noalias() += w.transpose() * g;
    if (gw != nullptr) {
      Map<Scalar>(gw, p.co, p.c).noalias() += g * CMap<Scalar>(in + s * p.c * plane, p.c, plane).transpose();
    }
  }
}

// --------------------------------------------------------------------- im2col

// Output rows are the flattened (z, y) pairs; a chunk covers rows [r0, r1).
// `ld` is the row stride of the column matrix, which several samples may share.
template <typename Scalar>
void im2col(const Problem& p, const Scalar* src, Index r0, Index r1, Scalar* col, Index ld) {
  const Index cols = ld;
  for (Index ci = 0; ci < p.cg; ++ci) {
    const Scalar* plane = src + ci * p.in_plane();
    for (Index a = 0; a < p.kd; ++a) {
      for (Index b = 0; b < p.kh; ++b) {
        for (Index c = 0; c < p.kw; ++c) {
          Scalar* dst = col + (((ci * p.kd + a) * p.kh + b) * p.kw + c) * cols;
          const Index off = c * p.dil[2] - p.pad[2];
          const auto [lo, hi] = valid_range(off, p.stride[2], p.w, p.ow);
          for (Index r = r0; r < r1; ++r) {
            Scalar* drow = dst + (r - r0) * p.ow;
            const Index z = r / p.oh;
            const Index y = r % p.oh;
            const Index iz = z * p.stride[0] - p.pad[0] + a * p.dil[0];
            const Index iy = y * p.stride[1] - p.pad[1] + b * p.dil[1];
            if (iz < 0 || iz >= p.d || iy < 0 || iy >= p.h || lo >= hi) {
              std::fill(drow, drow + p.ow, Scalar(0));
              continue;
            }
            const Scalar* irow = plane + (iz * p.h + iy) * p.w;
            std::fill(drow, drow + lo, Scalar(0));
            for (Index x = lo; x < hi; ++x) drow[x] = irow[x * p.stride[2] + off];
            std::fill(drow + hi, drow + p.ow, Scalar(0));
          }
        }
      }
    }
  }
}

template <typename Scalar>
void col2im_add(const Problem& p, const Scalar* col, Index r0, Index r1, Scalar* dst_planes, Index ld) {
  const Index cols = ld;
  for (Index ci = 0; ci < p.cg; ++ci) {
    Scalar* plane = dst_planes + ci * p.in_plane();
    for (Index a = 0; a < p.kd; ++a) {
      for (Index b = 0; b < p.kh; ++b) {
        for (Index c = 0; c < p.kw; ++c) {
          const Scalar* srcc = col + (((ci * p.kd + a) * p.kh + b) * p.kw + c) * cols;
          const Index off = c * p.dil[2] - p.pad[2];
          const auto [lo, hi] = valid_range(off, p.stride[2], p.w, p.ow);
          for (Index r = r0; r < r1; ++r) {
            const Index z = r / p.oh;
            const Index y = r % p.oh;
            const Index iz = z * p.stride[0] - p.pad[0] + a * p.dil[0];
            const Index iy = y * p.stride[1] - p.pad[1] + b * p.dil[1];
            if (iz < 0 || iz >= p.d || iy < 0 || iy >= p.h) continue;
            Scalar* irow = plane + (iz * p.h + iy) * p.w;
            const Scalar* srow = srcc + (r - r0) * p.ow;
            for (Index x = lo; x < hi; ++x) irow[x * p.stride[2] + off] += srow[x];
          }
        }
      }
    }
  }
}

inline Index rows_per_chunk(const Problem& p) {
  const Index k = p.cg * p.taps();
  return std::max<Index>(1, kColumnBudget / std::max<Index>(1, k * p.ow));
}

// Samples packed side by side into one column matrix. Only used when a whole
// output plane fits the budget; otherwise rows of a single sample are chunked.
inline Index samples_per_pack(const Problem& p) {
  const Index rows = p.od * p.oh;
  if (rows_per_chunk(p) < rows) return 1;
  const Index k = p.cg * p.taps();
  return std::clamp<Index>(kPackBudget / std::max<Index>(1, k * p.out_plane()), 1, p.n);
}

template <typename Scalar>
void im2col_forward(const Problem& p, const Scalar* in, const Scalar* wt, const Scalar* bias, Scalar* out) {
  const Index k = p.cg * p.taps();
  const Index rows = p.od * p.oh;
  const Index plane = p.out_plane();
  const Index pack = samples_per_pack(p);
  const Index chunk = pack > 1 ? rows : rows_per_chunk(p);
  RowMatrix<Scalar> col(k, pack > 1 ? pack * plane : std::min(rows, chunk) * p.ow);
  RowMatrix<Scalar> prod;
  for (Index s0 = 0; s0 < p.n; s0 += pack) {
    const Index ns = std::min(pack, p.n - s0);
    for (Index g = 0; g < p.groups; ++g) {
      CMap<Scalar> w(wt + g * p.cog * k, p.cog, k);
      for (Index r0 = 0; r0 < rows; r0 += chunk) {
        const Index r1 = std::min(rows, r0 + chunk);
        const Index cols = (r1 - r0) * p.ow;
        const Index ld = ns * cols;
        for (Index j = 0; j < ns; ++j) {
          im2col(p, in + ((s0 + j) * p.c + g * p.cg) * p.in_plane(), r0, r1, col.data() + j * cols, ld);
        }
        prod.noalias() = w * CMap<Scalar>(col.data(), k, ld);
        for (Index j = 0; j < ns; ++j) {
          Scalar* dst = out + ((s0 + j) * p.co + g * p.cog) * plane;
          for (Index oc = 0; oc < p.cog; ++oc) {
            Scalar* orow = dst + oc * plane + r0 * p.ow;
            const Scalar b = bias != nullptr ? bias[g * p.cog + oc] : Scalar(0);
            const Scalar* prow = prod.row(oc).data() + j * cols;
            for (Index x = 0; x < cols; ++x) orow[x] = prow[x] + b;
          }
        }
      }
    }
  }
}

template <typename Scalar>
void im2col_backward(const Problem& p, const Scalar* in, const Scalar* wt, const Scalar* gout, Scalar* gin,
                     Scalar* gw) {
  const Index k = p.cg * p.taps();
  const Index rows = p.od * p.oh;
  const Index plane = p.out_plane();
  const Index pack = samples_per_pack(p);
  const Index chunk = pack > 1 ? rows : rows_per_chunk(p);
  RowMatrix<Scalar> col(k, pack > 1 ? pack * plane : std::min(rows, chunk) * p.ow);
  RowMatrix<Scalar> gslice;
  RowMatrix<Scalar> dcol;
  for (Index s0 = 0; s0 < p.n; s0 += pack) {
    const Index ns = std::min(pack, p.n - s0);
    for (Index g = 0; g < p.groups; ++g) {
      CMap<Scalar> w(wt + g * p.cog * k, p.cog, k);
      for (Index r0 = 0; r0 < rows; r0 += chunk) {
        const Index r1 = std::min(rows, r0 + chunk);
        const Index cols = (r1 - r0) * p.ow;
        const Index ld = ns * cols;
        gslice.resize(p.cog, ld);
        for (Index j = 0; j < ns; ++j) {
          const Scalar* gsrc = gout + ((s0 + j) * p.co + g * p.cog) * plane;
          for (Index oc = 0; oc < p.cog; ++oc) {
            std::copy_n(gsrc + oc * plane + r0 * p.ow, cols, gslice.row(oc).data() + j * cols);
          }
        }
        if (gw != nullptr) {
          for (Index j = 0; j < ns; ++j) {
            im2col(p, in + ((s0 + j) * p.c + g * p.cg) * p.in_plane(), r0, r1, col.data() + j * cols, ld);
          }
          Map<Scalar>(gw + g * p.cog * k, p.cog, k).noalias() += gslice * CMap<Scalar>(col.data(), k, ld).transpose();
        }
        if (gin != nullptr) {
          dcol.noalias() = w.transpose() * gslice;
          for (Index j = 0; j < ns; ++j) {
            col2im_add(p, dcol.data() + j * cols, r0, r1, gin + ((s0 + j) * p.c + g * p.cg) * p.in_plane(), ld);
          }
        }
      }
    }
  }
}

ConvPath resolve(const Problem& p, ConvPath requested) {
  switch (requested) {
    case ConvPath::Auto:
      if (p.depthwise()) return ConvPath::Depthwise;
      if (p.pointwise()) return ConvPath::Pointwise;
      return ConvPath::Im2col;
    case ConvPath::Depthwise:
      if (!p.depthwise()) throw ShapeError("conv: depthwise path needs groups == C_in == C_out");
      return requested;
    case ConvPath::Pointwise:
      if (!p.pointwise()) throw ShapeError("conv: pointwise path needs a 1x1 kernel, stride 1, no padding, groups 1");
      return requested;
    case ConvPath::Im2col:
      return requested;
  }
  return ConvPath::Im2col;
}

template <typename Scalar>
Tensor<Scalar> conv_impl(const Tensor<Scalar>& input, const Tensor<Scalar>& weight, const NoDeduce<Tensor<Scalar>>* bias,
                         const ConvGeometry& geo, bool is3d, ConvPath requested) {
  const Problem p = make_problem(input, weight, bias, geo, is3d);
  const ConvPath path = resolve(p, requested);
  Shape out_shape = is3d ? Shape{p.n, p.co, p.od, p.oh, p.ow} : Shape{p.n, p.co, p.oh, p.ow};
  Tensor<Scalar> out(out_shape);
  const Scalar* b = bias != nullptr ? bias->data() : nullptr;
  switch (path) {
    case ConvPath::Depthwise: depthwise_forward(p, input.data(), weight.data(), b, out.mutable_data()); break;
    case ConvPath::Pointwise: pointwise_forward(p, input.data(), weight.data(), b, out.mutable_data()); break;
    default: im2col_forward(p, input.data(), weight.data(), b, out.mutable_data()); break;
  }
  Tape<Scalar>* tape = common_tape({&input, &weight, bias});
  if (tape == nullptr) return out;
  const int nb = bias != nullptr ? bias->node() : -1;
  return tape->record(std::move(out), [p, path, input, weight, nb](const auto& g, Tape<Scalar>& t) {
    Scalar* gin = input.tracked() ? t.grad_buffer(input.node()).data() : nullptr;
    Scalar* gw = weight.tracked() ? t.grad_buffer(weight.node()).data() : nullptr;
    switch (path) {
      case ConvPath::Depthwise: depthwise_backward(p, input.data(), weight.data(), g.data(), gin, gw); break;
      case ConvPath::Pointwise: pointwise_backward(p, input.data(), weight.data(), g.data(), gin, gw); break;
      default: im2col_backward(p, input.data(), weight.data(), g.data(), gin, gw); break;
    }
    if (nb >= 0) {
      auto& gb = t.grad_buffer(nb);
      const Index plane = p.out_plane();
      for (Index s = 0; s < p.n; ++s) {
        for (Index oc = 0; oc < p.co; ++oc) gb[oc] += g.segment((s * p.co + oc) * plane, plane).sum();
      }
    }
  });
}

ConvGeometry geometry(const Conv2dOptions& o) {
  return ConvGeometry{{1, o.stride[0], o.stride[1]}, {0, o.padding[0], o.padding[1]}, {1, o.dilation[0], o.dilation[1]},
                      o.groups};
}

ConvGeometry geometry(const Conv3dOptions& o) { return ConvGeometry{o.stride, o.padding, o.dilation, o.groups}; }

}  // namespace

template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& input, const Tensor<Scalar>& weight, const NoDeduce<Tensor<Scalar>>* bias,
                      const Conv2dOptions& options, ConvPath path) {
  return conv_impl(input, weight, bias, geometry(options), false, path);
}

template <typename Scalar>
Tensor<Scalar> conv3d(const Tensor<Scalar>& input, const Tensor<Scalar>& weight, const NoDeduce<Tensor<Scalar>>* bias,
                      const Conv3dOptions& options, ConvPath path) {
  return conv_impl(input, weight, bias, geometry(options), true, path);
}

namespace reference {

template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& input, const Tensor<Scalar>& weight, const NoDeduce<Tensor<Scalar>>* bias,
                      const Conv2dOptions& o) {
  const Problem p = make_problem(input, weight, bias, geometry(o), false);
  Tensor<Scalar> out(Shape{p.n, p.co, p.oh, p.ow});
  Scalar* y = out.mutable_data();
  const Scalar* x = input.data();
  const Scalar* w = weight.data();
  for (Index s = 0; s < p.n; ++s)
    for (Index oc = 0; oc < p.co; ++oc)
      for (Index oy = 0; oy < p.oh; ++oy)
        for (Index ox = 0; ox < p.ow; ++ox) {
          const Index g = oc / p.cog;
          Scalar acc = bias != nullptr ? (*bias)[oc] : Scalar(0);
          for (Index ci = 0; ci < p.cg; ++ci)
            for (Index ky = 0; ky < p.kh; ++ky)
              for (Index kx = 0; kx < p.kw; ++kx) {
                const Index iy = oy * o.stride[0] - o.padding[0] + ky * o.dilation[0];
                const Index ix = ox * o.stride[1] - o.padding[1] + kx * o.dilation[1];
                if (iy < 0 || iy >= p.h || ix < 0 || ix >= p.w) continue;
                const Index chan = g * p.cg + ci;
                acc += w[((oc * p.cg + ci) * p.kh + ky) * p.kw + kx] * x[((s * p.c + chan) * p.h + iy) * p.w + ix];
              }
          y[((s * p.co + oc) * p.oh + oy) * p.ow + ox] = acc;
        }
  return out;
}

template <typename Scalar>
Tensor<Scalar> conv3d(const Tensor<Scalar>& input, const Tensor<Scalar>& weight, const NoDeduce<Tensor<Scalar>>* bias,
                      const Conv3dOptions& o) {
  const Problem p = make_problem(input, weight, bias, geometry(o), true);
  Tensor<Scalar> out(Shape{p.n, p.co, p.od, p.oh, p.ow});
  Scalar* y = out.mutable_data();
  const Scalar* x = input.data();
  const Scalar* w = weight.data();
  for (Index s = 0; s < p.n; ++s)
    for (Index oc = 0; oc < p.co; ++oc)
      for (Index oz = 0; oz < p.od; ++oz)
        for (Index oy = 0; oy < p.oh; ++oy)
          for (Index ox = 0; ox < p.ow; ++ox) {
            const Index g = oc / p.cog;
            Scalar acc = bias != nullptr ? (*bias)[oc] : Scalar(0);
            for (Index ci = 0; ci < p.cg; ++ci)
              for (Index kz = 0; kz < p.kd; ++kz)
                for (Index ky = 0; ky < p.kh; ++ky)
                  for (Index kx = 0; kx < p.kw; ++kx) {
                    const Index iz = oz * o.stride[0] - o.padding[0] + kz * o.dilation[0];
                    const Index iy = oy * o.stride[1] - o.padding[1] + ky * o.dilation[1];
                    const Index ix = ox * o.stride[2] - o.padding[2] + kx * o.dilation[2];
                    if (iz < 0 || iz >= p.d || iy < 0 || iy >= p.h || ix < 0 || ix >= p.w) continue;
                    const Index chan = g * p.cg + ci;
                    acc += w[(((oc * p.cg + ci) * p.kd + kz) * p.kh + ky) * p.kw + kx] *
                           x[(((s * p.c + chan) * p.d + iz) * p.h + iy) * p.w + ix];
                  }
            y[(((s * p.co + oc) * p.od + oz) * p.oh + oy) * p.ow + ox] = acc;
          }
  return out;
}

}  // namespace reference

#define SIAM_INSTANTIATE_CONV(S)                                                                                  \
  template Tensor<S> conv2d(const Tensor<S>&, const Tensor<S>&, const Tensor<S>*, const Conv2dOptions&, ConvPath); \
  template Tensor<S> conv3d(const Tensor<S>&, const Tensor<S>&, const Tensor<S>*, const Conv3dOptions&, ConvPath); \
  template Tensor<S> reference::conv2d(const Tensor<S>&, const Tensor<S>&, const Tensor<S>*, const Conv2dOptions&); \
  template Tensor<S> reference::conv3d(const Tensor<S>&, const Tensor<S>&, const Tensor<S>*, const Conv3dOptions&);

SIAM_INSTANTIATE_CONV(float)
SIAM_INSTANTIATE_CONV(double)

}  // namespace siam
