#include "siam/ops.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace siam {

namespace {

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a.size() != b.size()) {
    throw ShapeError(std::string(op) + ": rank mismatch " + to_string(a) + " vs " + to_string(b));
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] != b[i]) {
      throw ShapeError(std::string(op) + ": extent mismatch on axis " + std::to_string(i) + " (" +
                       to_string(a) + " vs " + to_string(b) + ")");
    }
  }
}

Index normalize_axis(Index axis, Index rank, const char* op) {
  const Index a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for rank " +
                     std::to_string(rank));
  }
  return a;
}

// Walks the output of a permutation in row-major order. For every output
// element calls fn(out_index, in_offset).
template <typename Fn>
void for_each_permuted(const Shape& in_shape, const std::vector<Index>& axes, Fn&& fn) {
  const std::size_t rank = in_shape.size();
  const Shape in_strides = strides_of(in_shape);
  Shape out_shape(rank), src_stride(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out_shape[i] = in_shape[static_cast<std::size_t>(axes[i])];
    src_stride[i] = in_strides[static_cast<std::size_t>(axes[i])];
  }
  if (rank == 0) {
    fn(Index{0}, Index{0});
    return;
  }
  const Index inner = out_shape.back();
  const Index inner_stride = src_stride.back();
  const Index outer = numel(out_shape) / inner;
  Shape counter(rank, 0);
  Index src = 0;
  Index dst = 0;
  for (Index o = 0; o < outer; ++o) {
    for (Index j = 0; j < inner; ++j) fn(dst + j, src + j * inner_stride);
    dst += inner;
    for (std::size_t ax = rank - 1; ax-- > 0;) {
      ++counter[ax];
      src += src_stride[ax];
      if (counter[ax] < out_shape[ax]) break;
      src -= counter[ax] * src_stride[ax];
      counter[ax] = 0;
    }
  }
}

}  // namespace

// ---------------------------------------------------------------- elementwise

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor<Scalar> out(a.shape(), a.array() + b.array());
  Tape<Scalar>* tape = common_tape({&a, &b});
  if (tape == nullptr) return out;
  const int na = a.node();
  const int nb = b.node();
  return tape->record(std::move(out), [na, nb](const auto& g, Tape<Scalar>& t) {
    t.accumulate(na, g);
    t.accumulate(nb, g);
  });
}

template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  Tensor<Scalar> out(a.shape(), a.array() * b.array());
  Tape<Scalar>* tape = common_tape({&a, &b});
  if (tape == nullptr) return out;
  return tape->record(std::move(out), [a, b](const auto& g, Tape<Scalar>& t) {
    if (a.tracked()) t.accumulate(a.node(), g * b.array());
    if (b.tracked()) t.accumulate(b.node(), g * a.array());
  });
}

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& a, Scalar factor) {
  Tensor<Scalar> out(a.shape(), a.array() * factor);
  if (!a.tracked()) return out;
  const int na = a.node();
  return a.tape()->record(std::move(out),
                          [na, factor](const auto& g, Tape<Scalar>& t) { t.accumulate(na, g * factor); });
}

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& a) {
  Tensor<Scalar> out = Tensor<Scalar>::scalar(a.array().sum());
  if (!a.tracked()) return out;
  const int na = a.node();
  const Index n = a.size();
  return a.tape()->record(std::move(out), [na, n](const auto& g, Tape<Scalar>& t) {
    t.accumulate(na, Tensor<Scalar>::Array::Constant(n, g[0]));
  });
}

template <typename Scalar>
Tensor<Scalar> mean_squared_error(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  require_same_shape(a.shape(), b.shape(), "mean_squared_error");
  const Index n = a.size();
  // Accumulate in double so float32 training reports the same loss as evaluation.
  double acc = 0.0;
  const Scalar* pa = a.data();
  const Scalar* pb = b.data();
  for (Index i = 0; i < n; ++i) {
    const double d = static_cast<double>(pa[i]) - static_cast<double>(pb[i]);
    acc += d * d;
  }
  Tensor<Scalar> out = Tensor<Scalar>::scalar(static_cast<Scalar>(acc / static_cast<double>(n)));
  Tape<Scalar>* tape = common_tape({&a, &b});
  if (tape == nullptr) return out;
  return tape->record(std::move(out), [a, b, n](const auto& g, Tape<Scalar>& t) {
    const Scalar k = Scalar(2) * g[0] / static_cast<Scalar>(n);
    if (a.tracked()) t.accumulate(a.node(), (a.array() - b.array()) * k);
    if (b.tracked()) t.accumulate(b.node(), (b.array() - a.array()) * k);
  });
}

namespace {
thread_local double* relu_margin_sink = nullptr;
}  // namespace

ReluMarginProbe::ReluMarginProbe() : previous_(relu_margin_sink) { relu_margin_sink = &margin_; }
ReluMarginProbe::~ReluMarginProbe() { relu_margin_sink = previous_; }

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& input) {
  Tensor<Scalar> out(input.shape(), input.array().max(Scalar(0)));
  if (relu_margin_sink != nullptr && input.size() > 0) {
    *relu_margin_sink = std::min(*relu_margin_sink, static_cast<double>(input.array().abs().minCoeff()));
  }
  if (!input.tracked()) return out;
  return input.tape()->record(std::move(out), [input](const auto& g, Tape<Scalar>& t) {
    t.accumulate(input.node(), (input.array() > Scalar(0)).select(g, Scalar(0)));
  });
}

// -------------------------------------------------------------- data movement

template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& input, Shape shape) {
  Tensor<Scalar> out = input.reshaped_value(std::move(shape));
  if (!input.tracked()) return out;
  const int n = input.node();
  return input.tape()->record(std::move(out), [n](const auto& g, Tape<Scalar>& t) { t.accumulate(n, g); });
}

template <typename Scalar>
Tensor<Scalar> permute(const Tensor<Scalar>& input, const std::vector<Index>& axes) {
  const Index rank = input.rank();
  if (static_cast<Index>(axes.size()) != rank) {
    throw ShapeError("permute: " + std::to_string(axes.size()) + " axes given for rank " + std::to_string(rank));
  }
  std::vector<bool> seen(static_cast<std::size_t>(rank), false);
  Shape out_shape(static_cast<std::size_t>(rank));
  for (Index i = 0; i < rank; ++i) {
    const Index a = axes[static_cast<std::size_t>(i)];
    if (a < 0 || a >= rank || seen[static_cast<std::size_t>(a)]) {
      throw ShapeError("permute: axes do not form a permutation of 0.." + std::to_string(rank - 1));
    }
    seen[static_cast<std::size_t>(a)] = true;
    out_shape[static_cast<std::size_t>(i)] = input.dim(a);
  }
  Tensor<Scalar> out(out_shape);
  Scalar* dst = out.mutable_data();
  const Scalar* src = input.data();
  for_each_permuted(input.shape(), axes, [&](Index d, Index s) { dst[d] = src[s]; });
  if (!input.tracked()) return out;
  const int n = input.node();
  Shape in_shape = input.shape();
  return input.tape()->record(std::move(out), [n, in_shape, axes](const auto& g, Tape<Scalar>& t) {
    auto& buf = t.grad_buffer(n);
    for_each_permuted(in_shape, axes, [&](Index d, Index s) { buf[s] += g[d]; });
  });
}

template <typename Scalar>
Tensor<Scalar> concat(const std::vector<Tensor<Scalar>>& parts, Index axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts.front().shape();
  const Index ax = normalize_axis(axis, static_cast<Index>(first.size()), "concat");
  Shape out_shape = first;
  out_shape[static_cast<std::size_t>(ax)] = 0;
  Tape<Scalar>* tape = nullptr;
  for (const auto& p : parts) {
    if (p.shape().size() != first.size()) throw ShapeError("concat: rank mismatch " + to_string(p.shape()));
    for (std::size_t i = 0; i < first.size(); ++i) {
      if (static_cast<Index>(i) != ax && p.shape()[i] != first[i]) {
        throw ShapeError("concat: extent mismatch on axis " + std::to_string(i) + " (" + to_string(p.shape()) +
                         " vs " + to_string(first) + ")");
      }
    }
    out_shape[static_cast<std::size_t>(ax)] += p.dim(ax);
  }
  for (const auto& p : parts) {
    if (p.tracked()) {
      if (tape != nullptr && tape != p.tape()) throw TapeError("op inputs live on different tapes");
      tape = p.tape();
    }
  }
  const Index outer = numel(Shape(first.begin(), first.begin() + ax));
  const Index inner = numel(Shape(first.begin() + ax + 1, first.end()));
  const Index out_row = out_shape[static_cast<std::size_t>(ax)] * inner;
  Tensor<Scalar> out(out_shape);
  Scalar* dst = out.mutable_data();
  std::vector<Index> offsets;
  std::vector<int> nodes;
  std::vector<Index> widths;
  Index offset = 0;
  for (const auto& p : parts) {
    const Index width = p.dim(ax) * inner;
    for (Index o = 0; o < outer; ++o) {
      std::copy_n(p.data() + o * width, width, dst + o * out_row + offset);
    }
    offsets.push_back(offset);
    nodes.push_back(p.node());
    widths.push_back(width);
    offset += width;
  }
  if (tape == nullptr) return out;
  return tape->record(std::move(out), [outer, out_row, offsets, nodes, widths](const auto& g, Tape<Scalar>& t) {
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      if (nodes[k] < 0) continue;
      auto& buf = t.grad_buffer(nodes[k]);
      for (Index o = 0; o < outer; ++o) {
        buf.segment(o * widths[k], widths[k]) += g.segment(o * out_row + offsets[k], widths[k]);
      }
    }
  });
}

template <typename Scalar>
std::vector<Tensor<Scalar>> split(const Tensor<Scalar>& input, Index axis, const std::vector<Index>& extents) {
  const Index ax = normalize_axis(axis, input.rank(), "split");
  Index total = 0;
  for (Index e : extents) {
    if (e <= 0) throw ShapeError("split: piece extents must be positive");
    total += e;
  }
  if (total != input.dim(ax)) {
    throw ShapeError("split: pieces sum to " + std::to_string(total) + " but axis " + std::to_string(ax) +
                     " has extent " + std::to_string(input.dim(ax)));
  }
  const Shape& shape = input.shape();
  const Index outer = numel(Shape(shape.begin(), shape.begin() + ax));
  const Index inner = numel(Shape(shape.begin() + ax + 1, shape.end()));
  const Index in_row = input.dim(ax) * inner;
  std::vector<Tensor<Scalar>> pieces;
  Index offset = 0;
  for (Index e : extents) {
    Shape piece_shape = shape;
    piece_shape[static_cast<std::size_t>(ax)] = e;
    Tensor<Scalar> piece(piece_shape);
    Scalar* dst = piece.mutable_data();
    const Index width = e * inner;
    for (Index o = 0; o < outer; ++o) std::copy_n(input.data() + o * in_row + offset, width, dst + o * width);
    if (input.tracked()) {
      const int n = input.node();
      piece = input.tape()->record(std::move(piece), [n, outer, in_row, offset, width](const auto& g, Tape<Scalar>& t) {
        auto& buf = t.grad_buffer(n);
        for (Index o = 0; o < outer; ++o) buf.segment(o * in_row + offset, width) += g.segment(o * width, width);
      });
    }
    pieces.push_back(std::move(piece));
    offset += width;
  }
  return pieces;
}

template <typename Scalar>
Tensor<Scalar> upsample_nearest(const Tensor<Scalar>& input, Index factor) {
  if (input.rank() < 2) throw ShapeError("upsample_nearest: need at least two axes");
  if (factor < 1) throw ShapeError("upsample_nearest: factor must be >= 1");
  Shape out_shape = input.shape();
  const Index h = input.dim(-2);
  const Index w = input.dim(-1);
  out_shape[out_shape.size() - 2] = h * factor;
  out_shape[out_shape.size() - 1] = w * factor;
  const Index planes = input.size() / (h * w);
  const Index oh = h * factor;
  const Index ow = w * factor;
  Tensor<Scalar> out(out_shape);
  Scalar* dst = out.mutable_data();
  const Scalar* src = input.data();
  for (Index p = 0; p < planes; ++p) {
    for (Index y = 0; y < oh; ++y) {
      const Scalar* row = src + p * h * w + (y / factor) * w;
      Scalar* orow = dst + p * oh * ow + y * ow;
      for (Index x = 0; x < ow; ++x) orow[x] = row[x / factor];
    }
  }
  if (!input.tracked()) return out;
  const int n = input.node();
  return input.tape()->record(std::move(out), [n, planes, h, w, factor](const auto& g, Tape<Scalar>& t) {
    auto& buf = t.grad_buffer(n);
    const Index oh2 = h * factor;
    const Index ow2 = w * factor;
    for (Index p = 0; p < planes; ++p) {
      for (Index y = 0; y < oh2; ++y) {
        for (Index x = 0; x < ow2; ++x) buf[p * h * w + (y / factor) * w + x / factor] += g[p * oh2 * ow2 + y * ow2 + x];
      }
    }
  });
}

// --------------------------------------------------------------------- linear

template <typename Scalar>
Tensor<Scalar> linear(const Tensor<Scalar>& input, const Tensor<Scalar>& weight, const NoDeduce<Tensor<Scalar>>* bias) {
  if (weight.rank() != 2) throw ShapeError("linear: weight must be [D_out, D_in], got " + to_string(weight.shape()));
  if (input.rank() < 1) throw ShapeError("linear: input must have at least one axis");
  const Index d_in = weight.dim(1);
  const Index d_out = weight.dim(0);
  if (input.dim(-1) != d_in) {
    throw ShapeError("linear: last axis of input is " + std::to_string(input.dim(-1)) + " but weight expects D_in=" +
                     std::to_string(d_in));
  }
  if (bias != nullptr && (bias->rank() != 1 || bias->dim(0) != d_out)) {
    throw ShapeError("linear: bias must be [" + std::to_string(d_out) + "], got " + to_string(bias->shape()));
  }
  const Index rows = input.size() / d_in;
  Shape out_shape = input.shape();
  out_shape.back() = d_out;
  Tensor<Scalar> out(out_shape);
  using Map = Eigen::Map<RowMatrix<Scalar>>;
  using CMap = Eigen::Map<const RowMatrix<Scalar>>;
  CMap x(input.data(), rows, d_in);
  CMap w(weight.data(), d_out, d_in);
  Map y(out.mutable_data(), rows, d_out);
  y.noalias() = x * w.transpose();
  if (bias != nullptr) {
    y.rowwise() += Eigen::Map<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>>(bias->data(), d_out);
  }
  Tape<Scalar>* tape = common_tape({&input, &weight, bias});
  if (tape == nullptr) return out;
  const int nb = bias != nullptr ? bias->node() : -1;
  return tape->record(std::move(out), [input, weight, nb, rows, d_in, d_out](const auto& g, Tape<Scalar>& t) {
    CMap dy(g.data(), rows, d_out);
    if (input.tracked()) {
      auto& buf = t.grad_buffer(input.node());
      Map dx(buf.data(), rows, d_in);
      dx.noalias() += dy * CMap(weight.data(), d_out, d_in);
    }
    if (weight.tracked()) {
      auto& buf = t.grad_buffer(weight.node());
      Map dw(buf.data(), d_out, d_in);
      dw.noalias() += dy.transpose() * CMap(input.data(), rows, d_in);
    }
    if (nb >= 0) {
      auto& buf = t.grad_buffer(nb);
      Eigen::Map<Eigen::Matrix<Scalar, 1, Eigen::Dynamic>>(buf.data(), d_out) += dy.colwise().sum();
    }
  });
}

// ----------------------------------------------------------------- group norm

template <typename Scalar>
Tensor<Scalar> group_norm(const Tensor<Scalar>& input, Index num_groups, const Tensor<Scalar>& gamma,
                          const Tensor<Scalar>& beta, double eps) {
  if (input.rank() < 2) throw ShapeError("group_norm: input must be [N, C, ...], got " + to_string(input.shape()));
  if (!(eps > 0.0)) throw ShapeError("group_norm: eps must be positive");
  const Index n = input.dim(0);
  const Index c = input.dim(1);
  if (num_groups <= 0 || c % num_groups != 0) {
    throw ShapeError("group_norm: channel axis (" + std::to_string(c) + ") not divisible by num_groups=" +
                     std::to_string(num_groups));
  }
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c}) {
    throw ShapeError("group_norm: gamma/beta must be [" + std::to_string(c) + "]");
  }
  const Index spatial = input.size() / (n * c);
  const Index cg = c / num_groups;
  const Index group_size = cg * spatial;
  Tensor<Scalar> out(input.shape());
  // Standardized values and inverse std are kept for the backward pass.
  typename Tensor<Scalar>::Array xhat(input.size());
  typename Tensor<Scalar>::Array inv_std(n * num_groups);
  Scalar* y = out.mutable_data();
  const Scalar* x = input.data();
  const Scalar* ga = gamma.data();
  const Scalar* be = beta.data();
  for (Index s = 0; s < n; ++s) {
    for (Index grp = 0; grp < num_groups; ++grp) {
      const Index base = (s * c + grp * cg) * spatial;
      double mean = 0.0;
      for (Index i = 0; i < group_size; ++i) mean += x[base + i];
      mean /= static_cast<double>(group_size);
      double var = 0.0;
      for (Index i = 0; i < group_size; ++i) {
        const double d = x[base + i] - mean;
        var += d * d;
      }
      var /= static_cast<double>(group_size);
      const double istd = 1.0 / std::sqrt(var + eps);
      inv_std[s * num_groups + grp] = static_cast<Scalar>(istd);
      for (Index ch = 0; ch < cg; ++ch) {
        const Index chan = grp * cg + ch;
        for (Index i = 0; i < spatial; ++i) {
          const Index k = base + ch * spatial + i;
          const Scalar xh = static_cast<Scalar>((x[k] - mean) * istd);
          xhat[k] = xh;
          y[k] = ga[chan] * xh + be[chan];
        }
      }
    }
  }
  Tape<Scalar>* tape = common_tape({&input, &gamma, &beta});
  if (tape == nullptr) return out;
  const int nx = input.node();
  const int ngamma = gamma.node();
  const int nbeta = beta.node();
  return tape->record(std::move(out), [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                                          const auto& g, Tape<Scalar>& t) {
    if (ngamma >= 0 || nbeta >= 0) {
      typename Tensor<Scalar>::Array dgamma = Tensor<Scalar>::Array::Zero(c);
      typename Tensor<Scalar>::Array dbeta = Tensor<Scalar>::Array::Zero(c);
      for (Index s = 0; s < n; ++s) {
        for (Index chan = 0; chan < c; ++chan) {
          const Index base = (s * c + chan) * spatial;
          dgamma[chan] += (g.segment(base, spatial) * xhat.segment(base, spatial)).sum();
          dbeta[chan] += g.segment(base, spatial).sum();
        }
      }
      t.accumulate(ngamma, dgamma);
      t.accumulate(nbeta, dbeta);
    }
    if (nx < 0) return;
    auto& dx = t.grad_buffer(nx);
    const Scalar* gm = gamma.data();
    for (Index s = 0; s < n; ++s) {
      for (Index grp = 0; grp < num_groups; ++grp) {
        const Index base = (s * c + grp * cg) * spatial;
        double mean_d = 0.0;
        double mean_dx = 0.0;
        for (Index ch = 0; ch < cg; ++ch) {
          const Scalar gch = gm[grp * cg + ch];
          for (Index i = 0; i < spatial; ++i) {
            const Index k = base + ch * spatial + i;
            const double d = static_cast<double>(g[k]) * gch;
            mean_d += d;
            mean_dx += d * xhat[k];
          }
        }
        mean_d /= static_cast<double>(group_size);
        mean_dx /= static_cast<double>(group_size);
        const double istd = inv_std[s * num_groups + grp];
        for (Index ch = 0; ch < cg; ++ch) {
          const Scalar gch = gm[grp * cg + ch];
          for (Index i = 0; i < spatial; ++i) {
            const Index k = base + ch * spatial + i;
            const double d = static_cast<double>(g[k]) * gch;
            dx[k] += static_cast<Scalar>(istd * (d - mean_d - xhat[k] * mean_dx));
          }
        }
      }
    }
  });
}

#define SIAM_INSTANTIATE_OPS(S)                                                                             \
  template Tensor<S> add(const Tensor<S>&, const Tensor<S>&);                                               \
  template Tensor<S> mul(const Tensor<S>&, const Tensor<S>&);                                               \
  template Tensor<S> scale(const Tensor<S>&, S);                                                            \
  template Tensor<S> sum(const Tensor<S>&);                                                                 \
  template Tensor<S> mean_squared_error(const Tensor<S>&, const Tensor<S>&);                                \
  template Tensor<S> relu(const Tensor<S>&);                                                                \
  template Tensor<S> reshape(const Tensor<S>&, Shape);                                                      \
  template Tensor<S> permute(const Tensor<S>&, const std::vector<Index>&);                                  \
  template Tensor<S> concat(const std::vector<Tensor<S>>&, Index);                                          \
  template std::vector<Tensor<S>> split(const Tensor<S>&, Index, const std::vector<Index>&);                \
  template Tensor<S> upsample_nearest(const Tensor<S>&, Index);                                             \
  template Tensor<S> linear(const Tensor<S>&, const Tensor<S>&, const Tensor<S>*);                          \
  template Tensor<S> group_norm(const Tensor<S>&, Index, const Tensor<S>&, const Tensor<S>&, double);

SIAM_INSTANTIATE_OPS(float)
SIAM_INSTANTIATE_OPS(double)

}  // namespace siam
