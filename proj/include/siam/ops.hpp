#pragma once

#include <array>
#include <limits>
#include <type_traits>
#include <vector>

#include "siam/tensor.hpp"

namespace siam {

/// Keeps a parameter out of template argument deduction (so `nullptr` works).
template <typename T>
using NoDeduce = std::type_identity_t<T>;

/// Geometry of a convolution over three spatial axes (depth/time, height, width).
/// 2D convolutions use depth extent 1 with zero depth padding.
struct ConvGeometry {
  std::array<Index, 3> stride{1, 1, 1};
  std::array<Index, 3> padding{0, 0, 0};
  std::array<Index, 3> dilation{1, 1, 1};
  Index groups = 1;
};

struct Conv2dOptions {
  std::array<Index, 2> stride{1, 1};
  std::array<Index, 2> padding{0, 0};
  std::array<Index, 2> dilation{1, 1};
  Index groups = 1;
};

struct Conv3dOptions {
  std::array<Index, 3> stride{1, 1, 1};
  std::array<Index, 3> padding{0, 0, 0};
  std::array<Index, 3> dilation{1, 1, 1};
  Index groups = 1;
};

/// Output extent of one convolved axis, or a ShapeError naming `axis` when the
/// dilated kernel does not fit the padded input.
Index conv_output_extent(Index in, Index kernel, Index stride, Index padding, Index dilation,
                         const char* axis);

/// Padding that keeps an odd kernel's output extent equal to its input at
/// stride 1. Even kernels have no such padding and raise a ShapeError.
Index same_padding(Index kernel, Index dilation);

/// Kernel selected for a convolution call. Exposed so tests can force each path.
enum class ConvPath { Auto, Depthwise, Pointwise, Im2col };

// input [N,C,H,W], weight [C_out, C_in/groups, kH, kW], bias [C_out].
template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& input, const Tensor<Scalar>& weight,
                      const NoDeduce<Tensor<Scalar>>* bias, const Conv2dOptions& options,
                      ConvPath path = ConvPath::Auto);

// input [N,C,T,H,W], weight [C_out, C_in/groups, kT, kH, kW], bias [C_out].
template <typename Scalar>
Tensor<Scalar> conv3d(const Tensor<Scalar>& input, const Tensor<Scalar>& weight,
                      const NoDeduce<Tensor<Scalar>>* bias, const Conv3dOptions& options,
                      ConvPath path = ConvPath::Auto);

/// Matrix product over the last axis: [..., D_in] x [D_out, D_in]^T + bias.
template <typename Scalar>
Tensor<Scalar> linear(const Tensor<Scalar>& input, const Tensor<Scalar>& weight,
                      const NoDeduce<Tensor<Scalar>>* bias);

/// Per-sample, per-group standardization over channels and all trailing axes,
/// followed by a per-channel affine map. Input is [N, C, ...].
template <typename Scalar>
Tensor<Scalar> group_norm(const Tensor<Scalar>& input, Index num_groups, const Tensor<Scalar>& gamma,
                          const Tensor<Scalar>& beta, double eps = 1e-5);

/// max(0, x); the backward pass routes gradient only where x > 0.
template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& input);

/// While alive, records the smallest |x| that relu sees on this thread. Finite
/// differences are only meaningful when this margin exceeds the step.
class ReluMarginProbe {
 public:
  ReluMarginProbe();
  ~ReluMarginProbe();
  ReluMarginProbe(const ReluMarginProbe&) = delete;
  ReluMarginProbe& operator=(const ReluMarginProbe&) = delete;
  double margin() const noexcept { return margin_; }

 private:
  double margin_ = std::numeric_limits<double>::infinity();
  double* previous_;
};

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& a, Scalar factor);

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& a);

/// Mean over all elements of (a - b)^2, as a rank-0 tensor.
template <typename Scalar>
Tensor<Scalar> mean_squared_error(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& input, Shape shape);

/// Output axis i is input axis axes[i].
template <typename Scalar>
Tensor<Scalar> permute(const Tensor<Scalar>& input, const std::vector<Index>& axes);

template <typename Scalar>
Tensor<Scalar> concat(const std::vector<Tensor<Scalar>>& parts, Index axis);

/// Cuts `input` along `axis` into consecutive pieces of the given extents.
template <typename Scalar>
std::vector<Tensor<Scalar>> split(const Tensor<Scalar>& input, Index axis,
                                  const std::vector<Index>& extents);

/// Nearest-neighbour upsampling of the last two axes by an integer factor.
template <typename Scalar>
Tensor<Scalar> upsample_nearest(const Tensor<Scalar>& input, Index factor);

namespace reference {

// Direct nested-loop convolutions. Slow; these are the oracle the fast paths
// are checked against.
template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& input, const Tensor<Scalar>& weight,
                      const NoDeduce<Tensor<Scalar>>* bias, const Conv2dOptions& options);

template <typename Scalar>
Tensor<Scalar> conv3d(const Tensor<Scalar>& input, const Tensor<Scalar>& weight,
                      const NoDeduce<Tensor<Scalar>>* bias, const Conv3dOptions& options);

}  // namespace reference

}  // namespace siam
