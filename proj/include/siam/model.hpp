#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "siam/config.hpp"
#include "siam/gradcheck.hpp"
#include "siam/ops.hpp"
#include "siam/params.hpp"

namespace siam {

enum class LayerKind { Conv2d, Conv3d, Linear, GroupNorm };

/// One parametrized layer. Indices point into the model's ParamStore; for
/// GroupNorm, `weight` is gamma and `bias` is beta.
struct Layer {
  LayerKind kind = LayerKind::Conv2d;
  std::string path;
  int weight = -1;
  int bias = -1;
  Index in = 0;
  Index out = 0;
  Index groups = 1;
  std::array<Index, 3> kernel{1, 1, 1};
  std::array<Index, 3> stride{1, 1, 1};
  std::array<Index, 3> padding{0, 0, 0};
  std::array<Index, 3> dilation{1, 1, 1};
};

/// Residual Mixer: x + relu(norm(proj_out(core(proj_in(x))))). Projections
/// exist only when the Mixer's working width differs from its native width
/// (C' for the spatial and spatiotemporal Mixers, T*C' for the temporal one).
struct Mixer {
  MixerKind kind = MixerKind::Spatial;
  std::string path;
  Index width = 0;
  std::optional<Layer> proj_in;
  std::optional<Layer> proj_out;
  /// spatial: dw, dwd, pw; spatiotemporal: four 3D branches; temporal: fc1, fc2.
  std::vector<Layer> core;
  /// Spatiotemporal channel split; the last group is the identity branch.
  std::vector<Index> split;
  Layer norm;
};

struct DaMiBlock {
  std::array<std::optional<Mixer>, 3> mixers;  // indexed by MixerKind
};

/// Cost of one layer or elementwise stage for a single forward pass.
struct CostRow {
  std::string path;
  Index params = 0;
  Index macs = 0;
  /// Normalization, activation and residual-add work, one op per element.
  Index elementwise = 0;
};

template <typename Scalar>
class SiamModel {
 public:
  using T = Tensor<Scalar>;
  using Bound = std::vector<T>;

  explicit SiamModel(const SiamConfig& config);

  const SiamConfig& config() const noexcept { return config_; }
  ParamStore<Scalar>& params() noexcept { return params_; }
  const ParamStore<Scalar>& params() const noexcept { return params_; }
  const std::vector<DaMiBlock>& blocks() const noexcept { return blocks_; }

  /// Parameter operands for the component functions below.
  Bound bind(Tape<Scalar>* tape = nullptr) const { return params_.bind(tape); }

  // Video tensors are [B, T, C, H, W]; latents are [B, T, C', H', W'].
  T encode(const Bound& p, const T& video) const;
  T mix(const Bound& p, const Mixer& mixer, const T& latent) const;
  T block(const Bound& p, Index index, const T& latent) const;
  T translate(const Bound& p, const T& latent) const;
  T decode(const Bound& p, const T& latent) const;

  /// decode(translate(encode(x))); tracked on `tape` when given.
  T forward(const T& video, Tape<Scalar>* tape = nullptr) const;

  /// Autoregressive prediction of `horizon` frames. Each call feeds the latest
  /// t_in frames; predictions are clamped to [0, 1] and re-fed.
  T rollout(const T& video, Index horizon) const;

  std::size_t forward_calls() const noexcept { return forward_calls_; }

  /// Zeroes the Mixer's terminal weights so that it reduces to the identity.
  void apply_identity_recipe(Index block, MixerKind kind);

  /// Per-layer cost of one forward pass at batch size `batch`.
  std::vector<CostRow> cost_rows(Index batch = 1) const;

 private:
  Layer conv2d_layer(const std::string& path, Index in, Index out, Index k, Index stride, Index dilation, Index groups,
                     Rng& rng);
  Layer conv3d_layer(const std::string& path, Index channels, const Kernel3& k, Rng& rng);
  Layer linear_layer(const std::string& path, Index in, Index out, Rng& rng);
  Layer norm_layer(const std::string& path, Index channels, Rng& rng);
  Mixer build_mixer(const std::string& path, MixerKind kind, Rng& rng);

  T apply(const Bound& p, const Layer& layer, const T& x) const;
  /// conv -> norm -> relu.
  T unit(const Bound& p, const Layer& conv, const Layer& norm, const T& x) const;

  SiamConfig config_;
  ParamStore<Scalar> params_;
  std::vector<std::pair<Layer, Layer>> encoder_;  // stem, then stride-2 stages
  std::vector<std::pair<Layer, Layer>> decoder_;  // upsampling stages, then refine
  Layer head_;
  std::vector<DaMiBlock> blocks_;
  mutable std::size_t forward_calls_ = 0;
};

/// Copies frames [start, start + count) of a [B, T, ...] tensor (untracked).
template <typename Scalar>
Tensor<Scalar> slice_time(const Tensor<Scalar>& video, Index start, Index count);

/// Outcome of an end-to-end finite-difference check of every model parameter.
struct ModelGradCheck {
  std::uint64_t seed = 0;
  /// Smallest |x| seen by any relu at the evaluation point.
  double relu_margin = 0.0;
  std::vector<GradCheckResult> results;
  bool passed() const;
};

/// Float64 gradient check of the whole model on random input/target clips.
/// Central differences are invalid across relu kinks, so seeds starting at
/// config.init_seed are tried until every relu input is at least `min_margin`
/// away from zero; that seed fixes both the weights and the data.
ModelGradCheck check_model_gradients(const SiamConfig& config, Index batch = 1, double min_margin = 1e-4,
                                     int max_tries = 64, const GradCheckOptions& options = {});

}  // namespace siam
