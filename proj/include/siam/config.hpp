#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "siam/tensor.hpp"

namespace siam {

enum class MixerKind { Spatial = 0, Spatiotemporal = 1, Temporal = 2 };
enum class Dtype { Float32, Float64 };

const char* to_string(MixerKind kind);
const char* to_string(Dtype dtype);

/// Shape triple (channels, height, width).
struct FrameShape {
  Index channels = 1;
  Index height = 1;
  Index width = 1;
  bool operator==(const FrameShape&) const = default;
};

/// 3D kernel extent (time, height, width).
using Kernel3 = std::array<Index, 3>;

/// Full architecture description. Every field maps onto one `[model]` key.
struct SiamConfig {
  std::string name;  // preset tag; used only to look up published reference costs
  Index t_in = 0;
  Index t_out = 0;
  FrameShape frame;
  FrameShape latent;
  Index n_blocks = 8;
  /// Working widths of the spatial, spatiotemporal and temporal Mixers.
  std::array<Index, 3> mixer_dims{0, 0, 0};
  std::array<MixerKind, 3> mixer_order{MixerKind::Spatial, MixerKind::Spatiotemporal, MixerKind::Temporal};
  std::array<bool, 3> mixer_enabled{true, true, true};
  Index expansion_ratio = 4;
  Index norm_groups = 8;
  double norm_eps = 1e-5;
  /// Depthwise kernel, dilated depthwise kernel, dilation of the spatial Mixer.
  std::array<Index, 3> spatial_kernels{5, 7, 3};
  /// Kernels of the four convolutional spatiotemporal branches.
  std::vector<Kernel3> incep_branches{{3, 3, 3}, {3, 1, 1}, {1, 1, 11}, {1, 11, 1}};
  /// When set, the spatiotemporal width must split into five equal groups.
  bool strict_split = false;
  Dtype dtype = Dtype::Float32;
  std::uint64_t init_seed = 0;

  bool enabled(MixerKind k) const { return mixer_enabled[static_cast<std::size_t>(k)]; }
  Index dim(MixerKind k) const { return mixer_dims[static_cast<std::size_t>(k)]; }
  /// Number of stride-2 encoder stages, log2(H / H').
  Index stages() const;
  /// Width of the stacked time-channel axis seen by the temporal Mixer.
  Index stacked_channels() const { return t_in * latent.channels; }
};

enum class Schedule { Constant, OneCycle };

struct TrainConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  Index batch_size = 16;
  Index max_steps = 1000;
  Schedule schedule = Schedule::OneCycle;
  double warmup_frac = 0.1;
  /// Maximum global gradient norm; nullopt disables clipping.
  std::optional<double> grad_clip;
  std::uint64_t seed = 0;
  Index checkpoint_every = 0;
  Index log_every = 1;
};

struct MovingConfig {
  Index canvas_height = 64;
  Index canvas_width = 64;
  Index n_digits = 2;
  Index frames = 20;
  double speed_min = 2.0;
  double speed_max = 5.0;
  std::uint64_t seed = 0;
  /// Procedural glyph variants per digit class when no IDX file is given.
  Index digit_variants = 8;
  std::string idx_path;
};

/// Contents of a run configuration file: sections [model], [train], [data].
struct RunConfig {
  SiamConfig model;
  TrainConfig train;
  MovingConfig data;
};

/// Throws ConfigError describing the first violated invariant.
void validate(const SiamConfig& config);
void validate(const TrainConfig& config);
void validate(const MovingConfig& config);

/// Parses the "key = value" format. Required [model] keys: t_in, t_out,
/// frame_shape, latent_shape, mixer_dims. Unknown sections or keys are errors.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::string& path);
/// Canonical text: every key, fixed order, shortest round-trip numbers.
std::string print_run_config(const RunConfig& config);
std::string print_model_section(const SiamConfig& config);

/// FNV-1a 64 of the canonical [model] section.
std::uint64_t fingerprint(const SiamConfig& config);

/// Names accepted by preset(): mmnist, taxibj, weatherbench, human36m, micro,
/// gradcheck, ablation-a .. ablation-g.
std::vector<std::string> preset_names();
RunConfig preset(const std::string& name);

/// Published (params in millions, GFLOPs) for a preset tag, if any.
struct ReferenceCost {
  double params_m;
  double gflops;
};
std::optional<ReferenceCost> reference_cost(const std::string& name);

}  // namespace siam
