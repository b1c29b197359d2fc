#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "siam/config.hpp"
#include "siam/data.hpp"
#include "siam/model.hpp"

namespace siam {

/// Mean of squared differences over every element.
template <typename Scalar>
Tensor<Scalar> l2_loss(const Tensor<Scalar>& pred, const Tensor<Scalar>& target);

template <typename Scalar>
struct AdamState {
  std::vector<Tensor<Scalar>> m;
  std::vector<Tensor<Scalar>> v;
  Index step = 0;

  static AdamState zeros_like(const ParamStore<Scalar>& params);
};

/// One bias-corrected Adam update with decoupled weight decay. Gradients are
/// looked up by parameter name; a missing or non-finite gradient throws.
template <typename Scalar>
void adam_step(ParamStore<Scalar>& params, const std::map<std::string, Tensor<Scalar>>& grads, AdamState<Scalar>& state,
               const TrainConfig& config, double lr);

/// Learning rate used at `step` (0-based). Onecycle: cosine warm-up from
/// lr/25 to lr over warmup_frac of the run, then cosine decay to lr/25/1e4.
double scheduled_lr(const TrainConfig& config, Index step);

/// Scales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before scaling.
template <typename Scalar>
double clip_gradients(std::map<std::string, Tensor<Scalar>>& grads, double max_norm);

// ------------------------------------------------------------------ checkpoints

constexpr std::uint32_t kCheckpointVersion = 1;

template <typename Scalar>
struct Checkpoint {
  std::uint64_t fingerprint = 0;
  Index step = 0;
  /// Shuffle stream position: RNG state before the current epoch's permutation.
  Rng::State epoch_rng{};
  Index epoch = 0;
  /// Full run configuration in canonical text form.
  std::string config_text;
  std::vector<std::string> names;
  std::vector<Tensor<Scalar>> values;
  AdamState<Scalar> adam;
};

template <typename Scalar>
std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint<Scalar>& ckpt);
template <typename Scalar>
Checkpoint<Scalar> parse_checkpoint(std::span<const std::uint8_t> bytes);
/// Element type recorded in a checkpoint header.
Dtype checkpoint_dtype(std::span<const std::uint8_t> bytes);
/// Human-readable summary written next to each checkpoint.
template <typename Scalar>
std::string checkpoint_manifest(const Checkpoint<Scalar>& ckpt);

/// Writes `path` and `path + ".manifest"`.
template <typename Scalar>
void save_checkpoint(const std::string& path, const Checkpoint<Scalar>& ckpt);
template <typename Scalar>
Checkpoint<Scalar> load_checkpoint(const std::string& path);

/// Copies checkpoint parameters into `model`; throws ConfigError when the
/// architecture fingerprint or the parameter layout differs.
template <typename Scalar>
void restore_parameters(SiamModel<Scalar>& model, const Checkpoint<Scalar>& ckpt);

// ------------------------------------------------------------------ training loop

struct LogRecord {
  Index step = 0;
  double lr = 0.0;
  double loss = 0.0;
  double wall_ms = 0.0;
};

std::string format_log_record(const LogRecord& r);
LogRecord parse_log_record(const std::string& line);

/// L2 loss of the model over every clip of `dataset`, evaluated in fixed
/// chunks with double accumulation. Training ends its log with this value.
template <typename Scalar>
double dataset_l2(const SiamModel<Scalar>& model, const VideoBatch& dataset, Index chunk = 16);

/// Batches clips `indices` of `dataset` and splits them into input and target.
template <typename Scalar>
std::pair<Tensor<Scalar>, Tensor<Scalar>> gather_batch(const VideoBatch& dataset, const std::vector<Index>& indices,
                                                       Index t_in, Index t_out);

template <typename Scalar>
class Trainer {
 public:
  /// `dataset` is [n, T_total, C, H, W] with T_total >= t_in + t_out.
  Trainer(SiamModel<Scalar>& model, const VideoBatch& dataset, const RunConfig& config);

  /// Restores parameters, moments, step and shuffle position.
  void resume(const Checkpoint<Scalar>& ckpt);

  /// One optimization step; returns its record (loss before the update).
  LogRecord step();

  Checkpoint<Scalar> checkpoint() const;

  Index current_step() const noexcept { return step_; }
  const AdamState<Scalar>& adam() const noexcept { return adam_; }

 private:
  std::vector<Index> next_indices(Index count);
  void start_epoch();

  SiamModel<Scalar>& model_;
  const VideoBatch& dataset_;
  RunConfig config_;
  AdamState<Scalar> adam_;
  Index step_ = 0;
  Rng rng_;
  Rng::State epoch_rng_{};
  Index epoch_ = 0;
  std::vector<Index> order_;
  Index cursor_ = 0;
};

struct TrainOptions {
  /// Directory for checkpoints and train.log; empty keeps everything in memory.
  std::string out_dir;
  std::optional<std::string> resume_path;
  std::function<void(const LogRecord&)> on_record;
};

struct TrainResult {
  std::vector<LogRecord> log;
  /// Final record: step = max_steps, lr = 0, loss = dataset_l2 of the final model.
  LogRecord final_record;
  std::string final_checkpoint;
};

/// Runs steps until config.train.max_steps, writing periodic and final
/// checkpoints. A non-finite loss aborts with NumericError; checkpoints
/// already written are kept.
template <typename Scalar>
TrainResult train_run(SiamModel<Scalar>& model, const VideoBatch& dataset, const RunConfig& config,
                      const TrainOptions& options = {});

}  // namespace siam
