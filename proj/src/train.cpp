#include "siam/train.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "siam/ops.hpp"

namespace siam {

template <typename Scalar>
Tensor<Scalar> l2_loss(const Tensor<Scalar>& pred, const Tensor<Scalar>& target) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("l2_loss: prediction " + to_string(pred.shape()) + " vs target " + to_string(target.shape()));
  }
  return mean_squared_error(pred, target);
}

template <typename Scalar>
AdamState<Scalar> AdamState<Scalar>::zeros_like(const ParamStore<Scalar>& params) {
  AdamState s;
  for (const auto& p : params) {
    s.m.push_back(Tensor<Scalar>::zeros(p.value.shape()));
    s.v.push_back(Tensor<Scalar>::zeros(p.value.shape()));
  }
  return s;
}

template <typename Scalar>
void adam_step(ParamStore<Scalar>& params, const std::map<std::string, Tensor<Scalar>>& grads, AdamState<Scalar>& state,
               const TrainConfig& config, double lr) {
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ConfigError("adam_step: optimizer state holds " + std::to_string(state.m.size()) + " moments for " +
                      std::to_string(params.size()) + " parameters");
  }
  for (const auto& p : params) {
    auto it = grads.find(p.name);
    if (it == grads.end()) throw ConfigError("adam_step: no gradient for parameter '" + p.name + "'");
    if (it->second.shape() != p.value.shape()) throw ShapeError("adam_step: gradient shape mismatch for '" + p.name + "'");
    if (!it->second.all_finite()) throw NumericError("non-finite gradient in parameter '" + p.name + "'");
  }
  if (grads.size() != params.size()) throw ConfigError("adam_step: gradients name parameters the model does not have");
  const Index t = state.step + 1;
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(t));
  const auto b1 = static_cast<Scalar>(config.beta1), b2 = static_cast<Scalar>(config.beta2);
  const auto step_size = static_cast<Scalar>(lr / c1);
  const auto inv_sqrt_c2 = static_cast<Scalar>(1.0 / std::sqrt(c2));
  const auto eps = static_cast<Scalar>(config.eps);
  const auto decay = static_cast<Scalar>(1.0 - lr * config.weight_decay);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& g = grads.at(params[i].name).array();
    auto m = state.m[i].mutable_values();
    auto v = state.v[i].mutable_values();
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g * g;
    auto theta = params[i].value.mutable_values();
    if (config.weight_decay != 0.0) theta *= decay;
    theta -= step_size * m / (v.sqrt() * inv_sqrt_c2 + eps);
  }
  state.step = t;
}

double scheduled_lr(const TrainConfig& c, Index step) {
  if (c.schedule == Schedule::Constant) return c.lr;
  const double initial = c.lr / 25.0;
  const double final_lr = initial / 1e4;
  const double total = static_cast<double>(std::max<Index>(c.max_steps, 1));
  const double warm = std::max(1.0, std::floor(c.warmup_frac * total));
  const auto anneal = [](double from, double to, double pct) {
    return to + (from - to) / 2.0 * (1.0 + std::cos(std::numbers::pi * std::clamp(pct, 0.0, 1.0)));
  };
  const auto s = static_cast<double>(step);
  if (s < warm) return anneal(initial, c.lr, s / warm);
  return anneal(c.lr, final_lr, (s - warm) / std::max(1.0, total - 1.0 - warm));
}

template <typename Scalar>
double clip_gradients(std::map<std::string, Tensor<Scalar>>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, g] : grads) sq += g.array().template cast<double>().square().sum();
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const auto f = static_cast<Scalar>(max_norm / norm);
    for (auto& [name, g] : grads) g.mutable_values() *= f;
  }
  return norm;
}

// ------------------------------------------------------------------ checkpoint encoding

namespace {

constexpr char kMagic[8] = {'S', 'I', 'A', 'M', 'C', 'K', 'P', 'T'};

template <typename Scalar>
constexpr std::uint32_t dtype_code() {
  return std::is_same_v<Scalar, float> ? 1 : 2;
}

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int s = 0; s < 32; s += 8) out.push_back(static_cast<std::uint8_t>(v >> s));
  }
  void u64(std::uint64_t v) {
    for (int s = 0; s < 64; s += 8) out.push_back(static_cast<std::uint8_t>(v >> s));
  }
  void text(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out.insert(out.end(), s.begin(), s.end());
  }
  template <typename Scalar>
  void values(const Tensor<Scalar>& t) {
    for (Scalar x : t.span()) {
      if constexpr (std::is_same_v<Scalar, float>) {
        u32(std::bit_cast<std::uint32_t>(x));
      } else {
        u64(std::bit_cast<std::uint64_t>(x));
      }
    }
  }
  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : bytes(b) {}
  const std::uint8_t* take(std::size_t n) {
    if (bytes.size() - pos < n) {
      throw ParseError(ParseErrorKind::Truncated, "checkpoint: truncated at byte " + std::to_string(pos) + ", needed " +
                                                      std::to_string(n) + " more");
    }
    const std::uint8_t* p = bytes.data() + pos;
    pos += n;
    return p;
  }
  std::uint32_t u32() {
    const std::uint8_t* p = take(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | p[i];
    return v;
  }
  std::uint64_t u64() {
    const std::uint8_t* p = take(8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
  }
  std::string text() {
    const std::uint32_t n = u32();
    const std::uint8_t* p = take(n);
    return std::string(reinterpret_cast<const char*>(p), n);
  }
  template <typename Scalar>
  Tensor<Scalar> values(const Shape& shape) {
    const Index n = numel(shape);
    if (static_cast<std::uint64_t>(n) > (bytes.size() - pos) / sizeof(Scalar)) take(static_cast<std::size_t>(n) * sizeof(Scalar));
    Tensor<Scalar> t(shape);
    Scalar* d = t.mutable_data();
    for (Index i = 0; i < n; ++i) {
      if constexpr (std::is_same_v<Scalar, float>) {
        d[i] = std::bit_cast<float>(u32());
      } else {
        d[i] = std::bit_cast<double>(u64());
      }
    }
    return t;
  }
  std::span<const std::uint8_t> bytes;
  std::size_t pos = 0;
};

void check_magic(Reader& r) {
  const std::uint8_t* m = r.take(8);
  if (std::memcmp(m, kMagic, 8) != 0) throw ParseError(ParseErrorKind::BadMagic, "checkpoint: bad magic");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw ParseError(ParseErrorKind::UnsupportedVersion, "checkpoint: unsupported format version " + std::to_string(version));
  }
}

}  // namespace

Dtype checkpoint_dtype(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  check_magic(r);
  r.u64();
  const std::uint32_t code = r.u32();
  if (code == 1) return Dtype::Float32;
  if (code == 2) return Dtype::Float64;
  throw ParseError(ParseErrorKind::UnsupportedDtype, "checkpoint: unknown dtype code " + std::to_string(code));
}

template <typename Scalar>
std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint<Scalar>& c) {
  if (c.names.size() != c.values.size() || c.adam.m.size() != c.values.size() || c.adam.v.size() != c.values.size()) {
    throw ConfigError("checkpoint: parameter, moment and name counts differ");
  }
  Writer w;
  w.out.insert(w.out.end(), kMagic, kMagic + 8);
  w.u32(kCheckpointVersion);
  w.u64(c.fingerprint);
  w.u32(dtype_code<Scalar>());
  w.u64(static_cast<std::uint64_t>(c.step));
  w.u64(static_cast<std::uint64_t>(c.adam.step));
  w.u64(static_cast<std::uint64_t>(c.epoch));
  for (std::uint64_t s : c.epoch_rng) w.u64(s);
  w.text(c.config_text);
  w.u32(static_cast<std::uint32_t>(c.values.size()));
  for (std::size_t i = 0; i < c.values.size(); ++i) {
    w.text(c.names[i]);
    w.u32(static_cast<std::uint32_t>(c.values[i].rank()));
    for (Index e : c.values[i].shape()) w.u64(static_cast<std::uint64_t>(e));
    w.values(c.values[i]);
    w.values(c.adam.m[i]);
    w.values(c.adam.v[i]);
  }
  return std::move(w.out);
}

template <typename Scalar>
Checkpoint<Scalar> parse_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  check_magic(r);
  Checkpoint<Scalar> c;
  c.fingerprint = r.u64();
  const std::uint32_t code = r.u32();
  if (code != dtype_code<Scalar>()) {
    throw ParseError(ParseErrorKind::UnsupportedDtype, "checkpoint: stored dtype code " + std::to_string(code) +
                                                           " does not match the requested element type");
  }
  c.step = static_cast<Index>(r.u64());
  c.adam.step = static_cast<Index>(r.u64());
  c.epoch = static_cast<Index>(r.u64());
  for (auto& s : c.epoch_rng) s = r.u64();
  c.config_text = r.text();
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    c.names.push_back(r.text());
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw ParseError(ParseErrorKind::BadExtents, "checkpoint: rank " + std::to_string(rank) + " too large");
    Shape shape;
    for (std::uint32_t k = 0; k < rank; ++k) {
      const std::uint64_t e = r.u64();
      if (e == 0 || e > (std::uint64_t{1} << 36)) {
        throw ParseError(ParseErrorKind::BadExtents, "checkpoint: bad extent for '" + c.names.back() + "'");
      }
      shape.push_back(static_cast<Index>(e));
    }
    c.values.push_back(r.template values<Scalar>(shape));
    c.adam.m.push_back(r.template values<Scalar>(shape));
    c.adam.v.push_back(r.template values<Scalar>(shape));
  }
  if (r.pos != bytes.size()) {
    throw ParseError(ParseErrorKind::TrailingBytes,
                     "checkpoint: " + std::to_string(bytes.size() - r.pos) + " unexpected trailing bytes");
  }
  return c;
}

template <typename Scalar>
std::string checkpoint_manifest(const Checkpoint<Scalar>& c) {
  std::ostringstream os;
  char fp[17];
  std::snprintf(fp, sizeof(fp), "%016llx", static_cast<unsigned long long>(c.fingerprint));
  Index total = 0;
  for (const auto& v : c.values) total += v.size();
  os << "format = siam-checkpoint\n"
     << "version = " << kCheckpointVersion << "\n"
     << "fingerprint = " << fp << "\n"
     << "dtype = " << (dtype_code<Scalar>() == 1 ? "float32" : "float64") << "\n"
     << "step = " << c.step << "\n"
     << "epoch = " << c.epoch << "\n"
     << "parameters = " << c.values.size() << "\n"
     << "values = " << total << "\n\n";
  for (std::size_t i = 0; i < c.values.size(); ++i) os << c.names[i] << " " << to_string(c.values[i].shape()) << "\n";
  os << "\n" << c.config_text;
  return os.str();
}

template <typename Scalar>
void save_checkpoint(const std::string& path, const Checkpoint<Scalar>& c) {
  write_file(path, serialize_checkpoint(c));
  const std::string manifest = checkpoint_manifest(c);
  write_file(path + ".manifest",
             std::span(reinterpret_cast<const std::uint8_t*>(manifest.data()), manifest.size()));
}

template <typename Scalar>
Checkpoint<Scalar> load_checkpoint(const std::string& path) {
  return parse_checkpoint<Scalar>(read_file(path));
}

template <typename Scalar>
void restore_parameters(SiamModel<Scalar>& model, const Checkpoint<Scalar>& c) {
  const std::uint64_t expected = fingerprint(model.config());
  if (c.fingerprint != expected) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "checkpoint fingerprint %016llx does not match config fingerprint %016llx",
                  static_cast<unsigned long long>(c.fingerprint), static_cast<unsigned long long>(expected));
    throw ConfigError(buf);
  }
  auto& params = model.params();
  if (c.values.size() != params.size()) throw ConfigError("checkpoint parameter count differs from the model");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (c.names[i] != params[i].name || c.values[i].shape() != params[i].value.shape()) {
      throw ConfigError("checkpoint parameter '" + c.names[i] + "' does not match model parameter '" + params[i].name + "'");
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) params[i].value = c.values[i].detached();
}

// ------------------------------------------------------------------ log records

namespace {

std::string shortest(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

}  // namespace

std::string format_log_record(const LogRecord& r) {
  char wall[32];
  std::snprintf(wall, sizeof(wall), "%.3f", r.wall_ms);
  return std::to_string(r.step) + ", " + shortest(r.lr) + ", " + shortest(r.loss) + ", " + wall;
}

LogRecord parse_log_record(const std::string& line) {
  LogRecord r;
  std::vector<std::string> fields;
  std::stringstream ss(line);
  std::string f;
  while (std::getline(ss, f, ',')) {
    const auto b = f.find_first_not_of(' ');
    fields.push_back(b == std::string::npos ? std::string() : f.substr(b));
  }
  if (fields.size() != 4) throw ParseError(ParseErrorKind::BadExtents, "log record needs 4 fields: '" + line + "'");
  const auto num = [&](const std::string& s, auto& out) {
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    if (ec != std::errc() || p != s.data() + s.size()) {
      throw ParseError(ParseErrorKind::BadExtents, "bad log field '" + s + "'");
    }
  };
  num(fields[0], r.step);
  num(fields[1], r.lr);
  num(fields[2], r.loss);
  num(fields[3], r.wall_ms);
  return r;
}

// ------------------------------------------------------------------ training loop

template <typename Scalar>
std::pair<Tensor<Scalar>, Tensor<Scalar>> gather_batch(const VideoBatch& dataset, const std::vector<Index>& indices,
                                                       Index t_in, Index t_out) {
  const Index t = dataset.dim(1);
  const Index frame = dataset.dim(2) * dataset.dim(3) * dataset.dim(4);
  const auto b = static_cast<Index>(indices.size());
  Tensor<Scalar> x({b, t_in, dataset.dim(2), dataset.dim(3), dataset.dim(4)});
  Tensor<Scalar> y({b, t_out, dataset.dim(2), dataset.dim(3), dataset.dim(4)});
  Scalar* px = x.mutable_data();
  Scalar* py = y.mutable_data();
  for (Index i = 0; i < b; ++i) {
    const Index clip = indices[static_cast<std::size_t>(i)];
    if (clip < 0 || clip >= dataset.dim(0)) throw ShapeError("clip index " + std::to_string(clip) + " out of range");
    const float* src = dataset.data() + clip * t * frame;
    std::copy(src, src + t_in * frame, px + i * t_in * frame);
    std::copy(src + t_in * frame, src + (t_in + t_out) * frame, py + i * t_out * frame);
  }
  return {x, y};
}

template <typename Scalar>
double dataset_l2(const SiamModel<Scalar>& model, const VideoBatch& dataset, Index chunk) {
  const auto& cfg = model.config();
  double sum = 0.0;
  Index count = 0;
  for (Index start = 0; start < dataset.dim(0); start += chunk) {
    std::vector<Index> idx;
    for (Index i = start; i < std::min(start + chunk, dataset.dim(0)); ++i) idx.push_back(i);
    const auto [x, y] = gather_batch<Scalar>(dataset, idx, cfg.t_in, cfg.t_out);
    const auto pred = model.forward(x);
    sum += (pred.array().template cast<double>() - y.array().template cast<double>()).square().sum();
    count += y.size();
  }
  return sum / static_cast<double>(count);
}

template <typename Scalar>
Trainer<Scalar>::Trainer(SiamModel<Scalar>& model, const VideoBatch& dataset, const RunConfig& config)
    : model_(model), dataset_(dataset), config_(config), rng_(config.train.seed) {
  validate(config_.train);
  const auto& m = model_.config();
  const auto& f = m.frame;
  if (dataset.rank() != 5 || dataset.dim(0) < 1 || dataset.dim(1) < m.t_in + m.t_out || dataset.dim(2) != f.channels ||
      dataset.dim(3) != f.height || dataset.dim(4) != f.width) {
    throw ShapeError("training data " + to_string(dataset.shape()) + " does not provide " +
                     std::to_string(m.t_in + m.t_out) + " frames of " + std::to_string(f.channels) + "x" +
                     std::to_string(f.height) + "x" + std::to_string(f.width));
  }
  adam_ = AdamState<Scalar>::zeros_like(model_.params());
  start_epoch();
}

template <typename Scalar>
void Trainer<Scalar>::start_epoch() {
  epoch_rng_ = rng_.state();
  order_.resize(static_cast<std::size_t>(dataset_.dim(0)));
  std::iota(order_.begin(), order_.end(), Index{0});
  for (std::size_t i = order_.size(); i > 1; --i) std::swap(order_[i - 1], order_[rng_.below(i)]);
  cursor_ = 0;
}

template <typename Scalar>
std::vector<Index> Trainer<Scalar>::next_indices(Index count) {
  std::vector<Index> out;
  while (static_cast<Index>(out.size()) < count) {
    if (cursor_ == static_cast<Index>(order_.size())) {
      ++epoch_;
      start_epoch();
    }
    out.push_back(order_[static_cast<std::size_t>(cursor_++)]);
  }
  return out;
}

template <typename Scalar>
void Trainer<Scalar>::resume(const Checkpoint<Scalar>& c) {
  restore_parameters(model_, c);
  if (c.adam.m.size() != model_.params().size()) throw ConfigError("checkpoint optimizer state does not match the model");
  adam_ = c.adam;
  step_ = c.step;
  epoch_ = c.epoch;
  rng_ = Rng::from_state(c.epoch_rng);
  start_epoch();
  cursor_ = step_ * config_.train.batch_size - epoch_ * dataset_.dim(0);
  if (cursor_ < 0 || cursor_ > dataset_.dim(0)) throw ConfigError("checkpoint shuffle position does not fit this dataset");
}

template <typename Scalar>
LogRecord Trainer<Scalar>::step() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto& m = model_.config();
  const double lr = scheduled_lr(config_.train, step_);
  const auto [x, y] = gather_batch<Scalar>(dataset_, next_indices(config_.train.batch_size), m.t_in, m.t_out);
  Tape<Scalar> tape;
  const auto loss = l2_loss(model_.forward(x, &tape), y);
  const double value = static_cast<double>(loss.item());
  if (!std::isfinite(value)) throw NumericError("non-finite loss at step " + std::to_string(step_));
  auto grads = tape.backward(loss);
  if (config_.train.grad_clip) clip_gradients(grads, *config_.train.grad_clip);
  adam_step(model_.params(), grads, adam_, config_.train, lr);
  const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return {step_++, lr, value, ms};
}

template <typename Scalar>
Checkpoint<Scalar> Trainer<Scalar>::checkpoint() const {
  Checkpoint<Scalar> c;
  c.fingerprint = fingerprint(model_.config());
  c.step = step_;
  c.epoch = epoch_;
  c.epoch_rng = epoch_rng_;
  RunConfig rc = config_;
  rc.model = model_.config();
  c.config_text = print_run_config(rc);
  for (const auto& p : model_.params()) {
    c.names.push_back(p.name);
    c.values.push_back(p.value.detached());
  }
  c.adam = adam_;
  return c;
}

template <typename Scalar>
TrainResult train_run(SiamModel<Scalar>& model, const VideoBatch& dataset, const RunConfig& config,
                      const TrainOptions& options) {
  Trainer<Scalar> trainer(model, dataset, config);
  if (options.resume_path) trainer.resume(load_checkpoint<Scalar>(*options.resume_path));

  std::ofstream log;
  const bool to_disk = !options.out_dir.empty();
  if (to_disk) {
    std::filesystem::create_directories(options.out_dir);
    const auto mode = options.resume_path ? std::ios::app : std::ios::trunc;
    log.open(options.out_dir + "/train.log", std::ios::out | mode);
    if (!log) throw ParseError(ParseErrorKind::Io, "cannot write " + options.out_dir + "/train.log");
    if (!options.resume_path) log << "# step, lr, loss, wall_ms\n";
  }
  const auto emit = [&](const LogRecord& r) {
    if (to_disk) log << format_log_record(r) << "\n" << std::flush;
    if (options.on_record) options.on_record(r);
  };

  TrainResult result;
  const auto& tc = config.train;
  while (trainer.current_step() < tc.max_steps) {
    const LogRecord r = trainer.step();
    result.log.push_back(r);
    if (r.step % tc.log_every == 0 || r.step + 1 == tc.max_steps) emit(r);
    if (to_disk && tc.checkpoint_every > 0 && trainer.current_step() % tc.checkpoint_every == 0 &&
        trainer.current_step() < tc.max_steps) {
      char name[32];
      std::snprintf(name, sizeof(name), "/step-%06lld.ckpt", static_cast<long long>(trainer.current_step()));
      save_checkpoint(options.out_dir + name, trainer.checkpoint());
    }
  }
  result.final_record = {tc.max_steps, 0.0, dataset_l2(model, dataset), 0.0};
  emit(result.final_record);
  if (to_disk) {
    result.final_checkpoint = options.out_dir + "/final.ckpt";
    save_checkpoint(result.final_checkpoint, trainer.checkpoint());
  }
  return result;
}

#define SIAM_INSTANTIATE_TRAIN(S)                                                                                    \
  template Tensor<S> l2_loss(const Tensor<S>&, const Tensor<S>&);                                                  \
  template struct AdamState<S>;                                                                                    \
  template void adam_step(ParamStore<S>&, const std::map<std::string, Tensor<S>>&, AdamState<S>&,                  \
                          const TrainConfig&, double);                                                             \
  template double clip_gradients(std::map<std::string, Tensor<S>>&, double);                                       \
  template std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint<S>&);                                   \
  template Checkpoint<S> parse_checkpoint(std::span<const std::uint8_t>);                                          \
  template std::string checkpoint_manifest(const Checkpoint<S>&);                                                  \
  template void save_checkpoint(const std::string&, const Checkpoint<S>&);                                         \
  template Checkpoint<S> load_checkpoint(const std::string&);                                                      \
  template void restore_parameters(SiamModel<S>&, const Checkpoint<S>&);                                           \
  template double dataset_l2(const SiamModel<S>&, const VideoBatch&, Index);                                       \
  template std::pair<Tensor<S>, Tensor<S>> gather_batch(const VideoBatch&, const std::vector<Index>&, Index, Index); \
  template class Trainer<S>;                                                                                       \
  template TrainResult train_run(SiamModel<S>&, const VideoBatch&, const RunConfig&, const TrainOptions&);

SIAM_INSTANTIATE_TRAIN(float)
SIAM_INSTANTIATE_TRAIN(double)

}  // namespace siam
