#include "siam/model.hpp"

#include <algorithm>
#include <cstring>

namespace siam {

namespace {

Index kernel_volume(const Layer& l) { return l.kernel[0] * l.kernel[1] * l.kernel[2]; }

const char* kind_tag(MixerKind kind) {
  switch (kind) {
    case MixerKind::Spatial: return "spatial";
    case MixerKind::Spatiotemporal: return "spatiotemporal";
    case MixerKind::Temporal: return "temporal";
  }
  return "?";
}

}  // namespace

template <typename Scalar>
SiamModel<Scalar>::SiamModel(const SiamConfig& config) : config_(config) {
  validate(config_);
  Rng rng(config_.init_seed);
  const Index c = config_.frame.channels;
  const Index cl = config_.latent.channels;
  const Index stages = config_.stages();

  encoder_.emplace_back(conv2d_layer("encoder.stem.conv", c, cl, 3, 1, 1, 1, rng), norm_layer("encoder.stem.norm", cl, rng));
  for (Index s = 0; s < stages; ++s) {
    const std::string path = "encoder.down" + std::to_string(s);
    encoder_.emplace_back(conv2d_layer(path + ".conv", cl, cl, 3, 2, 1, 1, rng), norm_layer(path + ".norm", cl, rng));
  }

  blocks_.resize(static_cast<std::size_t>(config_.n_blocks));
  for (Index b = 0; b < config_.n_blocks; ++b) {
    for (MixerKind kind : config_.mixer_order) {
      if (!config_.enabled(kind)) continue;
      blocks_[static_cast<std::size_t>(b)].mixers[static_cast<std::size_t>(kind)] =
          build_mixer("blocks." + std::to_string(b) + "." + kind_tag(kind), kind, rng);
    }
  }

  for (Index s = 0; s < stages; ++s) {
    const std::string path = "decoder.up" + std::to_string(s);
    decoder_.emplace_back(conv2d_layer(path + ".conv", cl, cl, 3, 1, 1, 1, rng), norm_layer(path + ".norm", cl, rng));
  }
  decoder_.emplace_back(conv2d_layer("decoder.refine.conv", cl, cl, 3, 1, 1, 1, rng),
                        norm_layer("decoder.refine.norm", cl, rng));
  head_ = conv2d_layer("decoder.head", cl, c, 1, 1, 1, 1, rng);
}

template <typename Scalar>
Layer SiamModel<Scalar>::conv2d_layer(const std::string& path, Index in, Index out, Index k, Index stride,
                                      Index dilation, Index groups, Rng& rng) {
  Layer l;
  l.kind = LayerKind::Conv2d;
  l.path = path;
  l.in = in;
  l.out = out;
  l.groups = groups;
  l.kernel = {1, k, k};
  l.stride = {1, stride, stride};
  l.dilation = {1, dilation, dilation};
  const Index pad = (k == 1) ? 0 : same_padding(k, dilation);
  l.padding = {0, pad, pad};
  const Index fan_in = (in / groups) * k * k;
  l.weight = params_.add(path + ".weight", {out, in / groups, k, k}, Init::FanInUniform, fan_in, rng);
  l.bias = params_.add(path + ".bias", {out}, Init::FanInUniform, fan_in, rng);
  return l;
}

template <typename Scalar>
Layer SiamModel<Scalar>::conv3d_layer(const std::string& path, Index channels, const Kernel3& k, Rng& rng) {
  Layer l;
  l.kind = LayerKind::Conv3d;
  l.path = path;
  l.in = channels;
  l.out = channels;
  l.groups = channels;
  l.kernel = k;
  for (int a = 0; a < 3; ++a) l.padding[static_cast<std::size_t>(a)] = same_padding(k[static_cast<std::size_t>(a)], 1);
  const Index fan_in = k[0] * k[1] * k[2];
  l.weight = params_.add(path + ".weight", {channels, 1, k[0], k[1], k[2]}, Init::FanInUniform, fan_in, rng);
  l.bias = params_.add(path + ".bias", {channels}, Init::FanInUniform, fan_in, rng);
  return l;
}

template <typename Scalar>
Layer SiamModel<Scalar>::linear_layer(const std::string& path, Index in, Index out, Rng& rng) {
  Layer l;
  l.kind = LayerKind::Linear;
  l.path = path;
  l.in = in;
  l.out = out;
  l.weight = params_.add(path + ".weight", {out, in}, Init::FanInUniform, in, rng);
  l.bias = params_.add(path + ".bias", {out}, Init::FanInUniform, in, rng);
  return l;
}

template <typename Scalar>
Layer SiamModel<Scalar>::norm_layer(const std::string& path, Index channels, Rng& rng) {
  Layer l;
  l.kind = LayerKind::GroupNorm;
  l.path = path;
  l.in = channels;
  l.out = channels;
  l.groups = config_.norm_groups;
  l.weight = params_.add(path + ".gamma", {channels}, Init::Ones, 0, rng);
  l.bias = params_.add(path + ".beta", {channels}, Init::Zeros, 0, rng);
  return l;
}

template <typename Scalar>
Mixer SiamModel<Scalar>::build_mixer(const std::string& path, MixerKind kind, Rng& rng) {
  Mixer m;
  m.kind = kind;
  m.path = path;
  m.width = config_.dim(kind);
  const Index cl = config_.latent.channels;
  if (kind == MixerKind::Temporal) {
    const Index native = config_.stacked_channels();
    if (m.width != native) m.proj_in = linear_layer(path + ".proj_in", native, m.width, rng);
    m.core.push_back(linear_layer(path + ".fc1", m.width, config_.expansion_ratio * m.width, rng));
    m.core.push_back(linear_layer(path + ".fc2", config_.expansion_ratio * m.width, m.width, rng));
    if (m.width != native) m.proj_out = linear_layer(path + ".proj_out", m.width, native, rng);
    m.norm = norm_layer(path + ".norm", native, rng);
    return m;
  }
  if (m.width != cl) m.proj_in = conv2d_layer(path + ".proj_in", cl, m.width, 1, 1, 1, 1, rng);
  if (kind == MixerKind::Spatial) {
    const auto [k_dw, k_dwd, dil] = config_.spatial_kernels;
    m.core.push_back(conv2d_layer(path + ".dw", m.width, m.width, k_dw, 1, 1, m.width, rng));
    m.core.push_back(conv2d_layer(path + ".dwd", m.width, m.width, k_dwd, 1, dil, m.width, rng));
    m.core.push_back(conv2d_layer(path + ".pw", m.width, m.width, 1, 1, 1, 1, rng));
  } else {
    const Index q = m.width / 5;
    m.split = {q, q, q, q, m.width - 4 * q};
    for (std::size_t i = 0; i < 4; ++i) {
      m.core.push_back(conv3d_layer(path + ".branch" + std::to_string(i), q, config_.incep_branches[i], rng));
    }
  }
  if (m.width != cl) m.proj_out = conv2d_layer(path + ".proj_out", m.width, cl, 1, 1, 1, 1, rng);
  m.norm = norm_layer(path + ".norm", cl, rng);
  return m;
}

template <typename Scalar>
Tensor<Scalar> SiamModel<Scalar>::apply(const Bound& p, const Layer& l, const T& x) const {
  const T& w = p[static_cast<std::size_t>(l.weight)];
  const T& b = p[static_cast<std::size_t>(l.bias)];
  switch (l.kind) {
    case LayerKind::Conv2d:
      return conv2d(x, w, &b,
                    Conv2dOptions{{l.stride[1], l.stride[2]}, {l.padding[1], l.padding[2]},
                                  {l.dilation[1], l.dilation[2]}, l.groups});
    case LayerKind::Conv3d:
      return conv3d(x, w, &b, Conv3dOptions{l.stride, l.padding, l.dilation, l.groups});
    case LayerKind::Linear:
      return linear(x, w, &b);
    case LayerKind::GroupNorm:
      return group_norm(x, l.groups, w, b, config_.norm_eps);
  }
  throw ConfigError("unknown layer kind");
}

template <typename Scalar>
Tensor<Scalar> SiamModel<Scalar>::unit(const Bound& p, const Layer& conv, const Layer& norm, const T& x) const {
  return relu(apply(p, norm, apply(p, conv, x)));
}

template <typename Scalar>
Tensor<Scalar> SiamModel<Scalar>::encode(const Bound& p, const T& video) const {
  const auto& f = config_.frame;
  if (video.rank() != 5 || video.dim(1) != config_.t_in || video.dim(2) != f.channels || video.dim(3) != f.height ||
      video.dim(4) != f.width) {
    throw ShapeError("encoder expects [B, " + std::to_string(config_.t_in) + ", " + std::to_string(f.channels) + ", " +
                     std::to_string(f.height) + ", " + std::to_string(f.width) + "], got " + to_string(video.shape()));
  }
  const Index b = video.dim(0);
  const Index t = video.dim(1);
  T h = reshape(video, {b * t, f.channels, f.height, f.width});
  for (const auto& [conv, norm] : encoder_) h = unit(p, conv, norm, h);
  return reshape(h, {b, t, h.dim(1), h.dim(2), h.dim(3)});
}

template <typename Scalar>
Tensor<Scalar> SiamModel<Scalar>::mix(const Bound& p, const Mixer& m, const T& z) const {
  const Index b = z.dim(0), t = z.dim(1), c = z.dim(2), hh = z.dim(3), ww = z.dim(4);
  if (m.kind == MixerKind::Temporal) {
    const T h = reshape(z, {b, t * c, hh, ww});
    T y = permute(h, {0, 2, 3, 1});
    if (m.proj_in) y = apply(p, *m.proj_in, y);
    y = apply(p, m.core[1], relu(apply(p, m.core[0], y)));
    if (m.proj_out) y = apply(p, *m.proj_out, y);
    y = relu(apply(p, m.norm, permute(y, {0, 3, 1, 2})));
    return reshape(add(h, y), {b, t, c, hh, ww});
  }
  const T h = reshape(z, {b * t, c, hh, ww});
  T y = m.proj_in ? apply(p, *m.proj_in, h) : h;
  if (m.kind == MixerKind::Spatial) {
    for (const Layer& l : m.core) y = apply(p, l, y);
  } else {
    const Index d = y.dim(1);
    const T volume = permute(reshape(y, {b, t, d, hh, ww}), {0, 2, 1, 3, 4});
    std::vector<T> parts = split(volume, 1, m.split);
    for (std::size_t i = 0; i < m.core.size(); ++i) parts[i] = apply(p, m.core[i], parts[i]);
    y = reshape(permute(concat(parts, 1), {0, 2, 1, 3, 4}), {b * t, d, hh, ww});
  }
  if (m.proj_out) y = apply(p, *m.proj_out, y);
  y = relu(apply(p, m.norm, y));
  return reshape(add(h, y), {b, t, c, hh, ww});
}

template <typename Scalar>
Tensor<Scalar> SiamModel<Scalar>::block(const Bound& p, Index index, const T& z) const {
  const DaMiBlock& blk = blocks_.at(static_cast<std::size_t>(index));
  T out = z;
  for (MixerKind kind : config_.mixer_order) {
    const auto& m = blk.mixers[static_cast<std::size_t>(kind)];
    if (m) out = mix(p, *m, out);
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> SiamModel<Scalar>::translate(const Bound& p, const T& z) const {
  const auto& l = config_.latent;
  if (z.rank() != 5 || z.dim(1) != config_.t_in || z.dim(2) != l.channels || z.dim(3) != l.height ||
      z.dim(4) != l.width) {
    throw ShapeError("translator expects latent [B, " + std::to_string(config_.t_in) + ", " +
                     std::to_string(l.channels) + ", " + std::to_string(l.height) + ", " + std::to_string(l.width) +
                     "], got " + to_string(z.shape()));
  }
  T out = z;
  for (Index i = 0; i < config_.n_blocks; ++i) out = block(p, i, out);
  return out;
}

template <typename Scalar>
Tensor<Scalar> SiamModel<Scalar>::decode(const Bound& p, const T& z) const {
  const Index b = z.dim(0), t = z.dim(1);
  T h = reshape(z, {b * t, z.dim(2), z.dim(3), z.dim(4)});
  for (std::size_t s = 0; s < decoder_.size(); ++s) {
    if (s + 1 < decoder_.size()) h = upsample_nearest(h, 2);
    h = unit(p, decoder_[s].first, decoder_[s].second, h);
  }
  h = apply(p, head_, h);
  return reshape(h, {b, t, h.dim(1), h.dim(2), h.dim(3)});
}

template <typename Scalar>
Tensor<Scalar> SiamModel<Scalar>::forward(const T& video, Tape<Scalar>* tape) const {
  ++forward_calls_;
  const Bound p = bind(tape);
  return decode(p, translate(p, encode(p, video)));
}

template <typename Scalar>
Tensor<Scalar> slice_time(const Tensor<Scalar>& video, Index start, Index count) {
  if (video.rank() < 2 || start < 0 || count < 1 || start + count > video.dim(1)) {
    throw ShapeError("time slice [" + std::to_string(start) + ", " + std::to_string(start + count) +
                     ") out of range for " + to_string(video.shape()));
  }
  Shape shape = video.shape();
  const Index frame = numel(shape) / (shape[0] * shape[1]);
  const Index t = shape[1];
  shape[1] = count;
  Tensor<Scalar> out(shape);
  Scalar* dst = out.mutable_data();
  for (Index b = 0; b < shape[0]; ++b) {
    std::memcpy(dst + b * count * frame, video.data() + (b * t + start) * frame,
                static_cast<std::size_t>(count * frame) * sizeof(Scalar));
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> SiamModel<Scalar>::rollout(const T& video, Index horizon) const {
  if (horizon < 1) throw ConfigError("rollout horizon must be >= 1, got " + std::to_string(horizon));
  const Index t_in = config_.t_in;
  if (video.rank() != 5 || video.dim(1) < t_in) {
    throw ShapeError("rollout needs at least " + std::to_string(t_in) + " input frames, got " + to_string(video.shape()));
  }
  T history = slice_time(video.detached(), video.dim(1) - t_in, t_in);
  std::vector<T> predictions;
  Index produced = 0;
  while (produced < horizon) {
    T pred = forward(history).detached();
    pred.mutable_values() = pred.array().max(Scalar(0)).min(Scalar(1));
    produced += pred.dim(1);
    predictions.push_back(pred);
    history = slice_time(concat<Scalar>({history, pred}, 1), pred.dim(1), t_in);
  }
  T all = predictions.size() == 1 ? predictions.front() : concat(predictions, 1);
  return produced == horizon ? all : slice_time(all, 0, horizon);
}

template <typename Scalar>
void SiamModel<Scalar>::apply_identity_recipe(Index block, MixerKind kind) {
  const auto& m = blocks_.at(static_cast<std::size_t>(block)).mixers[static_cast<std::size_t>(kind)];
  if (!m) throw ConfigError(std::string("block ") + std::to_string(block) + " has no " + to_string(kind) + " Mixer");
  const auto zero = [&](const Layer& l) {
    params_[static_cast<std::size_t>(l.weight)].value.mutable_values().setZero();
    params_[static_cast<std::size_t>(l.bias)].value.mutable_values().setZero();
  };
  params_[static_cast<std::size_t>(m->norm.bias)].value.mutable_values().setZero();
  if (m->proj_out) {
    zero(*m->proj_out);
    return;
  }
  if (kind != MixerKind::Spatiotemporal) {
    zero(m->core.back());
    return;
  }
  // The identity branch reaches the norm directly: silence every norm group
  // that sees one of its channels.
  for (const Layer& l : m->core) zero(l);
  auto gamma = params_[static_cast<std::size_t>(m->norm.weight)].value.mutable_values();
  const Index per_group = m->norm.in / m->norm.groups;
  const Index first_identity = m->width - m->split.back();
  for (Index ch = (first_identity / per_group) * per_group; ch < m->norm.in; ++ch) gamma[ch] = Scalar(0);
}

template <typename Scalar>
std::vector<CostRow> SiamModel<Scalar>::cost_rows(Index batch) const {
  std::vector<CostRow> rows;
  const auto count = [&](const Layer& l) {
    return params_[static_cast<std::size_t>(l.weight)].value.size() + params_[static_cast<std::size_t>(l.bias)].value.size();
  };
  // `positions`: output sites per channel across the whole batch.
  const auto layer = [&](const Layer& l, Index positions) {
    CostRow r{l.path, count(l), 0, 0};
    if (l.kind == LayerKind::GroupNorm) {
      r.elementwise = positions * l.out;
    } else if (l.kind == LayerKind::Linear) {
      r.macs = positions * l.out * l.in;
    } else {
      r.macs = positions * l.out * (l.in / l.groups) * kernel_volume(l);
    }
    rows.push_back(r);
  };
  const auto elementwise = [&](const std::string& path, Index elements) { rows.push_back({path, 0, 0, elements}); };

  const Index frames = batch * config_.t_in;
  Index hh = config_.frame.height, ww = config_.frame.width;
  const Index cl = config_.latent.channels;
  for (std::size_t s = 0; s < encoder_.size(); ++s) {
    const auto& [conv, norm] = encoder_[s];
    if (s > 0) {
      hh = conv_output_extent(hh, 3, 2, 1, 1, "height");
      ww = conv_output_extent(ww, 3, 2, 1, 1, "width");
    }
    layer(conv, frames * hh * ww);
    layer(norm, frames * hh * ww);
    elementwise(norm.path + ".relu", frames * hh * ww * cl);
  }

  const Index sites = frames * hh * ww;
  for (const DaMiBlock& blk : blocks_) {
    for (MixerKind kind : config_.mixer_order) {
      const auto& m = blk.mixers[static_cast<std::size_t>(kind)];
      if (!m) continue;
      if (kind == MixerKind::Temporal) {
        const Index locations = batch * hh * ww;
        if (m->proj_in) layer(*m->proj_in, locations);
        layer(m->core[0], locations);
        elementwise(m->core[0].path + ".relu", locations * m->core[0].out);
        layer(m->core[1], locations);
        if (m->proj_out) layer(*m->proj_out, locations);
        layer(m->norm, locations);
      } else {
        if (m->proj_in) layer(*m->proj_in, sites);
        for (const Layer& l : m->core) layer(l, sites);
        if (m->proj_out) layer(*m->proj_out, sites);
        layer(m->norm, sites);
      }
      elementwise(m->path + ".relu", sites * cl);
      elementwise(m->path + ".residual", sites * cl);
    }
  }

  for (std::size_t s = 0; s < decoder_.size(); ++s) {
    const auto& [conv, norm] = decoder_[s];
    if (s + 1 < decoder_.size()) {
      hh *= 2;
      ww *= 2;
    }
    layer(conv, frames * hh * ww);
    layer(norm, frames * hh * ww);
    elementwise(norm.path + ".relu", frames * hh * ww * cl);
  }
  layer(head_, frames * hh * ww);
  return rows;
}

bool ModelGradCheck::passed() const {
  return !results.empty() && std::all_of(results.begin(), results.end(), [](const auto& r) { return r.passed; });
}

ModelGradCheck check_model_gradients(const SiamConfig& config, Index batch, double min_margin, int max_tries,
                                     const GradCheckOptions& options) {
  const Shape clip{batch, config.t_in, config.frame.channels, config.frame.height, config.frame.width};
  for (int attempt = 0; attempt < max_tries; ++attempt) {
    SiamConfig cfg = config;
    cfg.init_seed = config.init_seed + static_cast<std::uint64_t>(attempt);
    SiamModel<double> model(cfg);
    Rng rng(mix_seed(cfg.init_seed, 1));
    Tensor<double> x(clip), target(clip);
    for (Tensor<double>* t : {&x, &target}) {
      double* d = t->mutable_data();
      for (Index i = 0; i < t->size(); ++i) d[i] = rng.uniform();
    }
    std::vector<Tensor<double>> inputs;
    std::vector<std::string> names;
    for (const auto& prm : model.params()) {
      inputs.push_back(prm.value);
      names.push_back(prm.name);
    }
    const LossFunction loss = [&](const std::vector<Tensor<double>>& p) {
      return mean_squared_error(model.decode(p, model.translate(p, model.encode(p, x))), target);
    };
    double margin = 0.0;
    {
      ReluMarginProbe probe;
      loss(inputs);
      margin = probe.margin();
    }
    if (margin < min_margin) continue;
    return {cfg.init_seed, margin, check_gradients(loss, inputs, names, options)};
  }
  throw NumericError("no evaluation point with relu margin >= " + std::to_string(min_margin) + " in " +
                     std::to_string(max_tries) + " seeds");
}

template class SiamModel<float>;
template class SiamModel<double>;
template Tensor<float> slice_time(const Tensor<float>&, Index, Index);
template Tensor<double> slice_time(const Tensor<double>&, Index, Index);

}  // namespace siam
