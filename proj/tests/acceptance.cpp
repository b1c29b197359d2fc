// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.
// usage: siam_acceptance [criterion numbers...]

#include <chrono>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <set>
#include <sstream>

#include <unistd.h>

#include "oracles.hpp"
#include "siam/analysis.hpp"
#include "siam/metrics.hpp"
#include "siam/train.hpp"
#include "support.hpp"

using namespace siam;
using namespace siam::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  // Records a failed requirement; the first failure message is kept up front.
  void require(bool ok, const std::string& what) {
    if (ok) return;
    if (pass) detail = what + (detail.empty() ? "" : "; " + detail);
    pass = false;
  }
  void note(const std::string& s) { detail += (detail.empty() ? "" : "; ") + s; }
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

SiamConfig projected_config() {
  SiamConfig c;
  c.t_in = c.t_out = 3;
  c.frame = {1, 16, 16};
  c.latent = {8, 8, 8};
  c.mixer_dims = {12, 15, 16};
  c.n_blocks = 2;
  c.norm_groups = 4;
  c.init_seed = 5;
  return c;
}

// ------------------------------------------------------------------ 1

Outcome gradient_suite() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  double worst_op = 0.0;
  int checked = 0;
  for (const auto& c : op_gradient_cases(77)) {
    for (const auto& r : check_gradients(c.loss, c.inputs, c.names)) {
      o.require(r.passed, c.label + "/" + r.name + fmt(" rel err %.2e", r.max_rel_error));
      worst_op = std::max(worst_op, r.max_rel_error);
      ++checked;
    }
  }
  const auto model = check_model_gradients(preset("gradcheck").model);
  double worst_model = 0.0;
  for (const auto& r : model.results) {
    o.require(r.passed, "model parameter " + r.name + fmt(" rel err %.2e", r.max_rel_error));
    worst_model = std::max(worst_model, r.max_rel_error);
  }
  o.require(model.passed(), "model gradient check did not pass");
  const double secs = seconds_since(t0);
  o.require(secs < 60.0, fmt("took %.1fs", secs));
  o.note(fmt("%d op inputs, worst rel err %.2e; %zu model parameters (init seed %llu, relu margin %.2e), worst %.2e; "
             "%.1fs",
             checked, worst_op, model.results.size(), static_cast<unsigned long long>(model.seed), model.relu_margin,
             worst_model, secs));
  return o;
}

// ------------------------------------------------------------------ 2

Outcome conv_oracle() {
  Outcome o;
  Rng rng(2024);
  int configs = 0, paths = 0;
  double worst = 0.0;
  for (int i = 0; i < 120; ++i) {
    const bool is3d = i % 2 == 1;
    const Case c = draw_case(rng, is3d);
    const auto x = random_tensor<double>(c.input, rng);
    const auto w = random_tensor<double>(c.weight, rng);
    const auto b = random_tensor<double>({c.weight[0]}, rng);
    const auto ref = is3d ? reference::conv3d(x, w, &b, c.opt) : reference::conv2d(x, w, &b, to2d(c.opt));
    ++configs;
    for (ConvPath path : {ConvPath::Auto, ConvPath::Depthwise, ConvPath::Pointwise, ConvPath::Im2col}) {
      Tensor<double> out;
      try {
        out = is3d ? conv3d(x, w, &b, c.opt, path) : conv2d(x, w, &b, to2d(c.opt), path);
      } catch (const ShapeError&) {
        continue;
      }
      const double d = max_abs_diff(out, ref);
      worst = std::max(worst, d);
      o.require(d <= 1e-12, "input " + to_string(c.input) + " weight " + to_string(c.weight) + fmt(" diff %.2e", d));
      ++paths;
    }
  }
  o.require(configs >= 50, "too few configurations");
  o.note(fmt("%d configurations (conv2d and conv3d), %d path evaluations, max abs diff %.2e", configs, paths, worst));
  return o;
}

// ------------------------------------------------------------------ 3

Outcome residual_identities() {
  Outcome o;
  auto native = preset("gradcheck").model;
  native.init_seed = 9;
  int checks = 0;
  for (const auto& cfg : {projected_config(), native}) {
    Rng rng(3);
    const auto z = random_tensor<double>({2, cfg.t_in, cfg.latent.channels, cfg.latent.height, cfg.latent.width}, rng);
    for (MixerKind kind : {MixerKind::Spatial, MixerKind::Spatiotemporal, MixerKind::Temporal}) {
      SiamModel<double> model(cfg);
      model.apply_identity_recipe(0, kind);
      const auto& mixer = *model.blocks()[0].mixers[static_cast<std::size_t>(kind)];
      const auto out = model.mix(model.bind(), mixer, z);
      const double d = max_abs_diff(out, z);
      o.require(d <= 1e-12, to_string(kind) + fmt(" mixer (width %lld) deviates by %.2e",
                                                  static_cast<long long>(cfg.dim(kind)), d));
      ++checks;
    }
    SiamModel<double> model(cfg);
    for (MixerKind kind : {MixerKind::Spatial, MixerKind::Spatiotemporal, MixerKind::Temporal}) {
      model.apply_identity_recipe(0, kind);
    }
    o.require(bitwise_equal(model.block(model.bind(), 0, z), z), "zeroed DaMi block is not the identity");
    ++checks;
  }
  auto empty_cfg = projected_config();
  empty_cfg.n_blocks = 0;
  SiamModel<double> empty(empty_cfg);
  Rng rng(4);
  const auto z = random_tensor<double>({1, 3, 8, 8, 8}, rng);
  o.require(bitwise_equal(empty.translate(empty.bind(), z), z), "N = 0 translator moves data");
  o.note(fmt("%d mixer/block identities on projected and native widths, plus the empty translator", checks));
  return o;
}

// ------------------------------------------------------------------ 4

Outcome shape_contracts() {
  Outcome o;
  for (const std::string name : {"mmnist", "taxibj", "weatherbench", "human36m"}) {
    const auto cfg = preset(name).model;
    SiamModel<float> model(cfg);
    Rng rng(1);
    const auto x = random_tensor<float>({1, cfg.t_in, cfg.frame.channels, cfg.frame.height, cfg.frame.width}, rng, 0, 1);
    const auto p = model.bind();
    const auto z = model.encode(p, x);
    const Shape latent{1, cfg.t_in, cfg.latent.channels, cfg.latent.height, cfg.latent.width};
    const auto y = model.decode(p, model.translate(p, z));
    const Shape output{1, cfg.t_out, cfg.frame.channels, cfg.frame.height, cfg.frame.width};
    o.require(z.shape() == latent, name + " latent " + to_string(z.shape()) + " != " + to_string(latent));
    o.require(y.shape() == output, name + " output " + to_string(y.shape()) + " != " + to_string(output));
    o.note(name + " latent " + to_string(Shape(z.shape().begin() + 1, z.shape().end())) + " output " +
           to_string(Shape(y.shape().begin() + 1, y.shape().end())));
  }
  return o;
}

// ------------------------------------------------------------------ 5

Index checkpoint_values(const SiamModel<float>& model) {
  Checkpoint<float> ckpt;
  ckpt.fingerprint = fingerprint(model.config());
  for (const auto& p : model.params()) {
    ckpt.names.push_back(p.name);
    ckpt.values.push_back(p.value);
  }
  ckpt.adam = AdamState<float>::zeros_like(model.params());
  Index n = 0;
  for (const auto& v : parse_checkpoint<float>(serialize_checkpoint(ckpt)).values) n += v.size();
  return n;
}

Outcome complexity() {
  Outcome o;
  for (const std::string name : {"mmnist", "taxibj", "micro", "ablation-a"}) {
    SiamModel<float> model(preset(name).model);
    const auto report = count_params(model);
    o.require(report.total_params == checkpoint_values(model), name + ": counter and checkpoint disagree");
  }
  SiamModel<float> mm(preset("mmnist").model);
  const auto r = count_flops(mm, {1, 10, 1, 64, 64});
  const auto p = within_window(static_cast<double>(r.total_params) / 1e6, 34.6);
  const auto f = within_window(r.total_flops() / 1e9, 16.4);
  o.require(p.within, fmt("mmnist params %.3fM outside 34.6M +-25%%", p.value));
  o.require(f.within, fmt("mmnist FLOPs %.3fG outside 16.4G +-25%%", f.value));
  int toys = 0;
  for (const auto& cfg : toy_configs()) {
    SiamModel<double> model(cfg);
    const auto oracle = closed_form(cfg, 1);
    const auto got = count_flops(model, {1, cfg.t_in, cfg.frame.channels, cfg.frame.height, cfg.frame.width});
    o.require(got.total_params == oracle.params && got.total_macs == oracle.macs &&
                  got.total_elementwise == oracle.elementwise,
              cfg.name + " differs from the closed form");
    ++toys;
  }
  o.note(fmt("counts equal checkpoint values; mmnist params %.3fM (%+.1f%% vs 34.6M), FLOPs %.3fG (%+.1f%% vs 16.4G); "
             "%d toy configs equal the closed form",
             p.value, 100 * p.delta, f.value, 100 * f.delta, toys));
  o.note("assumption: " + r.width_assumption);
  return o;
}

// ------------------------------------------------------------------ 6

Outcome learnability() {
  Outcome o;
  auto run = preset("micro");
  const auto data = generate_moving(run.data, digits_for(run.data), 8);
  SiamModel<float> model(run.model);
  const auto t0 = std::chrono::steady_clock::now();
  const auto result = train_run(model, data, run);
  const double secs = seconds_since(t0);
  const double first = result.log.front().loss;
  const double last = result.final_record.loss;
  o.require(result.log.size() == 2000, "run did not take 2000 steps");
  o.require(last < first / 10.0, fmt("final loss %.4g is not below 10%% of %.4g", last, first));
  o.require(secs < 1800.0, fmt("took %.0fs", secs));
  o.note(fmt("step-0 loss %.5f, loss after 2000 steps %.5f (ratio %.4f); %.0fs", first, last, last / first, secs));
  return o;
}

// ------------------------------------------------------------------ 7

Outcome ablations() {
  Outcome o;
  const auto fwd_bwd = [](const SiamConfig& cfg) {
    SiamModel<float> model(cfg);
    Rng rng(5);
    const auto x = random_tensor<float>({1, cfg.t_in, cfg.frame.channels, cfg.frame.height, cfg.frame.width}, rng, 0, 1);
    const auto y = random_tensor<float>({1, cfg.t_out, cfg.frame.channels, cfg.frame.height, cfg.frame.width}, rng, 0, 1);
    Tape<float> tape;
    const auto grads = tape.backward(l2_loss(model.forward(x, &tape), y));
    bool finite = grads.size() == model.params().size();
    for (const auto& [name, g] : grads) finite = finite && g.all_finite();
    return std::pair{finite, model.params().value_count()};
  };
  std::map<std::string, Index> params;
  for (const char* row : {"a", "b", "c", "d", "e", "f", "g"}) {
    const auto [ok, count] = fwd_bwd(preset(std::string("ablation-") + row).model);
    o.require(ok, std::string("ablation-") + row + " forward/backward failed");
    params[row] = count;
  }
  std::array<MixerKind, 3> order{MixerKind::Spatial, MixerKind::Spatiotemporal, MixerKind::Temporal};
  std::sort(order.begin(), order.end());
  int orders = 0;
  do {
    auto cfg = preset("mmnist").model;
    cfg.mixer_order = order;
    o.require(fwd_bwd(cfg).first, "serial order forward/backward failed");
    ++orders;
  } while (std::next_permutation(order.begin(), order.end()));
  o.require(orders == 6, "expected 6 serial orders");
  for (const char* dual : {"d", "e", "f"}) {
    o.require(params["g"] > params[dual], std::string("triple variant not larger than ") + dual);
  }
  o.note(fmt("7 variants and %d orders ran forward+backward; params (M) a %.3f b %.3f c %.3f d %.3f e %.3f f %.3f g %.3f",
             orders, params["a"] / 1e6, params["b"] / 1e6, params["c"] / 1e6, params["d"] / 1e6, params["e"] / 1e6,
             params["f"] / 1e6, params["g"] / 1e6));
  return o;
}

// ------------------------------------------------------------------ 8

Outcome generator_physics() {
  Outcome o;
  MovingConfig cfg;
  cfg.seed = 20240;
  const auto digits = digits_for(cfg);
  MovingTrace trace;
  const auto first = generate_moving(cfg, digits, 1000, &trace);
  const Index max_row = cfg.canvas_height - kGlyphSize, max_col = cfg.canvas_width - kGlyphSize;
  Index outside = 0;
  for (const auto& p : trace.placements) outside += (p.row < 0 || p.row > max_row || p.col < 0 || p.col > max_col);
  double worst = 0.0;
  for (const auto& b : trace.bounces) {
    worst = std::max(worst, std::abs(std::hypot(b.velocity_before[0], b.velocity_before[1]) -
                                     std::hypot(b.velocity_after[0], b.velocity_after[1])));
  }
  o.require(outside == 0, fmt("%lld placements off the canvas", static_cast<long long>(outside)));
  o.require(trace.placements.size() == 1000u * 20u * 2u, "placement trace incomplete");
  o.require(!trace.bounces.empty() && worst <= 1e-9, fmt("speed changes by %.2e at a bounce", worst));
  o.require(first.array().minCoeff() >= 0.0f && first.array().maxCoeff() <= 1.0f, "pixel values outside [0, 1]");
  const auto second = generate_moving(cfg, digits, 1000);
  o.require(std::memcmp(first.data(), second.data(), static_cast<std::size_t>(first.size()) * sizeof(float)) == 0,
            "second run differs");
  o.note(fmt("1000 sequences, %zu placements all on canvas, %zu bounces with max speed change %.1e, reruns bitwise equal",
             trace.placements.size(), trace.bounces.size(), worst));
  return o;
}

// ------------------------------------------------------------------ 9

Outcome parsers() {
  Outcome o;
  const std::vector<std::uint8_t> idx{0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 2, 0, 128, 255, 64};
  const auto a = parse_idx(idx);
  o.require(a.shape == Shape{1, 2, 2} && a.values == std::vector<double>{0, 128, 255, 64}, "IDX decode");
  o.require(rescale_unit(a) == std::vector<double>{0.0, 128.0 / 255.0, 1.0, 64.0 / 255.0}, "IDX rescale");
  o.require(write_idx(a) == idx, "IDX round trip");
  const IdxArray f64{IdxType::F64, {3}, {0.1, -2.5e300, 5e-324}};
  o.require(parse_idx(write_idx(f64)).values == f64.values, "IDX f64 round trip");

  Tensor<float> clip({1, 2, 1, 2, 3});
  for (Index i = 0; i < clip.size(); ++i) clip.mutable_data()[i] = static_cast<float>(i) / 11.0f;
  const auto svt = write_svt(clip);
  o.require(svt.size() == 28 + 48, "SVT size");
  o.require(bitwise_equal(parse_svt(svt), clip) && write_svt(parse_svt(svt)) == svt, "SVT round trip");

  Rng rng(31337);
  Index structured = 0, accepted = 0, other = 0;
  for (int i = 0; i < 10000; ++i) {
    std::vector<std::uint8_t> bytes;
    if (i % 2 == 0) {
      bytes.resize(rng.below(96));
      for (auto& b : bytes) b = static_cast<std::uint8_t>(rng.below(256));
    } else {
      bytes = (i % 4 == 1) ? idx : svt;
      const auto flips = 1 + rng.below(4);
      for (std::uint64_t k = 0; k < flips; ++k) bytes[rng.below(bytes.size())] = static_cast<std::uint8_t>(rng.below(256));
      bytes.resize(rng.below(bytes.size() + 8));
    }
    for (int which = 0; which < 2; ++which) {
      try {
        which == 0 ? (void)parse_idx(bytes) : (void)parse_svt(bytes);
        ++accepted;
      } catch (const ParseError&) {
        ++structured;
      } catch (...) {
        ++other;
      }
    }
  }
  o.require(other == 0, fmt("%lld unstructured exceptions", static_cast<long long>(other)));
  o.note(fmt("handcrafted IDX/SVT vectors round-trip bit-exact; 10000 fuzz inputs x 2 parsers: %lld structured errors, "
             "%lld valid parses, 0 crashes",
             static_cast<long long>(structured), static_cast<long long>(accepted)));
  return o;
}

// ------------------------------------------------------------------ 10

Outcome metrics() {
  Outcome o;
  Rng rng(10);
  const auto x = random_tensor<double>({1, 64, 64}, rng, 0.0, 1.0);
  const double self = ssim(x, x).value;
  o.require(std::abs(self - 1.0) <= 1e-9, fmt("ssim(x, x) = %.12f", self));
  const auto zeros = Tensor<double>::zeros({1, 1, 1, 64, 64});
  const auto ones = Tensor<double>::full({1, 1, 1, 64, 64}, 1.0);
  const double mse = mse_framewise(zeros, ones).mean, mae = mae_framewise(zeros, ones).mean;
  o.require(mse == 4096.0 && mae == 4096.0, fmt("sum convention gives %.6f / %.6f", mse, mae));

  const auto target = random_tensor<double>({2, 4, 1, 64, 64}, rng, 0.2, 0.8);
  const auto noise = random_tensor<double>({2, 4, 1, 64, 64}, rng, -1.0, 1.0);
  double last_mse = 0.0, last_mae = 0.0, last_ssim = 1.0;
  std::string probe;
  for (double amp : {0.02, 0.05, 0.1, 0.15, 0.2}) {
    Tensor<double> pred(target.shape());
    pred.mutable_values() = target.array() + amp * noise.array();
    const auto r = evaluate(pred, target);
    o.require(r.mse.mean > last_mse && r.mae.mean > last_mae && r.ssim.mean < last_ssim,
              fmt("monotonicity broken at amplitude %.2f", amp));
    last_mse = r.mse.mean;
    last_mae = r.mae.mean;
    last_ssim = r.ssim.mean;
    probe += fmt(" %.2f:%.4f", amp, r.ssim.mean);
  }
  o.note(fmt("ssim(x, x) - 1 = %.1e; MSE = MAE = %.1f on the 0 vs 1 frame; ssim by noise amplitude", self - 1.0, mse) +
         probe);
  return o;
}

// ------------------------------------------------------------------ 11

Outcome reproducibility() {
  Outcome o;
  RunConfig run;
  run.model.name = "resume";
  run.model.t_in = run.model.t_out = 3;
  run.model.frame = {1, 32, 32};
  run.model.latent = {8, 8, 8};
  run.model.mixer_dims = {8, 8, 24};
  run.model.n_blocks = 1;
  run.model.norm_groups = 4;
  run.train.batch_size = 2;
  run.train.max_steps = 8;
  run.train.checkpoint_every = 4;
  run.train.seed = 3;
  run.data.canvas_height = run.data.canvas_width = 32;
  run.data.frames = 6;
  const auto data = generate_moving(run.data, digits_for(run.data), 5);

  const auto root = fs::temp_directory_path() / ("siam-acceptance-" + std::to_string(::getpid()));
  fs::remove_all(root);
  SiamModel<float> a(run.model);
  const auto full = train_run(a, data, run, {(root / "full").string(), std::nullopt, nullptr});
  SiamModel<float> b(run.model);
  const auto tail =
      train_run(b, data, run, {(root / "resumed").string(), (root / "full" / "step-000004.ckpt").string(), nullptr});
  bool same = tail.log.size() == 4;
  for (std::size_t i = 0; same && i < 4; ++i) {
    same = tail.log[i].step == full.log[i + 4].step && tail.log[i].loss == full.log[i + 4].loss &&
           tail.log[i].lr == full.log[i + 4].lr;
  }
  o.require(same, "resumed loss trace differs");
  o.require(read_file(tail.final_checkpoint) == read_file(full.final_checkpoint), "final checkpoints differ");
  fs::remove_all(root);

  SiamModel<float> micro(preset("micro").model);
  Rng rng(12);
  const auto clip = random_tensor<float>({2, 4, 1, 64, 64}, rng, 0.0, 1.0);
  const auto r1 = micro.rollout(clip, 12);
  const auto r2 = micro.rollout(clip, 12);
  o.require(bitwise_equal(r1, r2), "rollout is not deterministic");
  o.note("resume at step 4 of 8 reproduces the loss trace and the final checkpoint byte for byte; 12-frame rollout "
         "repeats bitwise");
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient suite", gradient_suite},       {"convolution oracle", conv_oracle},
      {"residual identities", residual_identities}, {"shape contracts", shape_contracts},
      {"complexity accounting", complexity},    {"learnability", learnability},
      {"ablation harness", ablations},          {"generator physics", generator_physics},
      {"parsers", parsers},                     {"metrics", metrics},
      {"reproducibility", reproducibility}};
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int number = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(number)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    failed += !o.pass;
    std::printf("criterion %2d %s  %s (%.1fs): %s\n", number, o.pass ? "PASS" : "FAIL", criteria[i].first.c_str(),
                seconds_since(t0), o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d criterion(s) failed\n", failed);
  return failed == 0 ? 0 : 1;
}
