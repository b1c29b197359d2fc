#include "siam/metrics.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <json.hpp>

namespace siam {

namespace {

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

std::array<double, kWindow> gaussian_taps() {
  std::array<double, kWindow> g{};
  double sum = 0.0;
  for (int i = 0; i < kWindow; ++i) {
    const double d = i - kWindow / 2;
    g[i] = std::exp(-d * d / (2.0 * kSigma * kSigma));
    sum += g[i];
  }
  for (double& v : g) v /= sum;
  return g;
}

template <typename Scalar>
void check_videos(const Tensor<Scalar>& pred, const Tensor<Scalar>& target, const char* what) {
  if (pred.shape() != target.shape()) {
    throw ShapeError(std::string(what) + ": prediction " + to_string(pred.shape()) + " vs target " +
                     to_string(target.shape()));
  }
  if (pred.rank() != 5) throw ShapeError(std::string(what) + ": expected [B, T, C, H, W], got " + to_string(pred.shape()));
}

// Per-frame sums of f(pred - target), averaged over samples.
template <typename Scalar, typename F>
FrameCurve framewise(const Tensor<Scalar>& pred, const Tensor<Scalar>& target, F&& f) {
  const Index b = pred.dim(0), t = pred.dim(1);
  const Index frame = pred.dim(2) * pred.dim(3) * pred.dim(4);
  FrameCurve out;
  out.per_frame.assign(static_cast<std::size_t>(t), 0.0);
  for (Index s = 0; s < b; ++s) {
    for (Index k = 0; k < t; ++k) {
      const Scalar* p = pred.data() + (s * t + k) * frame;
      const Scalar* q = target.data() + (s * t + k) * frame;
      double sum = 0.0;
      for (Index i = 0; i < frame; ++i) sum += f(static_cast<double>(p[i]) - static_cast<double>(q[i]));
      out.per_frame[static_cast<std::size_t>(k)] += sum;
    }
  }
  double total = 0.0;
  for (double& v : out.per_frame) {
    v /= static_cast<double>(b);
    total += v;
  }
  out.mean = total / static_cast<double>(t);
  return out;
}

double ssim_formula(double mx, double my, double vx, double vy, double cxy) {
  return ((2.0 * mx * my + kC1) * (2.0 * cxy + kC2)) / ((mx * mx + my * my + kC1) * (vx + vy + kC2));
}

double ssim_global(const double* x, const double* y, Index n) {
  double mx = 0, my = 0;
  for (Index i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double vx = 0, vy = 0, cxy = 0;
  for (Index i = 0; i < n; ++i) {
    vx += (x[i] - mx) * (x[i] - mx);
    vy += (y[i] - my) * (y[i] - my);
    cxy += (x[i] - mx) * (y[i] - my);
  }
  const auto nn = static_cast<double>(n);
  return ssim_formula(mx, my, vx / nn, vy / nn, cxy / nn);
}

// Mean SSIM over all valid 11x11 windows of one channel.
double ssim_windowed(const double* x, const double* y, Index h, Index w) {
  static const auto g = gaussian_taps();
  const Index oh = h - kWindow + 1, ow = w - kWindow + 1;
  // Five moment images, blurred horizontally then vertically.
  std::array<std::vector<double>, 5> rows;
  for (auto& r : rows) r.assign(static_cast<std::size_t>(h * ow), 0.0);
  for (Index i = 0; i < h; ++i) {
    for (Index j = 0; j < ow; ++j) {
      double a = 0, b = 0, aa = 0, bb = 0, ab = 0;
      for (int k = 0; k < kWindow; ++k) {
        const double u = x[i * w + j + k], v = y[i * w + j + k];
        a += g[k] * u;
        b += g[k] * v;
        aa += g[k] * u * u;
        bb += g[k] * v * v;
        ab += g[k] * u * v;
      }
      const auto at = static_cast<std::size_t>(i * ow + j);
      rows[0][at] = a;
      rows[1][at] = b;
      rows[2][at] = aa;
      rows[3][at] = bb;
      rows[4][at] = ab;
    }
  }
  double total = 0.0;
  for (Index i = 0; i < oh; ++i) {
    for (Index j = 0; j < ow; ++j) {
      std::array<double, 5> m{};
      for (int k = 0; k < kWindow; ++k) {
        const auto at = static_cast<std::size_t>((i + k) * ow + j);
        for (int c = 0; c < 5; ++c) m[c] += g[k] * rows[c][at];
      }
      const double vx = m[2] - m[0] * m[0];
      const double vy = m[3] - m[1] * m[1];
      const double cxy = m[4] - m[0] * m[1];
      total += ssim_formula(m[0], m[1], vx, vy, cxy);
    }
  }
  return total / static_cast<double>(oh * ow);
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

}  // namespace

template <typename Scalar>
FrameCurve mse_framewise(const Tensor<Scalar>& pred, const Tensor<Scalar>& target) {
  check_videos(pred, target, "mse");
  return framewise(pred, target, [](double d) { return d * d; });
}

template <typename Scalar>
FrameCurve mae_framewise(const Tensor<Scalar>& pred, const Tensor<Scalar>& target) {
  check_videos(pred, target, "mae");
  return framewise(pred, target, [](double d) { return std::abs(d); });
}

template <typename Scalar>
SsimValue ssim(const Tensor<Scalar>& pred_frame, const Tensor<Scalar>& target_frame) {
  if (pred_frame.shape() != target_frame.shape() || pred_frame.rank() != 3) {
    throw ShapeError("ssim: expected two [C, H, W] frames of equal shape, got " + to_string(pred_frame.shape()) +
                     " and " + to_string(target_frame.shape()));
  }
  const Index c = pred_frame.dim(0), h = pred_frame.dim(1), w = pred_frame.dim(2);
  const Index plane = h * w;
  std::vector<double> x(static_cast<std::size_t>(plane)), y(static_cast<std::size_t>(plane));
  SsimValue out;
  out.global_fallback = h < kWindow || w < kWindow;
  for (Index ch = 0; ch < c; ++ch) {
    for (Index i = 0; i < plane; ++i) {
      x[static_cast<std::size_t>(i)] = static_cast<double>(pred_frame.data()[ch * plane + i]);
      y[static_cast<std::size_t>(i)] = static_cast<double>(target_frame.data()[ch * plane + i]);
    }
    out.value += out.global_fallback ? ssim_global(x.data(), y.data(), plane) : ssim_windowed(x.data(), y.data(), h, w);
  }
  out.value /= static_cast<double>(c);
  return out;
}

template <typename Scalar>
FrameCurve ssim_framewise(const Tensor<Scalar>& pred, const Tensor<Scalar>& target, bool* global_fallback) {
  check_videos(pred, target, "ssim");
  const Index b = pred.dim(0), t = pred.dim(1);
  const Shape frame_shape{pred.dim(2), pred.dim(3), pred.dim(4)};
  const Index frame = pred.dim(2) * pred.dim(3) * pred.dim(4);
  FrameCurve out;
  out.per_frame.assign(static_cast<std::size_t>(t), 0.0);
  bool fallback = false;
  for (Index s = 0; s < b; ++s) {
    for (Index k = 0; k < t; ++k) {
      const Index off = (s * t + k) * frame;
      typename Tensor<Scalar>::Array a = pred.array().segment(off, frame);
      typename Tensor<Scalar>::Array bb = target.array().segment(off, frame);
      const auto v = ssim(Tensor<Scalar>(frame_shape, std::move(a)), Tensor<Scalar>(frame_shape, std::move(bb)));
      out.per_frame[static_cast<std::size_t>(k)] += v.value;
      fallback = fallback || v.global_fallback;
    }
  }
  double total = 0.0;
  for (double& v : out.per_frame) {
    v /= static_cast<double>(b);
    total += v;
  }
  out.mean = total / static_cast<double>(t);
  if (global_fallback) *global_fallback = fallback;
  return out;
}

template <typename Scalar>
EvalReport evaluate(const Tensor<Scalar>& pred, const Tensor<Scalar>& target, std::uint64_t fingerprint) {
  EvalReport r;
  r.mse = mse_framewise(pred, target);
  r.mae = mae_framewise(pred, target);
  r.ssim = ssim_framewise(pred, target, &r.ssim_global_fallback);
  r.samples = pred.dim(0);
  r.frames = pred.dim(1);
  r.frame_size = pred.dim(2) * pred.dim(3) * pred.dim(4);
  r.fingerprint = fingerprint;
  return r;
}

std::string format_report(const EvalReport& r) {
  std::string out;
  char line[160];
  std::snprintf(line, sizeof(line), "samples %lld, frames %lld, frame size %lld, fingerprint %016llx\n",
                static_cast<long long>(r.samples), static_cast<long long>(r.frames), static_cast<long long>(r.frame_size),
                static_cast<unsigned long long>(r.fingerprint));
  out += line;
  out += "MSE/MAE are sums over each frame; the per-pixel columns divide by the frame size.\n";
  if (r.ssim_global_fallback) out += "warning: frames smaller than the 11x11 window; SSIM uses global statistics\n";
  std::snprintf(line, sizeof(line), "%-6s %14s %14s %10s %16s %16s\n", "frame", "MSE", "MAE", "SSIM", "MSE/pixel",
                "MAE/pixel");
  out += line;
  const auto size = static_cast<double>(r.frame_size);
  const auto row = [&](const std::string& label, double mse, double mae, double s) {
    std::snprintf(line, sizeof(line), "%-6s %14s %14s %10s %16s %16s\n", label.c_str(), fixed(mse, 4).c_str(),
                  fixed(mae, 4).c_str(), fixed(s, 6).c_str(), fixed(mse / size, 10).c_str(),
                  fixed(mae / size, 10).c_str());
    out += line;
  };
  for (std::size_t k = 0; k < r.mse.per_frame.size(); ++k) {
    row(std::to_string(k + 1), r.mse.per_frame[k], r.mae.per_frame[k], r.ssim.per_frame[k]);
  }
  row("mean", r.mse.mean, r.mae.mean, r.ssim.mean);
  return out;
}

std::string report_json(const EvalReport& r) {
  nlohmann::json j;
  char fp[17];
  std::snprintf(fp, sizeof(fp), "%016llx", static_cast<unsigned long long>(r.fingerprint));
  j["fingerprint"] = fp;
  j["samples"] = r.samples;
  j["frames"] = r.frames;
  j["frame_size"] = r.frame_size;
  j["mse"] = {{"convention", "sum over frame"}, {"per_frame", r.mse.per_frame}, {"mean", r.mse.mean}};
  j["mae"] = {{"convention", "sum over frame"}, {"per_frame", r.mae.per_frame}, {"mean", r.mae.mean}};
  j["mse_per_pixel"] = r.mse_per_pixel();
  j["mae_per_pixel"] = r.mae_per_pixel();
  j["ssim"] = {{"per_frame", r.ssim.per_frame}, {"mean", r.ssim.mean}, {"global_fallback", r.ssim_global_fallback}};
  return j.dump(2);
}

#define SIAM_INSTANTIATE_METRICS(S)                                                  \
  template FrameCurve mse_framewise(const Tensor<S>&, const Tensor<S>&);             \
  template FrameCurve mae_framewise(const Tensor<S>&, const Tensor<S>&);             \
  template SsimValue ssim(const Tensor<S>&, const Tensor<S>&);                       \
  template FrameCurve ssim_framewise(const Tensor<S>&, const Tensor<S>&, bool*);     \
  template EvalReport evaluate(const Tensor<S>&, const Tensor<S>&, std::uint64_t);

SIAM_INSTANTIATE_METRICS(float)
SIAM_INSTANTIATE_METRICS(double)

}  // namespace siam
