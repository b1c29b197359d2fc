#include <doctest.h>

#include <cmath>
#include <json.hpp>

#include "siam/metrics.hpp"
#include "support.hpp"

using namespace siam;
using siam::testing::random_tensor;

namespace {

Tensor<double> frame_of(Index h, Index w, const auto& f) {
  Tensor<double> t({1, h, w});
  for (Index i = 0; i < h; ++i) {
    for (Index j = 0; j < w; ++j) t.mutable_data()[i * w + j] = f(i, j);
  }
  return t;
}

}  // namespace

TEST_CASE("frame sums: all-zero vs all-one 64x64 frame is 4096") {
  const auto zeros = Tensor<double>::zeros({1, 1, 1, 64, 64});
  const auto ones = Tensor<double>::full({1, 1, 1, 64, 64}, 1.0);
  CHECK(mse_framewise(zeros, ones).mean == 4096.0);
  CHECK(mae_framewise(zeros, ones).mean == 4096.0);
  CHECK(mse_framewise(ones, ones).mean == 0.0);
  CHECK(mae_framewise(ones, ones).mean == 0.0);
  const auto r = evaluate(zeros, ones);
  CHECK(r.mse_per_pixel() == 1.0);
  CHECK_THROWS_AS(mse_framewise(zeros, Tensor<double>::zeros({1, 1, 1, 64, 63})), ShapeError);
}

TEST_CASE("frame metrics are symmetric and satisfy Cauchy-Schwarz") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = random_tensor<double>({2, 3, 2, 12, 12}, rng, 0.0, 1.0);
    const auto b = random_tensor<double>({2, 3, 2, 12, 12}, rng, 0.0, 1.0);
    const auto mse = mse_framewise(a, b), mae = mae_framewise(a, b);
    CHECK(mse.mean == mse_framewise(b, a).mean);
    CHECK(mae.mean == mae_framewise(b, a).mean);
    // per frame index the sample mean preserves the inequality (Jensen on the square)
    for (std::size_t k = 0; k < 3; ++k) {
      CHECK(mae.per_frame[k] >= 0.0);
      CHECK(mae.per_frame[k] * mae.per_frame[k] <= 2 * 12 * 12 * mse.per_frame[k] * (1 + 1e-12));
    }
    double sum = 0;
    for (double v : mse.per_frame) sum += v;
    CHECK(std::abs(mse.mean - sum / 3.0) <= 1e-12);
  }
}

TEST_CASE("ssim identities") {
  Rng rng(8);
  const auto x = random_tensor<double>({2, 32, 32}, rng, 0.0, 1.0);
  const auto y = random_tensor<double>({2, 32, 32}, rng, 0.0, 1.0);
  CHECK(std::abs(ssim(x, x).value - 1.0) <= 1e-9);
  CHECK(std::abs(ssim(x, y).value - ssim(y, x).value) <= 1e-12);
  CHECK_FALSE(ssim(x, y).global_fallback);

  const auto board = frame_of(32, 32, [](Index i, Index j) { return static_cast<double>((i + j) % 2); });
  const auto inverse = frame_of(32, 32, [](Index i, Index j) { return static_cast<double>((i + j + 1) % 2); });
  CHECK(ssim(board, inverse).value <= 0.0);

  const auto grey = Tensor<double>::full({1, 16, 16}, 0.4);
  CHECK(ssim(grey, grey).value == 1.0);

  const auto tiny = random_tensor<double>({1, 6, 6}, rng, 0.0, 1.0);
  const auto s = ssim(tiny, tiny);
  CHECK(s.global_fallback);
  CHECK(std::abs(s.value - 1.0) <= 1e-9);
}

TEST_CASE("ssim matches a reference implementation") {
  // scikit-image structural_similarity(gaussian_weights=True, sigma=1.5,
  // use_sample_covariance=False, data_range=1) on the same patterns
  const auto x = frame_of(20, 23, [](Index i, Index j) { return static_cast<double>((i * 7 + j * 13) % 17) / 16.0; });
  const auto y = frame_of(20, 23, [](Index i, Index j) { return static_cast<double>((i * 3 + j * 5 + i * j) % 11) / 10.0; });
  CHECK(std::abs(ssim(x, y).value - (-0.056343185546896726)) <= 1e-12);

  const auto x2 = frame_of(20, 23, [](Index i, Index j) { return static_cast<double>((i * i + 2 * j) % 9) / 8.0; });
  const auto y2 = frame_of(20, 23, [&](Index i, Index j) {
    return std::clamp(x2[i * 23 + j] * 0.8 + 0.1 * static_cast<double>((i + j) % 3) / 2.0, 0.0, 1.0);
  });
  CHECK(std::abs(ssim(x2, y2).value - 0.9609802823007444) <= 1e-12);

  Tensor<double> a({2, 20, 23}), b({2, 20, 23});
  std::copy_n(x.data(), 460, a.mutable_data());
  std::copy_n(x2.data(), 460, a.mutable_data() + 460);
  std::copy_n(y.data(), 460, b.mutable_data());
  std::copy_n(y2.data(), 460, b.mutable_data() + 460);
  CHECK(std::abs(ssim(a, b).value - (-0.056343185546896726 + 0.9609802823007444) / 2) <= 1e-12);
}

TEST_CASE("noise of growing amplitude degrades every metric") {
  Rng rng(21);
  const auto target = random_tensor<double>({2, 4, 1, 32, 32}, rng, 0.2, 0.8);
  const auto noise = random_tensor<double>({2, 4, 1, 32, 32}, rng, -1.0, 1.0);
  double last_mse = 0.0, last_mae = 0.0, last_ssim = 1.0;
  for (double amp : {0.02, 0.05, 0.1, 0.15, 0.2}) {
    Tensor<double> pred(target.shape());
    pred.mutable_values() = target.array() + amp * noise.array();
    const auto r = evaluate(pred, target);
    CHECK(r.mse.mean > last_mse);
    CHECK(r.mae.mean > last_mae);
    CHECK(r.ssim.mean < last_ssim);
    CHECK(r.ssim.mean >= -1.0);
    last_mse = r.mse.mean;
    last_mae = r.mae.mean;
    last_ssim = r.ssim.mean;
  }
}

TEST_CASE("report aggregates are the mean of per-frame values") {
  Rng rng(4);
  const auto a = random_tensor<float>({3, 5, 1, 16, 16}, rng, 0.0, 1.0);
  const auto b = random_tensor<float>({3, 5, 1, 16, 16}, rng, 0.0, 1.0);
  const auto r = evaluate(a, b, 0xabcdefULL);
  for (const FrameCurve* c : {&r.mse, &r.mae, &r.ssim}) {
    double sum = 0;
    for (double v : c->per_frame) sum += v;
    CHECK(std::abs(c->mean - sum / 5.0) <= 1e-12);
  }
  const auto j = nlohmann::json::parse(report_json(r));
  CHECK(j["fingerprint"] == "0000000000abcdef");
  CHECK(j["mse"]["per_frame"].size() == 5);
  CHECK(j["ssim"]["mean"].get<double>() == r.ssim.mean);
  const auto text = format_report(r);
  CHECK(text.find("mean") != std::string::npos);
  CHECK(text.find("MSE/pixel") != std::string::npos);
}
