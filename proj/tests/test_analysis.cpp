#include <doctest.h>

#include <json.hpp>

#include "siam/analysis.hpp"
#include "siam/train.hpp"
#include "oracles.hpp"

using namespace siam;
using siam::testing::closed_form;
using siam::testing::toy_configs;

namespace {

const CostRow& row(const CostReport& r, const std::string& path) {
  for (const auto& x : r.rows) {
    if (x.path == path) return x;
  }
  FAIL("no cost row " << path);
  return r.rows.front();
}

}  // namespace

TEST_CASE("cost report equals the closed form on toy configs") {
  for (const auto& cfg : toy_configs()) {
    CAPTURE(cfg.name);
    SiamModel<double> model(cfg);
    const auto oracle = closed_form(cfg, 1);
    const auto params = count_params(model);
    const auto flops = count_flops(model, {1, cfg.t_in, cfg.frame.channels, cfg.frame.height, cfg.frame.width});
    CHECK(params.total_params == oracle.params);
    CHECK(flops.total_params == oracle.params);
    CHECK(flops.total_macs == oracle.macs);
    CHECK(flops.total_elementwise == oracle.elementwise);
    CHECK(params.total_params == model.params().value_count());

    Index sum = 0;
    for (const auto& r : flops.rows) sum += r.macs;
    CHECK(sum == flops.total_macs);

    const auto batch3 = count_flops(model, {3, cfg.t_in, cfg.frame.channels, cfg.frame.height, cfg.frame.width});
    CHECK(batch3.total_macs == 3 * flops.total_macs);
    CHECK(batch3.total_elementwise == 3 * flops.total_elementwise);
    CHECK(batch3.total_params == flops.total_params);
    CHECK(closed_form(cfg, 3).macs == batch3.total_macs);
  }
}

TEST_CASE("single layer costs match hand-computed values") {
  SiamConfig c;
  c.name = "layers";
  c.t_in = c.t_out = 10;
  c.frame = {1, 64, 64};
  c.latent = {64, 16, 16};
  c.mixer_dims = {64, 64, 640};
  c.n_blocks = 1;
  SiamModel<float> model(c);
  const auto r = count_flops(model, {1, 10, 1, 64, 64});
  CHECK(row(r, "blocks.0.temporal.fc1").params == 1'640'960);
  CHECK(row(r, "blocks.0.spatial.dw").params == 1'664);
  CHECK(row(r, "blocks.0.spatial.pw").macs == 10'485'760);
  const auto doubled = count_flops(model, {2, 10, 1, 64, 64});
  CHECK(row(doubled, "blocks.0.spatial.pw").macs == 2 * 10'485'760);
  CHECK_THROWS_AS(count_flops(model, {1, 9, 1, 64, 64}), ShapeError);
  CHECK(count_flops(model, {1, 10, 1, 64, 64}, 2).total_flops() ==
        2.0 * static_cast<double>(r.total_macs) + static_cast<double>(r.total_elementwise));
}

TEST_CASE("block cost is additive in the number of blocks") {
  auto cfg = toy_configs()[0];
  std::array<Index, 4> params{}, macs{};
  for (Index n = 0; n < 4; ++n) {
    cfg.n_blocks = n;
    SiamModel<double> m(cfg);
    const auto r = count_flops(m, {1, 3, 1, 16, 16});
    params[static_cast<std::size_t>(n)] = r.total_params;
    macs[static_cast<std::size_t>(n)] = r.total_macs;
  }
  CHECK(params[2] - params[1] == params[1] - params[0]);
  CHECK(params[3] - params[2] == params[1] - params[0]);
  CHECK(macs[3] - macs[2] == macs[1] - macs[0]);
  CHECK(params[1] > params[0]);
}

TEST_CASE("mmnist preset lands inside the reference window") {
  SiamModel<float> model(preset("mmnist").model);
  const auto r = count_flops(model, {1, 10, 1, 64, 64});
  CHECK(r.total_params == closed_form(model.config(), 1).params);
  CHECK(r.total_macs == closed_form(model.config(), 1).macs);
  REQUIRE(r.reference);
  CHECK(within_window(static_cast<double>(r.total_params) / 1e6, r.reference->params_m).within);
  CHECK(within_window(r.total_flops() / 1e9, r.reference->gflops).within);

  const auto text = format_cost_report(r);
  CHECK(text.find("reference params 34.6M") != std::string::npos);
  CHECK(text.find("assumption:") != std::string::npos);
  const auto j = nlohmann::json::parse(cost_report_json(r));
  CHECK(j["total_params"].get<Index>() == r.total_params);
  CHECK(j["reference"]["params_m"]["within_25pct"].get<bool>());

  // values serialized into a checkpoint
  Checkpoint<float> ckpt;
  ckpt.fingerprint = fingerprint(model.config());
  for (const auto& p : model.params()) {
    ckpt.names.push_back(p.name);
    ckpt.values.push_back(p.value);
  }
  ckpt.adam = AdamState<float>::zeros_like(model.params());
  const auto back = parse_checkpoint<float>(serialize_checkpoint(ckpt));
  Index stored = 0;
  for (const auto& v : back.values) stored += v.size();
  CHECK(stored == r.total_params);
}

TEST_CASE("window check arithmetic") {
  const auto w = within_window(4.401, 4.0);
  CHECK(w.delta == doctest::Approx(0.10025));
  CHECK(w.within);
  CHECK_FALSE(within_window(243.16, 180.5).within);
  CHECK(within_window(0.75, 1.0).within);
  CHECK_FALSE(within_window(0.7499, 1.0).within);
}
