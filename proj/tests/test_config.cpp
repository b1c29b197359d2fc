#include <doctest.h>

#include "siam/config.hpp"
#include "siam/errors.hpp"

using namespace siam;

namespace {

const char* kMinimal = R"([model]
t_in = 4
t_out = 4
frame_shape = (1, 32, 32)
latent_shape = 16,8,8
mixer_dims = 20, 20, 64
norm_groups = 4
)";

std::string error_of(const std::string& text) {
  try {
    parse_run_config(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("minimal config parses and fills defaults") {
  const auto cfg = parse_run_config(kMinimal);
  CHECK(cfg.model.latent == FrameShape{16, 8, 8});
  CHECK(cfg.model.stages() == 2);
  CHECK(cfg.model.n_blocks == 8);
  CHECK(cfg.train.schedule == Schedule::OneCycle);
  CHECK_FALSE(cfg.train.grad_clip.has_value());
}

TEST_CASE("print then parse is a fixpoint for every preset") {
  for (const auto& name : preset_names()) {
    INFO(name);
    auto cfg = preset(name);
    cfg.train.grad_clip = 0.1;
    cfg.model.norm_eps = 1.0 / 3.0;
    const std::string text = print_run_config(cfg);
    const auto back = parse_run_config(text);
    CHECK(print_run_config(back) == text);
    CHECK(fingerprint(back.model) == fingerprint(cfg.model));
    CHECK(back.model.norm_eps == cfg.model.norm_eps);
  }
}

TEST_CASE("missing required key is named") {
  std::string text = kMinimal;
  text.erase(text.find("latent_shape"), std::string("latent_shape = 16,8,8\n").size());
  CHECK(error_of(text).find("model.latent_shape") != std::string::npos);
}

TEST_CASE("unknown keys, sections and malformed values are rejected") {
  CHECK(error_of(std::string(kMinimal) + "bogus = 1\n").find("model.bogus") != std::string::npos);
  CHECK(error_of(std::string(kMinimal) + "[extra]\n").find("extra") != std::string::npos);
  CHECK(error_of(std::string(kMinimal) + "[train]\nlr = fast\n").find("train.lr") != std::string::npos);
  CHECK(error_of(std::string(kMinimal) + "n_blocks = 2\nn_blocks = 3\n").find("duplicate") != std::string::npos);
}

TEST_CASE("validation catches inconsistent architectures") {
  auto m = preset("mmnist").model;
  m.latent.height = 12;
  CHECK_THROWS_AS(validate(m), ConfigError);
  m = preset("mmnist").model;
  m.mixer_enabled = {false, false, false};
  CHECK_THROWS_AS(validate(m), ConfigError);
  m = preset("mmnist").model;
  m.norm_groups = 7;
  CHECK_THROWS_AS(validate(m), ConfigError);
  m = preset("mmnist").model;
  m.strict_split = true;  // 256 is not a multiple of 5
  CHECK_THROWS_AS(validate(m), ConfigError);
  m.mixer_dims[1] = 255;
  CHECK_NOTHROW(validate(m));
  m.mixer_order = {MixerKind::Spatial, MixerKind::Spatial, MixerKind::Temporal};
  CHECK_THROWS_AS(validate(m), ConfigError);
}

TEST_CASE("fingerprint tracks architecture but not training settings") {
  auto a = preset("micro");
  auto b = a;
  b.train.lr = 0.5;
  CHECK(fingerprint(a.model) == fingerprint(b.model));
  b.model.n_blocks = 3;
  CHECK(fingerprint(a.model) != fingerprint(b.model));
  CHECK_THROWS_AS(preset("nope"), ConfigError);
}
