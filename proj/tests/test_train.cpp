#include <doctest.h>

#include <atomic>
#include <cmath>
#include <filesystem>

#include <unistd.h>

#include "siam/gradcheck.hpp"
#include "siam/train.hpp"
#include "support.hpp"

using namespace siam;
using siam::testing::bitwise_equal;
using siam::testing::random_tensor;

namespace fs = std::filesystem;

namespace {

// Tiny float run: 32x32 canvas, 3 -> 3 frames, one block.
RunConfig tiny_run() {
  RunConfig r;
  r.model.name = "tiny";
  r.model.t_in = r.model.t_out = 3;
  r.model.frame = {1, 32, 32};
  r.model.latent = {8, 8, 8};
  r.model.mixer_dims = {8, 8, 24};
  r.model.n_blocks = 1;
  r.model.norm_groups = 4;
  r.model.init_seed = 3;
  r.train.batch_size = 2;
  r.train.max_steps = 6;
  r.train.lr = 1e-3;
  r.train.seed = 11;
  r.data.canvas_height = r.data.canvas_width = 32;
  r.data.frames = 6;
  r.data.seed = 2;
  r.data.digit_variants = 1;
  return r;
}

VideoBatch tiny_data(const RunConfig& r, Index n) { return generate_moving(r.data, digits_for(r.data), n); }

fs::path scratch_dir(const std::string& tag) {
  static std::atomic<int> counter{0};
  auto dir = fs::temp_directory_path() / ("siam-train-" + tag + "-" + std::to_string(::getpid()) + "-" +
                                          std::to_string(counter++));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

ParamStore<double> scalar_params(int count) {
  ParamStore<double> p;
  Rng rng(0);
  for (int i = 0; i < count; ++i) p.add("p" + std::to_string(i), {1}, Init::Zeros, 1, rng);
  return p;
}

}  // namespace

TEST_CASE("l2 loss is the mean of squared differences") {
  Tensor<double> ones = Tensor<double>::full({2, 3, 1, 4, 4}, 1.0);
  Tensor<double> zeros = Tensor<double>::zeros({2, 3, 1, 4, 4});
  CHECK(l2_loss(ones, ones).item() == 0.0);
  CHECK(l2_loss(ones, zeros).item() == 1.0);
  CHECK_THROWS_AS(l2_loss(ones, Tensor<double>::zeros({2, 3, 1, 4, 5})), ShapeError);

  Rng rng(1);
  const auto pred = random_tensor<double>({2, 2, 1, 3, 3}, rng);
  const auto target = random_tensor<double>({2, 2, 1, 3, 3}, rng);
  Tape<double> tape;
  const auto p = tape.watch(pred, "pred");
  const auto grads = tape.backward(l2_loss(p, target));
  const auto expected = (2.0 / static_cast<double>(pred.size())) * (pred.array() - target.array());
  CHECK((grads.at("pred").array() - expected).abs().maxCoeff() <= 1e-15);

  const auto fd = check_gradients([&](const auto& in) { return l2_loss(in[0], target); }, {pred}, {"pred"});
  CHECK(fd[0].passed);
}

TEST_CASE("adam matches the textbook bias-corrected update") {
  TrainConfig c;
  c.schedule = Schedule::Constant;
  {
    auto params = scalar_params(1);
    auto state = AdamState<double>::zeros_like(params);
    adam_step(params, {{"p0", Tensor<double>::full({1}, 1.0)}}, state, c, 0.001);
    // m_hat = 1, v_hat = 1, so the step is lr / (1 + eps)
    CHECK(std::abs(params[0].value[0] - (-0.001 / (1.0 + 1e-8))) <= 1e-12);
    CHECK(state.step == 1);
  }
  {
    // 50 steps on f(x) = (x - 3)^2 against an independently written loop.
    auto params = scalar_params(1);
    auto state = AdamState<double>::zeros_like(params);
    double x = 0, m = 0, v = 0;
    for (int t = 1; t <= 50; ++t) {
      const double g = 2.0 * (params[0].value[0] - 3.0);
      adam_step(params, {{"p0", Tensor<double>::full({1}, g)}}, state, c, 0.05);
      const double gx = 2.0 * (x - 3.0);
      m = 0.9 * m + 0.1 * gx;
      v = 0.999 * v + 0.001 * gx * gx;
      const double mh = m / (1.0 - std::pow(0.9, t));
      const double vh = v / (1.0 - std::pow(0.999, t));
      x -= 0.05 * mh / (std::sqrt(vh) + 1e-8);
      REQUIRE(std::abs(params[0].value[0] - x) <= 1e-12);
    }
  }
}

TEST_CASE("adam edge cases") {
  TrainConfig c;
  auto params = scalar_params(2);
  params[0].value.mutable_values().setConstant(0.25);
  params[1].value.mutable_values().setConstant(0.25);
  auto state = AdamState<double>::zeros_like(params);

  SUBCASE("zero gradient leaves parameters unchanged") {
    adam_step(params, {{"p0", Tensor<double>::zeros({1})}, {"p1", Tensor<double>::zeros({1})}}, state, c, 0.01);
    CHECK(params[0].value[0] == 0.25);
    CHECK(params[1].value[0] == 0.25);
  }
  SUBCASE("identical gradients update identically") {
    for (double g : {0.3, -1.2, 7.0}) {
      adam_step(params, {{"p0", Tensor<double>::full({1}, g)}, {"p1", Tensor<double>::full({1}, g)}}, state, c, 0.01);
    }
    CHECK(bitwise_equal(params[0].value, params[1].value));
    CHECK(params[0].value[0] != 0.25);
  }
  SUBCASE("decoupled weight decay shrinks before the step") {
    c.weight_decay = 0.5;
    adam_step(params, {{"p0", Tensor<double>::zeros({1})}, {"p1", Tensor<double>::zeros({1})}}, state, c, 0.1);
    CHECK(params[0].value[0] == doctest::Approx(0.25 * 0.95).epsilon(1e-15));
  }
  SUBCASE("non-finite gradient names the parameter") {
    try {
      adam_step(params, {{"p0", Tensor<double>::zeros({1})}, {"p1", Tensor<double>::full({1}, NAN)}}, state, c, 0.1);
      FAIL("expected NumericError");
    } catch (const NumericError& e) {
      CHECK(std::string(e.what()).find("'p1'") != std::string::npos);
    }
    CHECK(params[0].value[0] == 0.25);
  }
  SUBCASE("missing gradient is rejected") {
    CHECK_THROWS_AS(adam_step(params, {{"p0", Tensor<double>::zeros({1})}}, state, c, 0.1), ConfigError);
  }
}

TEST_CASE("onecycle warms up then anneals") {
  TrainConfig c;
  c.lr = 1e-3;
  c.max_steps = 1000;
  c.warmup_frac = 0.1;
  CHECK(scheduled_lr(c, 0) == doctest::Approx(4e-5).epsilon(1e-12));
  CHECK(scheduled_lr(c, 100) == doctest::Approx(1e-3).epsilon(1e-12));
  CHECK(scheduled_lr(c, 999) == doctest::Approx(4e-9).epsilon(1e-9));
  for (Index s = 1; s <= 100; ++s) CHECK(scheduled_lr(c, s) > scheduled_lr(c, s - 1));
  for (Index s = 101; s < 1000; ++s) CHECK(scheduled_lr(c, s) < scheduled_lr(c, s - 1));
  c.schedule = Schedule::Constant;
  CHECK(scheduled_lr(c, 0) == 1e-3);
  CHECK(scheduled_lr(c, 777) == 1e-3);
}

TEST_CASE("gradient clipping bounds the global norm") {
  std::map<std::string, Tensor<double>> g{{"a", Tensor<double>::full({2}, 3.0)}, {"b", Tensor<double>::full({1}, 4.0)}};
  const double before = clip_gradients(g, 1.0);
  CHECK(before == doctest::Approx(std::sqrt(34.0)));
  CHECK(clip_gradients(g, 1.0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(g.at("b")[0] == doctest::Approx(4.0 / std::sqrt(34.0)));
}

TEST_CASE("log records round-trip through text") {
  const LogRecord r{42, 0.0001684037393774266, 0.030095316469669342, 200.03};
  const auto line = format_log_record(r);
  CHECK(line == "42, 0.0001684037393774266, 0.030095316469669342, 200.030");
  const auto back = parse_log_record(line);
  CHECK(back.step == 42);
  CHECK(back.lr == r.lr);
  CHECK(back.loss == r.loss);
  CHECK_THROWS_AS(parse_log_record("42, x, 1, 2"), ParseError);
}

TEST_CASE("checkpoints round-trip byte for byte") {
  auto run = tiny_run();
  const auto data = tiny_data(run, 4);
  SiamModel<float> model(run.model);
  Trainer<float> trainer(model, data, run);
  trainer.step();
  trainer.step();
  const auto ckpt = trainer.checkpoint();
  const auto bytes = serialize_checkpoint(ckpt);
  CHECK(checkpoint_dtype(bytes) == Dtype::Float32);
  const auto back = parse_checkpoint<float>(bytes);
  CHECK(serialize_checkpoint(back) == bytes);
  CHECK(back.step == 2);
  CHECK(back.adam.step == 2);
  CHECK(back.epoch_rng == ckpt.epoch_rng);

  Index values = 0;
  for (const auto& v : back.values) values += v.size();
  CHECK(values == model.params().value_count());

  const auto dir = scratch_dir("ckpt");
  save_checkpoint((dir / "a.ckpt").string(), ckpt);
  const auto loaded = load_checkpoint<float>((dir / "a.ckpt").string());
  save_checkpoint((dir / "b.ckpt").string(), loaded);
  CHECK(read_file((dir / "a.ckpt").string()) == read_file((dir / "b.ckpt").string()));
  CHECK(fs::exists(dir / "a.ckpt.manifest"));

  CHECK_THROWS_AS(parse_checkpoint<double>(bytes), ParseError);
  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(parse_checkpoint<float>(bad), ParseError);
  bad = bytes;
  bad.resize(bad.size() - 3);
  CHECK_THROWS_AS(parse_checkpoint<float>(bad), ParseError);

  auto other = run.model;
  other.mixer_dims[2] = 48;
  SiamModel<float> mismatched(other);
  try {
    restore_parameters(mismatched, back);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("fingerprint") != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("zero learning rate leaves parameters bitwise unchanged") {
  auto run = tiny_run();
  run.train.lr = 0.0;
  run.train.schedule = Schedule::Constant;
  const auto data = tiny_data(run, 3);
  SiamModel<float> model(run.model);
  SiamModel<float> initial(run.model);
  const auto result = train_run(model, data, run);
  CHECK(result.log.size() == 6);
  for (std::size_t i = 0; i < model.params().size(); ++i) {
    CHECK(bitwise_equal(model.params()[i].value, initial.params()[i].value));
  }
}

TEST_CASE("resuming reproduces the uninterrupted trace") {
  auto run = tiny_run();
  run.train.checkpoint_every = 3;
  const auto data = tiny_data(run, 5);  // batch 2 over 5 clips: epochs end mid-batch

  const auto full_dir = scratch_dir("full");
  SiamModel<float> a(run.model);
  TrainOptions opt;
  opt.out_dir = full_dir.string();
  const auto full = train_run(a, data, run, opt);
  REQUIRE(fs::exists(full_dir / "step-000003.ckpt"));

  const auto part_dir = scratch_dir("part");
  SiamModel<float> b(run.model);
  TrainOptions resume;
  resume.out_dir = part_dir.string();
  resume.resume_path = (full_dir / "step-000003.ckpt").string();
  const auto tail = train_run(b, data, run, resume);

  REQUIRE(tail.log.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(tail.log[i].step == full.log[i + 3].step);
    CHECK(tail.log[i].lr == full.log[i + 3].lr);
    CHECK(tail.log[i].loss == full.log[i + 3].loss);
  }
  CHECK(tail.final_record.loss == full.final_record.loss);
  CHECK(read_file(tail.final_checkpoint) == read_file(full.final_checkpoint));

  // the resumed log continues the step counter
  const auto log = read_file((part_dir / "train.log").string());
  const std::string text(log.begin(), log.end());
  CHECK(text.rfind("3, ", 0) == 0);
  fs::remove_all(full_dir);
  fs::remove_all(part_dir);
}

TEST_CASE("non-finite loss aborts and keeps earlier checkpoints") {
  auto run = tiny_run();
  run.train.batch_size = 1;
  run.train.max_steps = 20;
  run.train.checkpoint_every = 1;
  auto data = tiny_data(run, 3);
  float* p = data.mutable_data();
  const Index clip = data.size() / 3;
  for (Index i = 2 * clip; i < 3 * clip; ++i) p[i] = INFINITY;

  const auto dir = scratch_dir("nan");
  SiamModel<float> model(run.model);
  TrainOptions opt;
  opt.out_dir = dir.string();
  CHECK_THROWS_AS(train_run(model, data, run, opt), NumericError);
  CHECK_FALSE(fs::exists(dir / "final.ckpt"));
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() == ".ckpt") CHECK_NOTHROW(load_checkpoint<float>(entry.path().string()));
  }
  fs::remove_all(dir);
}

TEST_CASE("final log record is the whole-dataset loss") {
  auto run = tiny_run();
  run.train.max_steps = 2;
  const auto data = tiny_data(run, 3);
  SiamModel<float> model(run.model);
  const auto result = train_run(model, data, run);
  CHECK(result.final_record.step == 2);
  CHECK(result.final_record.loss == dataset_l2(model, data));
  const auto [x, y] = gather_batch<float>(data, {0, 1, 2}, 3, 3);
  CHECK(std::abs(result.final_record.loss - static_cast<double>(l2_loss(model.forward(x), y).item())) <= 1e-6);
}
