#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "siam/analysis.hpp"
#include "siam/metrics.hpp"
#include "siam/train.hpp"

using namespace siam;
namespace fs = std::filesystem;

namespace {

enum Exit { Ok = 0, Usage = 1, DataError = 2, NumericFailure = 3 };

struct ConfigSource {
  std::string path;
  std::string preset_name;

  bool given() const { return !path.empty() || !preset_name.empty(); }
  RunConfig load() const {
    if (!path.empty() && !preset_name.empty()) throw ConfigError("give either --config or --preset, not both");
    if (!path.empty()) return load_run_config(path);
    if (!preset_name.empty()) return preset(preset_name);
    throw ConfigError("a configuration is required: --config FILE or --preset NAME");
  }
};

void add_config_flags(CLI::App* cmd, ConfigSource& src, bool required = true) {
  auto* group = cmd->add_option_group("configuration");
  group->add_option("--config", src.path, "run configuration file");
  group->add_option("--preset", src.preset_name, "built-in preset name");
  if (required) group->require_option(1);
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw ParseError(ParseErrorKind::Io, "cannot write " + path);
  f << text;
}

// ------------------------------------------------------------------ gen-data

struct GenArgs {
  ConfigSource config;
  std::uint64_t seed = 0;
  Index n = 0;
  Index frames = 0;
  std::string out;
  std::string idx;
};

int gen_data(const GenArgs& a) {
  MovingConfig m = a.config.given() ? a.config.load().data : MovingConfig{};
  m.seed = a.seed;
  if (a.frames > 0) m.frames = a.frames;
  if (!a.idx.empty()) m.idx_path = a.idx;
  const auto clips = generate_moving(m, digits_for(m), a.n);
  save_svt(a.out, clips);
  std::printf("wrote %s %s\n", a.out.c_str(), to_string(clips.shape()).c_str());
  return Ok;
}

// ------------------------------------------------------------------ train

struct TrainArgs {
  ConfigSource config;
  std::string data;
  std::string out;
  std::string resume;
  Index max_steps = 0;
};

template <typename Scalar>
int train_typed(const RunConfig& rc, const VideoBatch& data, const TrainArgs& a) {
  SiamModel<Scalar> model(rc.model);
  TrainOptions opt;
  opt.out_dir = a.out;
  if (!a.resume.empty()) opt.resume_path = a.resume;
  opt.on_record = [](const LogRecord& r) { std::printf("%s\n", format_log_record(r).c_str()); };
  const auto result = train_run(model, data, rc, opt);
  std::printf("final loss %s, checkpoint %s\n", format_log_record(result.final_record).c_str(),
              result.final_checkpoint.c_str());
  return Ok;
}

int train(const TrainArgs& a) {
  RunConfig rc = a.config.load();
  if (a.max_steps > 0) rc.train.max_steps = a.max_steps;
  const auto data = load_svt(a.data);
  validate_video(data);
  return rc.model.dtype == Dtype::Float64 ? train_typed<double>(rc, data, a) : train_typed<float>(rc, data, a);
}

// ------------------------------------------------------------------ eval / predict

struct CheckpointArgs {
  std::string checkpoint;
  std::string data;
  ConfigSource config;
  std::string out;
  std::string json;
  Index first = 0;
  Index count = 1;
};

template <typename Scalar>
SiamModel<Scalar> restore_model(const CheckpointArgs& a, const Checkpoint<Scalar>& ckpt) {
  const RunConfig rc = a.config.given() ? a.config.load() : parse_run_config(ckpt.config_text);
  SiamModel<Scalar> model(rc.model);
  restore_parameters(model, ckpt);
  return model;
}

template <typename Scalar>
int eval_typed(const CheckpointArgs& a) {
  const auto ckpt = load_checkpoint<Scalar>(a.checkpoint);
  const auto model = restore_model(a, ckpt);
  const auto data = load_svt(a.data);
  const auto& c = model.config();
  std::vector<Tensor<Scalar>> preds, targets;
  for (Index start = 0; start < data.dim(0); start += 16) {
    std::vector<Index> idx;
    for (Index i = start; i < std::min(start + 16, data.dim(0)); ++i) idx.push_back(i);
    const auto [x, y] = gather_batch<Scalar>(data, idx, c.t_in, c.t_out);
    preds.push_back(model.forward(x));
    targets.push_back(y);
  }
  const auto report = evaluate(concat(preds, 0), concat(targets, 0), ckpt.fingerprint);
  std::printf("%s", format_report(report).c_str());
  std::printf("per-pixel MSE %.17g\n", report.mse_per_pixel());
  if (!a.json.empty()) write_text(a.json, report_json(report) + "\n");
  return Ok;
}

int eval(const CheckpointArgs& a) {
  const auto dtype = checkpoint_dtype(read_file(a.checkpoint));
  return dtype == Dtype::Float64 ? eval_typed<double>(a) : eval_typed<float>(a);
}

// Writes [C, H, W] values in [0, 1] as PGM (one channel) or PPM (otherwise,
// missing colour planes left black, extra planes dropped).
void write_image(const std::string& path, const float* frame, Index c, Index h, Index w) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ParseError(ParseErrorKind::Io, "cannot write " + path);
  const bool grey = c == 1;
  f << (grey ? "P5\n" : "P6\n") << w << " " << h << "\n255\n";
  const auto byte = [](float v) { return static_cast<char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)); };
  for (Index i = 0; i < h * w; ++i) {
    if (grey) {
      f.put(byte(frame[i]));
    } else {
      for (Index ch = 0; ch < 3; ++ch) f.put(ch < c ? byte(frame[ch * h * w + i]) : char{0});
    }
  }
}

template <typename Scalar>
int predict_typed(const CheckpointArgs& a) {
  const auto ckpt = load_checkpoint<Scalar>(a.checkpoint);
  const auto model = restore_model(a, ckpt);
  const auto data = load_svt(a.data);
  const auto& c = model.config();
  const Index ch = c.frame.channels, h = c.frame.height, w = c.frame.width;
  const Index frame = ch * h * w;
  const std::string ext = ch == 1 ? ".pgm" : ".ppm";
  for (Index s = a.first; s < std::min(a.first + a.count, data.dim(0)); ++s) {
    const auto [x, y] = gather_batch<Scalar>(data, {s}, c.t_in, c.t_out);
    const Tensor<float> pred = model.rollout(x, c.t_out).template cast<float>();
    const Tensor<float> input = x.template cast<float>(), target = y.template cast<float>();
    const fs::path dir = fs::path(a.out) / ("seq" + std::to_string(s));
    fs::create_directories(dir);
    for (Index t = 0; t < c.t_out; ++t) {
      write_image((dir / ("t" + std::to_string(c.t_in + t + 1) + ext)).string(), pred.data() + t * frame, ch, h, w);
    }
    // grid rows: input frames, ground truth, prediction; one pixel gutters
    const Index cols = std::max(c.t_in, c.t_out);
    const Index gh = 3 * h + 2, gw = cols * w + cols - 1;
    std::vector<float> grid(static_cast<std::size_t>(ch * gh * gw), 1.0f);
    const auto place = [&](const float* src, Index row, Index col) {
      for (Index k = 0; k < ch; ++k) {
        for (Index i = 0; i < h; ++i) {
          for (Index j = 0; j < w; ++j) {
            grid[static_cast<std::size_t>((k * gh + row * (h + 1) + i) * gw + col * (w + 1) + j)] =
                src[(k * h + i) * w + j];
          }
        }
      }
    };
    for (Index t = 0; t < c.t_in; ++t) place(input.data() + t * frame, 0, t);
    for (Index t = 0; t < c.t_out; ++t) {
      place(target.data() + t * frame, 1, t);
      place(pred.data() + t * frame, 2, t);
    }
    write_image((dir / ("grid" + ext)).string(), grid.data(), ch, gh, gw);
    std::printf("wrote %s\n", dir.string().c_str());
  }
  return Ok;
}

int predict(const CheckpointArgs& a) {
  const auto dtype = checkpoint_dtype(read_file(a.checkpoint));
  return dtype == Dtype::Float64 ? predict_typed<double>(a) : predict_typed<float>(a);
}

// ------------------------------------------------------------------ count / gradcheck / preset

struct CountArgs {
  ConfigSource config;
  Index batch = 1;
  int flops_per_mac = 1;
  std::string json;
};

int count(const CountArgs& a) {
  const RunConfig rc = a.config.load();
  SiamModel<float> model(rc.model);
  const auto& c = rc.model;
  const auto report = count_flops(model, {a.batch, c.t_in, c.frame.channels, c.frame.height, c.frame.width},
                                  a.flops_per_mac);
  std::printf("%s", format_cost_report(report).c_str());
  if (!a.json.empty()) write_text(a.json, cost_report_json(report) + "\n");
  return Ok;
}

int gradcheck(const ConfigSource& src) {
  SiamConfig c = src.load().model;
  c.dtype = Dtype::Float64;
  const auto result = check_model_gradients(c);
  std::printf("init seed %llu, relu margin %.3g\n", static_cast<unsigned long long>(result.seed), result.relu_margin);
  // one line per parameter group (the path up to the last dot)
  std::map<std::string, std::pair<double, bool>> groups;
  for (const auto& r : result.results) {
    auto& g = groups.try_emplace(r.name.substr(0, r.name.rfind('.')), 0.0, true).first->second;
    g.first = std::max(g.first, r.max_rel_error);
    g.second = g.second && r.passed;
  }
  for (const auto& [name, g] : groups) {
    std::printf("%-4s %-48s max rel err %.3e\n", g.second ? "ok" : "FAIL", name.c_str(), g.first);
  }
  const bool ok = result.passed();
  std::printf("%s\n", ok ? "gradcheck passed" : "gradcheck FAILED");
  return ok ? Ok : NumericFailure;
}

void set_threads(int threads) {
  if (threads <= 0) {
    if (const char* env = std::getenv("SIAM_THREADS")) threads = std::atoi(env);
  }
#ifdef _OPENMP
  if (threads > 0) omp_set_num_threads(threads);
#endif
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SIAM video prediction toolkit"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "worker threads (default: SIAM_THREADS or all cores)");

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "generate bouncing-digit clips into an SVT file");
  add_config_flags(gen_cmd, gen.config, false);
  gen_cmd->add_option("--seed", gen.seed, "generator seed");
  gen_cmd->add_option("--n", gen.n, "number of sequences")->required();
  gen_cmd->add_option("--frames", gen.frames, "frames per sequence (default: config or 20)");
  gen_cmd->add_option("--idx", gen.idx, "IDX u8 [n, 28, 28] digit images (default: procedural glyphs)");
  gen_cmd->add_option("--out", gen.out, "output SVT path")->required();

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "train a model on an SVT dataset");
  add_config_flags(train_cmd, tr.config);
  train_cmd->add_option("--data", tr.data, "SVT dataset")->required();
  train_cmd->add_option("--out", tr.out, "output directory")->required();
  train_cmd->add_option("--resume", tr.resume, "checkpoint to resume from");
  train_cmd->add_option("--max-steps", tr.max_steps, "override train.max_steps");

  CheckpointArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on an SVT dataset");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "checkpoint file")->required();
  eval_cmd->add_option("--data", ev.data, "SVT dataset")->required();
  eval_cmd->add_option("--json", ev.json, "also write the report as JSON");
  add_config_flags(eval_cmd, ev.config, false);

  CheckpointArgs pr;
  auto* predict_cmd = app.add_subcommand("predict", "write predicted frames as PGM/PPM images");
  predict_cmd->add_option("--checkpoint", pr.checkpoint, "checkpoint file")->required();
  predict_cmd->add_option("--data", pr.data, "SVT dataset")->required();
  predict_cmd->add_option("--out", pr.out, "output directory")->required();
  predict_cmd->add_option("--first", pr.first, "first sequence index");
  predict_cmd->add_option("--count", pr.count, "number of sequences");
  add_config_flags(predict_cmd, pr.config, false);

  CountArgs ca;
  auto* count_cmd = app.add_subcommand("count", "parameter and FLOP report");
  add_config_flags(count_cmd, ca.config);
  count_cmd->add_option("--batch", ca.batch, "batch size for FLOPs");
  count_cmd->add_option("--flops-per-mac", ca.flops_per_mac, "1 or 2")->check(CLI::IsMember({1, 2}));
  count_cmd->add_option("--json", ca.json, "also write the report as JSON");

  ConfigSource gc;
  auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference check of every parameter gradient");
  add_config_flags(gc_cmd, gc);

  std::string preset_name;
  bool list = false;
  auto* preset_cmd = app.add_subcommand("preset", "print a preset configuration");
  preset_cmd->add_option("name", preset_name, "preset name");
  preset_cmd->add_flag("--list", list, "list preset names");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? Ok : Usage;
  }
  set_threads(threads);

  try {
    if (*gen_cmd) return gen_data(gen);
    if (*train_cmd) return train(tr);
    if (*eval_cmd) return eval(ev);
    if (*predict_cmd) return predict(pr);
    if (*count_cmd) return count(ca);
    if (*gc_cmd) return gradcheck(gc);
    if (*preset_cmd) {
      if (list || preset_name.empty()) {
        for (const auto& n : preset_names()) std::printf("%s\n", n.c_str());
      } else {
        std::printf("%s", print_run_config(preset(preset_name)).c_str());
      }
      return Ok;
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return Usage;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return NumericFailure;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return DataError;
  }
  return Usage;
}
