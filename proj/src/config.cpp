#include "siam/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace siam {

const char* to_string(MixerKind kind) {
  switch (kind) {
    case MixerKind::Spatial: return "spatial";
    case MixerKind::Spatiotemporal: return "spatiotemporal";
    case MixerKind::Temporal: return "temporal";
  }
  return "?";
}

const char* to_string(Dtype dtype) { return dtype == Dtype::Float64 ? "float64" : "float32"; }

Index SiamConfig::stages() const {
  if (latent.height <= 0 || frame.height % latent.height != 0) return -1;
  Index ratio = frame.height / latent.height;
  Index s = 0;
  while (ratio > 1 && ratio % 2 == 0) {
    ratio /= 2;
    ++s;
  }
  return ratio == 1 ? s : -1;
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const std::string& expected) {
  throw ConfigError("config key `" + key + "`: cannot parse '" + value + "' as " + expected);
}

Index parse_int(const std::string& key, const std::string& v) {
  Index out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) bad_value(key, v, "an integer");
  return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) bad_value(key, v, "an unsigned integer");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) bad_value(key, v, "a number");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  bad_value(key, v, "a boolean");
}

// "(64, 16, 16)" or "64,16,16" -> items.
std::vector<std::string> split_list(std::string v, char sep = ',') {
  v.erase(std::remove_if(v.begin(), v.end(), [](char c) { return c == '(' || c == ')' || c == ' ' || c == '\t'; }),
          v.end());
  std::vector<std::string> items;
  if (v.empty()) return items;
  std::string cur;
  for (char c : v) {
    if (c == sep) {
      items.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  items.push_back(cur);
  return items;
}

template <std::size_t N>
std::array<Index, N> parse_ints(const std::string& key, const std::string& v) {
  auto items = split_list(v);
  if (items.size() != N) bad_value(key, v, std::to_string(N) + " comma-separated integers");
  std::array<Index, N> out{};
  for (std::size_t i = 0; i < N; ++i) out[i] = parse_int(key, items[i]);
  return out;
}

template <typename Range>
std::string join_ints(const Range& r) {
  std::string s;
  for (auto v : r) s += (s.empty() ? "" : ",") + std::to_string(v);
  return s;
}

MixerKind parse_mixer(const std::string& key, const std::string& v) {
  if (v == "spatial") return MixerKind::Spatial;
  if (v == "spatiotemporal") return MixerKind::Spatiotemporal;
  if (v == "temporal") return MixerKind::Temporal;
  bad_value(key, v, "spatial|spatiotemporal|temporal");
}

struct Field {
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
};

using Section = std::vector<std::pair<std::string, Field>>;

Section model_fields(SiamConfig& m) {
  Section s;
  const auto add = [&](const std::string& key, Field f) { s.emplace_back(key, std::move(f)); };
  add("name", {[&](const std::string& v) { m.name = v; }, [&] { return m.name; }});
  add("t_in", {[&](const std::string& v) { m.t_in = parse_int("model.t_in", v); }, [&] { return std::to_string(m.t_in); }});
  add("t_out",
      {[&](const std::string& v) { m.t_out = parse_int("model.t_out", v); }, [&] { return std::to_string(m.t_out); }});
  add("frame_shape", {[&](const std::string& v) {
                        auto a = parse_ints<3>("model.frame_shape", v);
                        m.frame = {a[0], a[1], a[2]};
                      },
                      [&] { return join_ints(std::array{m.frame.channels, m.frame.height, m.frame.width}); }});
  add("latent_shape", {[&](const std::string& v) {
                         auto a = parse_ints<3>("model.latent_shape", v);
                         m.latent = {a[0], a[1], a[2]};
                       },
                       [&] { return join_ints(std::array{m.latent.channels, m.latent.height, m.latent.width}); }});
  add("n_blocks", {[&](const std::string& v) { m.n_blocks = parse_int("model.n_blocks", v); },
                   [&] { return std::to_string(m.n_blocks); }});
  add("mixer_dims", {[&](const std::string& v) { m.mixer_dims = parse_ints<3>("model.mixer_dims", v); },
                     [&] { return join_ints(m.mixer_dims); }});
  add("mixer_order", {[&](const std::string& v) {
                        auto items = split_list(v);
                        if (items.size() != 3) bad_value("model.mixer_order", v, "three Mixer names");
                        for (std::size_t i = 0; i < 3; ++i) m.mixer_order[i] = parse_mixer("model.mixer_order", items[i]);
                      },
                      [&] {
                        std::string out;
                        for (auto k : m.mixer_order) out += (out.empty() ? "" : ",") + std::string(to_string(k));
                        return out;
                      }});
  add("mixer_enabled", {[&](const std::string& v) {
                          auto items = split_list(v);
                          if (items.size() != 3) bad_value("model.mixer_enabled", v, "three booleans");
                          for (std::size_t i = 0; i < 3; ++i) m.mixer_enabled[i] = parse_bool("model.mixer_enabled", items[i]);
                        },
                        [&] {
                          std::string out;
                          for (bool b : m.mixer_enabled) out += (out.empty() ? "" : ",") + std::string(b ? "true" : "false");
                          return out;
                        }});
  add("expansion_ratio", {[&](const std::string& v) { m.expansion_ratio = parse_int("model.expansion_ratio", v); },
                          [&] { return std::to_string(m.expansion_ratio); }});
  add("norm_groups", {[&](const std::string& v) { m.norm_groups = parse_int("model.norm_groups", v); },
                      [&] { return std::to_string(m.norm_groups); }});
  add("norm_eps", {[&](const std::string& v) { m.norm_eps = parse_double("model.norm_eps", v); },
                   [&] { return format_double(m.norm_eps); }});
  add("spatial_kernels", {[&](const std::string& v) { m.spatial_kernels = parse_ints<3>("model.spatial_kernels", v); },
                          [&] { return join_ints(m.spatial_kernels); }});
  add("incep_branches", {[&](const std::string& v) {
                           m.incep_branches.clear();
                           for (const auto& item : split_list(v)) {
                             auto dims = split_list(item, 'x');
                             if (dims.size() != 3) bad_value("model.incep_branches", v, "kernels like 3x1x1");
                             m.incep_branches.push_back({parse_int("model.incep_branches", dims[0]),
                                                         parse_int("model.incep_branches", dims[1]),
                                                         parse_int("model.incep_branches", dims[2])});
                           }
                         },
                         [&] {
                           std::string out;
                           for (const auto& k : m.incep_branches) {
                             out += (out.empty() ? "" : ",") + std::to_string(k[0]) + "x" + std::to_string(k[1]) + "x" +
                                    std::to_string(k[2]);
                           }
                           return out;
                         }});
  add("strict_split", {[&](const std::string& v) { m.strict_split = parse_bool("model.strict_split", v); },
                       [&] { return std::string(m.strict_split ? "true" : "false"); }});
  add("dtype", {[&](const std::string& v) {
                  if (v == "float32") m.dtype = Dtype::Float32;
                  else if (v == "float64") m.dtype = Dtype::Float64;
                  else bad_value("model.dtype", v, "float32|float64");
                },
                [&] { return std::string(to_string(m.dtype)); }});
  add("init_seed", {[&](const std::string& v) { m.init_seed = parse_u64("model.init_seed", v); },
                    [&] { return std::to_string(m.init_seed); }});
  return s;
}

Section train_fields(TrainConfig& t) {
  Section s;
  const auto num = [&](const std::string& key, double& ref) {
    s.emplace_back(key, Field{[&ref, key](const std::string& v) { ref = parse_double("train." + key, v); },
                              [&ref] { return format_double(ref); }});
  };
  const auto integer = [&](const std::string& key, Index& ref) {
    s.emplace_back(key, Field{[&ref, key](const std::string& v) { ref = parse_int("train." + key, v); },
                              [&ref] { return std::to_string(ref); }});
  };
  num("lr", t.lr);
  num("beta1", t.beta1);
  num("beta2", t.beta2);
  num("eps", t.eps);
  num("weight_decay", t.weight_decay);
  integer("batch_size", t.batch_size);
  integer("max_steps", t.max_steps);
  s.emplace_back("schedule", Field{[&](const std::string& v) {
                                     if (v == "constant") t.schedule = Schedule::Constant;
                                     else if (v == "onecycle") t.schedule = Schedule::OneCycle;
                                     else bad_value("train.schedule", v, "constant|onecycle");
                                   },
                                   [&] { return std::string(t.schedule == Schedule::Constant ? "constant" : "onecycle"); }});
  num("warmup_frac", t.warmup_frac);
  s.emplace_back("grad_clip", Field{[&](const std::string& v) {
                                      if (v == "none" || v == "inf") t.grad_clip.reset();
                                      else t.grad_clip = parse_double("train.grad_clip", v);
                                    },
                                    [&] { return t.grad_clip ? format_double(*t.grad_clip) : std::string("none"); }});
  s.emplace_back("seed", Field{[&](const std::string& v) { t.seed = parse_u64("train.seed", v); },
                               [&] { return std::to_string(t.seed); }});
  integer("checkpoint_every", t.checkpoint_every);
  integer("log_every", t.log_every);
  return s;
}

Section data_fields(MovingConfig& d) {
  Section s;
  s.emplace_back("canvas", Field{[&](const std::string& v) {
                                   auto a = parse_ints<2>("data.canvas", v);
                                   d.canvas_height = a[0];
                                   d.canvas_width = a[1];
                                 },
                                 [&] { return join_ints(std::array{d.canvas_height, d.canvas_width}); }});
  s.emplace_back("n_digits", Field{[&](const std::string& v) { d.n_digits = parse_int("data.n_digits", v); },
                                   [&] { return std::to_string(d.n_digits); }});
  s.emplace_back("frames", Field{[&](const std::string& v) { d.frames = parse_int("data.frames", v); },
                                 [&] { return std::to_string(d.frames); }});
  s.emplace_back("speed_min", Field{[&](const std::string& v) { d.speed_min = parse_double("data.speed_min", v); },
                                    [&] { return format_double(d.speed_min); }});
  s.emplace_back("speed_max", Field{[&](const std::string& v) { d.speed_max = parse_double("data.speed_max", v); },
                                    [&] { return format_double(d.speed_max); }});
  s.emplace_back("seed", Field{[&](const std::string& v) { d.seed = parse_u64("data.seed", v); },
                               [&] { return std::to_string(d.seed); }});
  s.emplace_back("digit_variants", Field{[&](const std::string& v) { d.digit_variants = parse_int("data.digit_variants", v); },
                                         [&] { return std::to_string(d.digit_variants); }});
  s.emplace_back("idx_path", Field{[&](const std::string& v) { d.idx_path = v; }, [&] { return d.idx_path; }});
  return s;
}

std::string print_section(const std::string& title, const Section& fields) {
  std::string out = "[" + title + "]\n";
  for (const auto& [key, f] : fields) out += key + " = " + f.get() + "\n";
  return out;
}

}  // namespace

void validate(const SiamConfig& c) {
  if (c.t_in < 1) throw ConfigError("model.t_in must be >= 1");
  if (c.t_out != c.t_in) throw ConfigError("model.t_out must equal model.t_in (longer horizons use rollout)");
  for (auto [v, key] : {std::pair{c.frame.channels, "frame_shape"}, {c.frame.height, "frame_shape"},
                        {c.frame.width, "frame_shape"}, {c.latent.channels, "latent_shape"},
                        {c.latent.height, "latent_shape"}, {c.latent.width, "latent_shape"}}) {
    if (v < 1) throw ConfigError(std::string("model.") + key + " extents must be positive");
  }
  const Index s = c.stages();
  if (s < 0 || c.frame.width % c.latent.width != 0 || c.frame.width / c.latent.width != (Index{1} << s)) {
    throw ConfigError("model.frame_shape / model.latent_shape: height and width must shrink by the same power of two");
  }
  if (c.n_blocks < 0) throw ConfigError("model.n_blocks must be >= 0");
  if (std::none_of(c.mixer_enabled.begin(), c.mixer_enabled.end(), [](bool b) { return b; })) {
    throw ConfigError("model.mixer_enabled: at least one Mixer must be enabled");
  }
  std::set<MixerKind> kinds(c.mixer_order.begin(), c.mixer_order.end());
  if (kinds.size() != 3) throw ConfigError("model.mixer_order must be a permutation of the three Mixers");
  for (Index d : c.mixer_dims) {
    if (d < 1) throw ConfigError("model.mixer_dims must be positive");
  }
  if (c.expansion_ratio < 1) throw ConfigError("model.expansion_ratio must be >= 1");
  if (!(c.norm_eps > 0.0)) throw ConfigError("model.norm_eps must be positive");
  if (c.norm_groups < 1 || c.latent.channels % c.norm_groups != 0) {
    throw ConfigError("model.norm_groups must divide the latent channels (" + std::to_string(c.latent.channels) + ")");
  }
  if (c.enabled(MixerKind::Temporal) && c.stacked_channels() % c.norm_groups != 0) {
    throw ConfigError("model.norm_groups must divide t_in * latent channels for the temporal Mixer");
  }
  if (c.enabled(MixerKind::Spatiotemporal)) {
    const Index d = c.dim(MixerKind::Spatiotemporal);
    if (c.incep_branches.size() != 4) throw ConfigError("model.incep_branches must list four kernels");
    if (d < 5) throw ConfigError("model.mixer_dims: spatiotemporal width must be at least 5 for the five-way split");
    if (c.strict_split && d % 5 != 0) {
      throw ConfigError("model.mixer_dims: spatiotemporal width " + std::to_string(d) +
                        " is not divisible by 5 (strict_split = true)");
    }
    for (const auto& k : c.incep_branches) {
      for (Index e : k) {
        if (e < 1 || e % 2 == 0) throw ConfigError("model.incep_branches: same-padding branches need odd kernels");
      }
    }
  }
  if (c.enabled(MixerKind::Spatial)) {
    if (c.spatial_kernels[0] % 2 == 0 || c.spatial_kernels[1] % 2 == 0 || c.spatial_kernels[0] < 1 ||
        c.spatial_kernels[1] < 1 || c.spatial_kernels[2] < 1) {
      throw ConfigError("model.spatial_kernels: kernels must be odd and the dilation positive");
    }
  }
}

void validate(const TrainConfig& t) {
  if (!(t.lr >= 0.0)) throw ConfigError("train.lr must be non-negative");
  if (!(t.beta1 > 0.0 && t.beta1 < 1.0) || !(t.beta2 > 0.0 && t.beta2 < 1.0)) {
    throw ConfigError("train.beta1/beta2 must lie in (0, 1)");
  }
  if (!(t.eps > 0.0)) throw ConfigError("train.eps must be positive");
  if (t.weight_decay < 0.0) throw ConfigError("train.weight_decay must be non-negative");
  if (t.batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (t.max_steps < 0) throw ConfigError("train.max_steps must be >= 0");
  if (!(t.warmup_frac >= 0.0 && t.warmup_frac < 1.0)) throw ConfigError("train.warmup_frac must lie in [0, 1)");
  if (t.grad_clip && !(*t.grad_clip > 0.0)) throw ConfigError("train.grad_clip must be positive or none");
  if (t.checkpoint_every < 0 || t.log_every < 1) throw ConfigError("train.checkpoint_every >= 0, train.log_every >= 1");
}

void validate(const MovingConfig& d) {
  if (d.canvas_height < 28 || d.canvas_width < 28) throw ConfigError("data.canvas must fit a 28x28 digit");
  if (d.n_digits < 1) throw ConfigError("data.n_digits must be >= 1");
  if (d.frames < 1) throw ConfigError("data.frames must be >= 1");
  if (!(d.speed_min > 0.0) || d.speed_max < d.speed_min) throw ConfigError("data.speed_min/max: need 0 < min <= max");
  if (d.digit_variants < 1) throw ConfigError("data.digit_variants must be >= 1");
}

RunConfig parse_run_config(const std::string& text) {
  RunConfig cfg;
  std::map<std::string, Section> sections;
  sections.emplace("model", model_fields(cfg.model));
  sections.emplace("train", train_fields(cfg.train));
  sections.emplace("data", data_fields(cfg.data));
  std::set<std::string> seen;
  std::string current;
  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("line " + std::to_string(line_no) + ": malformed section header");
      current = trim(line.substr(1, line.size() - 2));
      if (sections.count(current) == 0) throw ConfigError("unknown config section [" + current + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    if (current.empty()) throw ConfigError("line " + std::to_string(line_no) + ": key outside of a section");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    auto& fields = sections.at(current);
    auto it = std::find_if(fields.begin(), fields.end(), [&](const auto& f) { return f.first == key; });
    if (it == fields.end()) throw ConfigError("unknown config key `" + current + "." + key + "`");
    if (!seen.insert(current + "." + key).second) throw ConfigError("duplicate config key `" + current + "." + key + "`");
    it->second.set(value);
  }
  for (const char* key : {"model.t_in", "model.t_out", "model.frame_shape", "model.latent_shape", "model.mixer_dims"}) {
    if (seen.count(key) == 0) throw ConfigError(std::string("missing config key `") + key + "`");
  }
  validate(cfg.model);
  validate(cfg.train);
  validate(cfg.data);
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_run_config(ss.str());
}

std::string print_model_section(const SiamConfig& config) {
  SiamConfig copy = config;
  return print_section("model", model_fields(copy));
}

std::string print_run_config(const RunConfig& config) {
  RunConfig copy = config;
  return print_section("model", model_fields(copy.model)) + "\n" + print_section("train", train_fields(copy.train)) +
         "\n" + print_section("data", data_fields(copy.data));
}

std::uint64_t fingerprint(const SiamConfig& config) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : print_model_section(config)) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

std::vector<std::string> preset_names() {
  return {"mmnist", "taxibj", "weatherbench", "human36m", "micro", "gradcheck", "ablation-a", "ablation-b",
          "ablation-c", "ablation-d", "ablation-e", "ablation-f", "ablation-g"};
}

RunConfig preset(const std::string& name) {
  RunConfig r;
  SiamConfig& m = r.model;
  m.name = name;
  const auto table1 = [&](Index t, FrameShape frame, FrameShape latent, std::array<Index, 3> dims) {
    m.t_in = t;
    m.t_out = t;
    m.frame = frame;
    m.latent = latent;
    m.mixer_dims = dims;
  };
  if (name == "mmnist" || name.rfind("ablation-", 0) == 0) {
    table1(10, {1, 64, 64}, {64, 16, 16}, {256, 256, 640});
    r.data.frames = 20;
    if (name != "mmnist") {
      // Rows (a)-(g): single, dual and triple Mixer variants.
      static const std::map<std::string, std::array<bool, 3>> rows{
          {"ablation-a", {true, false, false}}, {"ablation-b", {false, true, false}}, {"ablation-c", {false, false, true}},
          {"ablation-d", {true, true, false}},  {"ablation-e", {true, false, true}},  {"ablation-f", {false, true, true}},
          {"ablation-g", {true, true, true}}};
      auto it = rows.find(name);
      if (it == rows.end()) throw ConfigError("unknown preset '" + name + "'");
      m.mixer_enabled = it->second;
    }
  } else if (name == "taxibj") {
    table1(4, {2, 32, 32}, {64, 16, 16}, {64, 64, 256});
    r.data.frames = 8;
  } else if (name == "weatherbench") {
    table1(12, {1, 32, 64}, {32, 16, 32}, {32, 32, 384});
    r.data.frames = 24;
  } else if (name == "human36m") {
    table1(4, {3, 256, 256}, {128, 64, 64}, {512, 512, 512});
    r.data.frames = 8;
  } else if (name == "micro") {
    table1(4, {1, 64, 64}, {8, 16, 16}, {32, 32, 32});
    m.n_blocks = 2;
    m.norm_groups = 4;
    r.train.lr = 2e-3;
    r.train.batch_size = 8;
    r.train.max_steps = 2000;
    r.train.log_every = 10;
    r.data.frames = 8;
  } else if (name == "gradcheck") {
    table1(3, {1, 12, 12}, {10, 6, 6}, {10, 10, 30});
    m.n_blocks = 1;
    m.norm_groups = 2;
    m.dtype = Dtype::Float64;
    r.train.batch_size = 2;
    r.data.frames = 6;
  } else {
    throw ConfigError("unknown preset '" + name + "'");
  }
  validate(r.model);
  return r;
}

std::optional<ReferenceCost> reference_cost(const std::string& name) {
  if (name == "mmnist" || name == "ablation-g") return ReferenceCost{34.6, 16.4};
  if (name == "taxibj") return ReferenceCost{4.0, 1.2};
  if (name == "weatherbench") return ReferenceCost{9.6, 6.0};
  if (name == "human36m") return ReferenceCost{24.0, 180.5};
  return std::nullopt;
}

}  // namespace siam
