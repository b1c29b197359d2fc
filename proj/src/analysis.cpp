#include "siam/analysis.hpp"

#include <cmath>
#include <cstdio>
#include <json.hpp>

namespace siam {

namespace {

std::string width_assumption(const SiamConfig& c) {
  const Index cl = c.latent.channels;
  char buf[400];
  std::snprintf(buf, sizeof(buf),
                "mixer widths (%lld, %lld, %lld): spatial and spatiotemporal widths act on the %lld latent channels, "
                "the temporal width on the flattened T*C' = %lld axis; 1x1 projections are added only where a "
                "width differs from its native axis; encoder and decoder stay at %lld channels",
                static_cast<long long>(c.mixer_dims[0]), static_cast<long long>(c.mixer_dims[1]),
                static_cast<long long>(c.mixer_dims[2]), static_cast<long long>(cl),
                static_cast<long long>(c.t_in * cl), static_cast<long long>(cl));
  return buf;
}

CostReport base_report(const SiamConfig& c) {
  CostReport r;
  r.config_name = c.name;
  r.reference = reference_cost(c.name);
  r.width_assumption = width_assumption(c);
  return r;
}

void add_totals(CostReport& r) {
  r.total_params = r.total_macs = r.total_elementwise = 0;
  for (const auto& row : r.rows) {
    r.total_params += row.params;
    r.total_macs += row.macs;
    r.total_elementwise += row.elementwise;
  }
}

std::string with_commas(Index v) {
  std::string s = std::to_string(v);
  for (int i = static_cast<int>(s.size()) - 3; i > 0; i -= 3) s.insert(static_cast<std::size_t>(i), ",");
  return s;
}

}  // namespace

WindowCheck within_window(double value, double reference, double tolerance) {
  WindowCheck w;
  w.value = value;
  w.reference = reference;
  w.delta = (value - reference) / reference;
  w.within = std::abs(w.delta) <= tolerance;
  return w;
}

template <typename Scalar>
CostReport count_params(const SiamModel<Scalar>& model) {
  CostReport r = base_report(model.config());
  for (const auto& row : model.cost_rows(1)) {
    if (row.params > 0) r.rows.push_back({row.path, row.params, 0, 0});
  }
  add_totals(r);
  return r;
}

template <typename Scalar>
CostReport count_flops(const SiamModel<Scalar>& model, const Shape& input_shape, int flops_per_mac) {
  const auto& c = model.config();
  const Shape expected{c.t_in, c.frame.channels, c.frame.height, c.frame.width};
  if (input_shape.size() != 5 || input_shape[0] < 1 || Shape(input_shape.begin() + 1, input_shape.end()) != expected) {
    throw ShapeError("count_flops: input shape " + to_string(input_shape) + " does not match [B, " +
                     std::to_string(c.t_in) + ", " + std::to_string(c.frame.channels) + ", " +
                     std::to_string(c.frame.height) + ", " + std::to_string(c.frame.width) + "]");
  }
  if (flops_per_mac != 1 && flops_per_mac != 2) throw ConfigError("flops per MAC must be 1 or 2");
  CostReport r = base_report(c);
  r.input_shape = input_shape;
  r.flops_per_mac = flops_per_mac;
  r.rows = model.cost_rows(input_shape[0]);
  add_totals(r);
  return r;
}

std::string format_cost_report(const CostReport& r) {
  std::string out;
  char line[256];
  std::snprintf(line, sizeof(line), "config %s, input %s, %d FLOP per MAC\n", r.config_name.c_str(),
                r.input_shape.empty() ? "(params only)" : to_string(r.input_shape).c_str(), r.flops_per_mac);
  out += line;
  std::snprintf(line, sizeof(line), "%-48s %14s %18s %16s\n", "layer", "params", "MACs", "elementwise");
  out += line;
  for (const auto& row : r.rows) {
    std::snprintf(line, sizeof(line), "%-48s %14s %18s %16s\n", row.path.c_str(), with_commas(row.params).c_str(),
                  with_commas(row.macs).c_str(), with_commas(row.elementwise).c_str());
    out += line;
  }
  std::snprintf(line, sizeof(line), "%-48s %14s %18s %16s\n", "total", with_commas(r.total_params).c_str(),
                with_commas(r.total_macs).c_str(), with_commas(r.total_elementwise).c_str());
  out += line;
  const double params_m = static_cast<double>(r.total_params) / 1e6;
  const double gflops = r.total_flops() / 1e9;
  std::snprintf(line, sizeof(line), "params %.3fM", params_m);
  out += line;
  if (!r.input_shape.empty()) {
    std::snprintf(line, sizeof(line), ", FLOPs %.3fG", gflops);
    out += line;
  }
  out += "\n";
  if (r.reference) {
    const auto p = within_window(params_m, r.reference->params_m);
    std::snprintf(line, sizeof(line), "reference params %.1fM: delta %+.1f%% (%s the +-25%% window)\n",
                  p.reference, 100 * p.delta, p.within ? "inside" : "OUTSIDE");
    out += line;
    if (!r.input_shape.empty()) {
      const auto f = within_window(gflops, r.reference->gflops);
      std::snprintf(line, sizeof(line), "reference FLOPs %.1fG: delta %+.1f%% (%s the +-25%% window)\n", f.reference,
                    100 * f.delta, f.within ? "inside" : "OUTSIDE");
      out += line;
    }
  }
  out += "assumption: " + r.width_assumption + "\n";
  return out;
}

std::string cost_report_json(const CostReport& r) {
  nlohmann::json j;
  j["config"] = r.config_name;
  j["input_shape"] = r.input_shape;
  j["flops_per_mac"] = r.flops_per_mac;
  auto rows = nlohmann::json::array();
  for (const auto& row : r.rows) {
    rows.push_back({{"path", row.path}, {"params", row.params}, {"macs", row.macs}, {"elementwise", row.elementwise}});
  }
  j["rows"] = rows;
  j["total_params"] = r.total_params;
  j["total_macs"] = r.total_macs;
  j["total_elementwise"] = r.total_elementwise;
  j["total_flops"] = r.total_flops();
  j["width_assumption"] = r.width_assumption;
  if (r.reference) {
    const auto p = within_window(static_cast<double>(r.total_params) / 1e6, r.reference->params_m);
    j["reference"]["params_m"] = {{"value", p.reference}, {"delta", p.delta}, {"within_25pct", p.within}};
    if (!r.input_shape.empty()) {
      const auto f = within_window(r.total_flops() / 1e9, r.reference->gflops);
      j["reference"]["gflops"] = {{"value", f.reference}, {"delta", f.delta}, {"within_25pct", f.within}};
    }
  }
  return j.dump(2);
}

template CostReport count_params(const SiamModel<float>&);
template CostReport count_params(const SiamModel<double>&);
template CostReport count_flops(const SiamModel<float>&, const Shape&, int);
template CostReport count_flops(const SiamModel<double>&, const Shape&, int);

}  // namespace siam
