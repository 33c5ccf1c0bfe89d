#include "flowattn/inspect.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "flowattn/error.hpp"

namespace flowattn {

AttentionDump dump_attention(const Checkpoint& ckpt, std::span<const std::int64_t> tokens, std::size_t layer,
                             std::optional<std::size_t> head) {
  const ModelConfig& cfg = ckpt.config;
  if (!cfg.attention.has_flow_stats()) {
    throw UnsupportedError("dump-attn: mechanism " + std::string(to_string(cfg.attention.mechanism)) +
                           " has no competition or allocation weights");
  }
  if (layer >= cfg.layers) {
    throw ContractError("dump-attn: layer " + std::to_string(layer) + " out of range [0, " +
                        std::to_string(cfg.layers) + ")");
  }
  if (head && *head >= cfg.attention.heads) {
    throw ContractError("dump-attn: head " + std::to_string(*head) + " out of range [0, " +
                        std::to_string(cfg.attention.heads) + ")");
  }
  if (tokens.empty()) throw ContractError("dump-attn: empty token sequence");

  const auto fwd = forward(cfg, cast_parameters<double>(ckpt.parameters), tokens);
  const FlowStats<double>& stats = *fwd.stats.at(layer);
  const Tensor<double> comp = softmax_axis(stats.conserved_outgoing, 0);  // m x h
  const Tensor<double> alloc = sigmoid(stats.conserved_incoming);         // n x h

  AttentionDump out;
  out.layer = layer;
  for (std::size_t hd = 0; hd < cfg.attention.heads; ++hd) {
    if (head && hd != *head) continue;
    out.heads.push_back(hd);
    std::vector<double> c(comp.extent(0)), a(alloc.extent(0));
    for (std::size_t j = 0; j < c.size(); ++j) c[j] = comp.at(j, hd);
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = alloc.at(i, hd);
    out.competition.push_back(std::move(c));
    out.allocation.push_back(std::move(a));
  }
  return out;
}

void write_weights_csv(const std::vector<std::size_t>& heads, const std::vector<std::vector<double>>& rows,
                       std::ostream& out) {
  const std::size_t width = rows.empty() ? 0 : rows.front().size();
  out << "head";
  for (std::size_t j = 0; j < width; ++j) out << ",w" << j;
  out << '\n';
  char buf[32];
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out << heads[r];
    for (double w : rows[r]) {
      std::snprintf(buf, sizeof buf, ",%.17g", w);
      out << buf;
    }
    out << '\n';
  }
}

std::pair<std::filesystem::path, std::filesystem::path> write_dump(const AttentionDump& dump,
                                                                   const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const std::string suffix = "_layer" + std::to_string(dump.layer) + ".csv";
  const auto comp_path = dir / ("competition" + suffix);
  const auto alloc_path = dir / ("allocation" + suffix);
  std::ofstream comp(comp_path), alloc(alloc_path);
  if (!comp || !alloc) throw DataError("dump-attn: cannot write to " + dir.string());
  write_weights_csv(dump.heads, dump.competition, comp);
  write_weights_csv(dump.heads, dump.allocation, alloc);
  return {comp_path, alloc_path};
}

namespace {

constexpr std::array<std::pair<AblationAxis, std::string_view>, 5> kAxes{{
    {AblationAxis::kPhi, "phi"},
    {AblationAxis::kCompetitionAct, "competition_act"},
    {AblationAxis::kAllocationAct, "allocation_act"},
    {AblationAxis::kNoCompetition, "no_competition"},
    {AblationAxis::kNoAllocation, "no_allocation"},
}};

std::vector<AttentionConfig> expand(const std::vector<AttentionConfig>& in, AblationAxis axis) {
  std::vector<AttentionConfig> out;
  for (const AttentionConfig& c : in) {
    switch (axis) {
      case AblationAxis::kPhi:
        for (FeatureMap f : {FeatureMap::kSigmoid, FeatureMap::kEluPlusOne, FeatureMap::kRelu}) {
          out.push_back(c);
          out.back().phi = f;
        }
        break;
      case AblationAxis::kCompetitionAct:
      case AblationAxis::kAllocationAct:
        for (Activation a : {Activation::kSoftmax, Activation::kSigmoid}) {
          out.push_back(c);
          (axis == AblationAxis::kCompetitionAct ? out.back().competition_act : out.back().allocation_act) = a;
        }
        break;
      case AblationAxis::kNoCompetition:
      case AblationAxis::kNoAllocation:
        for (bool on : {true, false}) {
          out.push_back(c);
          (axis == AblationAxis::kNoCompetition ? out.back().competition : out.back().allocation) = on;
        }
        break;
    }
  }
  return out;
}

bool is_default(const AttentionConfig& c) {
  const AttentionConfig d;
  return c.phi == d.phi && c.competition_act == d.competition_act && c.allocation_act == d.allocation_act &&
         c.competition == d.competition && c.allocation == d.allocation;
}

}  // namespace

std::string_view to_string(AblationAxis a) {
  for (const auto& [e, name] : kAxes)
    if (e == a) return name;
  return "unknown";
}

AblationAxis parse_ablation_axis(std::string_view s) {
  for (const auto& [e, name] : kAxes)
    if (name == s) return e;
  throw ContractError("unknown ablation axis '" + std::string(s) +
                      "' (expected phi, competition_act, allocation_act, no_competition or no_allocation)");
}

std::vector<AttentionConfig> ablation_grid(const AttentionConfig& base, std::span<const AblationAxis> axes) {
  std::vector<AttentionConfig> grid{base};
  for (std::size_t i = 0; i < axes.size(); ++i) {
    for (std::size_t k = 0; k < i; ++k) {
      if (axes[k] == axes[i]) throw ContractError("ablate: axis '" + std::string(to_string(axes[i])) + "' repeated");
    }
    grid = expand(grid, axes[i]);
  }
  return grid;
}

std::vector<AblationRow> run_ablation(const ModelConfig& model, const Task& task, const TrainConfig& cfg,
                                      std::span<const AblationAxis> axes,
                                      const std::function<void(const AblationRow&)>& on_row) {
  if (!model.attention.has_flow_stats()) {
    throw UnsupportedError("ablate: mechanism " + std::string(to_string(model.attention.mechanism)) +
                           " has no competition or allocation to ablate");
  }
  std::vector<AblationRow> rows;
  for (const AttentionConfig& a : ablation_grid(model.attention, axes)) {
    ModelConfig m = model;
    m.attention = a;
    const TrainResult r = train(m, task, cfg);
    AblationRow row;
    row.attention = a;
    row.is_default = is_default(a);
    row.loss = r.final_eval.loss;
    row.metric = r.final_eval.accuracy;
    rows.push_back(row);
    if (on_row) on_row(rows.back());
  }
  return rows;
}

void write_ablation_csv(const std::vector<AblationRow>& rows, std::ostream& out) {
  out << "default,phi,competition_act,allocation_act,competition,allocation,loss,metric\n";
  char buf[64];
  for (const AblationRow& r : rows) {
    out << (r.is_default ? 1 : 0) << ',' << to_string(r.attention.phi) << ',' << to_string(r.attention.competition_act)
        << ',' << to_string(r.attention.allocation_act) << ',' << (r.attention.competition ? 1 : 0) << ','
        << (r.attention.allocation ? 1 : 0);
    std::snprintf(buf, sizeof buf, ",%.17g,%.17g\n", r.loss, r.metric);
    out << buf;
  }
}

void write_ablation_table(const std::vector<AblationRow>& rows, std::ostream& out) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "  %-13s %-15s %-14s %-11s %-10s %10s %8s\n", "phi", "competition_act",
                "allocation_act", "competition", "allocation", "loss", "metric");
  out << buf;
  for (const AblationRow& r : rows) {
    std::snprintf(buf, sizeof buf, "%c %-13s %-15s %-14s %-11s %-10s %10.4f %8.4f\n", r.is_default ? '*' : ' ',
                  std::string(to_string(r.attention.phi)).c_str(),
                  std::string(to_string(r.attention.competition_act)).c_str(),
                  std::string(to_string(r.attention.allocation_act)).c_str(), r.attention.competition ? "on" : "off",
                  r.attention.allocation ? "on" : "off", r.loss, r.metric);
    out << buf;
  }
  out << "* default configuration\n";
}

}  // namespace flowattn
