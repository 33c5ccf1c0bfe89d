#ifndef FLOWATTN_INSPECT_HPP_
#define FLOWATTN_INSPECT_HPP_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "flowattn/model.hpp"
#include "flowattn/training.hpp"

namespace flowattn {

// Competition softmax(O^) over the m sources and allocation sigmoid(I^) over
// the n sinks of one layer, one row per head.
struct AttentionDump {
  std::size_t layer = 0;
  std::vector<std::size_t> heads;
  std::vector<std::vector<double>> competition;
  std::vector<std::vector<double>> allocation;
};

// Throws UnsupportedError for mechanisms without flow statistics and
// ContractError when layer or head is out of range.
AttentionDump dump_attention(const Checkpoint& ckpt, std::span<const std::int64_t> tokens, std::size_t layer,
                             std::optional<std::size_t> head = std::nullopt);

// CSV with columns head,w0,...,w{k-1}.
void write_weights_csv(const std::vector<std::size_t>& heads, const std::vector<std::vector<double>>& rows,
                       std::ostream& out);
// Writes competition_layer{L}.csv and allocation_layer{L}.csv; returns both paths.
std::pair<std::filesystem::path, std::filesystem::path> write_dump(const AttentionDump& dump,
                                                                   const std::filesystem::path& dir);

enum class AblationAxis { kPhi, kCompetitionAct, kAllocationAct, kNoCompetition, kNoAllocation };

std::string_view to_string(AblationAxis a);
AblationAxis parse_ablation_axis(std::string_view s);

struct AblationRow {
  AttentionConfig attention;
  bool is_default = false;
  double loss = 0.0;
  double metric = 0.0;
};

// Cross product of the values of each axis; all other fields come from
// base. The row equal to the library defaults is marked.
std::vector<AttentionConfig> ablation_grid(const AttentionConfig& base, std::span<const AblationAxis> axes);

std::vector<AblationRow> run_ablation(const ModelConfig& model, const Task& task, const TrainConfig& cfg,
                                      std::span<const AblationAxis> axes,
                                      const std::function<void(const AblationRow&)>& on_row = {});

void write_ablation_csv(const std::vector<AblationRow>& rows, std::ostream& out);
void write_ablation_table(const std::vector<AblationRow>& rows, std::ostream& out);

}  // namespace flowattn

#endif  // FLOWATTN_INSPECT_HPP_
