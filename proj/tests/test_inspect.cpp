#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "doctest.h"
#include "flowattn/inspect.hpp"

using namespace flowattn;

namespace {

ModelConfig micro(Mechanism mech) {
  ModelConfig cfg;
  cfg.vocab_size = 9;
  cfg.max_seq_len = 8;
  cfg.layers = 2;
  cfg.channels = 8;
  cfg.ffn_channels = 16;
  cfg.attention.mechanism = mech;
  cfg.attention.heads = 2;
  return cfg;
}

std::vector<std::vector<double>> read_csv_rows(const std::filesystem::path& path) {
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    std::istringstream cells(line);
    std::string cell;
    std::getline(cells, cell, ',');
    rows.emplace_back();
    while (std::getline(cells, cell, ',')) rows.back().push_back(std::stod(cell));
  }
  return rows;
}

}  // namespace

TEST_CASE("dump contract") {
  for (Mechanism m : {Mechanism::kFlowNormal, Mechanism::kFlowCausal}) {
    const Checkpoint ckpt = init_parameters(micro(m), 3);
    const std::vector<std::int64_t> tokens{4, 1, 8, 2, 2, 7};
    const AttentionDump d = dump_attention(ckpt, tokens, 1);
    REQUIRE(d.heads.size() == 2);
    const auto dir = std::filesystem::temp_directory_path() / "flowattn_test_dump";
    const auto [comp, alloc] = write_dump(d, dir);
    const auto crow = read_csv_rows(comp), arow = read_csv_rows(alloc);
    REQUIRE(crow.size() == 2);
    for (const auto& row : crow) {
      CHECK(row.size() == 6);
      CHECK(std::abs(std::accumulate(row.begin(), row.end(), 0.0) - 1.0) <= 1e-6);
    }
    for (const auto& row : arow)
      for (double a : row) {
        CHECK(a > 0.0);
        CHECK(a < 1.0);
      }
    std::filesystem::remove_all(dir);

    const AttentionDump single = dump_attention(ckpt, std::vector<std::int64_t>{5}, 0, 1);
    REQUIRE(single.heads == std::vector<std::size_t>{1});
    CHECK(single.competition[0] == std::vector<double>{1.0});
  }
  const Checkpoint canon = init_parameters(micro(Mechanism::kCanonical), 3);
  CHECK_THROWS_AS(dump_attention(canon, std::vector<std::int64_t>{1, 2}, 0), UnsupportedError);
  const Checkpoint flow = init_parameters(micro(Mechanism::kFlowNormal), 3);
  CHECK_THROWS_AS(dump_attention(flow, std::vector<std::int64_t>{1, 2}, 2), ContractError);
  CHECK_THROWS_AS(dump_attention(flow, std::vector<std::int64_t>{1, 2}, 0, 2), ContractError);
}

TEST_CASE("ablation grid") {
  const std::vector<AblationAxis> axes{AblationAxis::kPhi, AblationAxis::kCompetitionAct, AblationAxis::kNoAllocation};
  const auto grid = ablation_grid(AttentionConfig{}, axes);
  CHECK(grid.size() == 12);
  CHECK(ablation_grid(AttentionConfig{}, std::vector<AblationAxis>{}).size() == 1);
  const std::vector<AblationAxis> twice{AblationAxis::kPhi, AblationAxis::kPhi};
  CHECK_THROWS_AS(ablation_grid(AttentionConfig{}, twice), ContractError);
  CHECK(parse_ablation_axis("no_competition") == AblationAxis::kNoCompetition);
  CHECK_THROWS_AS(parse_ablation_axis("temperature"), ContractError);
}

TEST_CASE("ablation run marks the default row") {
  TaskParams p;
  p.kind = TaskKind::kCopy;
  p.seq_len = 7;
  p.vocab = 6;
  p.eval_samples = 16;
  const auto task = make_task(p);
  ModelConfig base = micro(Mechanism::kFlowCausal);
  base.layers = 1;
  const ModelConfig model = model_for_task(base, *task);
  TrainConfig cfg;
  cfg.steps = 5;
  cfg.batch = 2;
  const std::vector<AblationAxis> axes{AblationAxis::kCompetitionAct, AblationAxis::kNoCompetition};
  const auto rows = run_ablation(model, *task, cfg, axes);
  REQUIRE(rows.size() == 4);
  CHECK(std::count_if(rows.begin(), rows.end(), [](const AblationRow& r) { return r.is_default; }) == 1);
  for (const auto& r : rows) CHECK(std::isfinite(r.loss));
  std::ostringstream csv, table;
  write_ablation_csv(rows, csv);
  write_ablation_table(rows, table);
  CHECK(csv.str().rfind("default,phi,", 0) == 0);
  CHECK(table.str().find("* default configuration") != std::string::npos);
}
