#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mfbsde/config.hpp"

namespace mfbsde {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitNonConvergence = 3;
constexpr int kExitHypothesis = 4;

// Long format: node, time, statistic, value, se. Scalars leave node and time
// blank; per-iteration tables put the iteration index in the node column.
struct CsvRow {
  std::optional<std::size_t> node;
  std::optional<double> time;
  std::string statistic;
  double value = 0.0;
  std::optional<double> se;
};

struct CsvTable {
  std::string file;
  std::vector<CsvRow> rows;

  void scalar(std::string stat, double value, std::optional<double> se = std::nullopt);
  void at_node(std::size_t node, double t, std::string stat, double value, std::optional<double> se = std::nullopt);
  void at_index(std::size_t index, std::string stat, double value, std::optional<double> se = std::nullopt);
  // Body without the manifest comment line.
  std::string body() const;
};

struct RunOptions {
  std::string out_dir = ".";
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> paths;
};

struct RunResult {
  int exit_code = kExitOk;
  std::string message;
  std::vector<CsvTable> tables;
  nlohmann::json diagnostics = nlohmann::json::object();
  std::string config_hash;
};

// Runs the pipeline for `mode` in memory, with seed and path overrides applied.
// Module errors become exit codes with module-qualified messages.
RunResult execute(Mode mode, ScenarioConfig cfg, const RunOptions& opts = {});

// execute + writes every table and manifest.json into opts.out_dir.
int run(Mode mode, ScenarioConfig cfg, const RunOptions& opts, std::ostream& log);

}  // namespace mfbsde
