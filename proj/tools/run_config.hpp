#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bodycomp/baselines.hpp"
#include "bodycomp/dataset.hpp"
#include "bodycomp/nnet.hpp"
#include "bodycomp/preprocess.hpp"

namespace bodycomp::cli {

struct TrainSection {
  TrainConfig config;
  std::uint64_t init_seed = 2024;
  std::vector<int> conv_channels = {8, 16, 32};
  std::vector<int> structured_widths = {16, 16};
  std::vector<int> trunk_widths = {64, 32};
  int head_hidden = 16;

  ArchitectureSpec architecture(int image_side, int structured_dim) const;
};

struct BaselineSection {
  ForestConfig forest;
  BoostConfig boost;
  SvrConfig svr;
};

struct PathsSection {
  std::string dataset_csv;
  std::string out_dir = "out";
  std::string model_file = "model.bcm";
};

// One JSON document drives every command; unknown keys are rejected and
// dot-path overrides (--set a.b.c=value) are applied before parsing.
struct RunConfig {
  GeneratorConfig generator;
  SplitSpec split;
  PreprocessConfig preprocess;
  TrainSection train;
  BaselineSection baselines;
  PathsSection paths;
};

RunConfig parse_run_config(const nlohmann::json& doc);
RunConfig load_run_config(const std::string& config_path,
                          const std::vector<std::string>& overrides);
nlohmann::json run_config_json(const RunConfig& config);

}  // namespace bodycomp::cli
