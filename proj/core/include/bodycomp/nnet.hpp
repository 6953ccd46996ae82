#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "bodycomp/preprocess.hpp"
#include "bodycomp/tensor.hpp"

namespace bodycomp {

// Six-branch topology: five convolutional image branches (weights not
// shared), one dense structured branch, concatenation, shared dense trunk,
// and two scalar regression heads (pbf, smm).
//
// Each image branch runs conv(k)->relu->maxpool2 for every entry of
// conv_channels except the last, which runs conv(k)->relu->global-avg-pool
// into a conv_channels.back()-dim embedding.
struct ArchitectureSpec {
  int image_side = 128;
  std::vector<int> conv_channels = {8, 16, 32};
  int conv_kernel = 3;
  std::vector<int> structured_widths = {16, 16};
  std::vector<int> trunk_widths = {64, 32};
  int head_hidden = 16;
  int structured_dim = 7;

  static constexpr int kImageBranches = 5;

  void validate() const;
  int embedding_dim() const { return conv_channels.back(); }
  int concat_dim() const {
    return kImageBranches * conv_channels.back() + structured_widths.back();
  }
};

struct TargetStats {
  double pbf_mean = 0, pbf_sd = 1;
  double smm_mean = 0, smm_sd = 1;

  bool operator==(const TargetStats&) const = default;
};

struct ParamInfo {
  std::string name;
  std::vector<std::size_t> shape;
  std::size_t size = 0;
};

std::vector<ParamInfo> parameter_registry(const ArchitectureSpec& arch);

struct NetworkModel {
  ArchitectureSpec arch;
  std::vector<Tensor> params;  // registry order
  NormStats norm_stats;
  TargetStats target_stats;
};

// He-uniform weights (variance 2/fan_in), zero biases, deterministic in seed.
NetworkModel init_model(const ArchitectureSpec& arch, std::uint64_t seed);

struct Prediction {
  double pbf = 0;
  double smm = 0;
};

struct TaskWeights {
  double pbf = 1.0;
  double smm = 1.0;
};

// De-standardized predictions in task units (%, kg).
Prediction forward(const NetworkModel& model, const PreprocessedSample& sample);

// Weighted squared error in standardized units:
//   lambda_pbf * (z_pbf_hat - z_pbf)^2 + lambda_smm * (z_smm_hat - z_smm)^2
double loss(const Prediction& pred, double pbf_target, double smm_target,
            const TaskWeights& weights, const TargetStats& stats);

// Mean of per-sample losses over the batch.
double batch_loss(const NetworkModel& model,
                  const std::vector<PreprocessedSample>& batch,
                  const TaskWeights& weights);

// Exact reverse-mode gradients of batch_loss w.r.t. every parameter,
// in registry order. ReLU subgradient at 0 is 0.
std::vector<Tensor> backward(const NetworkModel& model,
                             const std::vector<PreprocessedSample>& batch,
                             const TaskWeights& weights);

struct TrainConfig {
  int epochs = 40;
  int batch_size = 32;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  TaskWeights task_weights;
  std::uint64_t seed = 99;
  bool augment = true;
  PreprocessConfig preprocess;  // augmentation magnitudes
  int threads = 0;              // 0 = hardware concurrency
};

struct EpochStats {
  int epoch = 0;
  double train_loss = 0;
  double val_loss = 0;
  double val_pbf_mae = 0;
  double val_smm_mae = 0;
};

struct TrainResult {
  NetworkModel model;  // parameters from the best-validation-loss epoch
  std::vector<EpochStats> history;
  int best_epoch = 0;
};

// Mini-batch Adam over seeded shuffles; augmentation on training samples
// only, drawn from per-(epoch, sample) substreams so results are identical
// for any worker count. model.norm_stats must already be set; target_stats
// are computed here from the training targets.
TrainResult train(NetworkModel model, const std::vector<SampleSource>& train_set,
                  const std::vector<SampleSource>& val_set,
                  const TrainConfig& cfg);

std::vector<Prediction> predict_batch(
    const NetworkModel& model, const std::vector<PreprocessedSample>& samples,
    int threads = 0);

void save_model(const NetworkModel& model, const std::filesystem::path& path);
NetworkModel load_model(const std::filesystem::path& path);

}  // namespace bodycomp
