#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "bodycomp/preprocess.hpp"
#include "bodycomp/rng.hpp"

namespace bodycomp {

// Structured-features-only regression data: row-major feature matrix plus
// one target column (pbf or smm, fit as separate tasks).
struct FeatureMatrix {
  std::size_t cols = 0;
  std::vector<double> x;  // rows * cols
  std::vector<double> y;

  std::size_t rows() const { return cols == 0 ? 0 : x.size() / cols; }
  const double* row(std::size_t r) const { return &x[r * cols]; }
  void add_row(const std::vector<double>& features, double target);
};

// The canonical 4-feature matrix <height_z, gender, age_z, weight_z>.
FeatureMatrix make_feature_matrix(const std::vector<SubjectRecord>& records,
                                  const NormStats& stats, bool pbf_task);

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0;
  int left = -1;
  int right = -1;
  double value = 0;  // leaf prediction (mean of targets)
};

struct DecisionTree {
  std::vector<TreeNode> nodes;  // node 0 is the root
  double predict(const double* features) const;
};

enum class BaselineKind { kSvr, kRandomForest, kGradientBoost };

std::string baseline_kind_name(BaselineKind kind);
BaselineKind parse_baseline_kind(const std::string& name);

struct BaselineModel {
  BaselineKind kind = BaselineKind::kGradientBoost;
  std::vector<DecisionTree> trees;
  double boost_f0 = 0;
  double boost_learning_rate = 0;
  std::vector<double> svr_weights;
  double svr_bias = 0;
  // SVR standardizes targets internally; trees fit raw targets.
  double target_mean = 0;
  double target_sd = 1;
  NormStats feature_stats;
};

// Greedy variance-reduction regression tree. Candidate thresholds sit at
// midpoints between consecutive sorted unique feature values; ties break
// toward the lowest feature index, then the lowest threshold. If rng is
// given and feature_subsample > 0, each split considers a random subset of
// features of that size.
DecisionTree fit_tree(const FeatureMatrix& data, int max_depth, int min_leaf,
                      Rng* rng = nullptr, int feature_subsample = 0);

struct ForestConfig {
  int n_trees = 200;
  int max_depth = 8;
  int min_leaf = 5;
  std::uint64_t seed = 1234;
  bool bootstrap = true;
  bool feature_subsample = true;  // round(sqrt(d)) features per split
};

BaselineModel fit_random_forest(const FeatureMatrix& data,
                                const ForestConfig& cfg);

struct BoostConfig {
  int n_rounds = 300;
  double learning_rate = 0.05;
  int max_depth = 3;
  int min_leaf = 5;
};

BaselineModel fit_gradient_boost(const FeatureMatrix& data,
                                 const BoostConfig& cfg);

struct SvrConfig {
  double c = 1.0;
  double epsilon = 0.1;  // tube half-width, in standardized target units
  int epochs = 200;
  double learning_rate = 0.1;
  std::uint64_t seed = 555;
};

// Linear epsilon-insensitive regression
//   min 1/2 ||w||^2 + c * sum_i max(0, |w.x_i + b - y_i| - eps)
// solved by seeded stochastic subgradient descent on standardized targets.
BaselineModel fit_svr(const FeatureMatrix& data, const SvrConfig& cfg);

double predict(const BaselineModel& model, const double* features,
               std::size_t n_features);
double predict(const BaselineModel& model, const std::vector<double>& features);

void save_baseline(const BaselineModel& model,
                   const std::filesystem::path& path);
BaselineModel load_baseline(const std::filesystem::path& path);

}  // namespace bodycomp
