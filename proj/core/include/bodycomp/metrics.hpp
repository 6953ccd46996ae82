#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "bodycomp/dataset.hpp"

namespace bodycomp {

// Per-task evaluation summary. Errors follow the actual - predicted
// convention throughout.
struct TaskReport {
  double mae = 0;
  double sd = 0;  // sample SD of the error
  double pearson_pred_actual = 0;
};

struct EvalReport {
  std::size_t n = 0;
  TaskReport pbf;
  TaskReport smm;
  double pearson_pred_pbf_vs_pred_smm = 0;
};

struct CorrelationMatrix {
  // Fixed label order mirroring the published matrix.
  static constexpr std::array<const char*, 7> kLabels = {
      "race", "height", "gender", "age", "weight", "smm", "pbf"};
  // Entries involving a constant column are NaN (undefined, not an error);
  // the diagonal is exactly 1.
  std::array<std::array<double, 7>, 7> r{};
};

// Sample Pearson correlation; throws on length mismatch, n < 2 or zero
// variance (never returns NaN).
double pearson(const std::vector<double>& x, const std::vector<double>& y);

// Pairwise Pearson over the encoded columns (race as is-majority 0/1,
// gender as male=1).
CorrelationMatrix correlation_matrix(const std::vector<SubjectRecord>& records);

double mae(const std::vector<double>& errors);
double error_sd(const std::vector<double>& errors);

EvalReport evaluate_predictions(const std::vector<double>& actual_pbf,
                                const std::vector<double>& predicted_pbf,
                                const std::vector<double>& actual_smm,
                                const std::vector<double>& predicted_smm);

std::string eval_report_json(const EvalReport& report);

// CSV "bin_center,count,density" with equal-width bins over [min, max];
// density integrates to 1 over the binned range.
void export_density(const std::vector<double>& errors, int n_bins,
                    const std::filesystem::path& path);

// CSV "actual,predicted,age_group" with age_group the decade floor.
void export_scatter(const std::vector<double>& actual,
                    const std::vector<double>& predicted,
                    const std::vector<int>& ages,
                    const std::filesystem::path& path);

}  // namespace bodycomp
