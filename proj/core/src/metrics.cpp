#include "bodycomp/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "bodycomp/text.hpp"

namespace bodycomp {
namespace {

struct Moments {
  double mean = 0;
  double centered_ss = 0;
};

Moments moments(const std::vector<double>& v) {
  Moments m;
  for (double x : v) m.mean += x;
  m.mean /= static_cast<double>(v.size());
  for (double x : v) m.centered_ss += (x - m.mean) * (x - m.mean);
  return m;
}

// NaN instead of throwing; used by the matrix where constant columns are
// reported as undefined entries.
double pearson_or_nan(const std::vector<double>& x,
                      const std::vector<double>& y) {
  const Moments mx = moments(x);
  const Moments my = moments(y);
  if (!(mx.centered_ss > 0) || !(my.centered_ss > 0)) {
    return std::numeric_limits<double>::quiet_NaN();
  }
  double cov = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    cov += (x[i] - mx.mean) * (y[i] - my.mean);
  }
  return cov / std::sqrt(mx.centered_ss * my.centered_ss);
}

}  // namespace

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) {
    throw std::runtime_error("pearson: length mismatch");
  }
  if (x.size() < 2) {
    throw std::runtime_error("pearson: need at least 2 observations");
  }
  const double r = pearson_or_nan(x, y);
  if (std::isnan(r)) {
    throw std::runtime_error("pearson: zero variance input");
  }
  return r;
}

CorrelationMatrix correlation_matrix(
    const std::vector<SubjectRecord>& records) {
  if (records.size() < 2) {
    throw std::runtime_error("correlation_matrix: need at least 2 records");
  }
  // Majority race value for the is-majority encoding.
  std::map<std::string, int> race_counts;
  for (const auto& r : records) ++race_counts[r.race];
  std::string majority;
  int best = -1;
  for (const auto& [race, count] : race_counts) {
    if (count > best) {
      best = count;
      majority = race;
    }
  }

  std::array<std::vector<double>, 7> cols;
  for (auto& c : cols) c.reserve(records.size());
  for (const auto& r : records) {
    cols[0].push_back(r.race == majority ? 1.0 : 0.0);
    cols[1].push_back(r.height_cm);
    cols[2].push_back(gender_code(r.gender));
    cols[3].push_back(static_cast<double>(r.age));
    cols[4].push_back(r.weight_kg);
    cols[5].push_back(r.smm_kg);
    cols[6].push_back(r.pbf_pct);
  }

  CorrelationMatrix m;
  for (int i = 0; i < 7; ++i) {
    m.r[i][i] = 1.0;
    for (int j = i + 1; j < 7; ++j) {
      const double r = pearson_or_nan(cols[i], cols[j]);
      m.r[i][j] = r;
      m.r[j][i] = r;
    }
  }
  return m;
}

double mae(const std::vector<double>& errors) {
  if (errors.empty()) throw std::runtime_error("mae: empty error vector");
  double sum = 0;
  for (double e : errors) sum += std::fabs(e);
  return sum / static_cast<double>(errors.size());
}

double error_sd(const std::vector<double>& errors) {
  if (errors.size() < 2) {
    throw std::runtime_error("error_sd: need at least 2 errors");
  }
  const Moments m = moments(errors);
  return std::sqrt(m.centered_ss / static_cast<double>(errors.size() - 1));
}

EvalReport evaluate_predictions(const std::vector<double>& actual_pbf,
                                const std::vector<double>& predicted_pbf,
                                const std::vector<double>& actual_smm,
                                const std::vector<double>& predicted_smm) {
  const std::size_t n = actual_pbf.size();
  if (predicted_pbf.size() != n || actual_smm.size() != n ||
      predicted_smm.size() != n || n < 2) {
    throw std::runtime_error("evaluate_predictions: inconsistent or too-small inputs");
  }
  std::vector<double> pbf_err(n), smm_err(n);
  for (std::size_t i = 0; i < n; ++i) {
    pbf_err[i] = actual_pbf[i] - predicted_pbf[i];
    smm_err[i] = actual_smm[i] - predicted_smm[i];
  }
  EvalReport rep;
  rep.n = n;
  rep.pbf = {mae(pbf_err), error_sd(pbf_err), pearson(predicted_pbf, actual_pbf)};
  rep.smm = {mae(smm_err), error_sd(smm_err), pearson(predicted_smm, actual_smm)};
  rep.pearson_pred_pbf_vs_pred_smm = pearson(predicted_pbf, predicted_smm);
  return rep;
}

std::string eval_report_json(const EvalReport& report) {
  nlohmann::json j;
  j["n"] = report.n;
  j["pbf_mae"] = report.pbf.mae;
  j["pbf_sd"] = report.pbf.sd;
  j["pbf_pearson_pred_actual"] = report.pbf.pearson_pred_actual;
  j["smm_mae"] = report.smm.mae;
  j["smm_sd"] = report.smm.sd;
  j["smm_pearson_pred_actual"] = report.smm.pearson_pred_actual;
  j["pearson_pred_pbf_vs_pred_smm"] = report.pearson_pred_pbf_vs_pred_smm;
  return j.dump(2);
}

void export_density(const std::vector<double>& errors, int n_bins,
                    const std::filesystem::path& path) {
  if (errors.empty()) throw std::runtime_error("export_density: empty input");
  if (n_bins < 1) throw std::runtime_error("export_density: n_bins must be >= 1");
  const auto [min_it, max_it] = std::minmax_element(errors.begin(), errors.end());
  const double lo = *min_it;
  double width = (*max_it - lo) / n_bins;
  if (!(width > 0)) width = 1.0;  // degenerate range: unit-width bin

  std::vector<std::size_t> counts(n_bins, 0);
  for (double e : errors) {
    int bin = static_cast<int>((e - lo) / width);
    bin = std::clamp(bin, 0, n_bins - 1);
    ++counts[bin];
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw std::runtime_error("export_density: cannot open " + path.string());
  }
  out << "bin_center,count,density\n";
  const double total = static_cast<double>(errors.size());
  for (int b = 0; b < n_bins; ++b) {
    const double center = lo + (b + 0.5) * width;
    const double density = counts[b] / (total * width);
    out << format_double(center) << ',' << counts[b] << ','
        << format_double(density) << '\n';
  }
  if (!out) {
    throw std::runtime_error("export_density: write failed for " + path.string());
  }
}

void export_scatter(const std::vector<double>& actual,
                    const std::vector<double>& predicted,
                    const std::vector<int>& ages,
                    const std::filesystem::path& path) {
  if (actual.size() != predicted.size() || actual.size() != ages.size()) {
    throw std::runtime_error("export_scatter: length mismatch");
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw std::runtime_error("export_scatter: cannot open " + path.string());
  }
  out << "actual,predicted,age_group\n";
  for (std::size_t i = 0; i < actual.size(); ++i) {
    const int age_group = (ages[i] / 10) * 10;
    out << format_double(actual[i]) << ',' << format_double(predicted[i])
        << ',' << age_group << '\n';
  }
  if (!out) {
    throw std::runtime_error("export_scatter: write failed for " + path.string());
  }
}

}  // namespace bodycomp
