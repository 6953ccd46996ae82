#include <cmath>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "bodycomp/baselines.hpp"
#include "bodycomp/dataset.hpp"
#include "bodycomp/metrics.hpp"
#include "bodycomp/nnet.hpp"
#include "bodycomp/preprocess.hpp"
#include "bodycomp/text.hpp"
#include "run_config.hpp"

namespace fs = std::filesystem;
using namespace bodycomp;
using cli::RunConfig;

namespace {

void write_effective_config(const RunConfig& cfg, const fs::path& out_dir) {
  std::ofstream out(out_dir / "config.json", std::ios::trunc);
  out << cli::run_config_json(cfg).dump(2) << '\n';
}

struct ColumnStats {
  double mean = 0;
  double sd = 0;
};

ColumnStats column_stats(const std::vector<double>& v) {
  ColumnStats s;
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  double ss = 0;
  for (double x : v) ss += (x - s.mean) * (x - s.mean);
  s.sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
  return s;
}

nlohmann::json summary_json(const std::vector<SubjectRecord>& records) {
  std::vector<double> age, height, weight, smm, pbf;
  double males = 0;
  for (const auto& r : records) {
    age.push_back(r.age);
    height.push_back(r.height_cm);
    weight.push_back(r.weight_kg);
    smm.push_back(r.smm_kg);
    pbf.push_back(r.pbf_pct);
    males += gender_code(r.gender);
  }
  nlohmann::json j;
  j["n"] = records.size();
  j["male_fraction"] = males / static_cast<double>(records.size());
  const auto put = [&](const char* name, const std::vector<double>& col) {
    const ColumnStats s = column_stats(col);
    j[std::string(name) + "_mean"] = s.mean;
    j[std::string(name) + "_sd"] = s.sd;
  };
  put("age", age);
  put("height", height);
  put("weight", weight);
  put("smm", smm);
  put("pbf", pbf);
  return j;
}

int cmd_synth(const RunConfig& cfg) {
  const fs::path out_dir = cfg.paths.out_dir;
  const auto records = generate_synthetic(cfg.generator, out_dir);
  fs::create_directories(out_dir);
  write_effective_config(cfg, out_dir);
  std::cout << summary_json(records).dump(2) << '\n';
  return 0;
}

int cmd_stats(const std::string& csv) {
  const auto records = load_dataset(csv);
  const CorrelationMatrix m = correlation_matrix(records);
  std::cout << "label";
  for (const char* label : CorrelationMatrix::kLabels) std::cout << ',' << label;
  std::cout << '\n';
  for (int i = 0; i < 7; ++i) {
    std::cout << CorrelationMatrix::kLabels[i];
    for (int j = 0; j < 7; ++j) {
      std::cout << ','
                << (std::isnan(m.r[i][j]) ? std::string("nan")
                                          : format_double(m.r[i][j]));
    }
    std::cout << '\n';
  }
  return 0;
}

// Split + train-side normalization stats, shared by train/evaluate/baseline
// so every command sees the identical partition for a given seed.
struct SplitData {
  std::vector<SubjectRecord> train;
  std::vector<SubjectRecord> val;
  NormStats stats;
};

SplitData split_with_stats(const std::string& csv, const SplitSpec& spec) {
  const auto records = load_dataset(csv);
  SplitData d;
  std::tie(d.train, d.val) = split_dataset(records, spec);
  if (d.train.size() < 2 || d.val.empty()) {
    throw std::runtime_error("split left too few records (train " +
                             std::to_string(d.train.size()) + ", val " +
                             std::to_string(d.val.size()) + ")");
  }
  d.stats = compute_norm_stats(d.train);
  return d;
}

std::vector<SampleSource> load_sources(const std::vector<SubjectRecord>& recs,
                                       const PreprocessConfig& pp,
                                       const fs::path& base_dir) {
  std::vector<SampleSource> out;
  out.reserve(recs.size());
  for (const auto& r : recs) out.push_back(load_sample_source(r, pp, base_dir));
  return out;
}

int cmd_train(const RunConfig& cfg) {
  const std::string csv = cfg.paths.dataset_csv;
  if (csv.empty()) throw std::runtime_error("train: paths.dataset_csv not set");
  const fs::path base_dir = fs::path(csv).parent_path();
  const fs::path out_dir = cfg.paths.out_dir;
  fs::create_directories(out_dir);

  const SplitData split = split_with_stats(csv, cfg.split);
  const auto train_src = load_sources(split.train, cfg.preprocess, base_dir);
  const auto val_src = load_sources(split.val, cfg.preprocess, base_dir);

  const int structured_dim = 4 + cfg.preprocess.chin_degree + 1;
  const ArchitectureSpec arch =
      cfg.train.architecture(cfg.preprocess.image_side, structured_dim);
  NetworkModel model = init_model(arch, cfg.train.init_seed);
  model.norm_stats = split.stats;

  const TrainResult result = train(model, train_src, val_src, cfg.train.config);

  save_model(result.model, cfg.paths.model_file);
  {
    std::ofstream hist(out_dir / "history.csv", std::ios::trunc);
    hist << "epoch,train_loss,val_loss,val_pbf_mae,val_smm_mae\n";
    for (const auto& e : result.history) {
      hist << e.epoch << ',' << format_double(e.train_loss) << ','
           << format_double(e.val_loss) << ',' << format_double(e.val_pbf_mae)
           << ',' << format_double(e.val_smm_mae) << '\n';
    }
  }
  write_effective_config(cfg, out_dir);

  nlohmann::json j;
  j["best_epoch"] = result.best_epoch;
  j["best_val_loss"] = result.history[result.best_epoch].val_loss;
  j["val_pbf_mae"] = result.history[result.best_epoch].val_pbf_mae;
  j["val_smm_mae"] = result.history[result.best_epoch].val_smm_mae;
  j["model_file"] = cfg.paths.model_file;
  std::cout << j.dump(2) << '\n';
  return 0;
}

// Preprocess config consistent with a trained model: the image side and the
// chin degree are dictated by the model architecture.
PreprocessConfig preprocess_for_model(const RunConfig& cfg,
                                      const NetworkModel& model) {
  PreprocessConfig pp = cfg.preprocess;
  pp.image_side = model.arch.image_side;
  pp.chin_degree = model.arch.structured_dim - 5;
  if (pp.chin_degree < 1) {
    throw std::runtime_error("model structured_dim incompatible with chin fit");
  }
  return pp;
}

int cmd_evaluate(const RunConfig& cfg, const std::string& model_path,
                 const std::string& csv) {
  const NetworkModel model = load_model(model_path);
  const fs::path base_dir = fs::path(csv).parent_path();
  const fs::path out_dir = cfg.paths.out_dir;
  fs::create_directories(out_dir);

  const auto records = load_dataset(csv);
  auto [train_recs, val_recs] = split_dataset(records, cfg.split);
  if (val_recs.size() < 2) {
    throw std::runtime_error("evaluate: validation split too small");
  }
  const PreprocessConfig pp = preprocess_for_model(cfg, model);

  std::vector<PreprocessedSample> samples;
  samples.reserve(val_recs.size());
  for (const auto& r : val_recs) {
    samples.push_back(build_sample(r, model.norm_stats, pp, base_dir));
  }
  const auto preds = predict_batch(model, samples, cfg.train.config.threads);

  std::vector<double> actual_pbf, pred_pbf, actual_smm, pred_smm;
  std::vector<double> pbf_err, smm_err;
  std::vector<int> ages;
  for (std::size_t i = 0; i < val_recs.size(); ++i) {
    actual_pbf.push_back(val_recs[i].pbf_pct);
    pred_pbf.push_back(preds[i].pbf);
    actual_smm.push_back(val_recs[i].smm_kg);
    pred_smm.push_back(preds[i].smm);
    pbf_err.push_back(val_recs[i].pbf_pct - preds[i].pbf);
    smm_err.push_back(val_recs[i].smm_kg - preds[i].smm);
    ages.push_back(val_recs[i].age);
  }
  const EvalReport report =
      evaluate_predictions(actual_pbf, pred_pbf, actual_smm, pred_smm);
  {
    std::ofstream out(out_dir / "report.json", std::ios::trunc);
    out << eval_report_json(report) << '\n';
  }
  const int bins = 40;
  export_density(pbf_err, bins, out_dir / "pbf_density.csv");
  export_density(smm_err, bins, out_dir / "smm_density.csv");
  export_scatter(actual_pbf, pred_pbf, ages, out_dir / "pbf_scatter.csv");
  export_scatter(actual_smm, pred_smm, ages, out_dir / "smm_scatter.csv");
  write_effective_config(cfg, out_dir);

  std::cout << eval_report_json(report) << '\n';
  return 0;
}

struct TaskErrors {
  double mae = 0;
  double sd = 0;
};

TaskErrors baseline_task_errors(const BaselineModel& model,
                                const std::vector<SubjectRecord>& val,
                                const NormStats& stats, bool pbf_task) {
  const FeatureMatrix features = make_feature_matrix(val, stats, pbf_task);
  std::vector<double> errors;
  errors.reserve(val.size());
  for (std::size_t i = 0; i < features.rows(); ++i) {
    errors.push_back(features.y[i] -
                     predict(model, features.row(i), features.cols));
  }
  return {mae(errors), error_sd(errors)};
}

BaselineModel fit_baseline_task(const RunConfig& cfg, BaselineKind kind,
                                const FeatureMatrix& data) {
  switch (kind) {
    case BaselineKind::kSvr: return fit_svr(data, cfg.baselines.svr);
    case BaselineKind::kRandomForest:
      return fit_random_forest(data, cfg.baselines.forest);
    case BaselineKind::kGradientBoost:
      return fit_gradient_boost(data, cfg.baselines.boost);
  }
  throw std::runtime_error("unreachable baseline kind");
}

int cmd_baseline(const RunConfig& cfg, const std::string& kind_name,
                 const std::string& csv, const std::string& save_prefix) {
  const BaselineKind kind = parse_baseline_kind(kind_name);
  const SplitData split = split_with_stats(csv, cfg.split);

  nlohmann::json j;
  j["kind"] = kind_name;
  j["n_train"] = split.train.size();
  j["n_val"] = split.val.size();
  for (const bool pbf_task : {true, false}) {
    const FeatureMatrix data =
        make_feature_matrix(split.train, split.stats, pbf_task);
    BaselineModel model = fit_baseline_task(cfg, kind, data);
    model.feature_stats = split.stats;
    const TaskErrors err =
        baseline_task_errors(model, split.val, split.stats, pbf_task);
    j[pbf_task ? "pbf" : "smm"] = {{"mae", err.mae}, {"sd", err.sd}};
    if (!save_prefix.empty()) {
      save_baseline(model, save_prefix + (pbf_task ? "_pbf.bcm" : "_smm.bcm"));
    }
  }
  std::cout << j.dump(2) << '\n';
  return 0;
}

int cmd_preprocess(const RunConfig& cfg, const std::string& csv, int limit) {
  const fs::path base_dir = fs::path(csv).parent_path();
  const fs::path out_dir = cfg.paths.out_dir;
  fs::create_directories(out_dir);
  auto records = load_dataset(csv);
  if (limit > 0 && records.size() > static_cast<std::size_t>(limit)) {
    records.resize(limit);
  }
  if (records.size() < 2) {
    throw std::runtime_error("preprocess: need at least 2 records");
  }
  const NormStats stats = compute_norm_stats(records);
  const char* names[4] = {"UL", "UR", "LL", "LR"};
  for (const auto& r : records) {
    const PreprocessedSample s = build_sample(r, stats, cfg.preprocess, base_dir);
    write_image(s.full_face, out_dir / (r.id + "_full.pgm"));
    for (int q = 0; q < 4; ++q) {
      write_image(s.quarters[q],
                  out_dir / (r.id + "_" + names[q] + ".pgm"));
    }
    nlohmann::json j;
    j["structured"] = s.structured;
    j["pbf"] = s.pbf;
    j["smm"] = s.smm;
    std::ofstream out(out_dir / (r.id + "_structured.json"), std::ios::trunc);
    out << j.dump(2) << '\n';
  }
  std::cout << nlohmann::json{{"written", records.size()},
                              {"out_dir", out_dir.string()}}
                   .dump()
            << '\n';
  return 0;
}

int cmd_predict(const RunConfig& cfg, const std::string& model_path,
                const std::string& csv, int index, const std::string& id) {
  const NetworkModel model = load_model(model_path);
  const fs::path base_dir = fs::path(csv).parent_path();
  const auto records = load_dataset(csv);
  const SubjectRecord* record = nullptr;
  if (!id.empty()) {
    for (const auto& r : records) {
      if (r.id == id) record = &r;
    }
    if (!record) throw std::runtime_error("predict: no record with id " + id);
  } else {
    if (index < 0 || static_cast<std::size_t>(index) >= records.size()) {
      throw std::runtime_error("predict: index out of range");
    }
    record = &records[index];
  }
  const PreprocessConfig pp = preprocess_for_model(cfg, model);
  const PreprocessedSample s =
      build_sample(*record, model.norm_stats, pp, base_dir);
  const Prediction pred = forward(model, s);
  nlohmann::json j;
  j["id"] = record->id;
  j["pbf"] = pred.pbf;
  j["smm"] = pred.smm;
  std::cout << j.dump() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multimodal body-composition estimation pipeline"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  std::string csv, model_path, out_dir, kind, id, save_prefix;
  int limit = 8;
  int index = 0;

  const auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON run configuration");
    cmd->add_option("--set", overrides,
                    "dotted.path=value override, repeatable");
    cmd->add_option("--out", out_dir, "output directory override");
  };

  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  add_common(synth);

  CLI::App* stats = app.add_subcommand("stats", "print the Pearson correlation matrix");
  stats->add_option("--csv", csv, "dataset CSV")->required();

  CLI::App* preprocess_cmd =
      app.add_subcommand("preprocess", "materialize preprocessed samples");
  add_common(preprocess_cmd);
  preprocess_cmd->add_option("--csv", csv, "dataset CSV (defaults to paths.dataset_csv)");
  preprocess_cmd->add_option("--limit", limit, "max records to materialize");

  CLI::App* train_cmd = app.add_subcommand("train", "train the multimodal network");
  add_common(train_cmd);
  train_cmd->add_option("--csv", csv, "dataset CSV (defaults to paths.dataset_csv)");
  train_cmd->add_option("--model-out", model_path, "model file override");

  CLI::App* evaluate_cmd =
      app.add_subcommand("evaluate", "evaluate a model on the validation split");
  add_common(evaluate_cmd);
  evaluate_cmd->add_option("--model", model_path, "model file")->required();
  evaluate_cmd->add_option("--csv", csv, "dataset CSV");

  CLI::App* baseline_cmd =
      app.add_subcommand("baseline", "fit and score a structured-only baseline");
  add_common(baseline_cmd);
  baseline_cmd->add_option("--kind", kind, "svr | random_forest | gradient_boost")
      ->required();
  baseline_cmd->add_option("--csv", csv, "dataset CSV");
  baseline_cmd->add_option("--save-prefix", save_prefix,
                           "write fitted models to <prefix>_{pbf,smm}.bcm");

  CLI::App* predict_cmd = app.add_subcommand("predict", "predict one record");
  add_common(predict_cmd);
  predict_cmd->add_option("--model", model_path, "model file")->required();
  predict_cmd->add_option("--csv", csv, "dataset CSV");
  predict_cmd->add_option("--index", index, "record index (default 0)");
  predict_cmd->add_option("--id", id, "record id (overrides --index)");

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig cfg = cli::load_run_config(config_path, overrides);
    if (!out_dir.empty()) cfg.paths.out_dir = out_dir;
    if (!model_path.empty() && (train_cmd->parsed())) {
      cfg.paths.model_file = model_path;
    }
    if (csv.empty()) csv = cfg.paths.dataset_csv;

    if (synth->parsed()) return cmd_synth(cfg);
    if (stats->parsed()) return cmd_stats(csv);
    if (preprocess_cmd->parsed()) return cmd_preprocess(cfg, csv, limit);
    if (train_cmd->parsed()) {
      if (!csv.empty()) cfg.paths.dataset_csv = csv;
      return cmd_train(cfg);
    }
    if (evaluate_cmd->parsed()) return cmd_evaluate(cfg, model_path, csv);
    if (baseline_cmd->parsed()) return cmd_baseline(cfg, kind, csv, save_prefix);
    if (predict_cmd->parsed()) return cmd_predict(cfg, model_path, csv, index, id);
  } catch (const std::exception& e) {
    std::cerr << nlohmann::json{{"error", e.what()}}.dump() << '\n';
    return 1;
  }
  return 1;
}
