#include "run_config.hpp"

#include <fstream>
#include <stdexcept>

namespace bodycomp::cli {
namespace {

// Consumes known keys from a copied JSON object; whatever is left over at
// finish() is an unknown key and a config error.
class Section {
 public:
  Section(nlohmann::json obj, std::string path)
      : obj_(std::move(obj)), path_(std::move(path)) {
    if (!obj_.is_object()) {
      throw std::runtime_error("config: " + path_ + " must be an object");
    }
  }

  template <typename T>
  void get(const char* key, T& out) {
    if (auto it = obj_.find(key); it != obj_.end()) {
      try {
        out = it->get<T>();
      } catch (const std::exception&) {
        throw std::runtime_error("config: bad value for " + path_ + "." + key);
      }
      obj_.erase(it);
    }
  }

  Section section(const char* key) {
    if (auto it = obj_.find(key); it != obj_.end()) {
      nlohmann::json sub = *it;
      obj_.erase(it);
      return Section(std::move(sub), path_ + "." + key);
    }
    return Section(nlohmann::json::object(), path_ + "." + key);
  }

  void finish() const {
    if (!obj_.empty()) {
      throw std::runtime_error("config: unknown key " + path_ + "." +
                               obj_.begin().key());
    }
  }

 private:
  nlohmann::json obj_;
  std::string path_;
};

void parse_calibration(Section sec, Calibration& c) {
  sec.get("male_fraction", c.male_fraction);
  sec.get("age_mean", c.age_mean);
  sec.get("age_sd", c.age_sd);
  sec.get("age_min", c.age_min);
  sec.get("age_max", c.age_max);
  sec.get("male_height_mean", c.male.height_mean);
  sec.get("male_height_sd", c.male.height_sd);
  sec.get("male_bmi_median", c.male.bmi_median);
  sec.get("male_bmi_log_sd", c.male.bmi_log_sd);
  sec.get("female_height_mean", c.female.height_mean);
  sec.get("female_height_sd", c.female.height_sd);
  sec.get("female_bmi_median", c.female.bmi_median);
  sec.get("female_bmi_log_sd", c.female.bmi_log_sd);
  sec.get("smm_weight", c.smm_weight);
  sec.get("smm_height", c.smm_height);
  sec.get("smm_male", c.smm_male);
  sec.get("smm_intercept", c.smm_intercept);
  sec.get("smm_noise_base", c.smm_noise_base);
  sec.get("smm_noise_per_kg", c.smm_noise_per_kg);
  sec.get("pbf_bmi", c.pbf_bmi);
  sec.get("pbf_female", c.pbf_female);
  sec.get("pbf_age", c.pbf_age);
  sec.get("pbf_intercept", c.pbf_intercept);
  sec.get("pbf_noise_sd", c.pbf_noise_sd);
  sec.get("adiposity_sd", c.adiposity_sd);
  sec.get("pbf_min", c.pbf_min);
  sec.get("pbf_max", c.pbf_max);
  sec.finish();
}

nlohmann::json calibration_json(const Calibration& c) {
  return {
      {"male_fraction", c.male_fraction},
      {"age_mean", c.age_mean},
      {"age_sd", c.age_sd},
      {"age_min", c.age_min},
      {"age_max", c.age_max},
      {"male_height_mean", c.male.height_mean},
      {"male_height_sd", c.male.height_sd},
      {"male_bmi_median", c.male.bmi_median},
      {"male_bmi_log_sd", c.male.bmi_log_sd},
      {"female_height_mean", c.female.height_mean},
      {"female_height_sd", c.female.height_sd},
      {"female_bmi_median", c.female.bmi_median},
      {"female_bmi_log_sd", c.female.bmi_log_sd},
      {"smm_weight", c.smm_weight},
      {"smm_height", c.smm_height},
      {"smm_male", c.smm_male},
      {"smm_intercept", c.smm_intercept},
      {"smm_noise_base", c.smm_noise_base},
      {"smm_noise_per_kg", c.smm_noise_per_kg},
      {"pbf_bmi", c.pbf_bmi},
      {"pbf_female", c.pbf_female},
      {"pbf_age", c.pbf_age},
      {"pbf_intercept", c.pbf_intercept},
      {"pbf_noise_sd", c.pbf_noise_sd},
      {"adiposity_sd", c.adiposity_sd},
      {"pbf_min", c.pbf_min},
      {"pbf_max", c.pbf_max},
  };
}

}  // namespace

ArchitectureSpec TrainSection::architecture(int image_side,
                                            int structured_dim) const {
  ArchitectureSpec arch;
  arch.image_side = image_side;
  arch.conv_channels = conv_channels;
  arch.structured_widths = structured_widths;
  arch.trunk_widths = trunk_widths;
  arch.head_hidden = head_hidden;
  arch.structured_dim = structured_dim;
  arch.validate();
  return arch;
}

RunConfig parse_run_config(const nlohmann::json& doc) {
  RunConfig cfg;
  Section root(doc, "config");

  {
    Section gen = root.section("generator");
    gen.get("n_subjects", cfg.generator.n_subjects);
    gen.get("seed", cfg.generator.seed);
    gen.get("image_side", cfg.generator.image_side);
    gen.get("adiposity_face_gain", cfg.generator.adiposity_face_gain);
    parse_calibration(gen.section("calibration"), cfg.generator.calibration);
    gen.finish();
  }
  {
    Section split = root.section("split");
    split.get("train_fraction", cfg.split.train_fraction);
    split.get("seed", cfg.split.seed);
    split.finish();
  }
  {
    Section pp = root.section("preprocess");
    pp.get("margin", cfg.preprocess.margin);
    pp.get("image_side", cfg.preprocess.image_side);
    pp.get("chin_degree", cfg.preprocess.chin_degree);
    pp.get("max_rotation_deg", cfg.preprocess.max_rotation_deg);
    pp.get("pixel_noise_sd", cfg.preprocess.pixel_noise_sd);
    pp.get("structured_noise_rel_sd", cfg.preprocess.structured_noise_rel_sd);
    pp.finish();
  }
  {
    Section tr = root.section("train");
    tr.get("epochs", cfg.train.config.epochs);
    tr.get("batch_size", cfg.train.config.batch_size);
    tr.get("learning_rate", cfg.train.config.learning_rate);
    tr.get("beta1", cfg.train.config.beta1);
    tr.get("beta2", cfg.train.config.beta2);
    tr.get("adam_epsilon", cfg.train.config.adam_epsilon);
    tr.get("lambda_pbf", cfg.train.config.task_weights.pbf);
    tr.get("lambda_smm", cfg.train.config.task_weights.smm);
    tr.get("seed", cfg.train.config.seed);
    tr.get("augment", cfg.train.config.augment);
    tr.get("threads", cfg.train.config.threads);
    tr.get("init_seed", cfg.train.init_seed);
    tr.get("conv_channels", cfg.train.conv_channels);
    tr.get("structured_widths", cfg.train.structured_widths);
    tr.get("trunk_widths", cfg.train.trunk_widths);
    tr.get("head_hidden", cfg.train.head_hidden);
    tr.finish();
  }
  {
    Section bl = root.section("baselines");
    {
      Section f = bl.section("forest");
      f.get("n_trees", cfg.baselines.forest.n_trees);
      f.get("max_depth", cfg.baselines.forest.max_depth);
      f.get("min_leaf", cfg.baselines.forest.min_leaf);
      f.get("seed", cfg.baselines.forest.seed);
      f.get("bootstrap", cfg.baselines.forest.bootstrap);
      f.get("feature_subsample", cfg.baselines.forest.feature_subsample);
      f.finish();
    }
    {
      Section b = bl.section("boost");
      b.get("n_rounds", cfg.baselines.boost.n_rounds);
      b.get("learning_rate", cfg.baselines.boost.learning_rate);
      b.get("max_depth", cfg.baselines.boost.max_depth);
      b.get("min_leaf", cfg.baselines.boost.min_leaf);
      b.finish();
    }
    {
      Section s = bl.section("svr");
      s.get("c", cfg.baselines.svr.c);
      s.get("epsilon", cfg.baselines.svr.epsilon);
      s.get("epochs", cfg.baselines.svr.epochs);
      s.get("learning_rate", cfg.baselines.svr.learning_rate);
      s.get("seed", cfg.baselines.svr.seed);
      s.finish();
    }
    bl.finish();
  }
  {
    Section paths = root.section("paths");
    paths.get("dataset_csv", cfg.paths.dataset_csv);
    paths.get("out_dir", cfg.paths.out_dir);
    paths.get("model_file", cfg.paths.model_file);
    paths.finish();
  }
  root.finish();
  cfg.train.config.preprocess = cfg.preprocess;
  return cfg;
}

RunConfig load_run_config(const std::string& config_path,
                          const std::vector<std::string>& overrides) {
  nlohmann::json doc = nlohmann::json::object();
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) {
      throw std::runtime_error("config: cannot open " + config_path);
    }
    try {
      doc = nlohmann::json::parse(in);
    } catch (const std::exception& e) {
      throw std::runtime_error("config: parse error in " + config_path + ": " +
                               e.what());
    }
  }
  for (const std::string& assignment : overrides) {
    const std::size_t eq = assignment.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error("--set expects dotted.path=value, got '" +
                               assignment + "'");
    }
    const std::string dotted = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);
    nlohmann::json value;
    try {
      value = nlohmann::json::parse(raw);
    } catch (const std::exception&) {
      value = raw;  // unquoted strings pass through
    }
    nlohmann::json* node = &doc;
    std::size_t start = 0;
    for (;;) {
      const std::size_t dot = dotted.find('.', start);
      const std::string key = dotted.substr(start, dot - start);
      if (key.empty()) {
        throw std::runtime_error("--set: empty key segment in '" + dotted + "'");
      }
      if (dot == std::string::npos) {
        (*node)[key] = value;
        break;
      }
      node = &(*node)[key];
      start = dot + 1;
    }
  }
  return parse_run_config(doc);
}

nlohmann::json run_config_json(const RunConfig& cfg) {
  nlohmann::json doc;
  doc["generator"] = {
      {"n_subjects", cfg.generator.n_subjects},
      {"seed", cfg.generator.seed},
      {"image_side", cfg.generator.image_side},
      {"adiposity_face_gain", cfg.generator.adiposity_face_gain},
      {"calibration", calibration_json(cfg.generator.calibration)},
  };
  doc["split"] = {
      {"train_fraction", cfg.split.train_fraction},
      {"seed", cfg.split.seed},
  };
  doc["preprocess"] = {
      {"margin", cfg.preprocess.margin},
      {"image_side", cfg.preprocess.image_side},
      {"chin_degree", cfg.preprocess.chin_degree},
      {"max_rotation_deg", cfg.preprocess.max_rotation_deg},
      {"pixel_noise_sd", cfg.preprocess.pixel_noise_sd},
      {"structured_noise_rel_sd", cfg.preprocess.structured_noise_rel_sd},
  };
  doc["train"] = {
      {"epochs", cfg.train.config.epochs},
      {"batch_size", cfg.train.config.batch_size},
      {"learning_rate", cfg.train.config.learning_rate},
      {"beta1", cfg.train.config.beta1},
      {"beta2", cfg.train.config.beta2},
      {"adam_epsilon", cfg.train.config.adam_epsilon},
      {"lambda_pbf", cfg.train.config.task_weights.pbf},
      {"lambda_smm", cfg.train.config.task_weights.smm},
      {"seed", cfg.train.config.seed},
      {"augment", cfg.train.config.augment},
      {"threads", cfg.train.config.threads},
      {"init_seed", cfg.train.init_seed},
      {"conv_channels", cfg.train.conv_channels},
      {"structured_widths", cfg.train.structured_widths},
      {"trunk_widths", cfg.train.trunk_widths},
      {"head_hidden", cfg.train.head_hidden},
  };
  doc["baselines"] = {
      {"forest",
       {{"n_trees", cfg.baselines.forest.n_trees},
        {"max_depth", cfg.baselines.forest.max_depth},
        {"min_leaf", cfg.baselines.forest.min_leaf},
        {"seed", cfg.baselines.forest.seed},
        {"bootstrap", cfg.baselines.forest.bootstrap},
        {"feature_subsample", cfg.baselines.forest.feature_subsample}}},
      {"boost",
       {{"n_rounds", cfg.baselines.boost.n_rounds},
        {"learning_rate", cfg.baselines.boost.learning_rate},
        {"max_depth", cfg.baselines.boost.max_depth},
        {"min_leaf", cfg.baselines.boost.min_leaf}}},
      {"svr",
       {{"c", cfg.baselines.svr.c},
        {"epsilon", cfg.baselines.svr.epsilon},
        {"epochs", cfg.baselines.svr.epochs},
        {"learning_rate", cfg.baselines.svr.learning_rate},
        {"seed", cfg.baselines.svr.seed}}},
  };
  doc["paths"] = {
      {"dataset_csv", cfg.paths.dataset_csv},
      {"out_dir", cfg.paths.out_dir},
      {"model_file", cfg.paths.model_file},
  };
  return doc;
}

}  // namespace bodycomp::cli
