#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "bodycomp/bbox.hpp"
#include "bodycomp/chinfit.hpp"

namespace bodycomp {

enum class Gender { kMale, kFemale };

inline double gender_code(Gender g) { return g == Gender::kMale ? 1.0 : 0.0; }

// One person's structured data, body-composition targets and file references.
// image_path / chin_points_path are kept verbatim as written in the CSV;
// relative paths resolve against the CSV's directory.
struct SubjectRecord {
  std::string id;
  std::string race;
  Gender gender = Gender::kMale;
  int age = 0;
  double height_cm = 0;
  double weight_kg = 0;
  double smm_kg = 0;   // target
  double pbf_pct = 0;  // target
  std::string image_path;
  BBox face_bbox;
  std::string chin_points_path;

  bool operator==(const SubjectRecord&) const = default;
};

// Population parameters of the synthetic generator. The numeric defaults were
// fixed by simulation against the published dataset statistics; see
// docs in README for the generative chain.
struct GenderCalibration {
  double height_mean = 0;
  double height_sd = 0;
  double bmi_median = 0;
  double bmi_log_sd = 0;
};

struct Calibration {
  double male_fraction = 0.51;
  double age_mean = 40.4;
  double age_sd = 12.9;
  double age_min = 7.0;
  double age_max = 84.0;
  GenderCalibration male{171.5, 6.0, 23.0, 0.21};
  GenderCalibration female{159.0, 6.0, 22.0, 0.21};
  // smm = smm_weight*w + smm_height*(h-160) + smm_male*[male] + smm_intercept
  //       + noise, noise_sd = smm_noise_base + smm_noise_per_kg * w
  double smm_weight = 0.30;
  double smm_height = 0.22;
  double smm_male = 5.5;
  double smm_intercept = 2.6;
  double smm_noise_base = 0.8;
  double smm_noise_per_kg = 0.02;
  // pbf = pbf_bmi*(bmi-22) + pbf_female*[female] + pbf_age*(age-40)
  //       + pbf_intercept + u + noise(pbf_noise_sd), clamped to (pbf_min, pbf_max).
  // u ~ normal(0, adiposity_sd) is independent of every structured feature and
  // reaches the data only through face geometry.
  double pbf_bmi = 1.12;
  double pbf_female = 10.2;
  double pbf_age = 0.08;
  double pbf_intercept = 18.85;
  double pbf_noise_sd = 1.0;
  double adiposity_sd = 3.0;
  double pbf_min = 3.0;
  double pbf_max = 55.0;
};

struct GeneratorConfig {
  int n_subjects = 1000;
  std::uint64_t seed = 20240801;
  int image_side = 256;
  double adiposity_face_gain = 1.0;
  Calibration calibration;
};

struct SplitSpec {
  double train_fraction = 0.9;
  std::uint64_t seed = 7;
};

// Internal truth the generator knows about each subject; exposed for tests
// and the gain-zero independence checks.
struct SubjectLatent {
  double bmi = 0;
  double bmi_z = 0;        // z-score of log-bmi within the subject's gender
  double adiposity_u = 0;  // latent adiposity residual
  double face_ratio = 0;   // rendered width-to-height ratio
  double chin_c0 = 0;
  double chin_c2 = 0;
};

// CSV I/O. The header and field order are fixed:
//   id,race,gender,age,height_cm,weight_kg,smm_kg,pbf_pct,image_path,
//   bbox_x,bbox_y,bbox_w,bbox_h,chin_points_path
// load_dataset validates every record invariant (including that face_bbox
// fits inside the referenced image) and reports errors as "row R column C".
std::vector<SubjectRecord> load_dataset(const std::filesystem::path& csv_path);
void save_dataset(const std::vector<SubjectRecord>& records,
                  const std::filesystem::path& csv_path);

// Deterministic shuffle-split; |train| = round(train_fraction * n).
std::pair<std::vector<SubjectRecord>, std::vector<SubjectRecord>>
split_dataset(const std::vector<SubjectRecord>& records, const SplitSpec& spec);

// Writes one PPM face image and one chin-points file per subject plus
// dataset.csv into out_dir, and returns the records. Each subject draws all
// its randomness from an independent substream keyed by (seed, index).
// If latents_out is non-null it receives one SubjectLatent per record.
std::vector<SubjectRecord> generate_synthetic(
    const GeneratorConfig& config, const std::filesystem::path& out_dir,
    std::vector<SubjectLatent>* latents_out = nullptr);

// Text file, one "x y" pair per line, at least 3 lines.
std::vector<Point> load_chin_points(const std::filesystem::path& path);
void save_chin_points(const std::vector<Point>& points,
                      const std::filesystem::path& path);

}  // namespace bodycomp
