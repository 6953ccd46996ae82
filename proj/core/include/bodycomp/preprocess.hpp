#pragma once

#include <array>
#include <filesystem>
#include <utility>
#include <vector>

#include "bodycomp/bbox.hpp"
#include "bodycomp/dataset.hpp"
#include "bodycomp/image.hpp"
#include "bodycomp/rng.hpp"

namespace bodycomp {

// Per-feature standardization parameters, computed on the training split only.
struct NormStats {
  double height_mean = 0, height_sd = 1;
  double age_mean = 0, age_sd = 1;
  double weight_mean = 0, weight_sd = 1;

  bool operator==(const NormStats&) const = default;
};

NormStats compute_norm_stats(const std::vector<SubjectRecord>& train_records);

struct PreprocessConfig {
  double margin = 0.30;
  int image_side = 128;
  int chin_degree = 2;
  // Augmentation magnitudes ("slight" by default); training-time only.
  double max_rotation_deg = 8.0;
  double pixel_noise_sd = 5.0;
  double structured_noise_rel_sd = 0.01;
};

// The six network inputs for one subject plus targets. Pixel values stay
// 8-bit here; scaling to [0,1] happens at the network boundary.
struct PreprocessedSample {
  Image full_face;                  // grayscale side x side
  std::array<Image, 4> quarters;    // UL, UR, LL, LR, each side x side
  std::vector<double> structured;   // height_z, gender, age_z, weight_z, c0..c_deg
  double pbf = 0;
  double smm = 0;
};

// Cached intermediate that training re-finalizes each epoch: base images plus
// the raw values augmentation perturbs before z-scoring.
struct SampleSource {
  Image full_face;
  std::array<Image, 4> quarters;
  double height_cm = 0;
  double weight_kg = 0;
  int age = 0;
  double gender01 = 0;
  std::vector<double> chin_coefficients;
  double pbf = 0;
  double smm = 0;
};

// Grows the box by margin*w horizontally (split equally) and margin*h
// vertically (1/3 above, 2/3 below, biasing toward the neck under the chin),
// then clamps to the image.
BBox expand_bbox(const BBox& b, double margin, int img_w, int img_h);

// ITU-R BT.601 luma: round(0.299 R + 0.587 G + 0.114 B).
Image to_grayscale(const Image& rgb);

Image crop(const Image& img, const BBox& b);

// Bilinear with half-pixel centers: source = (dest + 0.5) * in/out - 0.5,
// clamped to borders, rounded to nearest at the end.
Image resize(const Image& img, int out_w, int out_h);

// Four quadrant crops of a square even-sided image, each resized to out_side.
std::array<Image, 4> quarter_split(const Image& face, int out_side);

// Rotation by a uniform(-max_deg, max_deg) angle about the image center
// (bilinear, border replication), then additive gaussian pixel noise.
Image augment_image(const Image& gray, Rng& rng, double max_deg,
                    double noise_sd);

// Multiplies each value by (1 + normal(0, rel_sd)), floored at 1.
std::pair<double, double> augment_structured(double height_cm,
                                             double weight_kg, Rng& rng,
                                             double rel_sd);

SampleSource load_sample_source(const SubjectRecord& rec,
                                const PreprocessConfig& cfg,
                                const std::filesystem::path& base_dir);

PreprocessedSample finalize_sample(const SampleSource& src,
                                   const NormStats& stats);

PreprocessedSample finalize_sample_augmented(const SampleSource& src,
                                             const NormStats& stats, Rng& rng,
                                             const PreprocessConfig& cfg);

// The full deterministic pipeline for one record (no augmentation).
PreprocessedSample build_sample(const SubjectRecord& rec,
                                const NormStats& stats,
                                const PreprocessConfig& cfg,
                                const std::filesystem::path& base_dir);

}  // namespace bodycomp
