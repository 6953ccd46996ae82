#include "bodycomp/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "bodycomp/chinfit.hpp"

namespace bodycomp {
namespace {

std::uint8_t clamp_pixel(double v) {
  return static_cast<std::uint8_t>(std::clamp<long long>(std::llround(v), 0, 255));
}

double bilinear_at(const Image& img, double sx, double sy, int c) {
  sx = std::clamp(sx, 0.0, static_cast<double>(img.width - 1));
  sy = std::clamp(sy, 0.0, static_cast<double>(img.height - 1));
  const int x0 = static_cast<int>(sx);
  const int y0 = static_cast<int>(sy);
  const int x1 = std::min(x0 + 1, img.width - 1);
  const int y1 = std::min(y0 + 1, img.height - 1);
  const double fx = sx - x0;
  const double fy = sy - y0;
  const double top = (1.0 - fx) * img.at(x0, y0, c) + fx * img.at(x1, y0, c);
  const double bot = (1.0 - fx) * img.at(x0, y1, c) + fx * img.at(x1, y1, c);
  return (1.0 - fy) * top + fy * bot;
}

std::pair<double, double> column_stats(const std::vector<SubjectRecord>& recs,
                                       double (*get)(const SubjectRecord&),
                                       const char* name) {
  double mean = 0;
  for (const auto& r : recs) mean += get(r);
  mean /= static_cast<double>(recs.size());
  double ss = 0;
  for (const auto& r : recs) {
    const double d = get(r) - mean;
    ss += d * d;
  }
  const double sd = std::sqrt(ss / static_cast<double>(recs.size() - 1));
  if (!(sd > 0)) {
    throw std::runtime_error(std::string("compute_norm_stats: ") + name +
                             " has zero variance on the training split");
  }
  return {mean, sd};
}

}  // namespace

NormStats compute_norm_stats(const std::vector<SubjectRecord>& train_records) {
  if (train_records.size() < 2) {
    throw std::runtime_error("compute_norm_stats: need at least 2 records");
  }
  NormStats s;
  std::tie(s.height_mean, s.height_sd) = column_stats(
      train_records, [](const SubjectRecord& r) { return r.height_cm; },
      "height");
  std::tie(s.age_mean, s.age_sd) = column_stats(
      train_records,
      [](const SubjectRecord& r) { return static_cast<double>(r.age); }, "age");
  std::tie(s.weight_mean, s.weight_sd) = column_stats(
      train_records, [](const SubjectRecord& r) { return r.weight_kg; },
      "weight");
  return s;
}

BBox expand_bbox(const BBox& b, double margin, int img_w, int img_h) {
  if (margin < 0) throw std::runtime_error("expand_bbox: margin must be >= 0");
  if (!b.inside(img_w, img_h)) {
    throw std::runtime_error("expand_bbox: bbox not inside image");
  }
  const double x0 = b.x - margin * b.w / 2.0;
  const double x1 = b.x + b.w + margin * b.w / 2.0;
  const double y0 = b.y - margin * b.h / 3.0;
  const double y1 = b.y + b.h + 2.0 * margin * b.h / 3.0;
  int ix0 = static_cast<int>(std::llround(x0));
  int iy0 = static_cast<int>(std::llround(y0));
  int ix1 = static_cast<int>(std::llround(x1));
  int iy1 = static_cast<int>(std::llround(y1));
  ix0 = std::max(ix0, 0);
  iy0 = std::max(iy0, 0);
  ix1 = std::min(ix1, img_w);
  iy1 = std::min(iy1, img_h);
  return {ix0, iy0, ix1 - ix0, iy1 - iy0};
}

Image to_grayscale(const Image& rgb) {
  if (rgb.channels != 3) {
    throw std::runtime_error("to_grayscale: expected 3 channels, got " +
                             std::to_string(rgb.channels));
  }
  Image out = Image::make(rgb.width, rgb.height, 1);
  const std::size_t n = static_cast<std::size_t>(rgb.width) * rgb.height;
  for (std::size_t i = 0; i < n; ++i) {
    const double y = 0.299 * rgb.pixels[3 * i] + 0.587 * rgb.pixels[3 * i + 1] +
                     0.114 * rgb.pixels[3 * i + 2];
    out.pixels[i] = clamp_pixel(y);
  }
  return out;
}

Image crop(const Image& img, const BBox& b) {
  if (!b.inside(img.width, img.height)) {
    throw std::runtime_error("crop: bbox out of image bounds");
  }
  Image out = Image::make(b.w, b.h, img.channels);
  for (int y = 0; y < b.h; ++y) {
    const std::uint8_t* src = &img.pixels[(static_cast<std::size_t>(b.y + y) *
                                               img.width +
                                           b.x) *
                                          img.channels];
    std::uint8_t* dst =
        &out.pixels[static_cast<std::size_t>(y) * b.w * img.channels];
    std::copy(src, src + static_cast<std::size_t>(b.w) * img.channels, dst);
  }
  return out;
}

Image resize(const Image& img, int out_w, int out_h) {
  if (out_w < 1 || out_h < 1) {
    throw std::runtime_error("resize: output dimensions must be >= 1");
  }
  if (out_w == img.width && out_h == img.height) return img;
  Image out = Image::make(out_w, out_h, img.channels);
  const double sx_scale = static_cast<double>(img.width) / out_w;
  const double sy_scale = static_cast<double>(img.height) / out_h;
  for (int y = 0; y < out_h; ++y) {
    const double sy = (y + 0.5) * sy_scale - 0.5;
    for (int x = 0; x < out_w; ++x) {
      const double sx = (x + 0.5) * sx_scale - 0.5;
      for (int c = 0; c < img.channels; ++c) {
        out.at(x, y, c) = clamp_pixel(bilinear_at(img, sx, sy, c));
      }
    }
  }
  return out;
}

std::array<Image, 4> quarter_split(const Image& face, int out_side) {
  if (face.width != face.height) {
    throw std::runtime_error("quarter_split: image must be square");
  }
  if (face.width % 2 != 0) {
    throw std::runtime_error("quarter_split: side must be even, got " +
                             std::to_string(face.width));
  }
  const int half = face.width / 2;
  const BBox boxes[4] = {{0, 0, half, half},
                         {half, 0, half, half},
                         {0, half, half, half},
                         {half, half, half, half}};
  std::array<Image, 4> out;
  for (int q = 0; q < 4; ++q) {
    out[q] = resize(crop(face, boxes[q]), out_side, out_side);
  }
  return out;
}

Image augment_image(const Image& gray, Rng& rng, double max_deg,
                    double noise_sd) {
  const double angle_deg = rng.uniform(-max_deg, max_deg);
  const double theta = angle_deg * std::numbers::pi / 180.0;
  const double cs = std::cos(theta);
  const double sn = std::sin(theta);
  const double cx = (gray.width - 1) / 2.0;
  const double cy = (gray.height - 1) / 2.0;

  Image out = Image::make(gray.width, gray.height, gray.channels);
  for (int y = 0; y < gray.height; ++y) {
    for (int x = 0; x < gray.width; ++x) {
      const double dx = x - cx;
      const double dy = y - cy;
      const double sx = cx + cs * dx + sn * dy;
      const double sy = cy - sn * dx + cs * dy;
      for (int c = 0; c < gray.channels; ++c) {
        out.at(x, y, c) = clamp_pixel(bilinear_at(gray, sx, sy, c));
      }
    }
  }
  if (noise_sd > 0) {
    for (auto& px : out.pixels) {
      px = clamp_pixel(px + noise_sd * rng.normal());
    }
  }
  return out;
}

std::pair<double, double> augment_structured(double height_cm,
                                             double weight_kg, Rng& rng,
                                             double rel_sd) {
  const double h = height_cm * (1.0 + rel_sd * rng.normal());
  const double w = weight_kg * (1.0 + rel_sd * rng.normal());
  return {std::max(1.0, h), std::max(1.0, w)};
}

SampleSource load_sample_source(const SubjectRecord& rec,
                                const PreprocessConfig& cfg,
                                const std::filesystem::path& base_dir) {
  const auto resolve = [&](const std::string& ref) {
    std::filesystem::path p(ref);
    return p.is_absolute() ? p : base_dir / p;
  };
  Image img = read_image(resolve(rec.image_path));
  const BBox roi = expand_bbox(rec.face_bbox, cfg.margin, img.width, img.height);
  Image face = crop(img, roi);
  if (face.channels == 3) face = to_grayscale(face);
  face = resize(face, cfg.image_side, cfg.image_side);

  SampleSource src;
  src.quarters = quarter_split(face, cfg.image_side);
  src.full_face = std::move(face);
  src.height_cm = rec.height_cm;
  src.weight_kg = rec.weight_kg;
  src.age = rec.age;
  src.gender01 = gender_code(rec.gender);
  src.pbf = rec.pbf_pct;
  src.smm = rec.smm_kg;

  const std::vector<Point> points =
      load_chin_points(resolve(rec.chin_points_path));
  const ChinFit fit =
      fit_polynomial(normalize_points(points, rec.face_bbox), cfg.chin_degree);
  src.chin_coefficients = fit.coefficients;
  return src;
}

namespace {

std::vector<double> structured_vector(const SampleSource& src,
                                      const NormStats& stats, double height_cm,
                                      double weight_kg) {
  std::vector<double> v;
  v.reserve(4 + src.chin_coefficients.size());
  v.push_back((height_cm - stats.height_mean) / stats.height_sd);
  v.push_back(src.gender01);
  v.push_back((src.age - stats.age_mean) / stats.age_sd);
  v.push_back((weight_kg - stats.weight_mean) / stats.weight_sd);
  v.insert(v.end(), src.chin_coefficients.begin(), src.chin_coefficients.end());
  return v;
}

}  // namespace

PreprocessedSample finalize_sample(const SampleSource& src,
                                   const NormStats& stats) {
  PreprocessedSample s;
  s.full_face = src.full_face;
  s.quarters = src.quarters;
  s.structured = structured_vector(src, stats, src.height_cm, src.weight_kg);
  s.pbf = src.pbf;
  s.smm = src.smm;
  return s;
}

PreprocessedSample finalize_sample_augmented(const SampleSource& src,
                                             const NormStats& stats, Rng& rng,
                                             const PreprocessConfig& cfg) {
  PreprocessedSample s;
  s.full_face = augment_image(src.full_face, rng, cfg.max_rotation_deg,
                              cfg.pixel_noise_sd);
  for (int q = 0; q < 4; ++q) {
    s.quarters[q] = augment_image(src.quarters[q], rng, cfg.max_rotation_deg,
                                  cfg.pixel_noise_sd);
  }
  const auto [h, w] = augment_structured(src.height_cm, src.weight_kg, rng,
                                         cfg.structured_noise_rel_sd);
  s.structured = structured_vector(src, stats, h, w);
  s.pbf = src.pbf;
  s.smm = src.smm;
  return s;
}

PreprocessedSample build_sample(const SubjectRecord& rec,
                                const NormStats& stats,
                                const PreprocessConfig& cfg,
                                const std::filesystem::path& base_dir) {
  return finalize_sample(load_sample_source(rec, cfg, base_dir), stats);
}

}  // namespace bodycomp
