#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "bodycomp/dataset.hpp"
#include "bodycomp/image.hpp"
#include "bodycomp/rng.hpp"

namespace bodycomp {
namespace {

struct FaceGeometry {
  double cx, cy;        // ellipse center, pixels
  double a, b;          // semi-axes, pixels
  BBox bbox;            // integer bounding box written to the CSV
  double c0, c2;        // jaw quadratic in bbox-normalized coordinates
};

// Head geometry inside the frame. The vertical extent is fixed; adiposity
// moves only the width-to-height ratio and the jaw curvature, so a face
// carries exactly (bmi_z + u/sigma_u) and nothing else.
FaceGeometry face_geometry(int side, double adiposity_signal, double gain) {
  FaceGeometry g;
  const double ratio = std::clamp(
      0.72 + 0.035 * adiposity_signal * gain, 0.50, 1.05);
  g.b = 0.33 * side;
  g.a = ratio * g.b;
  g.cx = 0.50 * side;
  g.cy = 0.48 * side;
  const int x0 = static_cast<int>(std::llround(g.cx - g.a));
  const int y0 = static_cast<int>(std::llround(g.cy - g.b));
  const int x1 = static_cast<int>(std::llround(g.cx + g.a));
  const int y1 = static_cast<int>(std::llround(g.cy + g.b));
  g.bbox = {x0, y0, x1 - x0, y1 - y0};
  g.c0 = 0.88;
  g.c2 = -std::clamp(0.55 - 0.10 * adiposity_signal * gain, 0.20, 0.90);
  return g;
}

void paint_disc(Image& img, double px, double py, int radius,
                std::uint8_t r, std::uint8_t gch, std::uint8_t b) {
  const int x0 = std::max(0, static_cast<int>(std::floor(px)) - radius);
  const int x1 = std::min(img.width - 1, static_cast<int>(std::ceil(px)) + radius);
  const int y0 = std::max(0, static_cast<int>(std::floor(py)) - radius);
  const int y1 = std::min(img.height - 1, static_cast<int>(std::ceil(py)) + radius);
  const double r2 = static_cast<double>(radius) * radius;
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const double dx = x - px;
      const double dy = y - py;
      if (dx * dx + dy * dy <= r2) {
        img.at(x, y, 0) = r;
        img.at(x, y, 1) = gch;
        img.at(x, y, 2) = b;
      }
    }
  }
}

Image render_face(int side, const FaceGeometry& g, Rng& rng) {
  Image img = Image::make(side, side, 3);
  const double inv_a2 = 1.0 / (g.a * g.a);
  const double inv_b2 = 1.0 / (g.b * g.b);
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      const int speckle = static_cast<int>(std::llround(rng.uniform(-10.0, 10.0)));
      const double dx = x - g.cx;
      const double dy = y - g.cy;
      const bool face = dx * dx * inv_a2 + dy * dy * inv_b2 <= 1.0;
      const int base_r = face ? 196 : 205;
      const int base_g = face ? 168 : 200;
      const int base_b = face ? 144 : 195;
      img.at(x, y, 0) = static_cast<std::uint8_t>(std::clamp(base_r + speckle, 0, 255));
      img.at(x, y, 1) = static_cast<std::uint8_t>(std::clamp(base_g + speckle, 0, 255));
      img.at(x, y, 2) = static_cast<std::uint8_t>(std::clamp(base_b + speckle, 0, 255));
    }
  }
  // Jaw polyline on top of the filled head.
  const int jaw_radius = std::max(1, side / 128);
  const int steps = 6 * side;
  for (int i = 0; i <= steps; ++i) {
    const double u = -0.62 + 1.24 * static_cast<double>(i) / steps;
    const double v = g.c0 + g.c2 * u * u;
    const double px = g.bbox.x + (u + 1.0) * 0.5 * g.bbox.w;
    const double py = g.bbox.y + v * g.bbox.h;
    paint_disc(img, px, py, jaw_radius, 70, 50, 45);
  }
  return img;
}

std::vector<Point> chin_samples(const FaceGeometry& g) {
  std::vector<Point> points;
  points.reserve(15);
  for (int i = 0; i < 15; ++i) {
    const double u = -0.6 + 1.2 * static_cast<double>(i) / 14.0;
    const double v = g.c0 + g.c2 * u * u;
    points.push_back({g.bbox.x + (u + 1.0) * 0.5 * g.bbox.w,
                      g.bbox.y + v * g.bbox.h});
  }
  return points;
}

std::string subject_id(int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "subj_%05d", index + 1);
  return buf;
}

}  // namespace

std::vector<SubjectRecord> generate_synthetic(
    const GeneratorConfig& config, const std::filesystem::path& out_dir,
    std::vector<SubjectLatent>* latents_out) {
  if (config.n_subjects < 1) {
    throw std::runtime_error("generate_synthetic: n_subjects must be >= 1");
  }
  if (config.image_side < 64) {
    throw std::runtime_error("generate_synthetic: image_side must be >= 64");
  }
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "images", ec);
  std::filesystem::create_directories(out_dir / "chin", ec);
  if (!std::filesystem::is_directory(out_dir / "images") ||
      !std::filesystem::is_directory(out_dir / "chin")) {
    throw std::runtime_error("generate_synthetic: cannot create output dirs under " +
                             out_dir.string());
  }

  const Calibration& c = config.calibration;
  std::vector<SubjectRecord> records;
  records.reserve(config.n_subjects);
  if (latents_out) {
    latents_out->clear();
    latents_out->reserve(config.n_subjects);
  }

  for (int i = 0; i < config.n_subjects; ++i) {
    Rng rng = Rng::substream(config.seed, static_cast<std::uint64_t>(i));

    const bool male = rng.bernoulli(c.male_fraction);
    const GenderCalibration& gc = male ? c.male : c.female;

    double age = rng.normal(c.age_mean, c.age_sd);
    while (age < c.age_min || age > c.age_max) {
      age = rng.normal(c.age_mean, c.age_sd);
    }
    const double height = rng.normal(gc.height_mean, gc.height_sd);
    const double bmi_z = rng.normal();
    const double bmi = gc.bmi_median * std::exp(gc.bmi_log_sd * bmi_z);
    const double weight = bmi * (height / 100.0) * (height / 100.0);

    double smm = c.smm_weight * weight + c.smm_height * (height - 160.0) +
                 c.smm_male * (male ? 1.0 : 0.0) + c.smm_intercept +
                 rng.normal() * (c.smm_noise_base + c.smm_noise_per_kg * weight);
    smm = std::clamp(smm, 0.1 * weight, 0.9 * weight);

    const double u = rng.normal() * c.adiposity_sd;
    double pbf = c.pbf_bmi * (bmi - 22.0) + c.pbf_female * (male ? 0.0 : 1.0) +
                 c.pbf_age * (age - 40.0) + c.pbf_intercept + u +
                 rng.normal() * c.pbf_noise_sd;
    pbf = std::clamp(pbf, c.pbf_min, c.pbf_max);

    const double signal = bmi_z + u / c.adiposity_sd;
    const FaceGeometry geom =
        face_geometry(config.image_side, signal, config.adiposity_face_gain);
    const Image face = render_face(config.image_side, geom, rng);

    const std::string id = subject_id(i);
    const std::string image_rel = "images/" + id + ".ppm";
    const std::string chin_rel = "chin/" + id + ".txt";
    write_image(face, out_dir / image_rel);
    save_chin_points(chin_samples(geom), out_dir / chin_rel);

    SubjectRecord r;
    r.id = id;
    r.race = "JP";
    r.gender = male ? Gender::kMale : Gender::kFemale;
    r.age = static_cast<int>(std::llround(age));
    r.height_cm = height;
    r.weight_kg = weight;
    r.smm_kg = smm;
    r.pbf_pct = pbf;
    r.image_path = image_rel;
    r.face_bbox = geom.bbox;
    r.chin_points_path = chin_rel;
    records.push_back(std::move(r));

    if (latents_out) {
      latents_out->push_back(
          {bmi, bmi_z, u, geom.a / geom.b, geom.c0, geom.c2});
    }
  }

  save_dataset(records, out_dir / "dataset.csv");
  return records;
}

}  // namespace bodycomp
