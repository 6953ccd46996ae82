#include "bodycomp/dataset.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "bodycomp/image.hpp"
#include "bodycomp/rng.hpp"
#include "bodycomp/text.hpp"

namespace bodycomp {
namespace {

constexpr const char* kCsvHeader =
    "id,race,gender,age,height_cm,weight_kg,smm_kg,pbf_pct,image_path,"
    "bbox_x,bbox_y,bbox_w,bbox_h,chin_points_path";

const std::vector<std::string>& column_names() {
  static const std::vector<std::string> names =
      split_csv_line(kCsvHeader);
  return names;
}

[[noreturn]] void row_error(int row, const std::string& column,
                            const std::string& what) {
  throw std::runtime_error("dataset row " + std::to_string(row) + " column " +
                           column + ": " + what);
}

std::filesystem::path resolve(const std::filesystem::path& base,
                              const std::string& ref) {
  std::filesystem::path p(ref);
  return p.is_absolute() ? p : base / p;
}

}  // namespace

std::vector<SubjectRecord> load_dataset(const std::filesystem::path& csv_path) {
  std::ifstream in(csv_path);
  if (!in) {
    throw std::runtime_error("load_dataset: cannot open " + csv_path.string());
  }
  std::string line;
  if (!std::getline(in, line)) {
    throw std::runtime_error("load_dataset: empty file " + csv_path.string());
  }
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kCsvHeader) {
    throw std::runtime_error("load_dataset: unexpected header '" + line +
                             "', expected '" + kCsvHeader + "'");
  }

  const auto& cols = column_names();
  const std::filesystem::path base = csv_path.parent_path();
  std::vector<SubjectRecord> records;
  int row = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    ++row;
    const std::vector<std::string> f = split_csv_line(line);
    if (f.size() != cols.size()) {
      throw std::runtime_error(
          "dataset row " + std::to_string(row) + ": expected " +
          std::to_string(cols.size()) + " columns, got " +
          std::to_string(f.size()));
    }
    const auto ctx = [&](int i) {
      return "dataset row " + std::to_string(row) + " column " + cols[i];
    };

    SubjectRecord r;
    r.id = f[0];
    r.race = f[1];
    if (f[2] == "M") {
      r.gender = Gender::kMale;
    } else if (f[2] == "F") {
      r.gender = Gender::kFemale;
    } else {
      row_error(row, "gender", "expected M or F, got '" + f[2] + "'");
    }
    r.age = static_cast<int>(parse_long(f[3], ctx(3)));
    r.height_cm = parse_double(f[4], ctx(4));
    r.weight_kg = parse_double(f[5], ctx(5));
    r.smm_kg = parse_double(f[6], ctx(6));
    r.pbf_pct = parse_double(f[7], ctx(7));
    r.image_path = f[8];
    r.face_bbox.x = static_cast<int>(parse_long(f[9], ctx(9)));
    r.face_bbox.y = static_cast<int>(parse_long(f[10], ctx(10)));
    r.face_bbox.w = static_cast<int>(parse_long(f[11], ctx(11)));
    r.face_bbox.h = static_cast<int>(parse_long(f[12], ctx(12)));
    r.chin_points_path = f[13];

    if (r.age < 0) row_error(row, "age", "must be >= 0");
    if (!(r.height_cm > 0)) row_error(row, "height_cm", "must be > 0");
    if (!(r.weight_kg > 0)) row_error(row, "weight_kg", "must be > 0");
    if (!(r.smm_kg > 0)) row_error(row, "smm_kg", "must be > 0");
    if (!(r.pbf_pct > 0 && r.pbf_pct < 100)) {
      row_error(row, "pbf_pct", "must lie in (0, 100)");
    }
    if (!(r.smm_kg < r.weight_kg)) {
      row_error(row, "smm_kg",
                "skeletal muscle mass must be below body weight");
    }
    if (r.face_bbox.w < 1 || r.face_bbox.h < 1) {
      row_error(row, "bbox_w", "bbox must have positive size");
    }
    const ImageHeader hdr = read_image_header(resolve(base, r.image_path));
    if (!r.face_bbox.inside(hdr.width, hdr.height)) {
      row_error(row, "bbox_x",
                "face_bbox does not fit inside image " + r.image_path);
    }
    records.push_back(std::move(r));
  }
  return records;
}

void save_dataset(const std::vector<SubjectRecord>& records,
                  const std::filesystem::path& csv_path) {
  std::ofstream out(csv_path, std::ios::trunc);
  if (!out) {
    throw std::runtime_error("save_dataset: cannot open " + csv_path.string());
  }
  out << kCsvHeader << '\n';
  for (const SubjectRecord& r : records) {
    out << r.id << ',' << r.race << ','
        << (r.gender == Gender::kMale ? 'M' : 'F') << ',' << r.age << ','
        << format_double(r.height_cm) << ',' << format_double(r.weight_kg)
        << ',' << format_double(r.smm_kg) << ',' << format_double(r.pbf_pct)
        << ',' << r.image_path << ',' << r.face_bbox.x << ',' << r.face_bbox.y
        << ',' << r.face_bbox.w << ',' << r.face_bbox.h << ','
        << r.chin_points_path << '\n';
  }
  if (!out) {
    throw std::runtime_error("save_dataset: write failed for " +
                             csv_path.string());
  }
}

std::pair<std::vector<SubjectRecord>, std::vector<SubjectRecord>>
split_dataset(const std::vector<SubjectRecord>& records,
              const SplitSpec& spec) {
  if (records.size() < 2) {
    throw std::runtime_error("split_dataset: need at least 2 records, got " +
                             std::to_string(records.size()));
  }
  if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0)) {
    throw std::runtime_error("split_dataset: train_fraction must be in (0,1)");
  }
  std::vector<std::size_t> order(records.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(spec.seed);
  rng.shuffle(order);

  const std::size_t n_train = static_cast<std::size_t>(
      std::llround(spec.train_fraction * static_cast<double>(records.size())));
  std::vector<SubjectRecord> train, val;
  train.reserve(n_train);
  val.reserve(records.size() - n_train);
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < n_train ? train : val).push_back(records[order[i]]);
  }
  return {std::move(train), std::move(val)};
}

std::vector<Point> load_chin_points(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("load_chin_points: cannot open " + path.string());
  }
  std::vector<Point> points;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string xs, ys, extra;
    if (!(ls >> xs >> ys) || (ls >> extra)) {
      throw std::runtime_error("load_chin_points: " + path.string() + " line " +
                               std::to_string(line_no) +
                               ": expected 'x y'");
    }
    const std::string ctx = path.string() + " line " + std::to_string(line_no);
    points.push_back({parse_double(xs, ctx), parse_double(ys, ctx)});
  }
  if (points.size() < 3) {
    throw std::runtime_error("load_chin_points: " + path.string() +
                             ": need at least 3 points, got " +
                             std::to_string(points.size()));
  }
  return points;
}

void save_chin_points(const std::vector<Point>& points,
                      const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw std::runtime_error("save_chin_points: cannot open " + path.string());
  }
  for (const Point& p : points) {
    out << format_double(p.x) << ' ' << format_double(p.y) << '\n';
  }
  if (!out) {
    throw std::runtime_error("save_chin_points: write failed for " +
                             path.string());
  }
}

}  // namespace bodycomp
