#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "bodycomp/metrics.hpp"
#include "bodycomp/rng.hpp"
#include "bodycomp/text.hpp"
#include "test_util.hpp"

using namespace bodycomp;

namespace {

std::vector<SubjectRecord> toy_records() {
  std::vector<SubjectRecord> recs;
  Rng rng(17);
  for (int i = 0; i < 200; ++i) {
    SubjectRecord r;
    r.id = "s" + std::to_string(i);
    r.race = i % 10 == 0 ? "XX" : "JP";
    r.gender = rng.bernoulli(0.5) ? Gender::kMale : Gender::kFemale;
    r.age = 20 + static_cast<int>(rng.below(50));
    r.height_cm = rng.normal(165, 8);
    r.weight_kg = 0.4 * r.height_cm + rng.normal(0, 6);
    r.smm_kg = 0.3 * r.weight_kg + rng.normal(0, 2);
    r.pbf_pct = 25 + rng.normal(0, 5);
    recs.push_back(r);
  }
  return recs;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("pearson on exact linear relations") {
  CHECK(pearson({1, 2, 3}, {2, 4, 6}) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(pearson({1, 2, 3}, {3, 2, 1}) == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(pearson({1, 2, 3, 4}, {1, 3, 2, 4}) ==
        doctest::Approx(0.8).epsilon(1e-12));
}

TEST_CASE("pearson rejects degenerate inputs") {
  CHECK_THROWS_AS(pearson({1, 1, 1}, {1, 2, 3}), std::runtime_error);
  CHECK_THROWS_AS(pearson({1}, {2}), std::runtime_error);
  CHECK_THROWS_AS(pearson({1, 2}, {1, 2, 3}), std::runtime_error);
}

TEST_CASE("pearson symmetry and affine invariance") {
  Rng rng(5);
  std::vector<double> x, y;
  for (int i = 0; i < 100; ++i) {
    x.push_back(rng.normal());
    y.push_back(0.5 * x.back() + rng.normal());
  }
  CHECK(std::fabs(pearson(x, y) - pearson(y, x)) < 1e-12);
  std::vector<double> ax;
  for (double v : x) ax.push_back(-2.5 * v + 7.0);
  CHECK(std::fabs(pearson(ax, y) + pearson(x, y)) < 1e-12);
}

TEST_CASE("correlation matrix is symmetric with unit diagonal") {
  const auto recs = toy_records();
  const CorrelationMatrix m = correlation_matrix(recs);
  for (int i = 0; i < 7; ++i) {
    CHECK(m.r[i][i] == 1.0);
    for (int j = 0; j < 7; ++j) {
      if (std::isnan(m.r[i][j])) {
        CHECK(std::isnan(m.r[j][i]));
      } else {
        CHECK(std::fabs(m.r[i][j] - m.r[j][i]) < 1e-12);
      }
    }
  }
  // weight and smm are positively related by construction
  CHECK(m.r[4][5] > 0.3);
}

TEST_CASE("constant columns give undefined entries, not errors") {
  auto recs = toy_records();
  for (auto& r : recs) r.race = "JP";
  const CorrelationMatrix m = correlation_matrix(recs);
  CHECK(std::isnan(m.r[0][1]));
  CHECK(m.r[0][0] == 1.0);
  CHECK_FALSE(std::isnan(m.r[4][5]));
}

TEST_CASE("mae and error_sd hand values") {
  CHECK(mae({0, 0, 0}) == 0.0);
  CHECK(mae({1, -1, 2}) == doctest::Approx(4.0 / 3.0).epsilon(1e-12));
  CHECK(error_sd({1, -1}) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));
  CHECK_THROWS_AS(mae({}), std::runtime_error);
  CHECK_THROWS_AS(error_sd({1.0}), std::runtime_error);
}

TEST_CASE("density export conserves counts and integrates to one") {
  const auto dir = testutil::test_dir("metrics_density");

  SUBCASE("single value, one bin") {
    export_density({2.5}, 1, dir / "one.csv");
    std::ifstream in(dir / "one.csv");
    std::string header, row;
    std::getline(in, header);
    CHECK(header == "bin_center,count,density");
    std::getline(in, row);
    const auto fields = split_csv_line(row);
    CHECK(fields[1] == "1");
    CHECK(parse_double(fields[2], "density") == doctest::Approx(1.0));
  }

  SUBCASE("random errors") {
    Rng rng(3);
    std::vector<double> errors;
    for (int i = 0; i < 500; ++i) errors.push_back(rng.normal(0, 2));
    export_density(errors, 24, dir / "d.csv");
    std::ifstream in(dir / "d.csv");
    std::string line;
    std::getline(in, line);
    std::size_t total = 0;
    double integral = 0;
    std::vector<double> centers;
    while (std::getline(in, line)) {
      const auto f = split_csv_line(line);
      centers.push_back(parse_double(f[0], "center"));
      total += static_cast<std::size_t>(parse_long(f[1], "count"));
      integral += parse_double(f[2], "density");
    }
    REQUIRE(centers.size() == 24);
    const double width = centers[1] - centers[0];
    CHECK(total == errors.size());
    CHECK(std::fabs(integral * width - 1.0) < 1e-9);
  }
}

TEST_CASE("scatter export writes one row per sample with decade age group") {
  const auto dir = testutil::test_dir("metrics_scatter");
  export_scatter({25.0, 30.0}, {24.0, 31.5}, {34, 47}, dir / "s.csv");
  std::ifstream in(dir / "s.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "actual,predicted,age_group");
  std::getline(in, line);
  CHECK(split_csv_line(line)[2] == "30");
  std::getline(in, line);
  CHECK(split_csv_line(line)[2] == "40");
  CHECK_FALSE(std::getline(in, line));
}

TEST_CASE("evaluate_predictions assembles the report") {
  std::vector<double> actual_pbf{20, 25, 30, 35}, pred_pbf{21, 24, 31, 33};
  std::vector<double> actual_smm{20, 22, 26, 30}, pred_smm{19, 23, 25, 31};
  const EvalReport rep =
      evaluate_predictions(actual_pbf, pred_pbf, actual_smm, pred_smm);
  CHECK(rep.n == 4);
  CHECK(rep.pbf.mae == doctest::Approx(1.25));
  CHECK(rep.smm.mae == doctest::Approx(1.0));
  CHECK(rep.pbf.pearson_pred_actual > 0.9);
  const std::string json = eval_report_json(rep);
  CHECK(json.find("\"pbf_mae\"") != std::string::npos);
  CHECK(json.find("\"pearson_pred_pbf_vs_pred_smm\"") != std::string::npos);
}

}  // TEST_SUITE
