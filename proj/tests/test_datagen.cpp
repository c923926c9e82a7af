#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "ptsfa/datagen.hpp"
#include "ptsfa/dataset_io.hpp"
#include "ptsfa/rng.hpp"

using namespace ptsfa;

namespace {

std::filesystem::path temp_file(const char* name) {
  return std::filesystem::temp_directory_path() / name;
}

Dataset random_dataset(Rng& rng, int max_samples = 6) {
  Dataset ds;
  ds.num_classes = 2 + static_cast<int>(rng.uniform_index(4));
  ds.points_per_sample = 8 + static_cast<int>(rng.uniform_index(24));
  const int n = 1 + static_cast<int>(rng.uniform_index(max_samples));
  for (int i = 0; i < n; ++i) {
    PointCloudSample s;
    s.label = static_cast<int>(rng.uniform_index(ds.num_classes));
    s.points = Matrix(ds.points_per_sample, 3);
    for (double& v : s.points.data)
      v = static_cast<double>(static_cast<float>(rng.normal()));
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

bool samples_identical(const Dataset& a, const Dataset& b) {
  if (a.num_classes != b.num_classes ||
      a.points_per_sample != b.points_per_sample ||
      a.samples.size() != b.samples.size())
    return false;
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    if (a.samples[i].label != b.samples[i].label) return false;
    if (a.samples[i].points.data != b.samples[i].points.data) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("generate_shape") {
  SECTION("sphere points sit on the unit sphere after scaling") {
    PointCloudSample s = generate_shape(0, 64, 123);
    for (int i = 0; i < s.points.rows; ++i) {
      CHECK(norm(s.points.row(i)) == Catch::Approx(1.0).margin(1e-9));
    }
  }
  SECTION("deterministic in (category, m, seed)") {
    for (int c = 0; c < kNumShapeCategories; ++c) {
      PointCloudSample a = generate_shape(c, 32, 9);
      PointCloudSample b = generate_shape(c, 32, 9);
      CHECK(a.points.data == b.points.data);
      CHECK(a.label == c);
    }
    PointCloudSample a = generate_shape(1, 32, 9);
    PointCloudSample b = generate_shape(1, 32, 10);
    CHECK(a.points.data != b.points.data);
  }
  SECTION("cube points each touch a face") {
    PointCloudSample s = generate_shape(1, 128, 77);
    double extent = 0.0;
    for (double v : s.points.data) extent = std::max(extent, std::abs(v));
    for (int i = 0; i < s.points.rows; ++i) {
      double point_max = 0.0;
      for (int j = 0; j < 3; ++j)
        point_max = std::max(point_max, std::abs(s.points(i, j)));
      CHECK(point_max == Catch::Approx(extent).margin(1e-7));
    }
  }
  SECTION("bad arguments") {
    CHECK_THROWS_AS(generate_shape(5, 32, 0), RangeError);
    CHECK_THROWS_AS(generate_shape(-1, 32, 0), RangeError);
    CHECK_THROWS_AS(generate_shape(0, 4, 0), PreconditionError);
  }
}

TEST_CASE("apply_shift") {
  SECTION("identity recipe leaves the sample unchanged") {
    PointCloudSample s = generate_shape(2, 64, 5);
    ShiftRecipe identity;
    identity.seed = 99;
    PointCloudSample out = apply_shift(s, identity);
    CHECK(out.points.data == s.points.data);
    CHECK(out.label == s.label);
  }
  SECTION("deterministic in the recipe seed") {
    PointCloudSample s = generate_shape(3, 64, 5);
    ShiftRecipe r = heavy_shift(1234);
    PointCloudSample a = apply_shift(s, r);
    PointCloudSample b = apply_shift(s, r);
    CHECK(a.points.data == b.points.data);
  }
  SECTION("labels survive any recipe") {
    Rng rng(21);
    for (int trial = 0; trial < 10; ++trial) {
      int cat = static_cast<int>(rng.uniform_index(kNumShapeCategories));
      PointCloudSample s = generate_shape(cat, 32, rng.next_u64());
      ShiftRecipe r;
      r.jitter_sigma = rng.uniform(0.0, 0.05);
      r.dropout_fraction = rng.uniform(0.0, 0.9);
      r.occlusion_fraction = rng.uniform(0.0, 0.5);
      r.anisotropic_scale = {rng.uniform(0.5, 1.5), rng.uniform(0.5, 1.5),
                             rng.uniform(0.5, 1.5)};
      r.density_bias = rng.uniform(0.0, 2.0);
      r.seed = rng.next_u64();
      PointCloudSample out = apply_shift(s, r);
      CHECK(out.label == cat);
      CHECK(out.points.rows == 32);
    }
  }
  SECTION("jitter displacement matches the half-normal expectation") {
    // MC over 10^4 points: per-coordinate |d| has mean sigma*sqrt(2/pi),
    // and the 3D norm has mean 2*sigma*sqrt(2/pi).
    const double sigma = 0.01;
    PointCloudSample s = generate_shape(0, 10000, 31);
    ShiftRecipe r;
    r.jitter_sigma = sigma;
    r.seed = 77;
    PointCloudSample out = apply_shift(s, r);
    double mean_norm = 0.0, mean_abs = 0.0;
    for (int i = 0; i < out.points.rows; ++i) {
      double sq = 0.0;
      for (int j = 0; j < 3; ++j) {
        const double d = out.points(i, j) - s.points(i, j);
        sq += d * d;
        mean_abs += std::abs(d);
      }
      mean_norm += std::sqrt(sq);
    }
    mean_norm /= out.points.rows;
    mean_abs /= out.points.rows * 3.0;
    const double sqrt_2_over_pi = std::sqrt(2.0 / 3.14159265358979323846);
    CHECK(mean_abs == Catch::Approx(sigma * sqrt_2_over_pi).epsilon(0.03));
    CHECK(mean_norm == Catch::Approx(2.0 * sigma * sqrt_2_over_pi).epsilon(0.03));
  }
  SECTION("dropout keeps the counted survivors then re-pads") {
    PointCloudSample s = generate_shape(1, 100, 13);
    ShiftRecipe r;
    r.dropout_fraction = 0.5;
    r.seed = 5;
    PointCloudSample out = apply_shift(s, r);
    REQUIRE(out.points.rows == 100);
    // count distinct rows
    std::vector<std::array<double, 3>> rows;
    for (int i = 0; i < out.points.rows; ++i)
      rows.push_back({out.points(i, 0), out.points(i, 1), out.points(i, 2)});
    std::sort(rows.begin(), rows.end());
    rows.erase(std::unique(rows.begin(), rows.end()), rows.end());
    CHECK(static_cast<int>(rows.size()) == 50);
  }
  SECTION("odd m dropout survivor count is ceil(m/2)") {
    PointCloudSample s = generate_shape(4, 9, 13);
    ShiftRecipe r;
    r.dropout_fraction = 0.5;
    r.seed = 6;
    PointCloudSample out = apply_shift(s, r);
    std::vector<std::array<double, 3>> rows;
    for (int i = 0; i < out.points.rows; ++i)
      rows.push_back({out.points(i, 0), out.points(i, 1), out.points(i, 2)});
    std::sort(rows.begin(), rows.end());
    rows.erase(std::unique(rows.begin(), rows.end()), rows.end());
    CHECK(static_cast<int>(rows.size()) == 5);
  }
  SECTION("occlusion that would erase everything is an error") {
    PointCloudSample s = generate_shape(0, 8, 3);
    ShiftRecipe r;
    r.occlusion_fraction = 0.97;  // rounds to all 8 points
    r.seed = 1;
    CHECK_THROWS_AS(apply_shift(s, r), DegenerateSampleError);
  }
  SECTION("invalid recipes rejected") {
    PointCloudSample s = generate_shape(0, 16, 3);
    ShiftRecipe r;
    r.dropout_fraction = 1.0;
    CHECK_THROWS_AS(apply_shift(s, r), PreconditionError);
    ShiftRecipe r2;
    r2.anisotropic_scale = {0.0, 1.0, 1.0};
    CHECK_THROWS_AS(apply_shift(s, r2), PreconditionError);
  }
}

TEST_CASE("dataset round trip") {
  SECTION("write then read is the identity") {
    Dataset ds;
    ds.num_classes = 5;
    ds.points_per_sample = 16;
    for (int i = 0; i < 3; ++i)
      ds.samples.push_back(generate_shape(i, 16, 100 + i));
    auto path = temp_file("ptsfa_roundtrip.pcds");
    write_dataset(ds, path.string());
    Dataset back = read_dataset(path.string());
    CHECK(samples_identical(ds, back));
    std::filesystem::remove(path);
  }
  SECTION("property: random datasets round-trip bitwise") {
    Rng rng(404);
    auto path = temp_file("ptsfa_roundtrip_prop.pcds");
    for (int trial = 0; trial < 25; ++trial) {
      Dataset ds = random_dataset(rng);
      write_dataset(ds, path.string());
      Dataset back = read_dataset(path.string());
      CHECK(samples_identical(ds, back));
    }
    std::filesystem::remove(path);
  }
  SECTION("corrupt magic rejected") {
    Dataset ds;
    ds.num_classes = 2;
    ds.points_per_sample = 8;
    ds.samples.push_back(generate_shape(0, 8, 1));
    auto path = temp_file("ptsfa_badmagic.pcds");
    write_dataset(ds, path.string());
    {
      std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
      f.put('X');
    }
    CHECK_THROWS_AS(read_dataset(path.string()), FormatError);
    std::filesystem::remove(path);
  }
  SECTION("truncation reported with byte offset") {
    Dataset ds;
    ds.num_classes = 2;
    ds.points_per_sample = 8;
    ds.samples.push_back(generate_shape(0, 8, 1));
    auto path = temp_file("ptsfa_trunc.pcds");
    write_dataset(ds, path.string());
    std::filesystem::resize_file(path, 30);
    CHECK_THROWS_WITH(read_dataset(path.string()),
                      Catch::Matchers::ContainsSubstring("byte offset"));
    std::filesystem::remove(path);
  }
  SECTION("empty dataset rejected on write") {
    Dataset empty;
    empty.num_classes = 2;
    empty.points_per_sample = 8;
    auto path = temp_file("ptsfa_empty.pcds");
    CHECK_THROWS_AS(write_dataset(empty, path.string()), PreconditionError);
  }
}
