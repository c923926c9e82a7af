#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ptsfa/errors.hpp"
#include "ptsfa/matrix.hpp"
#include "ptsfa/rng.hpp"

namespace ptsfa {

// One labeled point set. Coordinates are kept at float32 precision (the
// dataset file stores float32, so in-memory values round-trip bitwise).
struct PointCloudSample {
  Matrix points;  // m x 3
  int label = 0;
};

inline constexpr int kNumShapeCategories = 5;
inline constexpr int kMinPointsPerSample = 8;

inline const char* shape_category_name(int category) {
  switch (category) {
    case 0: return "sphere";
    case 1: return "cube";
    case 2: return "cylinder";
    case 3: return "cone";
    case 4: return "torus";
    default: return "?";
  }
}

namespace detail {

inline double quantize_f32(double v) {
  return static_cast<double>(static_cast<float>(v));
}

inline void quantize_points(Matrix& pts) {
  for (double& v : pts.data) v = quantize_f32(v);
}

// Uniform direction on the unit sphere.
inline std::array<double, 3> unit_vector(Rng& rng) {
  while (true) {
    double x = rng.normal(), y = rng.normal(), z = rng.normal();
    double n = std::sqrt(x * x + y * y + z * z);
    if (n > 1e-12) return {x / n, y / n, z / n};
  }
}

inline void sample_sphere(Matrix& pts, int i, Rng& rng) {
  auto u = unit_vector(rng);
  pts(i, 0) = u[0];
  pts(i, 1) = u[1];
  pts(i, 2) = u[2];
}

inline void sample_cube(Matrix& pts, int i, Rng& rng) {
  // Six equal-area faces of the cube with half-side 1.
  std::size_t face = rng.uniform_index(6);
  double a = rng.uniform(-1.0, 1.0);
  double b = rng.uniform(-1.0, 1.0);
  double s = (face % 2 == 0) ? 1.0 : -1.0;
  switch (face / 2) {
    case 0: pts(i, 0) = s;  pts(i, 1) = a;  pts(i, 2) = b;  break;
    case 1: pts(i, 0) = a;  pts(i, 1) = s;  pts(i, 2) = b;  break;
    default: pts(i, 0) = a; pts(i, 1) = b;  pts(i, 2) = s;  break;
  }
}

inline void sample_cylinder(Matrix& pts, int i, Rng& rng) {
  constexpr double radius = 0.6;
  constexpr double half_height = 1.0;
  const double pi = 3.14159265358979323846;
  const double lateral = 2.0 * pi * radius * 2.0 * half_height;
  const double caps = 2.0 * pi * radius * radius;
  if (rng.uniform() * (lateral + caps) < lateral) {
    double theta = rng.uniform(0.0, 2.0 * pi);
    pts(i, 0) = radius * std::cos(theta);
    pts(i, 1) = radius * std::sin(theta);
    pts(i, 2) = rng.uniform(-half_height, half_height);
  } else {
    double theta = rng.uniform(0.0, 2.0 * pi);
    double r = radius * std::sqrt(rng.uniform());
    pts(i, 0) = r * std::cos(theta);
    pts(i, 1) = r * std::sin(theta);
    pts(i, 2) = rng.uniform() < 0.5 ? half_height : -half_height;
  }
}

inline void sample_cone(Matrix& pts, int i, Rng& rng) {
  // Apex at z = +1, base disc of the given radius at z = -1.
  constexpr double base_radius = 0.9;
  const double pi = 3.14159265358979323846;
  const double slant = std::sqrt(4.0 + base_radius * base_radius);
  const double lateral = pi * base_radius * slant;
  const double base = pi * base_radius * base_radius;
  double theta = rng.uniform(0.0, 2.0 * pi);
  if (rng.uniform() * (lateral + base) < lateral) {
    double t = std::sqrt(rng.uniform());  // area-uniform along the slant
    pts(i, 0) = base_radius * t * std::cos(theta);
    pts(i, 1) = base_radius * t * std::sin(theta);
    pts(i, 2) = 1.0 - 2.0 * t;
  } else {
    double r = base_radius * std::sqrt(rng.uniform());
    pts(i, 0) = r * std::cos(theta);
    pts(i, 1) = r * std::sin(theta);
    pts(i, 2) = -1.0;
  }
}

inline void sample_torus(Matrix& pts, int i, Rng& rng) {
  constexpr double ring = 0.7;
  constexpr double tube = 0.3;
  const double pi = 3.14159265358979323846;
  double phi = rng.uniform(0.0, 2.0 * pi);
  // Rejection on the tube angle keeps the surface density uniform.
  double theta;
  while (true) {
    theta = rng.uniform(0.0, 2.0 * pi);
    double accept = (1.0 + (tube / ring) * std::cos(theta)) / (1.0 + tube / ring);
    if (rng.uniform() < accept) break;
  }
  double rad = ring + tube * std::cos(theta);
  pts(i, 0) = rad * std::cos(phi);
  pts(i, 1) = rad * std::sin(phi);
  pts(i, 2) = tube * std::sin(theta);
}

}  // namespace detail

// m surface points of one parametric family, max-norm scaled to 1,
// deterministic in (category, m, seed).
inline PointCloudSample generate_shape(int category, int m,
                                       std::uint64_t seed) {
  if (category < 0 || category >= kNumShapeCategories)
    throw RangeError("generate_shape: unknown category " +
                     std::to_string(category));
  if (m < kMinPointsPerSample)
    throw PreconditionError("generate_shape: m must be >= " +
                            std::to_string(kMinPointsPerSample));
  Rng rng(mix_seed(seed, static_cast<std::uint64_t>(category)));
  PointCloudSample sample;
  sample.label = category;
  sample.points = Matrix(m, 3);
  for (int i = 0; i < m; ++i) {
    switch (category) {
      case 0: detail::sample_sphere(sample.points, i, rng); break;
      case 1: detail::sample_cube(sample.points, i, rng); break;
      case 2: detail::sample_cylinder(sample.points, i, rng); break;
      case 3: detail::sample_cone(sample.points, i, rng); break;
      default: detail::sample_torus(sample.points, i, rng); break;
    }
  }
  double max_norm = 0.0;
  for (int i = 0; i < m; ++i) {
    max_norm = std::max(max_norm, norm(sample.points.row(i)));
  }
  for (double& v : sample.points.data) v /= max_norm;
  detail::quantize_points(sample.points);
  return sample;
}

// Deterministic corruption pipeline standing in for a sensor-domain gap.
struct ShiftRecipe {
  double jitter_sigma = 0.0;
  double dropout_fraction = 0.0;  // in [0, 1)
  std::array<double, 3> anisotropic_scale = {1.0, 1.0, 1.0};
  double occlusion_fraction = 0.0;  // in [0, 1)
  double density_bias = 0.0;        // >= 0
  std::uint64_t seed = 0;
};

inline void validate_recipe(const ShiftRecipe& r) {
  if (!(r.jitter_sigma >= 0.0))
    throw PreconditionError("ShiftRecipe: jitter_sigma must be >= 0");
  if (!(r.dropout_fraction >= 0.0 && r.dropout_fraction < 1.0))
    throw PreconditionError("ShiftRecipe: dropout_fraction must be in [0,1)");
  if (!(r.occlusion_fraction >= 0.0 && r.occlusion_fraction < 1.0))
    throw PreconditionError("ShiftRecipe: occlusion_fraction must be in [0,1)");
  if (!(r.density_bias >= 0.0))
    throw PreconditionError("ShiftRecipe: density_bias must be >= 0");
  for (double s : r.anisotropic_scale) {
    if (!std::isfinite(s) || s == 0.0)
      throw PreconditionError("ShiftRecipe: scale factors must be finite and nonzero");
  }
}

// Stage order: scale, dropout, occlusion, re-pad to m by duplication,
// density-biased resampling, jitter. The label always survives.
inline PointCloudSample apply_shift(const PointCloudSample& sample,
                                    const ShiftRecipe& recipe) {
  validate_recipe(recipe);
  const int m = sample.points.rows;
  Rng rng(recipe.seed);

  std::vector<std::array<double, 3>> pts(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < 3; ++j)
      pts[i][j] = sample.points(i, j) * recipe.anisotropic_scale[j];
  }

  // Dropout: remove floor(fraction * m) random distinct points.
  if (recipe.dropout_fraction > 0.0) {
    int drop = static_cast<int>(recipe.dropout_fraction * m);
    std::vector<int> order(m);
    for (int i = 0; i < m; ++i) order[i] = i;
    rng.shuffle(order);
    std::vector<bool> dropped(m, false);
    for (int i = 0; i < drop; ++i) dropped[order[i]] = true;
    std::vector<std::array<double, 3>> kept;
    kept.reserve(m - drop);
    for (int i = 0; i < m; ++i) {
      if (!dropped[i]) kept.push_back(pts[i]);
    }
    pts = std::move(kept);
  }

  // Occlusion: cut the half-space beyond a plane through the origin, with
  // the plane offset picked by projection quantile to hit the fraction.
  if (recipe.occlusion_fraction > 0.0) {
    auto dir = detail::unit_vector(rng);
    const int n = static_cast<int>(pts.size());
    int remove = static_cast<int>(
        std::lround(recipe.occlusion_fraction * n));
    if (remove >= n)
      throw DegenerateSampleError("apply_shift: occlusion removed every point");
    if (remove > 0) {
      std::vector<std::pair<double, int>> proj(n);
      for (int i = 0; i < n; ++i) {
        double p = dir[0] * pts[i][0] + dir[1] * pts[i][1] + dir[2] * pts[i][2];
        proj[i] = {p, i};
      }
      std::sort(proj.begin(), proj.end());
      std::vector<bool> removed(n, false);
      for (int i = n - remove; i < n; ++i) removed[proj[i].second] = true;
      std::vector<std::array<double, 3>> kept;
      kept.reserve(n - remove);
      for (int i = 0; i < n; ++i) {
        if (!removed[i]) kept.push_back(pts[i]);
      }
      pts = std::move(kept);
    }
  }

  if (pts.empty())
    throw DegenerateSampleError("apply_shift: no points survived");

  // Re-pad to exactly m points by cycling duplicates of the survivors.
  const std::size_t survivors = pts.size();
  while (pts.size() < static_cast<std::size_t>(m))
    pts.push_back(pts[pts.size() - survivors]);

  // Density bias: resample m points with replacement, weighted toward one
  // side of a random direction; strength 0 is the identity.
  if (recipe.density_bias > 0.0) {
    auto dir = detail::unit_vector(rng);
    std::vector<double> cumulative(pts.size());
    double total = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      double p = dir[0] * pts[i][0] + dir[1] * pts[i][1] + dir[2] * pts[i][2];
      total += std::exp(recipe.density_bias * p);
      cumulative[i] = total;
    }
    std::vector<std::array<double, 3>> resampled(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) {
      double u = rng.uniform() * total;
      auto it = std::lower_bound(cumulative.begin(), cumulative.end(), u);
      std::size_t idx = static_cast<std::size_t>(it - cumulative.begin());
      if (idx >= pts.size()) idx = pts.size() - 1;
      resampled[i] = pts[idx];
    }
    pts = std::move(resampled);
  }

  if (recipe.jitter_sigma > 0.0) {
    for (auto& p : pts) {
      for (int j = 0; j < 3; ++j) p[j] += rng.normal(0.0, recipe.jitter_sigma);
    }
  }

  PointCloudSample out;
  out.label = sample.label;
  out.points = Matrix(m, 3);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < 3; ++j) out.points(i, j) = pts[i][j];
  }
  detail::quantize_points(out.points);
  return out;
}

inline ShiftRecipe mild_shift(std::uint64_t seed) {
  ShiftRecipe r;
  r.jitter_sigma = 0.01;
  r.dropout_fraction = 0.10;
  r.anisotropic_scale = {1.05, 0.95, 1.0};
  r.occlusion_fraction = 0.10;
  r.density_bias = 0.3;
  r.seed = seed;
  return r;
}

inline ShiftRecipe heavy_shift(std::uint64_t seed) {
  ShiftRecipe r;
  r.jitter_sigma = 0.02;
  r.dropout_fraction = 0.30;
  r.anisotropic_scale = {1.3, 0.7, 1.1};
  r.occlusion_fraction = 0.35;
  r.density_bias = 1.0;
  r.seed = seed;
  return r;
}

}  // namespace ptsfa
