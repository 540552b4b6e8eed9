#include "hslod/slod.hpp"

#include <cmath>

#include "hslod/util.hpp"

namespace hslod {

namespace {

// Element averages of the combination with indicator coefficients `w`,
// assembled from the honest per-harmonic projections.
DenseVec projected(const PatchLodData& data, const DenseVec& w) {
  return data.harmonic_projections * (data.companions * w).eval();
}

}  // namespace

SlodFunction build_slod_function(const MeshHierarchy& mesh, const CoefficientField& coeff,
                                 const PatchLodData& data, const DenseMat& B,
                                 std::int64_t center, const SlodOptions& options) {
  const int dim = mesh.dim;
  const std::int64_t n_e = data.n_elements;
  auto center_coords = coords_of(dim, mesh.cells_per_axis(data.patch.level), center);
  if (!data.patch_elements.contains(dim, center_coords))
    throw ConfigError("slod: center element not inside the patch");
  const std::int64_t c_local = data.patch_elements.offset(dim, center_coords);

  SlodFunction fn;
  fn.level = data.patch.level;
  fn.center = center;
  fn.patch = data.patch;

  // correction coefficients over the non-center elements
  DenseVec correction = DenseVec::Zero(n_e > 1 ? n_e - 1 : 0);
  auto pad = [&](const DenseVec& c) {
    DenseVec w = DenseVec::Zero(n_e);
    w[c_local] = 1.0;
    std::int64_t k = 0;
    for (std::int64_t j = 0; j < n_e; ++j)
      if (j != c_local) w[j] += c[k++];
    return w;
  };

  const bool want_correction = options.mode != StabilizationMode::ForceRankZero &&
                               n_e > 1 && B.rows() > 0;
  if (want_correction) {
    // BD: trace pairings of the neighbor minimizers; rhs: of the center one
    DenseMat BG = B * data.companions;  // pairings of all minimizers
    DenseMat BD(B.rows(), n_e - 1);
    std::int64_t k = 0;
    for (std::int64_t j = 0; j < n_e; ++j)
      if (j != c_local) BD.col(k++) = BG.col(j);
    DenseVec rhs = BG.col(c_local);

    DenseMat M = BD.transpose() * BD;
    DenseVec r = BD.transpose() * rhs;
    SvdResult ms = svd(M);
    fn.initial_rank = condition_filter_rank(ms.singular_values);

    auto coeffs_at_rank = [&](int rank) {
      DenseVec c = DenseVec::Zero(n_e - 1);
      for (int i = 0; i < rank; ++i)
        c -= (ms.V.col(i).dot(r) / ms.singular_values[i]) * ms.U.col(i);
      return c;
    };

    if (options.mode == StabilizationMode::Unstabilized) {
      fn.kept_rank = fn.initial_rank;
      correction = coeffs_at_rank(fn.kept_rank);
      DenseVec proj = projected(data, pad(correction));
      double z = proj[c_local];
      fn.stability_deviation = 0.0;
      if (z != 0.0)
        for (std::int64_t j = 0; j < n_e; ++j) {
          double target = j == c_local ? 1.0 : 0.0;
          fn.stability_deviation =
              std::max(fn.stability_deviation, std::abs(proj[j] / z - target));
        }
    } else {
      // lower the rank until the projected shape stays near the indicator
      for (int rank = fn.initial_rank; rank >= 0; --rank) {
        DenseVec c = coeffs_at_rank(rank);
        DenseVec proj = projected(data, pad(c));
        double z = proj[c_local];
        if (z == 0.0) continue;
        double dev = 0.0;
        for (std::int64_t j = 0; j < n_e; ++j) {
          double target = j == c_local ? 1.0 : 0.0;
          dev = std::max(dev, std::abs(proj[j] / z - target));
        }
        if (dev <= options.delta_s || rank == 0) {
          fn.kept_rank = rank;
          fn.stability_deviation = dev;
          correction = c;
          break;
        }
      }
    }
  }

  DenseVec w = pad(correction);           // indicator coefficients, center = 1
  DenseVec g = data.companions * w;       // harmonic coefficients
  FineFunction theta = harmonic_combination(mesh, data, g);
  double norm = energy_norm(mesh, coeff, theta);
  if (!(norm > 0.0))
    throw NumericalError("slod", "zero energy norm for the function of element " +
                                     std::to_string(center));
  fn.unnorm_scale = norm;
  fn.values = std::move(theta);
  fn.values.values /= norm;

  fn.companion.exponent = mesh.level_exponent(fn.level);
  fn.companion.elem_box = data.patch_elements;
  fn.companion.values = g / norm;

  // honest element averages of the normalized fine values
  Q0Function proj_full = project_q0(mesh, fn.level, fn.values);
  fn.projection.exponent = proj_full.exponent;
  fn.projection.elem_box = data.patch_elements;
  fn.projection.values = DenseVec::Zero(n_e);
  std::int64_t i = 0;
  for_each_in_box(dim, data.patch_elements, [&](const std::array<int, 3>& p) {
    fn.projection.values[i++] = proj_full.at(dim, p);
  });

  fn.boundary_residual = B.rows() > 0 ? (B * fn.companion.values).norm() : 0.0;
  return fn;
}

SlodLevelBasis slod_level_basis(const MeshHierarchy& mesh, const CoefficientField& coeff,
                                int level, const SlodOptions& options, int threads) {
  SlodLevelBasis basis;
  basis.level = level;
  basis.options = options;
  const std::int64_t n = mesh.element_count(level);
  basis.functions.resize(n);
  parallel_for(
      n,
      [&](std::size_t i) {
        Patch patch = build_patch(mesh, PatchKind::Lod, level, static_cast<std::int64_t>(i),
                                  options.m);
        PatchLodData data = compute_patch_lod(mesh, coeff, patch);
        // assembled in every mode so the boundary-residual diagnostic stays
        // meaningful for uncorrected bases too
        DenseMat B = conormal_residual_matrix(mesh, patch, coeff, data.harmonics);
        basis.functions[i] =
            build_slod_function(mesh, coeff, data, B, static_cast<std::int64_t>(i), options);
      },
      threads);
  return basis;
}

}  // namespace hslod
