#pragma once

// Superlocalized basis functions: per patch, correct the energy-minimizing
// function of the center element by a combination of its neighbors that
// minimizes the conormal boundary residual (least squares over the trace
// pairings).  The normal equations are solved through a truncated SVD; the
// truncation rank is lowered until the corrected function stays close to the
// center indicator under the element-average projection (stability safeguard
// with threshold delta_s).  Rank zero falls back to the plain minimizer.

#include <vector>

#include "hslod/lod.hpp"

namespace hslod {

enum class StabilizationMode {
  Stabilized,     // truncate until the projection deviation is <= delta_s
  Unstabilized,   // keep every singular value below the 1e15 condition filter
  ForceRankZero,  // no correction at all (plain localized minimizers)
};

struct SlodOptions {
  int m = 2;                  // patch layers
  double delta_s = 0.5;       // stability threshold on the projection deviation
  StabilizationMode mode = StabilizationMode::Stabilized;
};

struct SlodFunction {
  int level = 0;
  std::int64_t center = 0;  // element index on the level mesh
  Patch patch;

  FineFunction values;   // energy-normalized nodal values on the patch box
  Q0Function companion;  // right-hand side reproducing `values` through the
                         // patch solve (indicator coefficients, normalized)
  Q0Function projection; // element averages of `values` on the patch elements

  double unnorm_scale = 1.0;  // energy norm of the unnormalized function
                              // (whose projection is 1 on the center)
  double boundary_residual = 0.0;  // l2 norm of the trace pairings of the
                                   // normalized function
  int initial_rank = 0;       // rank after the condition filter
  int kept_rank = 0;          // rank after the stability safeguard
  double stability_deviation = 0.0;  // max |projection/z - indicator|
};

// Builds the basis function of `center` from precomputed patch data and the
// conormal residual matrix B of the patch (ignored in ForceRankZero mode,
// where an empty matrix may be passed).
SlodFunction build_slod_function(const MeshHierarchy& mesh, const CoefficientField& coeff,
                                 const PatchLodData& data, const DenseMat& B,
                                 std::int64_t center, const SlodOptions& options);

struct SlodLevelBasis {
  int level = 0;
  SlodOptions options;
  std::vector<SlodFunction> functions;  // one per element, lexicographic
};

// All basis functions of one level; patch solves run in the worker pool.
SlodLevelBasis slod_level_basis(const MeshHierarchy& mesh, const CoefficientField& coeff,
                                int level, const SlodOptions& options, int threads);

}  // namespace hslod
