#pragma once

// Patch-localized orthogonal decomposition: for a patch of level-l elements,
// solve the constrained energy minimization  min ||psi||_a  subject to
// element averages Pi_l psi = chi_T, for every element T of the patch.  The
// solutions are linear combinations of the patch harmonics A^-1 chi_K with
// coefficients |T| D^-1 e_T, where D is the interaction matrix
// D(T,K) = integral over T of the harmonic of K.

#include <memory>
#include <vector>

#include "hslod/coeff.hpp"
#include "hslod/fem.hpp"
#include "hslod/mesh.hpp"
#include "hslod/numerics.hpp"

namespace hslod {

struct PatchLodData {
  Patch patch;
  PatchSystem system;
  IndexBox patch_elements;  // level-l element box of the patch
  std::int64_t n_elements = 0;
  std::vector<FineFunction> harmonics;  // A^-1 chi_K, lexicographic in the box
  DenseMat D;           // D(T,K), symmetric (it equals a(A^-1 chi_T, A^-1 chi_K))
  DenseMat companions;  // column K = indicator coefficients of the K-th
                        // minimizer: companions = |T| * D^-1
  double d_condition = 0.0;  // sigma_max / sigma_min of D

  // honest element-average projections of the harmonics (from fine values):
  // column K = Pi_l of harmonic K over the patch elements
  DenseMat harmonic_projections;
};

// Solves every patch harmonic and forms D and the companion coefficients.
// cond(D) beyond the shared 1e15 filter raises NumericalError naming the
// patch center.
PatchLodData compute_patch_lod(const MeshHierarchy& mesh, const CoefficientField& coeff,
                               const Patch& patch);

// The minimizer for the element with local (lexicographic) index `local`:
// sum_j companions(j, local) * harmonic_j, assembled on the patch node box.
FineFunction lod_function(const MeshHierarchy& mesh, const PatchLodData& data,
                          std::int64_t local);

// Its companion right-hand side as a piecewise constant on the patch.
Q0Function lod_companion(const MeshHierarchy& mesh, const PatchLodData& data,
                         std::int64_t local);

// Fine values of an arbitrary combination sum_j coeffs[j] * harmonic_j.
FineFunction harmonic_combination(const MeshHierarchy& mesh, const PatchLodData& data,
                                  const DenseVec& coeffs);

}  // namespace hslod
