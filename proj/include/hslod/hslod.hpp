#pragma once

// Hierarchical superlocalized basis: level 0 reuses the superlocalized
// functions verbatim; on level l >= 1, every element T_J of T_{l-1} gets
// 2^d - 1 functions supported on a hierarchical patch around T_J.  Each is a
// combination of the level-l superlocalized functions whose own patches fit
// inside the hierarchical patch, constrained to have vanishing element
// averages on T_{l-1} (kernel of the coarse projection) and shaped by least
// squares towards the indicator of one kept child of T_J.  The per-patch
// solutions are orthogonalized (QR) and energy-normalized.

#include <algorithm>
#include <cstddef>
#include <vector>

#include "hslod/slod.hpp"

namespace hslod {

struct HslodOptions {
  SlodOptions slod;
  // Optional per-level override of the patch order slod.m; the last entry
  // repeats for deeper levels.  Empty = uniform slod.m everywhere.
  std::vector<int> m_per_level;
  // least-squares rows: false = every patch element (the default linear
  // system), true = only the kept children of the patch's coarse elements
  // (the projection condition restricted to its stated subset)
  bool restrict_rows = false;

  int m_at(int level) const {
    if (m_per_level.empty()) return slod.m;
    std::size_t i = std::min(static_cast<std::size_t>(level), m_per_level.size() - 1);
    return m_per_level[i];
  }
};

struct HslodFunction {
  int level = 0;
  std::int64_t parent = 0;        // element of T_{l-1} (== center for level 0)
  std::int64_t target_child = 0;  // element of T_l the function aims at
  Patch patch;                    // hierarchical patch (support)

  std::vector<std::int64_t> support_set;  // centers of the used level-l functions
  DenseVec coeffs_raw;  // pre-orthogonalization least-squares solution, in
                        // terms of the *unnormalized* level-l functions
  DenseVec coeffs;      // final coefficients in terms of the *normalized*
                        // level-l functions (energy-normalized combination)
  double lsq_residual = 0.0;  // residual of the kept-children condition
  double unnorm_scale = 1.0;  // energy norm of the pre-normalization combo

  FineFunction values;   // energy-normalized nodal values on the patch box
  Q0Function companion;  // indicator coefficients on the patch elements of T_l
  Q0Function pi_raw;     // level-l averages of the raw (pre-QR) combination
};

struct HslodLevel {
  int level = 0;
  std::vector<HslodFunction> functions;  // grouped by parent, kept children
                                         // in lexicographic order
};

// Builds all level-l functions from the level-l superlocalized basis.
// Raises NumericalError when a patch yields an empty candidate set, an empty
// projection kernel, or a least-squares system of rank below 2^d - 1.
HslodLevel build_level(const MeshHierarchy& mesh, const CoefficientField& coeff,
                       const SlodLevelBasis& slod, int level,
                       const HslodOptions& options, int threads);

struct HierarchicalBasis {
  MeshHierarchy mesh;
  HslodOptions options;
  std::vector<SlodLevelBasis> slod_levels;  // 0..L
  std::vector<HslodLevel> levels;           // 0..L

  std::int64_t level_size(int level) const {
    return static_cast<std::int64_t>(levels[level].functions.size());
  }
  std::int64_t function_count() const {
    std::int64_t n = 0;
    for (const auto& l : levels) n += l.functions.size();
    return n;
  }
  // global index = level offset + position inside the level
  std::int64_t level_offset(int level) const {
    std::int64_t off = 0;
    for (int l = 0; l < level; ++l) off += level_size(l);
    return off;
  }
  const HslodFunction& function_at(std::int64_t global) const {
    int l = 0;
    while (global >= level_size(l)) global -= level_size(l), ++l;
    return levels[l].functions[global];
  }
};

HierarchicalBasis build_basis(const MeshHierarchy& mesh, const CoefficientField& coeff,
                              const HslodOptions& options, int threads);

struct BasisQuality {
  double zeta = 0.0;         // max Euclidean norm of the final coefficients
  double sigma_proxy = 0.0;  // max boundary residual of the used functions
  std::vector<double> lambda_min_projection;  // per level, of P~^T P~ with
                                              // columns = raw projections
  std::vector<double> gram_kappa;             // per level, of the level Gram
  std::vector<double> gram_lambda_min;
  std::vector<double> gram_lambda_max;
  double max_lsq_residual = 0.0;
};

// Level Gram (energy products of the level's functions; entries only for
// intersecting support boxes).
SparseSym assemble_level_gram(const MeshHierarchy& mesh, const CoefficientField& coeff,
                              const HierarchicalBasis& basis, int level, int threads);

BasisQuality basis_quality(const MeshHierarchy& mesh, const CoefficientField& coeff,
                           const HierarchicalBasis& basis, int threads,
                           const std::vector<SparseSym>* level_grams = nullptr);

}  // namespace hslod
