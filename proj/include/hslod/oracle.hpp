#pragma once

// Small-instance brute-force validators: a cached global fine solver, the
// global kernel construction behind the cross-level orthogonality (built
// from N_l exact fine solves), the dense saddle-point solve the local basis
// construction must reproduce, and the localization-gap report comparing
// local basis functions against their global counterparts.

#include <cstdint>
#include <memory>

#include "hslod/fem.hpp"
#include "hslod/hslod.hpp"

namespace hslod {

// Default refusal threshold for the global fine factorization.
inline constexpr std::int64_t kFineSolveCap = 300000;
// Default refusal threshold (level-l elements) for the kernel construction.
inline constexpr std::int64_t kKernelElementCap = 4096;

// Global fine Galerkin system: stiffness over all interior fine nodes,
// factored once and reused for every right-hand side.
struct GlobalFineSystem {
  MeshHierarchy mesh;
  CoefficientField coeff;
  IndexBox inner_nodes;
  std::shared_ptr<CholeskyFactor> factor;
};

GlobalFineSystem make_global_fine_system(const MeshHierarchy& mesh,
                                         const CoefficientField& coeff,
                                         std::int64_t cap = kFineSolveCap);

// Galerkin solutions on the fine space; the load-vector overload consumes a
// vector over all fine nodes (fem.fine_load / fine_load_q0 layout).
FineFunction fine_solve(const GlobalFineSystem& system, const DenseVec& fine_load);
FineFunction fine_solve(const GlobalFineSystem& system, const ScalarField& f);
FineFunction fine_solve(const GlobalFineSystem& system, const Q0Function& g);

// The exact kernel construction on level l >= 1: D has one row per element
// of T_{l-1} and one column per element of T_l, with D(n, m) the integral
// over the n-th coarse element of the global fine solution for the m-th
// fine-level indicator.  Functions built from Ker(D) coefficients are
// a-orthogonal to everything the coarser level can produce.
struct KernelBasis {
  DenseMat D;       // N_{l-1} x N_l
  DenseMat kernel;  // N_l x kernel_dim, orthonormal columns
  int rank = 0;     // numerical rank of D
};

KernelBasis global_kernel_basis(const GlobalFineSystem& system, int level,
                                std::int64_t element_cap = kKernelElementCap);

// Dense saddle-point solve of the constrained minimization that defines the
// local companion basis: minimize the energy over the patch subject to
// prescribed element averages (1 on the target element of T_level, 0 on the
// others).  Returns the minimizer's nodal values on the patch box.
FineFunction dense_kkt_lod(const MeshHierarchy& mesh, const CoefficientField& coeff,
                           const Patch& patch, std::int64_t target_local);

// Global counterpart of a localized basis function: the unrestricted fine
// solve of its companion right-hand side.
FineFunction global_counterpart(const GlobalFineSystem& system, const Q0Function& companion);

// Localization gap of every basis function against its global counterpart,
// compared with the proxy bound (1 + diam/pi) sqrt(N_E / alpha) * zeta *
// sigma.  The bound consumes the boundary-residual proxy rather than the
// dual norm it stands in for, so exceeding it is reported, not failed.
struct LocalizationGapReport {
  double zeta = 0.0;
  double sigma_proxy = 0.0;
  std::int64_t max_elements = 0;  // N_E from the actual patches
  double bound = 0.0;
  double max_gap = 0.0;  // max ||phi_global - phi_local||_a
  bool proxy_exceeded = false;
};

LocalizationGapReport localization_gap_report(const GlobalFineSystem& system,
                                              const HierarchicalBasis& basis,
                                              const BasisQuality& quality,
                                              int threads);

}  // namespace hslod
