#pragma once

// Q1 finite elements on the fine Cartesian mesh: reference matrices (exact
// 2-point tensor Gauss), patch and global stiffness assembly with Dirichlet
// elimination, local solves, element-average projections Pi_l, energy / L2
// products over box intersections, conormal residual matrices, and load
// vectors.  Functions are nodal-value vectors on axis-aligned node boxes,
// implicitly zero outside their box and on the domain boundary.

#include <functional>
#include <memory>

#include "hslod/coeff.hpp"
#include "hslod/mesh.hpp"
#include "hslod/numerics.hpp"

namespace hslod {

// Q1 function given by nodal values on a fine-node box, lexicographic within
// the box, zero outside.
struct FineFunction {
  IndexBox node_box;
  DenseVec values;

  double at(int dim, const std::array<int, 3>& node) const {
    return node_box.contains(dim, node) ? values[node_box.offset(dim, node)] : 0.0;
  }
};

// Piecewise-constant function on the dyadic mesh of size 2^-exponent (not
// necessarily a hierarchy level; right-hand sides bring their own mesh),
// stored on an element box, zero outside.
struct Q0Function {
  int exponent = 0;
  IndexBox elem_box;
  DenseVec values;

  double at(int dim, const std::array<int, 3>& elem) const {
    return elem_box.contains(dim, elem) ? values[elem_box.offset(dim, elem)] : 0.0;
  }
};

// Indicator of one element of a hierarchy level.
Q0Function element_indicator(const MeshHierarchy& mesh, int level, std::int64_t element);

// Unit-cell reference matrices and Gauss data for dimension d; the entries
// are exact (2-point tensor Gauss integrates the Q1 products exactly).
// Element matrices scale as  a_e h^(d-2) K  and  h^d M.
struct ReferenceElement {
  int dim;
  DenseMat K;          // 2^d x 2^d unit stiffness
  DenseMat M;          // 2^d x 2^d unit mass
  DenseMat shape_at_gauss;  // 2^d gauss points x 2^d shapes
  std::vector<std::array<double, 3>> gauss_points;  // on [0,1]^d
  double gauss_weight;                              // uniform, (1/2)^d
};
const ReferenceElement& reference_element(int dim);

// Patch-local Dirichlet problem: stiffness on the patch-interior fine nodes
// (zero on the patch boundary and on the domain boundary), factored once and
// reused for every right-hand side on the patch.
struct PatchSystem {
  Patch patch;
  IndexBox inner_nodes;  // patch node box shrunk by one layer per side
  std::shared_ptr<CholeskyFactor> factor;
};
PatchSystem assemble_patch_system(const MeshHierarchy& mesh, const Patch& patch,
                                  const CoefficientField& coeff);

// Solves the patch Dirichlet problem with right-hand side g (piecewise
// constant on any hierarchy level); returns nodal values on the full patch
// node box (zeros on its boundary).
FineFunction local_inverse_apply(const MeshHierarchy& mesh, const PatchSystem& system,
                                 const Q0Function& g);

// Element averages on the level-`level` mesh (the projection onto
// piecewise constants), restricted to the elements the function touches.
Q0Function project_q0(const MeshHierarchy& mesh, int level, const FineFunction& u);

// Bilinear forms, integrated exactly over the intersection of the supports.
double energy_inner(const MeshHierarchy& mesh, const CoefficientField& coeff,
                    const FineFunction& u, const FineFunction& v);
double energy_norm(const MeshHierarchy& mesh, const CoefficientField& coeff,
                   const FineFunction& u);
double l2_inner(const MeshHierarchy& mesh, const FineFunction& u, const FineFunction& v);
double l2_norm(const MeshHierarchy& mesh, const FineFunction& u);
double h1_seminorm(const MeshHierarchy& mesh, const FineFunction& u);

// Residual pairings of the patch-local harmonics against the hat functions
// of the patch-boundary nodes Sigma = boundary(patch) \ boundary(domain):
// row i, column j holds  a_patch(u_j, phi_i) - (chi_{T_j}, phi_i)_L2  where
// u_j is the patch solution for the indicator of the j-th patch element of
// T_level.  The overload without harmonics solves for them internally.
DenseMat conormal_residual_matrix(const MeshHierarchy& mesh, const Patch& patch,
                                  const CoefficientField& coeff,
                                  const std::vector<FineFunction>& harmonics);
DenseMat conormal_residual_matrix(const MeshHierarchy& mesh, const Patch& patch,
                                  const CoefficientField& coeff);

// Point evaluation field for analytic right-hand sides.
using ScalarField = std::function<double(const std::array<double, 3>&)>;

// Load vector over all fine nodes (2-pt tensor Gauss per element).
DenseVec fine_load(const MeshHierarchy& mesh, const ScalarField& f);
// Load vector of a piecewise-constant right-hand side (exact).
DenseVec fine_load_q0(const MeshHierarchy& mesh, const Q0Function& g);
// (f, u)_L2 for a load vector from fine_load* against a boxed function.
double load_inner(const MeshHierarchy& mesh, const DenseVec& load, const FineFunction& u);

// Global fine stiffness with Dirichlet elimination; unknowns are the
// interior fine nodes in lexicographic order.
SparseSym assemble_global_stiffness(const MeshHierarchy& mesh,
                                    const CoefficientField& coeff);
IndexBox global_inner_nodes(const MeshHierarchy& mesh);
// Interior-vector <-> boxed-function conversions (boundary values zero).
FineFunction fine_function_from_interior(const MeshHierarchy& mesh, const DenseVec& interior);
DenseVec interior_values(const MeshHierarchy& mesh, const FineFunction& u);

}  // namespace hslod
