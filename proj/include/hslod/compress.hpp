#pragma once

// Sparse compression of the approximate solution operator built on the
// hierarchical basis.  Four stages, each a further approximation of the one
// before:
//   Hat      exact solve with the full basis Gram matrix;
//   Check    per-level diagonal-block solves (cross-level entries dropped);
//   Bar      sparse approximate block inverses S^(k) from per-column
//            conjugate gradients truncated at k iterations;
//   Epsilon  entrywise thresholding of S^(k).
// Every stage carries the measured quantities its error bound consumes, so
// the bounds can be evaluated with computed constants instead of analytic
// worst cases.

#include <Eigen/Sparse>
#include <cstdint>
#include <memory>
#include <vector>

#include "hslod/hslod.hpp"

namespace hslod {

// Above this order the Hat stage (one global sparse factorization) refuses
// to run; it exists for validation, not for production solves.
inline constexpr std::int64_t kHatSolveCap = 1 << 18;

// Gram ("stiffness") matrix of the full hierarchical basis in the energy
// inner product.  An entry (i, j) is stored exactly when the support boxes
// of the two functions intersect; the basis is energy-normalized, so the
// diagonal is 1 up to roundoff.  The per-level diagonal blocks and the
// cross-level remainder are kept separately for the blockwise stages.
struct BlockStiffness {
  std::vector<std::int64_t> level_offset;  // size levels+1, prefix sums
  SparseSym full;                          // order = total function count
  std::vector<SparseSym> blocks;           // per-level diagonal blocks
  Eigen::SparseMatrix<double> off_block;   // cross-level remainder, both
                                           // triangles stored

  std::int64_t size() const { return level_offset.back(); }
  int levels() const { return static_cast<int>(blocks.size()); }
  std::int64_t block_size(int level) const {
    return level_offset[level + 1] - level_offset[level];
  }
  double max_off_block() const;  // max |cross-level entry| (0 if none)
  // Block-diagonal part as one matrix (the stage-Check operator matrix).
  SparseSym check_matrix() const;
};

BlockStiffness assemble_stiffness_hslod(const MeshHierarchy& mesh,
                                        const CoefficientField& coeff,
                                        const HierarchicalBasis& basis, int threads);

// Certificate quantities for dropping the cross-level entries.  With
// x the full solve and x_check the blockwise solve of the same load,
//   ||x - x_check||_2 <= coefficient_bound_factor * ||x||_2,
// and in the energy norm of the assembled functions,
//   ||u - u_check||_a <= energy_bound_factor * ||x||_2.
struct TruncationReport {
  std::vector<double> delta_strip_norm;  // per level: ||rows of the remainder||_2
  std::vector<double> lambda_min;        // per diagonal block
  std::vector<double> lambda_max;
  double delta_norm = 0.0;               // ||whole cross-level remainder||_2
  double coefficient_bound_factor = 0.0;  // sqrt(sum lambda_min^-2 ||strip||^2)
  double energy_bound_factor = 0.0;       // sqrt(max lambda_max + ||delta||) *
                                          // coefficient_bound_factor
};

TruncationReport block_truncate(const BlockStiffness& A);

enum class OperatorStage { Hat, Check, Bar, Epsilon };

// One of the four solution operators in coefficient space.  Hat holds a
// factorization of the full matrix, Check per-block factorizations (dense
// below order kDenseCutoff, sparse above), Bar/Epsilon the explicit sparse
// approximate inverses.
struct CompressedOperator {
  OperatorStage stage = OperatorStage::Hat;
  std::vector<std::int64_t> level_offset;
  int cg_iterations = 0;
  double cg_rtol = 0.0;
  double epsilon = 0.0;

  std::shared_ptr<CholeskyFactor> hat_factor;              // Hat
  std::vector<std::shared_ptr<CholeskyFactor>> block_factors;  // Check, large
  std::vector<DenseMat> dense_block_inverses;              // Check, small
  std::vector<Eigen::SparseMatrix<double>> s_blocks;       // Bar / Epsilon

  // Bar diagnostics: final per-column CG residual norms and the Frobenius
  // surrogate for ||A_check^-1 - S^(k)||_2 (each column error is bounded by
  // ||r_col|| / lambda_min of its block; the root sum of squares dominates
  // the spectral norm).
  std::vector<DenseVec> column_residuals;
  double delta_cg_surrogate = 0.0;
  // Epsilon diagnostics: max nonzeros over all rows and columns of S_eps,
  // so ||S_eps - S^(k)||_2 <= n_epsilon * epsilon.
  std::int64_t n_epsilon = 0;

  std::int64_t size() const { return level_offset.back(); }
  int levels() const { return static_cast<int>(level_offset.size()) - 1; }
  // Coefficients of the approximate solution for a restricted load.
  DenseVec coefficients(const DenseVec& load) const;
  // Stored nonzeros of the operator's matrix representation (full matrix for
  // Hat, diagonal blocks for Check, S blocks beyond); symmetric storage
  // counts each off-diagonal pair once.
  std::int64_t stored_nonzeros(const BlockStiffness& A) const;
  // S^(k) / S_eps as one block-diagonal matrix (stages Bar and Epsilon).
  Eigen::SparseMatrix<double> s_matrix() const;
};

// Stage Hat: refuses orders above cap (one global factorization).
CompressedOperator make_operator_hat(const BlockStiffness& A,
                                     std::int64_t cap = kHatSolveCap);
CompressedOperator make_operator_check(const BlockStiffness& A);
// Stage Bar: for every block, every canonical column runs CG from x0 = 0 for
// at most k iterations (earlier stop at relative residual rtol); exact zeros
// are not stored.  lambda_min per block (from block_truncate) feeds the
// delta_cg surrogate.  CG breakdown raises NumericalError naming block and
// column.
CompressedOperator cg_block_inverse(const BlockStiffness& A, int k, double rtol,
                                    const std::vector<double>& block_lambda_min,
                                    int threads);
// Stage Epsilon: drops entries with |value| < epsilon from a Bar operator.
CompressedOperator threshold(const CompressedOperator& bar, double epsilon);

// Restriction R: loads (f, phi_i) for every basis function, from a fine-grid
// load vector (all fine nodes, lexicographic).
DenseVec restrict_load(const MeshHierarchy& mesh, const HierarchicalBasis& basis,
                       const DenseVec& fine_load, int threads);

// Prolongation L: assembles sum_i c_i phi_i on the full fine grid; the
// cumulative variant returns the partial sums over levels 0..l for each l.
FineFunction combine_basis(const MeshHierarchy& mesh, const HierarchicalBasis& basis,
                           const DenseVec& coeffs);
std::vector<FineFunction> cumulative_solutions(const MeshHierarchy& mesh,
                                               const HierarchicalBasis& basis,
                                               const DenseVec& coeffs);

struct ApplyResult {
  DenseVec coeffs;
  FineFunction u;
};

// Full operator application u = L(S(R f)) for a fine-grid load vector.
ApplyResult apply_operator(const MeshHierarchy& mesh, const HierarchicalBasis& basis,
                           const CompressedOperator& op, const DenseVec& fine_load,
                           int threads);

// Largest number of same-level elements contained in any function's
// supporting patch (the overlap constant the accuracy bounds consume),
// computed from the actual patch boxes.
std::int64_t max_patch_elements(const MeshHierarchy& mesh,
                                const HierarchicalBasis& basis);

// Measured stage-chain errors against their bounds, all constants computed
// from the run: the truncation bound uses the Gram perturbation identity
// with the computed hat coefficients, the CG and threshold bounds use the
// measured restricted-load norm (the analytic chains replace ||Rf||_2 by an
// upper bound; the measured value certifies the same inequality).
struct StageChainReport {
  double load_norm = 0.0;            // ||Rf||_2
  double hat_coeff_norm = 0.0;       // ||c_hat||_2
  double max_block_lambda_max = 0.0;
  double delta_norm = 0.0;
  double hat_check_measured = 0.0;   // ||u_hat - u_check||_a
  double hat_check_bound = 0.0;
  double check_bar_measured = 0.0;
  double check_bar_bound = 0.0;
  double bar_eps_measured = 0.0;
  double bar_eps_bound = 0.0;
  bool all_within_bounds() const {
    return hat_check_measured <= hat_check_bound &&
           check_bar_measured <= check_bar_bound &&
           bar_eps_measured <= bar_eps_bound;
  }
};

StageChainReport stage_chain_report(const MeshHierarchy& mesh,
                                    const CoefficientField& coeff,
                                    const HierarchicalBasis& basis,
                                    const BlockStiffness& A,
                                    const TruncationReport& trunc,
                                    const CompressedOperator& hat,
                                    const CompressedOperator& check,
                                    const CompressedOperator& bar,
                                    const CompressedOperator& eps,
                                    const DenseVec& fine_load, int threads);

}  // namespace hslod
