#pragma once

// Linear-algebra kernels shared by every module: symmetric sparse storage +
// sparse Cholesky (Eigen SimplicialLDLT with AMD ordering), conjugate
// gradients with residual history, dense SVD/QR/least-squares, extremal
// eigenvalues (dense below order 2000, Lanczos above), power iteration for
// spectral norms, and MatrixMarket import/export.

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace hslod {

using DenseMat = Eigen::MatrixXd;
using DenseVec = Eigen::VectorXd;
using Triplet = Eigen::Triplet<double>;

// Singular values with sigma_1/sigma_i beyond this are treated as zero
// everywhere a truncated pseudo-inverse is formed.
inline constexpr double kSvdConditionFilter = 1e15;
// Relative cutoff for minimum-norm least squares.
inline constexpr double kLstsqRelCutoff = 1e-12;
// Order at or below which eigen/svd computations take the dense path.
inline constexpr int kDenseCutoff = 2000;

// Symmetric sparse matrix; only the lower triangle is stored (compressed
// column-major).  Builders take each unordered index pair once, in either
// orientation; duplicates are summed.
class SparseSym {
 public:
  SparseSym() = default;
  static SparseSym from_triplets(std::int64_t n, std::vector<Triplet>& triplets);

  std::int64_t n() const { return lower_.rows(); }
  std::int64_t stored_nonzeros() const { return lower_.nonZeros(); }
  const Eigen::SparseMatrix<double>& lower() const { return lower_; }
  Eigen::SparseMatrix<double> full() const;  // both triangles, for exports
  DenseVec apply(const DenseVec& x) const;   // A x
  double quad(const DenseVec& x) const { return x.dot(apply(x)); }
  DenseMat dense() const;

 private:
  Eigen::SparseMatrix<double> lower_;
};

// Sparse LDL^T factorization of an SPD SparseSym, reusable across solves.
// A non-positive pivot raises NumericalError naming the pivot index (in the
// fill-reducing permuted order, the only order the factorization sees).
class CholeskyFactor {
 public:
  explicit CholeskyFactor(const SparseSym& A, std::string context = "cholesky");
  DenseVec solve(const DenseVec& b) const;
  DenseMat solve(const DenseMat& B) const;
  // Solve + verify the relative residual ||Ax-b||/||b|| <= rtol.
  DenseVec solve_checked(const DenseVec& b, double rtol = 1e-10) const;
  std::int64_t n() const { return A_.n(); }
  const SparseSym& matrix() const { return A_; }

 private:
  SparseSym A_;  // kept for residual checks and matvecs
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>, Eigen::Lower> ldlt_;
  std::string context_;
};

struct CgResult {
  DenseVec x;
  std::vector<double> residual_norms;  // ||r_0||, ||r_1||, ...
  int iterations = 0;
  bool converged = false;
};

// Plain conjugate gradients on an SPD SparseSym.  Starts from x0 (zero when
// omitted), stops at max_iters or when ||r|| <= rtol * ||b||.  Indefinite
// curvature (p^T A p <= 0) raises NumericalError.
CgResult cg(const SparseSym& A, const DenseVec& b, int max_iters, double rtol,
            const DenseVec* x0 = nullptr);

struct SvdResult {
  DenseMat U;
  DenseVec singular_values;  // descending
  DenseMat V;
};

SvdResult svd(const DenseMat& A);  // thin U/V
// Full V (thin U): needed when the null space of a wide matrix matters.
SvdResult svd_full_v(const DenseMat& A);

// Largest r with sigma_1/sigma_r <= cap (0 if all zero).
int condition_filter_rank(const DenseVec& singular_values,
                          double cap = kSvdConditionFilter);

// Thin Q factor with orthonormal columns spanning range(A); A must have full
// column rank (checked via the R diagonal).
DenseMat qr_orthonormal(const DenseMat& A);

// Minimum-norm least squares via SVD, dropping singular values below
// rel_cutoff * sigma_1.
DenseVec lstsq(const DenseMat& A, const DenseVec& b,
               double rel_cutoff = kLstsqRelCutoff);

struct EigPair {
  double lambda_min = 0.0;
  double lambda_max = 0.0;
};

// Extremal eigenvalues of a symmetric matrix: dense solver at order <=
// kDenseCutoff, otherwise Lanczos with full reorthogonalization iterated
// until both extreme Ritz values have residual bound <= tol * spread.
EigPair extremal_eigs(const SparseSym& A, double tol = 1e-8);
EigPair extremal_eigs_dense(const DenseMat& A);

// Largest singular value of a (rectangular) sparse matrix: dense SVD when
// both dimensions are < kDenseCutoff, otherwise power iteration on B^T B
// (at most `steps` sweeps, relative tolerance tol).
double spectral_norm(const Eigen::SparseMatrix<double>& B, int steps = 50,
                     double tol = 1e-6);

// MatrixMarket coordinate format.  SparseSym round-trips as "symmetric",
// general sparse as "general".
void write_matrix_market(const SparseSym& A, const std::string& path);
SparseSym read_matrix_market_sym(const std::string& path);
void write_matrix_market_general(const Eigen::SparseMatrix<double>& A,
                                 const std::string& path);
Eigen::SparseMatrix<double> read_matrix_market_general(const std::string& path);

}  // namespace hslod
