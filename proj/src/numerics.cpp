#include "hslod/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "hslod/util.hpp"

namespace hslod {

SparseSym SparseSym::from_triplets(std::int64_t n, std::vector<Triplet>& triplets) {
  for (auto& t : triplets)
    if (t.row() < t.col()) t = Triplet(t.col(), t.row(), t.value());
  SparseSym A;
  A.lower_.resize(n, n);
  A.lower_.setFromTriplets(triplets.begin(), triplets.end());
  A.lower_.makeCompressed();
  return A;
}

Eigen::SparseMatrix<double> SparseSym::full() const {
  Eigen::SparseMatrix<double> f;
  f = lower_.selfadjointView<Eigen::Lower>();
  return f;
}

DenseVec SparseSym::apply(const DenseVec& x) const {
  return lower_.selfadjointView<Eigen::Lower>() * x;
}

DenseMat SparseSym::dense() const {
  DenseMat d = DenseMat(lower_);
  DenseMat dt = d.transpose();
  dt.diagonal().setZero();
  return d + dt;
}

CholeskyFactor::CholeskyFactor(const SparseSym& A, std::string context)
    : A_(A), context_(std::move(context)) {
  ldlt_.compute(A_.lower());
  if (ldlt_.info() != Eigen::Success)
    throw NumericalError(context_, "sparse factorization failed");
  const auto& D = ldlt_.vectorD();
  for (Eigen::Index i = 0; i < D.size(); ++i)
    if (!(D[i] > 0.0))
      throw NumericalError(context_, "matrix is not positive definite: pivot " +
                                         std::to_string(i) + " (permuted order) is " +
                                         std::to_string(D[i]));
}

DenseVec CholeskyFactor::solve(const DenseVec& b) const { return ldlt_.solve(b); }

DenseMat CholeskyFactor::solve(const DenseMat& B) const { return ldlt_.solve(B); }

DenseVec CholeskyFactor::solve_checked(const DenseVec& b, double rtol) const {
  DenseVec x = ldlt_.solve(b);
  double bn = b.norm();
  if (bn == 0.0) return x;
  double rn = (b - A_.apply(x)).norm();
  if (rn > rtol * bn)
    throw NumericalError(context_, "direct solve residual " + std::to_string(rn / bn) +
                                       " exceeds tolerance");
  return x;
}

CgResult cg(const SparseSym& A, const DenseVec& b, int max_iters, double rtol,
            const DenseVec* x0) {
  CgResult out;
  out.x = x0 ? *x0 : DenseVec::Zero(A.n());
  DenseVec r = x0 ? DenseVec(b - A.apply(out.x)) : b;
  double bn = b.norm();
  double target = rtol * bn;
  out.residual_norms.push_back(r.norm());
  if (out.residual_norms.back() <= target || bn == 0.0) {
    out.converged = true;
    return out;
  }
  DenseVec p = r;
  double rho = r.squaredNorm();
  for (int it = 0; it < max_iters; ++it) {
    DenseVec Ap = A.apply(p);
    double curvature = p.dot(Ap);
    if (!(curvature > 0.0))
      throw NumericalError("cg", "non-positive curvature at iteration " +
                                     std::to_string(it) + ": matrix is not SPD");
    double alpha = rho / curvature;
    out.x += alpha * p;
    r -= alpha * Ap;
    out.iterations = it + 1;
    out.residual_norms.push_back(r.norm());
    if (out.residual_norms.back() <= target) {
      out.converged = true;
      break;
    }
    double rho_next = r.squaredNorm();
    p = r + (rho_next / rho) * p;
    rho = rho_next;
  }
  return out;
}

SvdResult svd(const DenseMat& A) {
  Eigen::JacobiSVD<DenseMat> solver(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
  return {solver.matrixU(), solver.singularValues(), solver.matrixV()};
}

SvdResult svd_full_v(const DenseMat& A) {
  Eigen::JacobiSVD<DenseMat> solver(A, Eigen::ComputeThinU | Eigen::ComputeFullV);
  return {solver.matrixU(), solver.singularValues(), solver.matrixV()};
}

int condition_filter_rank(const DenseVec& s, double cap) {
  if (s.size() == 0 || s[0] <= 0.0) return 0;
  int r = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (s[i] > 0.0 && s[0] / s[i] <= cap) r = static_cast<int>(i) + 1;
  return r;
}

DenseMat qr_orthonormal(const DenseMat& A) {
  Eigen::HouseholderQR<DenseMat> qr(A);
  DenseMat R = qr.matrixQR().topRows(A.cols()).triangularView<Eigen::Upper>();
  double dmax = R.diagonal().cwiseAbs().maxCoeff();
  for (Eigen::Index i = 0; i < A.cols(); ++i)
    if (std::abs(R(i, i)) <= 1e-13 * dmax)
      throw NumericalError("qr", "rank-deficient column " + std::to_string(i));
  DenseMat Q = qr.householderQ() * DenseMat::Identity(A.rows(), A.cols());
  return Q;
}

DenseVec lstsq(const DenseMat& A, const DenseVec& b, double rel_cutoff) {
  SvdResult s = svd(A);
  DenseVec x = DenseVec::Zero(A.cols());
  if (s.singular_values.size() == 0) return x;
  double cutoff = rel_cutoff * s.singular_values[0];
  for (Eigen::Index i = 0; i < s.singular_values.size(); ++i) {
    double sv = s.singular_values[i];
    if (sv > cutoff && sv > 0.0)
      x += (s.U.col(i).dot(b) / sv) * s.V.col(i);
  }
  return x;
}

EigPair extremal_eigs_dense(const DenseMat& A) {
  Eigen::SelfAdjointEigenSolver<DenseMat> es(A, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success)
    throw NumericalError("eig", "dense symmetric eigensolver failed");
  return {es.eigenvalues().minCoeff(), es.eigenvalues().maxCoeff()};
}

namespace {

// Lanczos with full reorthogonalization; certifies both extreme Ritz values
// via the beta * |last component| residual bound.
EigPair lanczos_extremes(const SparseSym& A, double tol) {
  const std::int64_t n = A.n();
  const int max_steps = std::min<std::int64_t>(n, 400);
  Rng rng(0x9e3779b97f4a7c15ull);
  DenseVec q = DenseVec::NullaryExpr(n, [&](Eigen::Index) { return rng.symmetric(); });
  q.normalize();
  std::vector<DenseVec> Q;
  std::vector<double> alpha, beta;  // tridiagonal entries
  Q.push_back(q);
  DenseVec v;
  for (int j = 0; j < max_steps; ++j) {
    v = A.apply(Q[j]);
    double a = Q[j].dot(v);
    alpha.push_back(a);
    v -= a * Q[j];
    if (j > 0) v -= beta[j - 1] * Q[j - 1];
    for (const auto& qi : Q) v -= qi.dot(v) * qi;  // full reorthogonalization
    double b = v.norm();
    int m = j + 1;
    if (m >= 2 || b <= 1e-14) {
      DenseMat T = DenseMat::Zero(m, m);
      for (int i = 0; i < m; ++i) T(i, i) = alpha[i];
      for (int i = 0; i + 1 < m; ++i) T(i, i + 1) = T(i + 1, i) = beta[i];
      Eigen::SelfAdjointEigenSolver<DenseMat> es(T);
      const DenseVec& ev = es.eigenvalues();
      double spread = std::max(std::abs(ev[0]), std::abs(ev[m - 1]));
      double res_lo = b * std::abs(es.eigenvectors()(m - 1, 0));
      double res_hi = b * std::abs(es.eigenvectors()(m - 1, m - 1));
      if ((res_lo <= tol * spread && res_hi <= tol * spread) || b <= 1e-14 || m == n)
        return {ev[0], ev[m - 1]};
    }
    if (b <= 1e-14) break;
    beta.push_back(b);
    Q.push_back(v / b);
  }
  throw NumericalError("eig", "Lanczos failed to certify extremal eigenvalues");
}

}  // namespace

EigPair extremal_eigs(const SparseSym& A, double tol) {
  if (A.n() <= kDenseCutoff) return extremal_eigs_dense(A.dense());
  return lanczos_extremes(A, tol);
}

double spectral_norm(const Eigen::SparseMatrix<double>& B, int steps, double tol) {
  if (B.rows() == 0 || B.cols() == 0 || B.nonZeros() == 0) return 0.0;
  if (B.rows() < kDenseCutoff && B.cols() < kDenseCutoff) {
    const DenseMat dense(B);
    Eigen::BDCSVD<DenseMat> solver(dense);
    return solver.singularValues()[0];
  }
  Rng rng(0x2545f4914f6cdd1dull);
  DenseVec x = DenseVec::NullaryExpr(B.cols(), [&](Eigen::Index) { return rng.symmetric(); });
  x.normalize();
  double lambda = 0.0;
  for (int i = 0; i < steps; ++i) {
    DenseVec y = B.transpose() * (B * x).eval();
    double next = y.norm();
    if (next == 0.0) return 0.0;
    y /= next;
    if (i > 0 && std::abs(next - lambda) <= tol * next) {
      lambda = next;
      break;
    }
    lambda = next;
    x = y;
  }
  return std::sqrt(lambda);
}

namespace {

void write_mm(const Eigen::SparseMatrix<double>& M, std::int64_t rows, std::int64_t cols,
              const char* symmetry, const std::string& path) {
  std::ostringstream os;
  os << "%%MatrixMarket matrix coordinate real " << symmetry << "\n";
  os << rows << " " << cols << " " << M.nonZeros() << "\n";
  char buf[64];
  for (int k = 0; k < M.outerSize(); ++k)
    for (Eigen::SparseMatrix<double>::InnerIterator it(M, k); it; ++it) {
      std::snprintf(buf, sizeof buf, "%lld %lld %.17g\n",
                    static_cast<long long>(it.row() + 1),
                    static_cast<long long>(it.col() + 1), it.value());
      os << buf;
    }
  atomic_write_file(path, os.str());
}

struct MmHeader {
  std::int64_t rows = 0, cols = 0, nnz = 0;
  bool symmetric = false;
};

MmHeader read_mm_header(std::ifstream& in, const std::string& path) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("%%MatrixMarket", 0) != 0)
    throw ConfigError("not a MatrixMarket file: " + path);
  MmHeader h;
  h.symmetric = line.find("symmetric") != std::string::npos;
  if (line.find("coordinate") == std::string::npos ||
      line.find("real") == std::string::npos)
    throw ConfigError("unsupported MatrixMarket flavor in " + path);
  while (std::getline(in, line))
    if (!line.empty() && line[0] != '%') break;
  std::istringstream dims(line);
  if (!(dims >> h.rows >> h.cols >> h.nnz))
    throw ConfigError("bad MatrixMarket size line in " + path);
  return h;
}

}  // namespace

void write_matrix_market(const SparseSym& A, const std::string& path) {
  write_mm(A.lower(), A.n(), A.n(), "symmetric", path);
}

SparseSym read_matrix_market_sym(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  MmHeader h = read_mm_header(in, path);
  if (!h.symmetric) throw ConfigError("expected symmetric MatrixMarket file: " + path);
  std::vector<Triplet> ts;
  ts.reserve(h.nnz);
  std::int64_t r, c;
  double v;
  while (in >> r >> c >> v) ts.emplace_back(r - 1, c - 1, v);
  if (static_cast<std::int64_t>(ts.size()) != h.nnz)
    throw ConfigError("MatrixMarket entry count mismatch in " + path);
  return SparseSym::from_triplets(h.rows, ts);
}

void write_matrix_market_general(const Eigen::SparseMatrix<double>& A,
                                 const std::string& path) {
  write_mm(A, A.rows(), A.cols(), "general", path);
}

Eigen::SparseMatrix<double> read_matrix_market_general(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  MmHeader h = read_mm_header(in, path);
  std::vector<Triplet> ts;
  ts.reserve(h.nnz);
  std::int64_t r, c;
  double v;
  while (in >> r >> c >> v) ts.emplace_back(r - 1, c - 1, v);
  if (static_cast<std::int64_t>(ts.size()) != h.nnz)
    throw ConfigError("MatrixMarket entry count mismatch in " + path);
  Eigen::SparseMatrix<double> M(h.rows, h.cols);
  M.setFromTriplets(ts.begin(), ts.end());
  if (h.symmetric) {
    Eigen::SparseMatrix<double> full;
    full = M.selfadjointView<Eigen::Lower>();
    return full;
  }
  return M;
}

}  // namespace hslod
