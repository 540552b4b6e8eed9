#include "hslod/compress.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "hslod/fem.hpp"
#include "hslod/util.hpp"

namespace hslod {

namespace {

// Fine-element support box of a basis function (its nodal box less the
// closing node layer).
IndexBox support_elements(const HslodFunction& f) {
  IndexBox b = f.values.node_box;
  for (int k = 0; k < 3; ++k) b.hi[k] = std::max(b.lo[k], b.hi[k] - 1);
  return b;
}

int level_of_global(const std::vector<std::int64_t>& offsets, std::int64_t g) {
  int l = 0;
  while (g >= offsets[l + 1]) ++l;
  return l;
}

}  // namespace

double BlockStiffness::max_off_block() const {
  double m = 0.0;
  for (int c = 0; c < off_block.outerSize(); ++c)
    for (Eigen::SparseMatrix<double>::InnerIterator it(off_block, c); it; ++it)
      m = std::max(m, std::abs(it.value()));
  return m;
}

SparseSym BlockStiffness::check_matrix() const {
  std::vector<Triplet> trips;
  trips.reserve(static_cast<std::size_t>(full.stored_nonzeros()));
  for (int l = 0; l < levels(); ++l) {
    const auto off = level_offset[l];
    const auto& low = blocks[l].lower();
    for (int c = 0; c < low.outerSize(); ++c)
      for (Eigen::SparseMatrix<double>::InnerIterator it(low, c); it; ++it)
        trips.emplace_back(it.row() + off, it.col() + off, it.value());
  }
  return SparseSym::from_triplets(size(), trips);
}

BlockStiffness assemble_stiffness_hslod(const MeshHierarchy& mesh,
                                        const CoefficientField& coeff,
                                        const HierarchicalBasis& basis, int threads) {
  BlockStiffness out;
  const int nlevels = static_cast<int>(basis.levels.size());
  out.level_offset.assign(nlevels + 1, 0);
  for (int l = 0; l < nlevels; ++l)
    out.level_offset[l + 1] = out.level_offset[l] + basis.level_size(l);
  const std::int64_t n = out.level_offset.back();
  const int n_children = (1 << mesh.dim) - 1;

  std::vector<IndexBox> supports(n);
  for (int l = 0; l < nlevels; ++l)
    for (std::int64_t i = 0; i < basis.level_size(l); ++i)
      supports[out.level_offset[l] + i] = support_elements(basis.levels[l].functions[i]);

  // Per-row entry lists (row = the coarser function of the pair), found by
  // enumerating candidate parents on the finer level's placement grid; the
  // grown parent box contains every patch that can reach the query support.
  std::vector<std::vector<Triplet>> rows(n);
  parallel_for(n, [&](std::int64_t gi) {
    const int pl = level_of_global(out.level_offset, gi);
    const HslodFunction& fi =
        basis.levels[pl].functions[gi - out.level_offset[pl]];
    const IndexBox& bi = supports[gi];
    auto& row = rows[gi];
    for (int ql = pl; ql < nlevels; ++ql) {
      const int grid_exp = ql == 0 ? mesh.level_exponent(0) : mesh.level_exponent(ql - 1);
      const int cells = 1 << grid_exp;
      const int shift = mesh.fine_exponent - grid_exp;
      IndexBox query;
      for (int k = 0; k < mesh.dim; ++k) {
        query.lo[k] = bi.lo[k] >> shift;
        query.hi[k] = bi.hi[k] >> shift;
      }
      query = query.grown(mesh.dim, basis.options.m_at(ql), cells);
      const std::int64_t per_cell = ql == 0 ? 1 : n_children;
      for_each_in_box(mesh.dim, query, [&](const std::array<int, 3>& J) {
        const std::int64_t base =
            out.level_offset[ql] + lex_index(mesh.dim, cells, J) * per_cell;
        for (std::int64_t t = 0; t < per_cell; ++t) {
          const std::int64_t gj = base + t;
          if (ql == pl && gj > gi) continue;
          if (!bi.intersects(mesh.dim, supports[gj])) continue;
          const int qloc = level_of_global(out.level_offset, gj);
          const HslodFunction& fj =
              basis.levels[qloc].functions[gj - out.level_offset[qloc]];
          const double v = energy_inner(mesh, coeff, fi.values, fj.values);
          row.emplace_back(gi, gj, v);
        }
      });
    }
  }, threads);

  std::vector<Triplet> trips;
  std::vector<std::vector<Triplet>> block_trips(nlevels);
  std::vector<Triplet> cross;
  for (std::int64_t gi = 0; gi < n; ++gi) {
    for (const Triplet& t : rows[gi]) {
      trips.push_back(t);
      const int li = level_of_global(out.level_offset, t.row());
      const int lj = level_of_global(out.level_offset, t.col());
      if (li == lj) {
        block_trips[li].emplace_back(t.row() - out.level_offset[li],
                                     t.col() - out.level_offset[li], t.value());
      } else {
        cross.emplace_back(t.row(), t.col(), t.value());
        cross.emplace_back(t.col(), t.row(), t.value());
      }
    }
  }
  rows.clear();
  rows.shrink_to_fit();

  out.full = SparseSym::from_triplets(n, trips);
  out.blocks.reserve(nlevels);
  for (int l = 0; l < nlevels; ++l)
    out.blocks.push_back(SparseSym::from_triplets(basis.level_size(l), block_trips[l]));
  out.off_block.resize(n, n);
  out.off_block.setFromTriplets(cross.begin(), cross.end());
  out.off_block.makeCompressed();
  return out;
}

TruncationReport block_truncate(const BlockStiffness& A) {
  TruncationReport report;
  const int nl = A.levels();
  report.delta_strip_norm.resize(nl);
  report.lambda_min.resize(nl);
  report.lambda_max.resize(nl);
  double sum = 0.0;
  double max_lambda = 0.0;
  for (int l = 0; l < nl; ++l) {
    Eigen::SparseMatrix<double> strip =
        A.off_block.middleRows(A.level_offset[l], A.block_size(l));
    report.delta_strip_norm[l] = spectral_norm(strip);
    EigPair e = extremal_eigs(A.blocks[l]);
    report.lambda_min[l] = e.lambda_min;
    report.lambda_max[l] = e.lambda_max;
    max_lambda = std::max(max_lambda, e.lambda_max);
    if (e.lambda_min > 0.0) {
      const double q = report.delta_strip_norm[l] / e.lambda_min;
      sum += q * q;
    }
  }
  report.delta_norm = spectral_norm(A.off_block);
  report.coefficient_bound_factor = std::sqrt(sum);
  report.energy_bound_factor =
      std::sqrt(max_lambda + report.delta_norm) * report.coefficient_bound_factor;
  return report;
}

DenseVec CompressedOperator::coefficients(const DenseVec& load) const {
  if (load.size() != size())
    throw NumericalError("compress", "load size " + std::to_string(load.size()) +
                                         " does not match operator order " +
                                         std::to_string(size()));
  switch (stage) {
    case OperatorStage::Hat:
      return hat_factor->solve(load);
    case OperatorStage::Check: {
      DenseVec x(size());
      for (int l = 0; l < levels(); ++l) {
        const auto off = level_offset[l];
        const auto nb = level_offset[l + 1] - off;
        if (block_factors[l]) {
          x.segment(off, nb) = block_factors[l]->solve(DenseVec(load.segment(off, nb)));
        } else {
          x.segment(off, nb) = dense_block_inverses[l] * load.segment(off, nb);
        }
      }
      return x;
    }
    case OperatorStage::Bar:
    case OperatorStage::Epsilon: {
      DenseVec x(size());
      for (int l = 0; l < levels(); ++l) {
        const auto off = level_offset[l];
        const auto nb = level_offset[l + 1] - off;
        x.segment(off, nb) = s_blocks[l] * load.segment(off, nb);
      }
      return x;
    }
  }
  throw NumericalError("compress", "unknown operator stage");
}

std::int64_t CompressedOperator::stored_nonzeros(const BlockStiffness& A) const {
  switch (stage) {
    case OperatorStage::Hat:
      return A.full.stored_nonzeros();
    case OperatorStage::Check: {
      std::int64_t nnz = 0;
      for (const auto& b : A.blocks) nnz += b.stored_nonzeros();
      return nnz;
    }
    case OperatorStage::Bar:
    case OperatorStage::Epsilon: {
      std::int64_t nnz = 0;
      for (const auto& b : s_blocks) nnz += b.nonZeros();
      return nnz;
    }
  }
  return 0;
}

Eigen::SparseMatrix<double> CompressedOperator::s_matrix() const {
  std::vector<Triplet> trips;
  for (int l = 0; l < levels(); ++l) {
    const auto off = level_offset[l];
    for (int c = 0; c < s_blocks[l].outerSize(); ++c)
      for (Eigen::SparseMatrix<double>::InnerIterator it(s_blocks[l], c); it; ++it)
        trips.emplace_back(it.row() + off, it.col() + off, it.value());
  }
  Eigen::SparseMatrix<double> S(size(), size());
  S.setFromTriplets(trips.begin(), trips.end());
  S.makeCompressed();
  return S;
}

CompressedOperator make_operator_hat(const BlockStiffness& A, std::int64_t cap) {
  if (A.size() > cap)
    throw ConfigError("the full-matrix solve stage is capped at order " +
                      std::to_string(cap) + "; requested order " +
                      std::to_string(A.size()) +
                      " (use the blockwise stages at this scale)");
  CompressedOperator op;
  op.stage = OperatorStage::Hat;
  op.level_offset = A.level_offset;
  op.hat_factor = std::make_shared<CholeskyFactor>(A.full, "hat");
  return op;
}

CompressedOperator make_operator_check(const BlockStiffness& A) {
  CompressedOperator op;
  op.stage = OperatorStage::Check;
  op.level_offset = A.level_offset;
  op.block_factors.resize(A.levels());
  op.dense_block_inverses.resize(A.levels());
  for (int l = 0; l < A.levels(); ++l) {
    if (A.block_size(l) <= kDenseCutoff) {
      DenseMat B = A.blocks[l].dense();
      Eigen::LLT<DenseMat> llt(B);
      if (llt.info() != Eigen::Success)
        throw NumericalError("check", "diagonal block " + std::to_string(l) +
                                          " is not positive definite");
      op.dense_block_inverses[l] =
          llt.solve(DenseMat::Identity(B.rows(), B.cols()));
    } else {
      op.block_factors[l] = std::make_shared<CholeskyFactor>(
          A.blocks[l], "check block " + std::to_string(l));
    }
  }
  return op;
}

CompressedOperator cg_block_inverse(const BlockStiffness& A, int k, double rtol,
                                    const std::vector<double>& block_lambda_min,
                                    int threads) {
  CompressedOperator op;
  op.stage = OperatorStage::Bar;
  op.level_offset = A.level_offset;
  op.cg_iterations = k;
  op.cg_rtol = rtol;
  op.s_blocks.resize(A.levels());
  op.column_residuals.resize(A.levels());
  double surrogate_sq = 0.0;
  for (int l = 0; l < A.levels(); ++l) {
    const auto nb = A.block_size(l);
    std::vector<std::vector<Triplet>> cols(nb);
    DenseVec residuals(nb);
    parallel_for(nb, [&](std::int64_t j) {
      DenseVec e = DenseVec::Zero(nb);
      e[j] = 1.0;
      CgResult r;
      try {
        r = cg(A.blocks[l], e, k, rtol);
      } catch (const NumericalError& err) {
        throw NumericalError("cg_block_inverse",
                             "block " + std::to_string(l) + " column " +
                                 std::to_string(j) + ": " + err.what());
      }
      residuals[j] = r.residual_norms.back();
      auto& col = cols[j];
      for (std::int64_t i = 0; i < nb; ++i)
        if (r.x[i] != 0.0) col.emplace_back(i, j, r.x[i]);
    }, threads);
    std::vector<Triplet> trips;
    for (auto& c : cols) trips.insert(trips.end(), c.begin(), c.end());
    op.s_blocks[l].resize(nb, nb);
    op.s_blocks[l].setFromTriplets(trips.begin(), trips.end());
    op.s_blocks[l].makeCompressed();
    op.column_residuals[l] = residuals;
    const double lmin = block_lambda_min.at(l);
    if (lmin > 0.0) surrogate_sq += (residuals / lmin).squaredNorm();
  }
  op.delta_cg_surrogate = std::sqrt(surrogate_sq);
  return op;
}

CompressedOperator threshold(const CompressedOperator& bar, double epsilon) {
  CompressedOperator op;
  op.stage = OperatorStage::Epsilon;
  op.level_offset = bar.level_offset;
  op.cg_iterations = bar.cg_iterations;
  op.cg_rtol = bar.cg_rtol;
  op.epsilon = epsilon;
  op.s_blocks.resize(bar.s_blocks.size());
  std::int64_t max_count = 0;
  for (std::size_t l = 0; l < bar.s_blocks.size(); ++l) {
    const auto& B = bar.s_blocks[l];
    std::vector<Triplet> trips;
    std::vector<std::int64_t> row_count(B.rows(), 0);
    std::vector<std::int64_t> col_count(B.cols(), 0);
    for (int c = 0; c < B.outerSize(); ++c)
      for (Eigen::SparseMatrix<double>::InnerIterator it(B, c); it; ++it)
        if (std::abs(it.value()) >= epsilon) {
          trips.emplace_back(it.row(), it.col(), it.value());
          ++row_count[it.row()];
          ++col_count[it.col()];
        }
    op.s_blocks[l].resize(B.rows(), B.cols());
    op.s_blocks[l].setFromTriplets(trips.begin(), trips.end());
    op.s_blocks[l].makeCompressed();
    for (auto c : row_count) max_count = std::max(max_count, c);
    for (auto c : col_count) max_count = std::max(max_count, c);
  }
  op.n_epsilon = max_count;
  return op;
}

DenseVec restrict_load(const MeshHierarchy& mesh, const HierarchicalBasis& basis,
                       const DenseVec& fine_load, int threads) {
  const std::int64_t n = basis.function_count();
  DenseVec out(n);
  parallel_for(n, [&](std::int64_t g) {
    out[g] = load_inner(mesh, fine_load, basis.function_at(g).values);
  }, threads);
  return out;
}

FineFunction combine_basis(const MeshHierarchy& mesh, const HierarchicalBasis& basis,
                           const DenseVec& coeffs) {
  const int nodes = mesh.fine_nodes_per_axis();
  FineFunction u;
  u.node_box = IndexBox{};
  for (int k = 0; k < mesh.dim; ++k) u.node_box.hi[k] = nodes - 1;
  u.values = DenseVec::Zero(u.node_box.count(mesh.dim));
  std::int64_t g = 0;
  for (const auto& level : basis.levels) {
    for (const auto& f : level.functions) {
      const double c = coeffs[g++];
      if (c != 0.0) {
        std::int64_t local = 0;
        for_each_in_box(mesh.dim, f.values.node_box, [&](const std::array<int, 3>& p) {
          u.values[u.node_box.offset(mesh.dim, p)] += c * f.values.values[local++];
        });
      }
    }
  }
  return u;
}

std::vector<FineFunction> cumulative_solutions(const MeshHierarchy& mesh,
                                               const HierarchicalBasis& basis,
                                               const DenseVec& coeffs) {
  const int nodes = mesh.fine_nodes_per_axis();
  FineFunction u;
  u.node_box = IndexBox{};
  for (int k = 0; k < mesh.dim; ++k) u.node_box.hi[k] = nodes - 1;
  u.values = DenseVec::Zero(u.node_box.count(mesh.dim));
  std::vector<FineFunction> partial;
  partial.reserve(basis.levels.size());
  std::int64_t g = 0;
  for (const auto& level : basis.levels) {
    for (const auto& f : level.functions) {
      const double c = coeffs[g++];
      if (c != 0.0) {
        std::int64_t local = 0;
        for_each_in_box(mesh.dim, f.values.node_box, [&](const std::array<int, 3>& p) {
          u.values[u.node_box.offset(mesh.dim, p)] += c * f.values.values[local++];
        });
      }
    }
    partial.push_back(u);
  }
  return partial;
}

ApplyResult apply_operator(const MeshHierarchy& mesh, const HierarchicalBasis& basis,
                           const CompressedOperator& op, const DenseVec& fine_load,
                           int threads) {
  ApplyResult result;
  DenseVec load = restrict_load(mesh, basis, fine_load, threads);
  result.coeffs = op.coefficients(load);
  result.u = combine_basis(mesh, basis, result.coeffs);
  return result;
}

std::int64_t max_patch_elements(const MeshHierarchy& mesh,
                                const HierarchicalBasis& basis) {
  std::int64_t n = 0;
  for (const auto& level : basis.levels)
    for (const auto& f : level.functions)
      n = std::max(n, f.patch.elements_at(mesh, f.level).count(mesh.dim));
  return n;
}

StageChainReport stage_chain_report(const MeshHierarchy& mesh,
                                    const CoefficientField& coeff,
                                    const HierarchicalBasis& basis,
                                    const BlockStiffness& A,
                                    const TruncationReport& trunc,
                                    const CompressedOperator& hat,
                                    const CompressedOperator& check,
                                    const CompressedOperator& bar,
                                    const CompressedOperator& eps,
                                    const DenseVec& fine_load, int threads) {
  StageChainReport report;
  DenseVec load = restrict_load(mesh, basis, fine_load, threads);
  report.load_norm = load.norm();
  report.delta_norm = trunc.delta_norm;
  report.max_block_lambda_max =
      *std::max_element(trunc.lambda_max.begin(), trunc.lambda_max.end());
  const double energy_lift = std::sqrt(report.max_block_lambda_max + trunc.delta_norm);

  DenseVec c_hat = hat.coefficients(load);
  DenseVec c_check = check.coefficients(load);
  DenseVec c_bar = bar.coefficients(load);
  DenseVec c_eps = eps.coefficients(load);
  report.hat_coeff_norm = c_hat.norm();

  auto gap = [&](const DenseVec& a, const DenseVec& b) {
    return energy_norm(mesh, coeff, combine_basis(mesh, basis, a - b));
  };
  report.hat_check_measured = gap(c_hat, c_check);
  report.hat_check_bound = trunc.energy_bound_factor * report.hat_coeff_norm;
  report.check_bar_measured = gap(c_check, c_bar);
  report.check_bar_bound = energy_lift * bar.delta_cg_surrogate * report.load_norm;
  report.bar_eps_measured = gap(c_bar, c_eps);
  report.bar_eps_bound = energy_lift * static_cast<double>(eps.n_epsilon) *
                         eps.epsilon * report.load_norm;
  return report;
}

}  // namespace hslod
