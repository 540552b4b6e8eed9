#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cmath>

#include "hslod/compress.hpp"
#include "hslod/oracle.hpp"
#include "hslod/util.hpp"

using namespace hslod;

TEST_CASE("the global fine factorization refuses oversized grids up front") {
  MeshHierarchy big = build_hierarchy(2, 1, 1, 10);
  CoefficientField one = constant_coefficient(2, 1.0);
  CHECK_THROWS_AS(make_global_fine_system(big, one), ConfigError);

  MeshHierarchy small = build_hierarchy(2, 1, 1, 4);
  CoefficientField c = constant_coefficient(2, 1.0);
  CHECK_THROWS_AS(make_global_fine_system(small, c, 10), ConfigError);
  CHECK_NOTHROW(make_global_fine_system(small, c));
}

TEST_CASE("the three fine-solve overloads agree on the same right-hand side") {
  MeshHierarchy mesh = build_hierarchy(2, 1, 1, 4);
  CoefficientField coeff = random_piecewise_constant(2, 2, 1.0, 10.0, 17);
  GlobalFineSystem system = make_global_fine_system(mesh, coeff);

  ScalarField f = [](const std::array<double, 3>& x) { return 1.0 + x[0] * x[1]; };
  FineFunction via_field = fine_solve(system, f);
  FineFunction via_load = fine_solve(system, fine_load(mesh, f));
  CHECK((via_field.values - via_load.values).cwiseAbs().maxCoeff() == 0.0);

  Q0Function g = element_indicator(mesh, 0, 2);
  FineFunction via_q0 = fine_solve(system, g);
  FineFunction via_q0_load = fine_solve(system, fine_load_q0(mesh, g));
  CHECK((via_q0.values - via_q0_load.values).cwiseAbs().maxCoeff() == 0.0);

  // boundary values are zero and the solution is nontrivial
  const int nodes = mesh.fine_nodes_per_axis();
  for (int i = 0; i < nodes; ++i) {
    CHECK(via_field.values[lex_index(2, nodes, {i, 0, 0})] == 0.0);
    CHECK(via_field.values[lex_index(2, nodes, {0, i, 0})] == 0.0);
  }
  CHECK(via_field.values.cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("the kernel construction yields coarse-orthogonal combinations in 1d") {
  MeshHierarchy mesh = build_hierarchy(1, 1, 1, 5);
  CoefficientField coeff = random_piecewise_constant(1, 2, 1.0, 10.0, 17);
  GlobalFineSystem system = make_global_fine_system(mesh, coeff);
  KernelBasis kb = global_kernel_basis(system, 1);

  REQUIRE(kb.D.rows() == 2);
  REQUIRE(kb.D.cols() == 4);
  CHECK(kb.rank == 2);
  REQUIRE(kb.kernel.cols() == 2);
  DenseMat gram = kb.kernel.transpose() * kb.kernel;
  CHECK((gram - DenseMat::Identity(2, 2)).cwiseAbs().maxCoeff() <= 1e-12);

  // D entries are coarse-cell integrals (volume-scaled averages) of the
  // fine solutions for the fine-level indicators
  const double volume = mesh.H(0);
  for (int m = 0; m < 4; ++m) {
    FineFunction u = fine_solve(system, element_indicator(mesh, 1, m));
    Q0Function avg = project_q0(mesh, 0, u);
    for (int n = 0; n < 2; ++n)
      CHECK(kb.D(n, m) == doctest::Approx(volume * avg.values[n]).epsilon(1e-12));
  }

  // a kernel combination has vanishing coarse averages and is a-orthogonal
  // to every coarse-scale solve, yet nonzero
  for (int j = 0; j < 2; ++j) {
    DenseVec fine_rhs = DenseVec::Zero(mesh.fine_nodes_per_axis());
    for (int m = 0; m < 4; ++m) {
      DenseVec lm = fine_load_q0(mesh, element_indicator(mesh, 1, m));
      fine_rhs += kb.kernel(m, j) * lm;
    }
    FineFunction u = fine_solve(system, fine_rhs);
    CHECK(project_q0(mesh, 0, u).values.cwiseAbs().maxCoeff() <= 1e-10);
    CHECK(energy_norm(mesh, coeff, u) > 1e-6);
    for (int n = 0; n < 2; ++n) {
      FineFunction w = fine_solve(system, element_indicator(mesh, 0, n));
      CHECK(std::abs(energy_inner(mesh, coeff, u, w)) <= 1e-10);
    }
  }
}

TEST_CASE("the kernel dimension in 2d is the element count minus the rank") {
  MeshHierarchy mesh = build_hierarchy(2, 1, 1, 4);
  CoefficientField coeff = random_piecewise_constant(2, 2, 1.0, 10.0, 23);
  GlobalFineSystem system = make_global_fine_system(mesh, coeff);
  KernelBasis kb = global_kernel_basis(system, 1);
  REQUIRE(kb.D.rows() == 4);
  REQUIRE(kb.D.cols() == 16);
  CHECK(kb.rank == 4);
  CHECK(kb.kernel.cols() == 12);
  DenseMat gram = kb.kernel.transpose() * kb.kernel;
  CHECK((gram - DenseMat::Identity(12, 12)).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK((kb.D * kb.kernel).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("the kernel construction rejects level zero and oversized levels") {
  MeshHierarchy mesh = build_hierarchy(2, 1, 1, 4);
  CoefficientField coeff = constant_coefficient(2, 1.0);
  GlobalFineSystem system = make_global_fine_system(mesh, coeff);
  CHECK_THROWS_AS(global_kernel_basis(system, 0), ConfigError);
  CHECK_THROWS_AS(global_kernel_basis(system, 1, 2), ConfigError);
}

TEST_CASE("whole-domain patches close the localization gap") {
  MeshHierarchy mesh = build_hierarchy(1, 1, 1, 5);
  CoefficientField coeff = random_piecewise_constant(1, 2, 1.0, 10.0, 17);
  GlobalFineSystem system = make_global_fine_system(mesh, coeff);
  HslodOptions options;
  options.slod.m = 16;
  HierarchicalBasis basis = build_basis(mesh, coeff, options, 1);
  BasisQuality quality = basis_quality(mesh, coeff, basis, 1);
  LocalizationGapReport report = localization_gap_report(system, basis, quality, 1);
  CHECK(report.max_gap <= 1e-9);
}

TEST_CASE("the gap report recomputes its proxy bound from measured quantities") {
  MeshHierarchy mesh = build_hierarchy(2, 1, 1, 4);
  CoefficientField coeff = random_piecewise_constant(2, 2, 1.0, 4.0, 23);
  GlobalFineSystem system = make_global_fine_system(mesh, coeff);
  HslodOptions options;
  options.slod.m = 1;
  HierarchicalBasis basis = build_basis(mesh, coeff, options, 1);
  BasisQuality quality = basis_quality(mesh, coeff, basis, 1);
  LocalizationGapReport report = localization_gap_report(system, basis, quality, 1);

  CHECK(report.zeta == quality.zeta);
  CHECK(report.sigma_proxy == quality.sigma_proxy);
  CHECK(report.max_elements == max_patch_elements(mesh, basis));
  double want = (1.0 + std::sqrt(2.0) / std::acos(-1.0)) *
                std::sqrt(static_cast<double>(report.max_elements)) /
                std::sqrt(coeff.alpha) * quality.zeta * quality.sigma_proxy;
  CHECK(report.bound == doctest::Approx(want).epsilon(1e-12));
  CHECK(report.max_gap > 0.0);
  CHECK(report.proxy_exceeded == (report.max_gap > report.bound));
}
