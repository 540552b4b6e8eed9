#pragma once

// Piecewise-constant scalar diffusion coefficients A on their own Cartesian
// base mesh 2^-base_exponent, looked up per fine element.  Spectral bounds
// alpha <= A <= beta are tracked and validated.

#include <cstdint>
#include <string>
#include <vector>

#include "hslod/mesh.hpp"

namespace hslod {

enum class CoeffDistribution { LogUniform, Uniform };

struct CoefficientField {
  int dim = 2;
  int base_exponent = 0;  // base mesh size 2^-base_exponent
  double alpha = 1.0;     // lower spectral bound
  double beta = 1.0;      // upper spectral bound
  std::uint64_t seed = 0; // 0 for deterministic fields
  std::string kind;       // "constant" | "random" | "channel"
  std::vector<double> values;  // lexicographic over base-mesh elements

  int cells_per_axis() const { return 1 << base_exponent; }

  // Value on the fine element with the given per-axis coordinates; the fine
  // mesh must refine the base mesh (fine_exponent >= base_exponent).
  double value_at_fine(const MeshHierarchy& mesh, const std::array<int, 3>& fine_elem) const {
    int shift = mesh.fine_exponent - base_exponent;
    std::array<int, 3> c{0, 0, 0};
    for (int k = 0; k < dim; ++k) c[k] = fine_elem[k] >> shift;
    return values[lex_index(dim, cells_per_axis(), c)];
  }

  // Content fingerprint for cache validation.
  std::uint64_t fingerprint() const;
};

CoefficientField constant_coefficient(int dim, double value);

// I.i.d. per-element draws from [alpha, beta], log-uniform by default.
// Identical (dim, base_exponent, bounds, seed, distribution) reproduce the
// field bit-for-bit on any platform.
CoefficientField random_piecewise_constant(int dim, int base_exponent, double alpha,
                                           double beta, std::uint64_t seed,
                                           CoeffDistribution dist = CoeffDistribution::LogUniform);

// Two crossing high-contrast channel pairs on the 2^-5 base mesh (d = 2):
// A(x1,x2) = A1(x1,x2) + A1(x2,x1) with A1 = beta/2 on the vertical strips
// [8,9]x[1,31] and [10,11]x[1,31] (in units of 1/32) and 1/2 elsewhere.
// Background value 1, strip value (beta+1)/2, beta where strips cross.
CoefficientField channel_coefficient(double beta);

// Persistence: <path>.json carries the metadata, <path>.csv the base-mesh
// values (one per line, lexicographic).
void save_coefficient(const CoefficientField& field, const std::string& path_prefix);
CoefficientField load_coefficient(const std::string& path_prefix);

}  // namespace hslod
