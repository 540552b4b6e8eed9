#include "hslod/coeff.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "hslod/util.hpp"

namespace hslod {

std::uint64_t CoefficientField::fingerprint() const {
  std::uint64_t h = fnv1a(&dim, sizeof dim);
  h = fnv1a(&base_exponent, sizeof base_exponent, h);
  h = fnv1a(kind.data(), kind.size(), h);
  h = fnv1a(values.data(), values.size() * sizeof(double), h);
  return h;
}

CoefficientField constant_coefficient(int dim, double value) {
  if (value <= 0.0) throw ConfigError("coefficient must be positive");
  CoefficientField f;
  f.dim = dim;
  f.base_exponent = 0;
  f.alpha = f.beta = value;
  f.kind = "constant";
  f.values.assign(1, value);
  return f;
}

CoefficientField random_piecewise_constant(int dim, int base_exponent, double alpha,
                                           double beta, std::uint64_t seed,
                                           CoeffDistribution dist) {
  if (!(0.0 < alpha && alpha <= beta))
    throw ConfigError("need 0 < alpha <= beta for spectral bounds");
  CoefficientField f;
  f.dim = dim;
  f.base_exponent = base_exponent;
  f.alpha = alpha;
  f.beta = beta;
  f.seed = seed;
  f.kind = "random";
  std::int64_t n = 1;
  for (int k = 0; k < dim; ++k) n *= f.cells_per_axis();
  f.values.resize(n);
  Rng rng(seed);
  double la = std::log(alpha), lb = std::log(beta);
  for (auto& v : f.values) {
    double u = rng.uniform01();
    v = dist == CoeffDistribution::LogUniform ? std::exp(la + u * (lb - la))
                                              : alpha + u * (beta - alpha);
  }
  return f;
}

CoefficientField channel_coefficient(double beta) {
  if (beta < 1.0) throw ConfigError("channel contrast beta must be >= 1");
  CoefficientField f;
  f.dim = 2;
  f.base_exponent = 5;
  f.alpha = 1.0;
  f.beta = beta;
  f.kind = "channel";
  int n = f.cells_per_axis();
  f.values.resize(std::int64_t(n) * n);
  auto strip = [](int a, int b) {
    // element index a in strip columns {8, 10}, b within rows [1, 30]
    return (a == 8 || a == 10) && b >= 1 && b <= 30;
  };
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) {
      double a1 = strip(i, j) ? beta / 2.0 : 0.5;
      double a2 = strip(j, i) ? beta / 2.0 : 0.5;
      f.values[std::int64_t(j) * n + i] = a1 + a2;
    }
  return f;
}

void save_coefficient(const CoefficientField& field, const std::string& path_prefix) {
  nlohmann::json meta = {
      {"dim", field.dim},          {"base_exponent", field.base_exponent},
      {"alpha", field.alpha},      {"beta", field.beta},
      {"seed", field.seed},        {"kind", field.kind},
      {"count", field.values.size()},
  };
  atomic_write_file(path_prefix + ".json", meta.dump(2) + "\n");
  std::ostringstream csv;
  char buf[40];
  for (double v : field.values) {
    std::snprintf(buf, sizeof buf, "%.17g\n", v);
    csv << buf;
  }
  atomic_write_file(path_prefix + ".csv", csv.str());
}

CoefficientField load_coefficient(const std::string& path_prefix) {
  std::ifstream meta_in(path_prefix + ".json");
  if (!meta_in) throw ConfigError("cannot open " + path_prefix + ".json");
  nlohmann::json meta = nlohmann::json::parse(meta_in);
  CoefficientField f;
  f.dim = meta.at("dim").get<int>();
  f.base_exponent = meta.at("base_exponent").get<int>();
  f.alpha = meta.at("alpha").get<double>();
  f.beta = meta.at("beta").get<double>();
  f.seed = meta.at("seed").get<std::uint64_t>();
  f.kind = meta.at("kind").get<std::string>();
  std::size_t count = meta.at("count").get<std::size_t>();
  std::ifstream csv(path_prefix + ".csv");
  if (!csv) throw ConfigError("cannot open " + path_prefix + ".csv");
  f.values.reserve(count);
  double v;
  while (csv >> v) f.values.push_back(v);
  if (f.values.size() != count)
    throw ConfigError("coefficient value count mismatch in " + path_prefix + ".csv");
  return f;
}

}  // namespace hslod
