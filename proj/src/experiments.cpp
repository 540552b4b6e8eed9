#include "hslod/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "hslod/util.hpp"

namespace hslod {

namespace {

using nlohmann::json;

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

double seconds_since(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  auto it = j.find(key);
  if (it == j.end()) return fallback;
  return it->get<T>();
}

void reject_unknown_keys(const json& j, const std::vector<std::string>& known,
                         const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (std::find(known.begin(), known.end(), it.key()) == known.end())
      throw ConfigError("unknown config key \"" + it.key() + "\" in " + where);
}

}  // namespace

void ExperimentConfig::validate() const {
  if (dimension < 1 || dimension > 3)
    throw ConfigError("dimension must be 1, 2 or 3");
  if (coarse_exponent < 0) throw ConfigError("coarse_exponent must be >= 0");
  if (levels < 0) throw ConfigError("levels must be >= 0");
  if (fine_exponent < coarse_exponent + levels + 1)
    throw ConfigError("fine_exponent must exceed coarse_exponent + levels (fine mesh "
                      "strictly finer than the deepest level)");
  const auto& c = coefficient;
  if (c.kind != "random" && c.kind != "channel" && c.kind != "constant")
    throw ConfigError("coefficient.kind must be random, channel or constant");
  if (!(c.alpha > 0.0)) throw ConfigError("coefficient.alpha must be positive");
  if (c.kind == "random" && c.beta < c.alpha)
    throw ConfigError("coefficient.beta must be >= alpha");
  if (c.kind == "channel") {
    if (dimension != 2) throw ConfigError("the channel coefficient needs dimension 2");
    if (fine_exponent < 5)
      throw ConfigError("the channel coefficient lives on the 2^-5 grid; "
                        "fine_exponent must be >= 5");
    if (!(c.beta >= 1.0)) throw ConfigError("channel contrast beta must be >= 1");
  }
  if (c.distribution != "loguniform" && c.distribution != "uniform")
    throw ConfigError("coefficient.distribution must be loguniform or uniform");
  if (c.base_exponent != -1 &&
      (c.base_exponent < 0 || c.base_exponent > fine_exponent))
    throw ConfigError("coefficient.base_exponent must be -1 or in [0, fine_exponent]");
  if (m.empty()) throw ConfigError("m must not be empty");
  for (int mi : m)
    if (mi < 1) throw ConfigError("every patch order m must be >= 1");
  if (!(delta_s > 0.0)) throw ConfigError("delta_s must be positive");
  if (method != "hslod" && method != "hlod" && method != "unstabilized")
    throw ConfigError("method must be hslod, hlod or unstabilized");
  if (compression.cg_iterations < 1)
    throw ConfigError("compression.cg_iterations must be >= 1");
  if (compression.cg_rtol < 0.0) throw ConfigError("compression.cg_rtol must be >= 0");
  if (compression.epsilon < 0.0) throw ConfigError("compression.epsilon must be >= 0");
  if (stage != "hat" && stage != "check" && stage != "bar" && stage != "epsilon")
    throw ConfigError("stage must be hat, check, bar or epsilon");
  if (!rhs.smooth && !rhs.piecewise)
    throw ConfigError("at least one right-hand side (smooth or piecewise) is required");
  if (rhs.piecewise_exponent < 0 || rhs.piecewise_exponent > fine_exponent)
    throw ConfigError("rhs.piecewise_exponent must be in [0, fine_exponent]");
  if (threads < 0) throw ConfigError("threads must be >= 0");
  if (out_dir.empty()) throw ConfigError("out_dir must not be empty");
}

MeshHierarchy ExperimentConfig::make_mesh() const {
  return build_hierarchy(dimension, coarse_exponent, levels, fine_exponent);
}

CoefficientField ExperimentConfig::make_coefficient() const {
  const auto& c = coefficient;
  if (c.kind == "constant") return constant_coefficient(dimension, c.alpha);
  if (c.kind == "channel") return channel_coefficient(c.beta);
  const int base = c.base_exponent == -1 ? fine_exponent : c.base_exponent;
  const auto dist = c.distribution == "uniform" ? CoeffDistribution::Uniform
                                                : CoeffDistribution::LogUniform;
  return random_piecewise_constant(dimension, base, c.alpha, c.beta, c.seed, dist);
}

HslodOptions ExperimentConfig::make_options() const {
  HslodOptions options;
  options.slod.m = m.front();
  if (m.size() > 1) options.m_per_level = m;
  options.slod.delta_s = delta_s;
  options.slod.mode = method == "hlod" ? StabilizationMode::ForceRankZero
                      : method == "unstabilized" ? StabilizationMode::Unstabilized
                                                 : StabilizationMode::Stabilized;
  options.restrict_rows = restrict_rows;
  return options;
}

OperatorStage ExperimentConfig::make_stage() const {
  if (stage == "hat") return OperatorStage::Hat;
  if (stage == "check") return OperatorStage::Check;
  if (stage == "bar") return OperatorStage::Bar;
  return OperatorStage::Epsilon;
}

int ExperimentConfig::effective_threads() const {
  if (threads > 0) return threads;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

ExperimentConfig config_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config root must be a JSON object");
  reject_unknown_keys(j, {"dimension", "coarse_exponent", "levels", "fine_exponent",
                          "coefficient", "m", "delta_s", "method", "restrict_rows",
                          "compression", "stage", "rhs", "threads", "out_dir",
                          "export_matrices"},
                      "the top level");
  ExperimentConfig cfg;
  try {
    cfg.dimension = get_or(j, "dimension", cfg.dimension);
    cfg.coarse_exponent = get_or(j, "coarse_exponent", cfg.coarse_exponent);
    cfg.levels = get_or(j, "levels", cfg.levels);
    cfg.fine_exponent = get_or(j, "fine_exponent", cfg.fine_exponent);
    if (j.contains("coefficient")) {
      const json& c = j["coefficient"];
      reject_unknown_keys(c, {"kind", "alpha", "beta", "seed", "base_exponent",
                              "distribution"},
                          "coefficient");
      cfg.coefficient.kind = get_or<std::string>(c, "kind", cfg.coefficient.kind);
      cfg.coefficient.alpha = get_or(c, "alpha", cfg.coefficient.alpha);
      cfg.coefficient.beta = get_or(c, "beta", cfg.coefficient.beta);
      cfg.coefficient.seed = get_or(c, "seed", cfg.coefficient.seed);
      cfg.coefficient.base_exponent =
          get_or(c, "base_exponent", cfg.coefficient.base_exponent);
      cfg.coefficient.distribution =
          get_or<std::string>(c, "distribution", cfg.coefficient.distribution);
    }
    if (j.contains("m")) {
      if (j["m"].is_array())
        cfg.m = j["m"].get<std::vector<int>>();
      else
        cfg.m = {j["m"].get<int>()};
    }
    cfg.delta_s = get_or(j, "delta_s", cfg.delta_s);
    cfg.method = get_or<std::string>(j, "method", cfg.method);
    cfg.restrict_rows = get_or(j, "restrict_rows", cfg.restrict_rows);
    if (j.contains("compression")) {
      const json& c = j["compression"];
      reject_unknown_keys(c, {"cg_iterations", "cg_rtol", "epsilon"}, "compression");
      cfg.compression.cg_iterations =
          get_or(c, "cg_iterations", cfg.compression.cg_iterations);
      cfg.compression.cg_rtol = get_or(c, "cg_rtol", cfg.compression.cg_rtol);
      cfg.compression.epsilon = get_or(c, "epsilon", cfg.compression.epsilon);
    }
    cfg.stage = get_or<std::string>(j, "stage", cfg.stage);
    if (j.contains("rhs")) {
      const json& r = j["rhs"];
      reject_unknown_keys(r, {"smooth", "piecewise", "piecewise_exponent", "seed"},
                          "rhs");
      cfg.rhs.smooth = get_or(r, "smooth", cfg.rhs.smooth);
      cfg.rhs.piecewise = get_or(r, "piecewise", cfg.rhs.piecewise);
      cfg.rhs.piecewise_exponent =
          get_or(r, "piecewise_exponent", cfg.rhs.piecewise_exponent);
      cfg.rhs.seed = get_or(r, "seed", cfg.rhs.seed);
    }
    cfg.threads = get_or(j, "threads", cfg.threads);
    cfg.out_dir = get_or<std::string>(j, "out_dir", cfg.out_dir);
    cfg.export_matrices = get_or(j, "export_matrices", cfg.export_matrices);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config has a wrongly typed value: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

std::string config_to_json_text(const ExperimentConfig& cfg) {
  json j;
  j["dimension"] = cfg.dimension;
  j["coarse_exponent"] = cfg.coarse_exponent;
  j["levels"] = cfg.levels;
  j["fine_exponent"] = cfg.fine_exponent;
  j["coefficient"] = {{"kind", cfg.coefficient.kind},
                      {"alpha", cfg.coefficient.alpha},
                      {"beta", cfg.coefficient.beta},
                      {"seed", cfg.coefficient.seed},
                      {"base_exponent", cfg.coefficient.base_exponent},
                      {"distribution", cfg.coefficient.distribution}};
  j["m"] = cfg.m;
  j["delta_s"] = cfg.delta_s;
  j["method"] = cfg.method;
  j["restrict_rows"] = cfg.restrict_rows;
  j["compression"] = {{"cg_iterations", cfg.compression.cg_iterations},
                      {"cg_rtol", cfg.compression.cg_rtol},
                      {"epsilon", cfg.compression.epsilon}};
  j["stage"] = cfg.stage;
  j["rhs"] = {{"smooth", cfg.rhs.smooth},
              {"piecewise", cfg.rhs.piecewise},
              {"piecewise_exponent", cfg.rhs.piecewise_exponent},
              {"seed", cfg.rhs.seed}};
  j["threads"] = cfg.threads;
  j["out_dir"] = cfg.out_dir;
  j["export_matrices"] = cfg.export_matrices;
  return j.dump(2);
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::ostringstream text;
  text << in.rdbuf();
  return config_from_json_text(text.str());
}

std::uint64_t config_hash(const ExperimentConfig& config) {
  const std::string text = config_to_json_text(config);
  return fnv1a(text.data(), text.size());
}

ScalarField smooth_rhs(int dim) {
  return [dim](const std::array<double, 3>& x) {
    double v = dim * std::numbers::pi * std::numbers::pi;
    for (int k = 0; k < dim; ++k) v *= std::sin(std::numbers::pi * x[k]);
    return v;
  };
}

ScalarField smooth_rhs_solution(int dim) {
  return [dim](const std::array<double, 3>& x) {
    double v = 1.0;
    for (int k = 0; k < dim; ++k) v *= std::sin(std::numbers::pi * x[k]);
    return v;
  };
}

Q0Function piecewise_rhs(int dim, int max_exponent, std::uint64_t seed) {
  Q0Function out;
  out.exponent = max_exponent;
  const int n = 1 << max_exponent;
  for (int k = 0; k < dim; ++k) out.elem_box.hi[k] = n - 1;
  out.values = DenseVec::Zero(out.elem_box.count(dim));
  for (int e = 0; e <= max_exponent; ++e) {
    Rng rng(seed ^ (static_cast<std::uint64_t>(e + 1) * 0x9e3779b97f4a7c15ull));
    const int ne = 1 << e;
    IndexBox coarse;
    for (int k = 0; k < dim; ++k) coarse.hi[k] = ne - 1;
    DenseVec draw(coarse.count(dim));
    for (Eigen::Index i = 0; i < draw.size(); ++i) draw[i] = rng.symmetric();
    const int shift = max_exponent - e;
    std::int64_t i = 0;
    for_each_in_box(dim, out.elem_box, [&](const std::array<int, 3>& p) {
      std::array<int, 3> q{p[0] >> shift, p[1] >> shift, p[2] >> shift};
      out.values[i++] += draw[coarse.offset(dim, q)];
    });
  }
  return out;
}

namespace {

std::string errors_csv(const MeshHierarchy& mesh, const LevelErrors& e) {
  std::ostringstream os;
  os << "level,H,rel_energy_error\n";
  for (std::size_t l = 0; l < e.rel_energy.size(); ++l)
    os << l << "," << fmt17(mesh.H(static_cast<int>(l))) << ","
       << fmt17(e.rel_energy[l]) << "\n";
  return os.str();
}

std::string blocks_csv(const MeshHierarchy& mesh, const TruncationReport& t) {
  std::ostringstream os;
  os << "level,H,kappa,lambda_min,lambda_max\n";
  for (std::size_t l = 0; l < t.lambda_min.size(); ++l) {
    const double kappa =
        t.lambda_min[l] > 0.0 ? t.lambda_max[l] / t.lambda_min[l] : 0.0;
    os << l << "," << fmt17(mesh.H(static_cast<int>(l))) << "," << fmt17(kappa)
       << "," << fmt17(t.lambda_min[l]) << "," << fmt17(t.lambda_max[l]) << "\n";
  }
  return os.str();
}

std::string nnz_csv(const std::vector<std::int64_t>& nnz) {
  static const char* names[] = {"hat", "check", "bar", "epsilon"};
  std::ostringstream os;
  os << "stage,nnz\n";
  for (std::size_t i = 0; i < nnz.size(); ++i)
    os << names[i] << "," << nnz[i] << "\n";
  return os.str();
}

json quality_json(const BasisQuality& q) {
  return {{"zeta", q.zeta},
          {"sigma_proxy", q.sigma_proxy},
          {"lambda_min_projection", q.lambda_min_projection},
          {"gram_kappa", q.gram_kappa},
          {"gram_lambda_min", q.gram_lambda_min},
          {"gram_lambda_max", q.gram_lambda_max},
          {"max_lsq_residual", q.max_lsq_residual}};
}

json truncation_json(const TruncationReport& t) {
  return {{"delta_strip_norm", t.delta_strip_norm},
          {"lambda_min", t.lambda_min},
          {"lambda_max", t.lambda_max},
          {"delta_norm", t.delta_norm},
          {"coefficient_bound_factor", t.coefficient_bound_factor},
          {"energy_bound_factor", t.energy_bound_factor}};
}

json chain_json(const StageChainReport& c) {
  return {{"load_norm", c.load_norm},
          {"hat_coeff_norm", c.hat_coeff_norm},
          {"max_block_lambda_max", c.max_block_lambda_max},
          {"delta_norm", c.delta_norm},
          {"hat_check_measured", c.hat_check_measured},
          {"hat_check_bound", c.hat_check_bound},
          {"check_bar_measured", c.check_bar_measured},
          {"check_bar_bound", c.check_bar_bound},
          {"bar_eps_measured", c.bar_eps_measured},
          {"bar_eps_bound", c.bar_eps_bound}};
}

}  // namespace

void write_line_chart_svg(const std::string& path, const std::string& title,
                          const std::string& xlabel, const std::string& ylabel,
                          const std::vector<PlotSeries>& series) {
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c",
                                  "#9467bd", "#ff7f0e", "#8c564b"};
  const double width = 640, height = 440;
  const double ml = 70, mr = 150, mt = 46, mb = 54;
  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  bool first = true;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (first) {
        xmin = xmax = s.x[i];
        ymin = ymax = s.y[i];
        first = false;
      }
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.y[i]);
      ymax = std::max(ymax, s.y[i]);
    }
  if (xmax - xmin < 1e-12) {
    xmin -= 1;
    xmax += 1;
  }
  if (ymax - ymin < 1e-12) {
    ymin -= 1;
    ymax += 1;
  }
  auto sx = [&](double v) { return ml + (v - xmin) / (xmax - xmin) * (width - ml - mr); };
  auto sy = [&](double v) {
    return height - mb - (v - ymin) / (ymax - ymin) * (height - mt - mb);
  };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
     << "\" height=\"" << height << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << (ml + (width - ml - mr) / 2) << "\" y=\"24\" "
     << "text-anchor=\"middle\" font-size=\"15\">" << title << "</text>\n";
  // axes
  os << "<line x1=\"" << ml << "\" y1=\"" << (height - mb) << "\" x2=\""
     << (width - mr) << "\" y2=\"" << (height - mb)
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\""
     << (height - mb) << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = xmin + i * (xmax - xmin) / 4;
    const double yv = ymin + i * (ymax - ymin) / 4;
    os << "<line x1=\"" << sx(xv) << "\" y1=\"" << (height - mb) << "\" x2=\""
       << sx(xv) << "\" y2=\"" << (height - mb + 5) << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << sx(xv) << "\" y=\"" << (height - mb + 18)
       << "\" text-anchor=\"middle\">" << fmt_g(xv) << "</text>\n";
    os << "<line x1=\"" << (ml - 5) << "\" y1=\"" << sy(yv) << "\" x2=\"" << ml
       << "\" y2=\"" << sy(yv) << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << (ml - 8) << "\" y=\"" << (sy(yv) + 4)
       << "\" text-anchor=\"end\">" << fmt_g(yv) << "</text>\n";
  }
  os << "<text x=\"" << (ml + (width - ml - mr) / 2) << "\" y=\"" << (height - 14)
     << "\" text-anchor=\"middle\">" << xlabel << "</text>\n";
  os << "<text x=\"16\" y=\"" << (mt + (height - mt - mb) / 2)
     << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
     << (mt + (height - mt - mb) / 2) << ")\">" << ylabel << "</text>\n";

  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = palette[s % 6];
    os << "<polyline fill=\"none\" stroke=\"" << color
       << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < series[s].x.size(); ++i)
      os << sx(series[s].x[i]) << "," << sy(series[s].y[i]) << " ";
    os << "\"/>\n";
    for (std::size_t i = 0; i < series[s].x.size(); ++i)
      os << "<circle cx=\"" << sx(series[s].x[i]) << "\" cy=\""
         << sy(series[s].y[i]) << "\" r=\"2.5\" fill=\"" << color << "\"/>\n";
    const double ly = mt + 16 + 18 * static_cast<double>(s);
    os << "<rect x=\"" << (width - mr + 10) << "\" y=\"" << (ly - 9)
       << "\" width=\"12\" height=\"12\" fill=\"" << color << "\"/>\n";
    os << "<text x=\"" << (width - mr + 28) << "\" y=\"" << (ly + 2) << "\">"
       << series[s].label << "</text>\n";
  }
  os << "</svg>\n";
  atomic_write_file(path, os.str());
}

RunReport run_experiment(const ExperimentConfig& config) {
  config.validate();
  RunReport report;
  report.config = config;
  report.hash = config_hash(config);
  const int threads = config.effective_threads();
  const MeshHierarchy mesh = config.make_mesh();
  const CoefficientField coeff = config.make_coefficient();
  report.coefficient_fingerprint = hex64(coeff.fingerprint());

  auto t0 = std::chrono::steady_clock::now();
  const HierarchicalBasis basis = build_basis(mesh, coeff, config.make_options(), threads);
  report.build_seconds = seconds_since(t0);

  t0 = std::chrono::steady_clock::now();
  const BlockStiffness A = assemble_stiffness_hslod(mesh, coeff, basis, threads);
  report.truncation = block_truncate(A);
  report.quality = basis_quality(mesh, coeff, basis, threads, &A.blocks);
  report.max_off_block = A.max_off_block();
  report.max_elements = max_patch_elements(mesh, basis);
  report.stiffness_seconds = seconds_since(t0);

  t0 = std::chrono::steady_clock::now();
  const CompressedOperator check = make_operator_check(A);
  const CompressedOperator bar =
      cg_block_inverse(A, config.compression.cg_iterations, config.compression.cg_rtol,
                       report.truncation.lambda_min, threads);
  const CompressedOperator eps = threshold(bar, config.compression.epsilon);
  report.delta_cg_surrogate = bar.delta_cg_surrogate;
  report.n_epsilon = eps.n_epsilon;
  CompressedOperator hat;
  const bool have_hat = A.size() <= kHatSolveCap;
  if (have_hat) hat = make_operator_hat(A);
  report.stage_nonzeros = {A.full.stored_nonzeros(), check.stored_nonzeros(A),
                           bar.stored_nonzeros(A), eps.stored_nonzeros(A)};

  const OperatorStage stage = config.make_stage();
  if (stage == OperatorStage::Hat && !have_hat)
    throw ConfigError("stage hat refused at order " + std::to_string(A.size()) +
                      "; pick check, bar or epsilon");
  const CompressedOperator& solver = stage == OperatorStage::Hat   ? hat
                                     : stage == OperatorStage::Check ? check
                                     : stage == OperatorStage::Bar   ? bar
                                                                     : eps;

  const GlobalFineSystem fine = make_global_fine_system(mesh, coeff);

  struct RhsCase {
    std::string name;
    DenseVec load;
  };
  std::vector<RhsCase> cases;
  if (config.rhs.smooth)
    cases.push_back({"smooth", fine_load(mesh, smooth_rhs(mesh.dim))});
  if (config.rhs.piecewise)
    cases.push_back({"piecewise",
                     fine_load_q0(mesh, piecewise_rhs(mesh.dim, config.rhs.piecewise_exponent,
                                                      config.rhs.seed))});

  for (std::size_t c = 0; c < cases.size(); ++c) {
    const FineFunction ref = fine_solve(fine, cases[c].load);
    const double ref_norm = energy_norm(mesh, coeff, ref);
    const DenseVec loads = restrict_load(mesh, basis, cases[c].load, threads);
    const DenseVec coeffs = solver.coefficients(loads);
    const std::vector<FineFunction> partial = cumulative_solutions(mesh, basis, coeffs);
    LevelErrors le;
    le.rhs_name = cases[c].name;
    le.rel_energy.reserve(partial.size());
    for (const auto& u : partial) {
      FineFunction diff = u;
      diff.values -= ref.values;
      le.rel_energy.push_back(energy_norm(mesh, coeff, diff) / ref_norm);
    }
    report.errors.push_back(std::move(le));
    if (c == 0 && have_hat) {
      report.chain = stage_chain_report(mesh, coeff, basis, A, report.truncation, hat,
                                        check, bar, eps, cases[c].load, threads);
      report.chain_available = true;
    }
  }
  report.solve_seconds = seconds_since(t0);

  // artifacts
  namespace fs = std::filesystem;
  const fs::path dir(config.out_dir);
  for (std::size_t c = 0; c < report.errors.size(); ++c) {
    const std::string name =
        c == 0 ? "errors.csv" : "errors_" + report.errors[c].rhs_name + ".csv";
    atomic_write_file(dir / name, errors_csv(mesh, report.errors[c]));
  }
  atomic_write_file(dir / "blocks.csv", blocks_csv(mesh, report.truncation));
  atomic_write_file(dir / "nnz.csv", nnz_csv(report.stage_nonzeros));
  save_coefficient(coeff, (dir / "coefficient").string());

  std::vector<PlotSeries> err_series;
  for (const auto& e : report.errors) {
    PlotSeries s;
    s.label = e.rhs_name;
    for (std::size_t l = 0; l < e.rel_energy.size(); ++l) {
      s.x.push_back(std::log2(1.0 / mesh.H(static_cast<int>(l))));
      s.y.push_back(std::log2(std::max(e.rel_energy[l], 1e-300)));
    }
    err_series.push_back(std::move(s));
  }
  write_line_chart_svg((dir / "errors.svg").string(), "relative energy error",
                       "log2(1/H)", "log2(error)", err_series);
  PlotSeries kappa_series;
  kappa_series.label = "kappa";
  for (std::size_t l = 0; l < report.truncation.lambda_min.size(); ++l) {
    kappa_series.x.push_back(static_cast<double>(l));
    kappa_series.y.push_back(
        std::log10(std::max(report.truncation.lambda_max[l] /
                                std::max(report.truncation.lambda_min[l], 1e-300),
                            1e-300)));
  }
  write_line_chart_svg((dir / "blocks.svg").string(), "block condition numbers",
                       "level", "log10(kappa)", {kappa_series});

  if (config.export_matrices) {
    write_matrix_market(A.full, (dir / "stiffness_hat.mtx").string());
    write_matrix_market(A.check_matrix(), (dir / "stiffness_check.mtx").string());
    write_matrix_market_general(bar.s_matrix(), (dir / "inverse_bar.mtx").string());
    write_matrix_market_general(eps.s_matrix(), (dir / "inverse_epsilon.mtx").string());
  }

  json jr;
  jr["config"] = json::parse(config_to_json_text(config));
  jr["config_hash"] = hex64(report.hash);
  jr["coefficient_fingerprint"] = report.coefficient_fingerprint;
  jr["quality"] = quality_json(report.quality);
  jr["truncation"] = truncation_json(report.truncation);
  jr["max_off_block"] = report.max_off_block;
  jr["max_patch_elements"] = report.max_elements;
  jr["stage_nonzeros"] = report.stage_nonzeros;
  jr["n_epsilon"] = report.n_epsilon;
  jr["delta_cg_surrogate"] = report.delta_cg_surrogate;
  for (const auto& e : report.errors)
    jr["errors"][e.rhs_name] = e.rel_energy;
  if (report.chain_available) jr["stage_chain"] = chain_json(report.chain);
  jr["timings"] = {{"build_seconds", report.build_seconds},
                   {"stiffness_seconds", report.stiffness_seconds},
                   {"solve_seconds", report.solve_seconds}};
  atomic_write_file(dir / "report.json", jr.dump(2) + "\n");
  return report;
}

ChannelTable channel_table(const ExperimentConfig& base,
                           const std::vector<std::pair<double, int>>& grid) {
  ChannelTable table;
  const MeshHierarchy mesh = base.make_mesh();
  for (int l = 0; l <= mesh.levels; ++l) table.H.push_back(mesh.H(l));
  for (const auto& [beta, m] : grid) {
    ExperimentConfig cfg = base;
    cfg.coefficient.kind = "channel";
    cfg.coefficient.alpha = 1.0;
    cfg.coefficient.beta = beta;
    cfg.m = {m};
    cfg.validate();
    const CoefficientField coeff = cfg.make_coefficient();
    const HierarchicalBasis basis =
        build_basis(mesh, coeff, cfg.make_options(), cfg.effective_threads());
    ChannelTableRow row;
    row.beta = beta;
    row.m = m;
    for (int l = 0; l <= mesh.levels; ++l) {
      const SparseSym gram =
          assemble_level_gram(mesh, coeff, basis, l, cfg.effective_threads());
      const EigPair e = extremal_eigs(gram);
      row.kappa.push_back(e.lambda_min > 0.0 ? e.lambda_max / e.lambda_min : 0.0);
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

void write_channel_table_csv(const ChannelTable& table, const std::string& path) {
  std::ostringstream os;
  os << "beta,m";
  for (double h : table.H) os << "," << fmt_g(h);
  os << "\n";
  char buf[40];
  for (const auto& row : table.rows) {
    os << fmt_g(row.beta) << "," << row.m;
    for (double k : row.kappa) {
      std::snprintf(buf, sizeof buf, "%.2g", k);
      os << "," << buf;
    }
    os << "\n";
  }
  atomic_write_file(path, os.str());
}

}  // namespace hslod
