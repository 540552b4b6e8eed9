// Command-line front end: builds and caches hierarchical bases, runs solves
// and experiments, exports operator matrices, and checks the library's core
// invariants.  Exit codes: 0 success, 1 configuration/usage error, 2 numerical
// failure (the failing stage is named on stderr).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "hslod/experiments.hpp"
#include "hslod/util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace hslod;

namespace {

// ---------------------------------------------------------------------------
// config resolution: JSON file -> --set overrides -> dedicated flags

struct CommonOptions {
  std::string config_path;
  std::vector<std::string> sets;
  std::string out_dir;
  int threads = -1;           // -1 = keep the config value
  long long seed = -1;        // -1 = keep; otherwise coefficient + rhs seeds
  std::string stage;          // empty = keep
  std::string cache_dir;      // empty = no caching
  bool verbose = false;
};

void add_common_options(CLI::App* sub, CommonOptions& opts) {
  sub->add_option("-c,--config", opts.config_path, "JSON config file (defaults apply when omitted)");
  sub->add_option("--set", opts.sets,
                  "override a config entry, e.g. --set coefficient.beta=1e3 (repeatable)");
  sub->add_option("-o,--out", opts.out_dir, "output directory (overrides out_dir)");
  sub->add_option("-t,--threads", opts.threads, "worker threads; 1 = serial baseline, 0 = all cores");
  sub->add_option("--seed", opts.seed, "override coefficient and rhs seeds (realizations only)");
  sub->add_option("--cache-dir", opts.cache_dir,
                  "basis cache directory (default: $HSLOD_CACHE_DIR; empty disables caching)");
  sub->add_flag("-v,--verbose", opts.verbose, "progress logging to stderr");
}

void apply_set(json& dom, const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("--set expects key=value, got \"" + spec + "\"");
  const std::string key = spec.substr(0, eq);
  const std::string value = spec.substr(eq + 1);
  json* node = &dom;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? dot : dot - start);
    if (part.empty()) throw ConfigError("--set key has an empty segment: \"" + key + "\"");
    if (dot == std::string::npos) {
      json parsed = json::parse(value, nullptr, false);
      (*node)[part] = parsed.is_discarded() ? json(value) : parsed;
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

ExperimentConfig resolve_config(const CommonOptions& opts) {
  json dom = json::object();
  if (!opts.config_path.empty()) {
    std::ifstream in(opts.config_path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config file " + opts.config_path);
    std::ostringstream text;
    text << in.rdbuf();
    dom = json::parse(text.str(), nullptr, false);
    if (dom.is_discarded())
      throw ConfigError("config file " + opts.config_path + " is not valid JSON");
  }
  for (const auto& s : opts.sets) apply_set(dom, s);
  if (!opts.out_dir.empty()) dom["out_dir"] = opts.out_dir;
  if (opts.threads >= 0) dom["threads"] = opts.threads;
  if (opts.seed >= 0) {
    dom["coefficient"]["seed"] = static_cast<std::uint64_t>(opts.seed);
    dom["rhs"]["seed"] = static_cast<std::uint64_t>(opts.seed);
  }
  if (!opts.stage.empty()) dom["stage"] = opts.stage;
  return config_from_json_text(dom.dump());
}

std::string default_cache_dir() {
  const char* env = std::getenv("HSLOD_CACHE_DIR");
  return env == nullptr ? std::string() : std::string(env);
}

void log(const CommonOptions& opts, const std::string& msg) {
  if (opts.verbose) std::cerr << "[hslod] " << msg << "\n";
}

// ---------------------------------------------------------------------------
// binary basis cache: versioned header + structural key + coefficient
// fingerprint; any mismatch or short read falls back to a fresh build

constexpr char kCacheMagic[8] = {'H', 'S', 'L', 'O', 'D', 'C', '0', '1'};

class ByteWriter {
 public:
  template <typename T>
  void put(T v) {
    buf_.append(reinterpret_cast<const char*>(&v), sizeof v);
  }
  void put_vec(const DenseVec& v) {
    put<std::int64_t>(v.size());
    buf_.append(reinterpret_cast<const char*>(v.data()),
                static_cast<std::size_t>(v.size()) * sizeof(double));
  }
  void put_ivec(const std::vector<std::int64_t>& v) {
    put<std::int64_t>(static_cast<std::int64_t>(v.size()));
    buf_.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(std::int64_t));
  }
  void put_box(const IndexBox& b) {
    for (int k = 0; k < 3; ++k) put<std::int32_t>(b.lo[k]);
    for (int k = 0; k < 3; ++k) put<std::int32_t>(b.hi[k]);
  }
  std::string take() { return std::move(buf_); }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string bytes) : bytes_(std::move(bytes)) {}

  template <typename T>
  T get() {
    T v;
    need(sizeof v);
    std::memcpy(&v, bytes_.data() + pos_, sizeof v);
    pos_ += sizeof v;
    return v;
  }
  DenseVec get_vec() {
    const auto n = get<std::int64_t>();
    if (n < 0) throw std::runtime_error("cache: negative length");
    need(static_cast<std::size_t>(n) * sizeof(double));
    DenseVec v(n);
    std::memcpy(v.data(), bytes_.data() + pos_, static_cast<std::size_t>(n) * sizeof(double));
    pos_ += static_cast<std::size_t>(n) * sizeof(double);
    return v;
  }
  std::vector<std::int64_t> get_ivec() {
    const auto n = get<std::int64_t>();
    if (n < 0) throw std::runtime_error("cache: negative length");
    need(static_cast<std::size_t>(n) * sizeof(std::int64_t));
    std::vector<std::int64_t> v(static_cast<std::size_t>(n));
    std::memcpy(v.data(), bytes_.data() + pos_, v.size() * sizeof(std::int64_t));
    pos_ += v.size() * sizeof(std::int64_t);
    return v;
  }
  IndexBox get_box() {
    IndexBox b;
    for (int k = 0; k < 3; ++k) b.lo[k] = get<std::int32_t>();
    for (int k = 0; k < 3; ++k) b.hi[k] = get<std::int32_t>();
    return b;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) {
    if (pos_ + n > bytes_.size()) throw std::runtime_error("cache: truncated");
  }
  std::string bytes_;
  std::size_t pos_ = 0;
};

void put_patch(ByteWriter& w, const Patch& p) {
  w.put<std::int32_t>(static_cast<std::int32_t>(p.kind));
  w.put<std::int32_t>(p.level);
  w.put<std::int32_t>(p.mesh_level);
  w.put<std::int32_t>(p.m);
  w.put<std::int64_t>(p.center);
  w.put_box(p.box);
  w.put<std::uint8_t>(p.clipped ? 1 : 0);
}

Patch get_patch(ByteReader& r) {
  Patch p;
  p.kind = static_cast<PatchKind>(r.get<std::int32_t>());
  p.level = r.get<std::int32_t>();
  p.mesh_level = r.get<std::int32_t>();
  p.m = r.get<std::int32_t>();
  p.center = r.get<std::int64_t>();
  p.box = r.get_box();
  p.clipped = r.get<std::uint8_t>() != 0;
  return p;
}

void put_fine(ByteWriter& w, const FineFunction& f) {
  w.put_box(f.node_box);
  w.put_vec(f.values);
}

FineFunction get_fine(ByteReader& r) {
  FineFunction f;
  f.node_box = r.get_box();
  f.values = r.get_vec();
  return f;
}

void put_q0(ByteWriter& w, const Q0Function& f) {
  w.put<std::int32_t>(f.exponent);
  w.put_box(f.elem_box);
  w.put_vec(f.values);
}

Q0Function get_q0(ByteReader& r) {
  Q0Function f;
  f.exponent = r.get<std::int32_t>();
  f.elem_box = r.get_box();
  f.values = r.get_vec();
  return f;
}

// key over everything that shapes the basis besides the coefficient values
std::uint64_t structural_key(const ExperimentConfig& cfg) {
  json j = {{"dimension", cfg.dimension},
            {"coarse_exponent", cfg.coarse_exponent},
            {"levels", cfg.levels},
            {"fine_exponent", cfg.fine_exponent},
            {"m", cfg.m},
            {"delta_s", cfg.delta_s},
            {"method", cfg.method},
            {"restrict_rows", cfg.restrict_rows}};
  const std::string text = j.dump();
  return fnv1a(text.data(), text.size());
}

std::string serialize_basis(const HierarchicalBasis& basis, std::uint64_t key,
                            std::uint64_t fingerprint) {
  ByteWriter w;
  for (char c : kCacheMagic) w.put<char>(c);
  w.put<std::uint64_t>(key);
  w.put<std::uint64_t>(fingerprint);
  w.put<std::int64_t>(static_cast<std::int64_t>(basis.slod_levels.size()));
  for (const auto& lvl : basis.slod_levels) {
    w.put<std::int32_t>(lvl.level);
    w.put<std::int32_t>(lvl.options.m);
    w.put<double>(lvl.options.delta_s);
    w.put<std::int32_t>(static_cast<std::int32_t>(lvl.options.mode));
    w.put<std::int64_t>(static_cast<std::int64_t>(lvl.functions.size()));
    for (const auto& f : lvl.functions) {
      w.put<std::int32_t>(f.level);
      w.put<std::int64_t>(f.center);
      put_patch(w, f.patch);
      put_fine(w, f.values);
      put_q0(w, f.companion);
      put_q0(w, f.projection);
      w.put<double>(f.unnorm_scale);
      w.put<double>(f.boundary_residual);
      w.put<std::int32_t>(f.initial_rank);
      w.put<std::int32_t>(f.kept_rank);
      w.put<double>(f.stability_deviation);
    }
  }
  w.put<std::int64_t>(static_cast<std::int64_t>(basis.levels.size()));
  for (const auto& lvl : basis.levels) {
    w.put<std::int32_t>(lvl.level);
    w.put<std::int64_t>(static_cast<std::int64_t>(lvl.functions.size()));
    for (const auto& f : lvl.functions) {
      w.put<std::int32_t>(f.level);
      w.put<std::int64_t>(f.parent);
      w.put<std::int64_t>(f.target_child);
      put_patch(w, f.patch);
      w.put_ivec(f.support_set);
      w.put_vec(f.coeffs_raw);
      w.put_vec(f.coeffs);
      w.put<double>(f.lsq_residual);
      w.put<double>(f.unnorm_scale);
      put_fine(w, f.values);
      put_q0(w, f.companion);
      put_q0(w, f.pi_raw);
    }
  }
  return w.take();
}

std::optional<HierarchicalBasis> deserialize_basis(std::string bytes, std::uint64_t key,
                                                   std::uint64_t fingerprint) {
  try {
    ByteReader r(std::move(bytes));
    for (char c : kCacheMagic)
      if (r.get<char>() != c) return std::nullopt;
    if (r.get<std::uint64_t>() != key) return std::nullopt;
    if (r.get<std::uint64_t>() != fingerprint) return std::nullopt;
    HierarchicalBasis basis;
    const auto n_slod = r.get<std::int64_t>();
    basis.slod_levels.resize(static_cast<std::size_t>(n_slod));
    for (auto& lvl : basis.slod_levels) {
      lvl.level = r.get<std::int32_t>();
      lvl.options.m = r.get<std::int32_t>();
      lvl.options.delta_s = r.get<double>();
      lvl.options.mode = static_cast<StabilizationMode>(r.get<std::int32_t>());
      lvl.functions.resize(static_cast<std::size_t>(r.get<std::int64_t>()));
      for (auto& f : lvl.functions) {
        f.level = r.get<std::int32_t>();
        f.center = r.get<std::int64_t>();
        f.patch = get_patch(r);
        f.values = get_fine(r);
        f.companion = get_q0(r);
        f.projection = get_q0(r);
        f.unnorm_scale = r.get<double>();
        f.boundary_residual = r.get<double>();
        f.initial_rank = r.get<std::int32_t>();
        f.kept_rank = r.get<std::int32_t>();
        f.stability_deviation = r.get<double>();
      }
    }
    const auto n_levels = r.get<std::int64_t>();
    basis.levels.resize(static_cast<std::size_t>(n_levels));
    for (auto& lvl : basis.levels) {
      lvl.level = r.get<std::int32_t>();
      lvl.functions.resize(static_cast<std::size_t>(r.get<std::int64_t>()));
      for (auto& f : lvl.functions) {
        f.level = r.get<std::int32_t>();
        f.parent = r.get<std::int64_t>();
        f.target_child = r.get<std::int64_t>();
        f.patch = get_patch(r);
        f.support_set = r.get_ivec();
        f.coeffs_raw = r.get_vec();
        f.coeffs = r.get_vec();
        f.lsq_residual = r.get<double>();
        f.unnorm_scale = r.get<double>();
        f.values = get_fine(r);
        f.companion = get_q0(r);
        f.pi_raw = get_q0(r);
      }
    }
    if (!r.done()) return std::nullopt;
    return basis;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

HierarchicalBasis obtain_basis(const ExperimentConfig& cfg, const MeshHierarchy& mesh,
                               const CoefficientField& coeff, const CommonOptions& opts) {
  const std::uint64_t key = structural_key(cfg);
  const std::uint64_t fp = coeff.fingerprint();
  fs::path cache_file;
  if (!opts.cache_dir.empty()) {
    cache_file = fs::path(opts.cache_dir) /
                 ("basis-" + hex64(key) + "-" + hex64(fp) + ".bin");
    std::ifstream in(cache_file, std::ios::binary);
    if (in) {
      std::ostringstream bytes;
      bytes << in.rdbuf();
      auto cached = deserialize_basis(bytes.str(), key, fp);
      if (cached) {
        log(opts, "basis cache hit: " + cache_file.string());
        cached->mesh = mesh;
        cached->options = cfg.make_options();
        return std::move(*cached);
      }
      log(opts, "basis cache entry invalid, rebuilding: " + cache_file.string());
    }
  }
  log(opts, "building basis");
  HierarchicalBasis basis = build_basis(mesh, coeff, cfg.make_options(), cfg.effective_threads());
  if (!opts.cache_dir.empty()) {
    atomic_write_file(cache_file, serialize_basis(basis, key, fp));
    log(opts, "basis cached: " + cache_file.string());
  }
  return basis;
}

// ---------------------------------------------------------------------------
// subcommands

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

json quality_to_json(const HierarchicalBasis& basis, const BasisQuality& q) {
  json counts = json::array();
  for (const auto& lvl : basis.levels) counts.push_back(lvl.functions.size());
  return {{"function_counts", counts},
          {"zeta", q.zeta},
          {"sigma_proxy", q.sigma_proxy},
          {"lambda_min_projection", q.lambda_min_projection},
          {"gram_kappa", q.gram_kappa},
          {"gram_lambda_min", q.gram_lambda_min},
          {"gram_lambda_max", q.gram_lambda_max},
          {"max_lsq_residual", q.max_lsq_residual}};
}

void run_build_basis(const CommonOptions& opts) {
  const ExperimentConfig cfg = resolve_config(opts);
  const MeshHierarchy mesh = cfg.make_mesh();
  const CoefficientField coeff = cfg.make_coefficient();
  const HierarchicalBasis basis = obtain_basis(cfg, mesh, coeff, opts);
  const BasisQuality q = basis_quality(mesh, coeff, basis, cfg.effective_threads());

  std::cout << "basis functions per level:";
  for (const auto& lvl : basis.levels) std::cout << " " << lvl.functions.size();
  std::cout << " (total " << basis.function_count() << ")\n";
  std::cout << "zeta " << q.zeta << ", sigma_proxy " << q.sigma_proxy
            << ", max_lsq_residual " << q.max_lsq_residual << "\n";
  std::cout << "gram kappa per level:";
  for (double k : q.gram_kappa) std::cout << " " << k;
  std::cout << "\n";

  json out = quality_to_json(basis, q);
  out["config"] = json::parse(config_to_json_text(cfg));
  out["config_hash"] = hex64(config_hash(cfg));
  out["coefficient_fingerprint"] = hex64(coeff.fingerprint());
  atomic_write_file(fs::path(cfg.out_dir) / "quality.json", out.dump(2) + "\n");
  std::cout << "wrote " << (fs::path(cfg.out_dir) / "quality.json").string() << "\n";
}

void run_solve(const CommonOptions& opts) {
  const ExperimentConfig cfg = resolve_config(opts);
  const MeshHierarchy mesh = cfg.make_mesh();
  const CoefficientField coeff = cfg.make_coefficient();
  const HierarchicalBasis basis = obtain_basis(cfg, mesh, coeff, opts);
  const int threads = cfg.effective_threads();

  log(opts, "assembling stiffness");
  const BlockStiffness A = assemble_stiffness_hslod(mesh, coeff, basis, threads);
  const TruncationReport trunc = block_truncate(A);

  log(opts, "building stage " + cfg.stage);
  CompressedOperator op;
  switch (cfg.make_stage()) {
    case OperatorStage::Hat:
      op = make_operator_hat(A);
      break;
    case OperatorStage::Check:
      op = make_operator_check(A);
      break;
    case OperatorStage::Bar:
      op = cg_block_inverse(A, cfg.compression.cg_iterations, cfg.compression.cg_rtol,
                            trunc.lambda_min, threads);
      break;
    case OperatorStage::Epsilon:
      op = threshold(cg_block_inverse(A, cfg.compression.cg_iterations,
                                      cfg.compression.cg_rtol, trunc.lambda_min, threads),
                     cfg.compression.epsilon);
      break;
  }

  const DenseVec load = cfg.rhs.smooth
                            ? fine_load(mesh, smooth_rhs(mesh.dim))
                            : fine_load_q0(mesh, piecewise_rhs(mesh.dim, cfg.rhs.piecewise_exponent,
                                                               cfg.rhs.seed));
  const ApplyResult result = apply_operator(mesh, basis, op, load, threads);

  const fs::path dir(cfg.out_dir);
  {
    std::ostringstream os;
    os << "function,level,value\n";
    std::int64_t g = 0;
    for (const auto& lvl : basis.levels)
      for (std::size_t i = 0; i < lvl.functions.size(); ++i, ++g)
        os << g << "," << lvl.level << "," << fmt17(result.coeffs[g]) << "\n";
    atomic_write_file(dir / "coefficients.csv", os.str());
  }
  {
    std::ostringstream os;
    os << "node,value\n";
    for (Eigen::Index i = 0; i < result.u.values.size(); ++i)
      os << i << "," << fmt17(result.u.values[i]) << "\n";
    atomic_write_file(dir / "solution.csv", os.str());
  }
  std::cout << "stage " << cfg.stage << ": coefficient norm " << result.coeffs.norm()
            << ", solution energy norm " << energy_norm(mesh, coeff, result.u) << "\n";
  std::cout << "wrote " << (dir / "solution.csv").string() << " and "
            << (dir / "coefficients.csv").string() << "\n";
}

void run_compress(const CommonOptions& opts, bool export_matrices) {
  ExperimentConfig cfg = resolve_config(opts);
  const MeshHierarchy mesh = cfg.make_mesh();
  const CoefficientField coeff = cfg.make_coefficient();
  const HierarchicalBasis basis = obtain_basis(cfg, mesh, coeff, opts);
  const int threads = cfg.effective_threads();

  log(opts, "assembling stiffness");
  const BlockStiffness A = assemble_stiffness_hslod(mesh, coeff, basis, threads);
  const TruncationReport trunc = block_truncate(A);
  const CompressedOperator check = make_operator_check(A);
  const CompressedOperator bar =
      cg_block_inverse(A, cfg.compression.cg_iterations, cfg.compression.cg_rtol,
                       trunc.lambda_min, threads);
  const CompressedOperator eps = threshold(bar, cfg.compression.epsilon);

  const fs::path dir(cfg.out_dir);
  {
    std::ostringstream os;
    os << "level,H,kappa,lambda_min,lambda_max\n";
    for (std::size_t l = 0; l < trunc.lambda_min.size(); ++l) {
      const double kappa = trunc.lambda_min[l] > 0 ? trunc.lambda_max[l] / trunc.lambda_min[l] : 0;
      os << l << "," << fmt17(mesh.H(static_cast<int>(l))) << "," << fmt17(kappa) << ","
         << fmt17(trunc.lambda_min[l]) << "," << fmt17(trunc.lambda_max[l]) << "\n";
    }
    atomic_write_file(dir / "blocks.csv", os.str());
  }
  {
    std::ostringstream os;
    os << "stage,nnz\n";
    os << "hat," << A.full.stored_nonzeros() << "\n";
    os << "check," << check.stored_nonzeros(A) << "\n";
    os << "bar," << bar.stored_nonzeros(A) << "\n";
    os << "epsilon," << eps.stored_nonzeros(A) << "\n";
    atomic_write_file(dir / "nnz.csv", os.str());
  }
  json out = {{"config_hash", hex64(config_hash(cfg))},
              {"max_off_block", A.max_off_block()},
              {"delta_norm", trunc.delta_norm},
              {"coefficient_bound_factor", trunc.coefficient_bound_factor},
              {"energy_bound_factor", trunc.energy_bound_factor},
              {"delta_cg_surrogate", bar.delta_cg_surrogate},
              {"n_epsilon", eps.n_epsilon}};
  atomic_write_file(dir / "compress.json", out.dump(2) + "\n");

  if (export_matrices) {
    write_matrix_market(A.full, (dir / "stiffness_hat.mtx").string());
    write_matrix_market(A.check_matrix(), (dir / "stiffness_check.mtx").string());
    write_matrix_market_general(bar.s_matrix(), (dir / "inverse_bar.mtx").string());
    write_matrix_market_general(eps.s_matrix(), (dir / "inverse_epsilon.mtx").string());
  }
  std::cout << "order " << A.size() << ", nnz hat " << A.full.stored_nonzeros()
            << ", check " << check.stored_nonzeros(A) << ", bar " << bar.stored_nonzeros(A)
            << ", epsilon " << eps.stored_nonzeros(A) << "\n";
  std::cout << "cross-level remainder norm " << trunc.delta_norm << ", cg surrogate "
            << bar.delta_cg_surrogate << "\n";
  std::cout << "wrote blocks.csv, nnz.csv, compress.json in " << dir.string() << "\n";
}

void run_experiment_cmd(const CommonOptions& opts) {
  const ExperimentConfig cfg = resolve_config(opts);
  log(opts, "running experiment into " + cfg.out_dir);
  const RunReport report = run_experiment(cfg);
  std::cout << "config hash " << hex64(report.hash) << ", coefficient "
            << report.coefficient_fingerprint << "\n";
  for (const auto& e : report.errors) {
    std::cout << "rel energy error (" << e.rhs_name << "):";
    for (double v : e.rel_energy) std::cout << " " << v;
    std::cout << "\n";
  }
  std::cout << "stage nnz hat/check/bar/epsilon:";
  for (auto n : report.stage_nonzeros) std::cout << " " << n;
  std::cout << "\n";
  if (report.chain_available)
    std::cout << "stage-error bounds " << (report.chain.all_within_bounds() ? "hold" : "VIOLATED")
              << " (hat-check " << report.chain.hat_check_measured << " <= "
              << report.chain.hat_check_bound << ", check-bar " << report.chain.check_bar_measured
              << " <= " << report.chain.check_bar_bound << ", bar-eps "
              << report.chain.bar_eps_measured << " <= " << report.chain.bar_eps_bound << ")\n";
  std::cout << "timings: basis " << report.build_seconds << " s, stiffness "
            << report.stiffness_seconds << " s, solve " << report.solve_seconds << " s\n";
  std::cout << "artifacts in " << cfg.out_dir << "\n";
}

void run_export(const CommonOptions& opts, const std::string& matrix, std::string output) {
  const ExperimentConfig cfg = resolve_config(opts);
  const MeshHierarchy mesh = cfg.make_mesh();
  const CoefficientField coeff = cfg.make_coefficient();
  const HierarchicalBasis basis = obtain_basis(cfg, mesh, coeff, opts);
  const int threads = cfg.effective_threads();
  const BlockStiffness A = assemble_stiffness_hslod(mesh, coeff, basis, threads);

  if (output.empty())
    output = (fs::path(cfg.out_dir) / (matrix + "_" + cfg.stage + ".mtx")).string();

  const OperatorStage stage = cfg.make_stage();
  if (matrix == "stiffness") {
    if (stage == OperatorStage::Hat)
      write_matrix_market(A.full, output);
    else if (stage == OperatorStage::Check)
      write_matrix_market(A.check_matrix(), output);
    else
      throw ConfigError("--matrix stiffness supports stages hat and check");
  } else if (matrix == "inverse") {
    if (stage != OperatorStage::Bar && stage != OperatorStage::Epsilon)
      throw ConfigError("--matrix inverse supports stages bar and epsilon");
    const TruncationReport trunc = block_truncate(A);
    const CompressedOperator bar =
        cg_block_inverse(A, cfg.compression.cg_iterations, cfg.compression.cg_rtol,
                         trunc.lambda_min, threads);
    if (stage == OperatorStage::Bar)
      write_matrix_market_general(bar.s_matrix(), output);
    else
      write_matrix_market_general(threshold(bar, cfg.compression.epsilon).s_matrix(), output);
  } else {
    throw ConfigError("--matrix must be stiffness or inverse");
  }
  std::cout << "wrote " << output << "\n";
}

// ---------------------------------------------------------------------------
// verify: built-in invariant suite

struct VerifyState {
  int passed = 0;
  std::vector<std::string> failed;

  void check(const std::string& name, bool ok, const std::string& detail = "") {
    if (ok) {
      ++passed;
      std::cout << "[ok]   " << name << "\n";
    } else {
      failed.push_back(name);
      std::cout << "[FAIL] " << name << (detail.empty() ? "" : ": " + detail) << "\n";
    }
  }
};

ExperimentConfig tiny_config(const std::string& out_dir) {
  ExperimentConfig cfg;
  cfg.dimension = 1;
  cfg.coarse_exponent = 1;
  cfg.levels = 1;
  cfg.fine_exponent = 5;
  cfg.coefficient.kind = "random";
  cfg.coefficient.alpha = 1.0;
  cfg.coefficient.beta = 10.0;
  cfg.coefficient.seed = 3;
  cfg.m = {10};
  cfg.rhs.smooth = true;
  cfg.rhs.piecewise = false;
  cfg.threads = 1;
  cfg.out_dir = out_dir;
  return cfg;
}

void run_verify_invariants(const CommonOptions& opts) {
  VerifyState v;
  const fs::path scratch =
      opts.out_dir.empty() ? fs::path("out") / "verify" : fs::path(opts.out_dir);

  {  // lexicographic index round trip
    bool ok = true;
    Rng rng(11);
    for (int dim = 1; dim <= 3 && ok; ++dim) {
      const int n = 16;
      std::int64_t total = 1;
      for (int k = 0; k < dim; ++k) total *= n;
      for (int trial = 0; trial < 200; ++trial) {
        const auto idx = static_cast<std::int64_t>(rng.uniform01() * static_cast<double>(total));
        if (lex_index(dim, n, coords_of(dim, n, idx)) != idx) {
          ok = false;
          break;
        }
      }
    }
    v.check("lexicographic index round trip", ok);
  }

  {  // patch layer counts: interior (2m+1)^d, corner clipped
    const MeshHierarchy mesh = build_hierarchy(2, 2, 1, 5);
    const std::int64_t interior_center = lex_index(2, 8, {4, 4, 0});
    const Patch inner = build_patch(mesh, PatchKind::Lod, 1, interior_center, 1);
    const Patch corner = build_patch(mesh, PatchKind::Lod, 1, 0, 1);
    v.check("patch layer counts",
            inner.box.count(2) == 9 && !inner.clipped && corner.box.count(2) == 4 &&
                corner.clipped);
  }

  {  // element-average projection: contraction and Poincare bound
    const MeshHierarchy mesh = build_hierarchy(2, 1, 1, 4);
    Rng rng(5);
    bool ok = true;
    std::string detail;
    for (int trial = 0; trial < 50 && ok; ++trial) {
      FineFunction u;
      for (int k = 0; k < mesh.dim; ++k) u.node_box.hi[k] = mesh.fine_nodes_per_axis() - 1;
      u.values = DenseVec::Zero(u.node_box.count(mesh.dim));
      for_each_in_box(mesh.dim, u.node_box, [&](const std::array<int, 3>& p) {
        bool boundary = false;
        for (int k = 0; k < mesh.dim; ++k)
          if (p[k] == 0 || p[k] == mesh.fine_nodes_per_axis() - 1) boundary = true;
        if (!boundary) u.values[u.node_box.offset(mesh.dim, p)] = rng.symmetric();
      });
      for (int level = 0; level <= mesh.levels && ok; ++level) {
        const Q0Function pi = project_q0(mesh, level, u);
        double vol = 1.0;
        for (int k = 0; k < mesh.dim; ++k) vol *= mesh.H(level);
        const double pi_norm = std::sqrt(vol * pi.values.squaredNorm());
        const double u_norm = l2_norm(mesh, u);
        const double rem = std::sqrt(std::max(0.0, u_norm * u_norm - pi_norm * pi_norm));
        const double bound = mesh.H(level) / std::numbers::pi * h1_seminorm(mesh, u);
        if (pi_norm > u_norm * (1 + 1e-12) || rem > bound * (1 + 1e-12)) {
          ok = false;
          detail = "level " + std::to_string(level);
        }
      }
    }
    v.check("element-average projection inequalities", ok, detail);
  }

  ExperimentConfig cfg = tiny_config((scratch / "run").string());
  const MeshHierarchy mesh = cfg.make_mesh();
  const CoefficientField coeff = cfg.make_coefficient();
  const HierarchicalBasis basis = build_basis(mesh, coeff, cfg.make_options(), 1);
  const BlockStiffness A = assemble_stiffness_hslod(mesh, coeff, basis, 1);

  {  // full patches: cross-level stiffness entries vanish
    v.check("cross-level orthogonality on full patches", A.max_off_block() <= 1e-8,
            "max off-block " + std::to_string(A.max_off_block()));
  }

  {  // resolved piecewise data reproduced through the blockwise solve
    const Q0Function f = piecewise_rhs(mesh.dim, mesh.level_exponent(mesh.levels), 77);
    const DenseVec load = fine_load_q0(mesh, f);
    const CompressedOperator check = make_operator_check(A);
    const ApplyResult res = apply_operator(mesh, basis, check, load, 1);
    const GlobalFineSystem fine = make_global_fine_system(mesh, coeff);
    FineFunction ref = fine_solve(fine, load);
    FineFunction diff = res.u;
    diff.values -= ref.values;
    const double rel = energy_norm(mesh, coeff, diff) / energy_norm(mesh, coeff, ref);
    v.check("resolved data reproduced by blockwise solve", rel <= 1e-8,
            "relative energy error " + std::to_string(rel));
  }

  {  // basis cache serialization round trip
    const std::uint64_t key = structural_key(cfg);
    const std::uint64_t fp = coeff.fingerprint();
    auto restored = deserialize_basis(serialize_basis(basis, key, fp), key, fp);
    bool ok = restored.has_value() && restored->levels.size() == basis.levels.size();
    if (ok)
      for (std::size_t l = 0; l < basis.levels.size(); ++l) {
        if (restored->levels[l].functions.size() != basis.levels[l].functions.size()) {
          ok = false;
          break;
        }
        for (std::size_t i = 0; i < basis.levels[l].functions.size(); ++i) {
          const auto& a = basis.levels[l].functions[i];
          const auto& b = restored->levels[l].functions[i];
          if (a.values.values != b.values.values || a.coeffs != b.coeffs ||
              !(a.patch.box == b.patch.box)) {
            ok = false;
            break;
          }
        }
      }
    v.check("basis cache round trip", ok);
  }

  {  // config serialization round trip preserves the hash
    const ExperimentConfig back = config_from_json_text(config_to_json_text(cfg));
    v.check("config round trip preserves hash", config_hash(back) == config_hash(cfg));
  }

  {  // identical configs give byte-identical CSV artifacts
    ExperimentConfig a = tiny_config((scratch / "a").string());
    ExperimentConfig b = tiny_config((scratch / "b").string());
    run_experiment(a);
    run_experiment(b);
    bool ok = true;
    for (const char* name : {"errors.csv", "blocks.csv", "nnz.csv"}) {
      std::ifstream fa(scratch / "a" / name, std::ios::binary);
      std::ifstream fb(scratch / "b" / name, std::ios::binary);
      std::ostringstream sa, sb;
      sa << fa.rdbuf();
      sb << fb.rdbuf();
      if (!fa || !fb || sa.str() != sb.str()) ok = false;
    }
    v.check("byte-identical artifacts on re-run", ok);
  }

  std::cout << "invariants: " << v.passed << " passed, " << v.failed.size() << " failed\n";
  if (!v.failed.empty())
    throw NumericalError("verify", std::to_string(v.failed.size()) + " invariant check(s) failed");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hierarchical superlocalized multiscale solver"};
  app.require_subcommand(1);

  CommonOptions opts;
  opts.cache_dir = default_cache_dir();

  auto* build = app.add_subcommand("build-basis", "build the hierarchical basis, report quality");
  add_common_options(build, opts);

  auto* solve = app.add_subcommand("solve", "solve the configured problem at one operator stage");
  add_common_options(solve, opts);
  solve->add_option("--stage", opts.stage, "operator stage: hat | check | bar | epsilon");

  bool export_matrices = false;
  auto* compress = app.add_subcommand("compress", "build all operator stages, report sparsity");
  add_common_options(compress, opts);
  compress->add_flag("--export-matrices", export_matrices, "also write MatrixMarket files");

  auto* experiment = app.add_subcommand("experiment", "full study: errors, conditioning, sparsity");
  add_common_options(experiment, opts);

  std::string matrix = "stiffness";
  std::string output;
  auto* exp_cmd = app.add_subcommand("export", "write one operator matrix as MatrixMarket");
  add_common_options(exp_cmd, opts);
  exp_cmd->add_option("--matrix", matrix, "stiffness (stages hat|check) or inverse (bar|epsilon)");
  exp_cmd->add_option("--stage", opts.stage, "operator stage for the export");
  exp_cmd->add_option("--output", output, "output file (default <out>/<matrix>_<stage>.mtx)");

  std::string suite = "invariants";
  auto* verify = app.add_subcommand("verify", "run the built-in invariant suite");
  add_common_options(verify, opts);
  verify->add_option("--suite", suite, "suite name (invariants)");

  build->callback([&] { run_build_basis(opts); });
  solve->callback([&] { run_solve(opts); });
  compress->callback([&] { run_compress(opts, export_matrices); });
  experiment->callback([&] { run_experiment_cmd(opts); });
  exp_cmd->callback([&] { run_export(opts, matrix, output); });
  verify->callback([&] {
    if (suite != "invariants") throw ConfigError("unknown suite \"" + suite + "\"");
    run_verify_invariants(opts);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
