#include "gpmax/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <json.hpp>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "gpmax/error.hpp"
#include "gpmax/kacrice.hpp"
#include "gpmax/rng.hpp"

namespace gpmax {

namespace {

using nlohmann::json;

constexpr std::uint64_t kCellTag = 0xCE11ull;
constexpr std::uint64_t kReplicateTag = 0x4E9ull;
constexpr std::uint64_t kPalmTag = 0x9A17ull;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::optional<double> to_double(const std::string& s) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size() || !std::isfinite(v)) return std::nullopt;
    return v;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

std::optional<long long> to_integer(const std::string& s) {
  try {
    std::size_t pos = 0;
    const long long v = std::stoll(s, &pos);
    if (pos != s.size()) return std::nullopt;
    return v;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

std::optional<std::uint64_t> to_u64(const std::string& s) {
  try {
    if (s.empty() || s[0] == '-') return std::nullopt;
    std::size_t pos = 0;
    const unsigned long long v = std::stoull(s, &pos, 0);
    if (pos != s.size()) return std::nullopt;
    return v;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

// "name:value" rules such as sqrt_log:2.
std::optional<double> rule_value(const std::string& s, const std::string& name) {
  const auto colon = s.find(':');
  if (colon == std::string::npos || trim(s.substr(0, colon)) != name) return std::nullopt;
  return to_double(trim(s.substr(colon + 1)));
}

bool known_kernel(const std::string& id) {
  return id == "bargmann-fock" || id == "bf" || id == "random-plane-wave" || id == "rpw" ||
         id == "monochromatic-sphere" || id == "gaussian";
}

FieldRealization sample_for_cell(const KernelModel& kernel, const CellSpec& cell, double grid_factor,
                                 std::uint64_t seed) {
  const double half = 0.5 * cell.window_side;
  switch (kernel.family()) {
    case KernelFamily::kBargmannFock:
      return sample_bf_series(seed, Box2::centered(cell.window_side));
    case KernelFamily::kRandomPlaneWave:
      return sample_rpw_bessel(seed, half);
    default: {
      const double h = grid_factor / std::max(cell.u, 1.0);
      const GridSpec spec = GridSpec::anchored(Box2::centered(cell.window_side), h);
      CirculantOptions opts;
      opts.pad_length = std::isfinite(kernel.decay_radius()) ? kernel.decay_radius() : -1.0;
      return sample_stationary_grid(kernel, spec, seed, opts);
    }
  }
}

// Runs body(i) for i in [0, n) on `threads` workers; the first exception is rethrown.
template <class F>
void parallel_for(long n, int threads, F&& body) {
  if (threads <= 1 || n <= 1) {
    for (long i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<long> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (int t = 0; t < std::min<long>(threads, n); ++t) {
    pool.emplace_back([&] {
      for (long i = next++; i < n; i = next++) {
        try {
          body(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

json tv_json(const std::optional<TvResult>& tv) {
  if (!tv) return nullptr;
  return json{{"estimate", tv->estimate}, {"ci95", {tv->ci_low, tv->ci_high}}, {"lambda", tv->lambda}};
}

json config_json(const ExperimentConfig& cfg) {
  json j;
  j["schema_version"] = cfg.schema_version;
  j["kernel"] = cfg.kernel;
  j["kernel_params"] = cfg.kernel_params;
  j["dimension"] = cfg.dimension;
  j["levels"] = cfg.levels;
  j["level_rule"] = cfg.level_rule_c ? json("sqrt_log:" + std::to_string(*cfg.level_rule_c)) : json(nullptr);
  j["windows"] = cfg.windows;
  j["window_rule"] = cfg.window_rule_count
                         ? json("expected_count:" + std::to_string(*cfg.window_rule_count))
                         : json(nullptr);
  j["replicates"] = cfg.replicates;
  j["seed"] = cfg.seed ? json(*cfg.seed) : json(nullptr);
  j["grid_factor"] = cfg.grid_factor;
  j["tau_policy"] = cfg.tau_policy;
  j["output"] = cfg.output;
  j["threads"] = cfg.threads;
  j["palm_pairs"] = cfg.palm_pairs;
  return j;
}

}  // namespace

std::vector<std::pair<std::string, std::string>> read_key_values(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIo, "cannot read config file '" + path + "'");
  std::vector<std::pair<std::string, std::string>> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      kv.emplace_back("", "line " + std::to_string(lineno) + ": expected 'key = value'");
      continue;
    }
    kv.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return kv;
}

ValidationReport parse_config(const std::vector<std::pair<std::string, std::string>>& kv,
                              ExperimentConfig& cfg) {
  ValidationReport rep;
  auto err = [&](const std::string& f, const std::string& m) { rep.errors.push_back({f, m}); };
  auto warn = [&](const std::string& f, const std::string& m) { rep.warnings.push_back({f, m}); };
  std::map<std::string, int> seen;
  for (const auto& [key, value] : kv) {
    if (key.empty()) {
      err("syntax", value);
      continue;
    }
    if (++seen[key] > 1) err(key, "duplicate key");
    if (key == "schema_version") {
      const auto v = to_integer(value);
      if (!v) err(key, "must be an integer");
      else if (*v != kSchemaVersion) err(key, "unsupported schema version " + value);
      else cfg.schema_version = static_cast<int>(*v);
    } else if (key == "kernel") {
      cfg.kernel = value;
      if (!known_kernel(value)) err(key, "unknown kernel id '" + value + "'");
    } else if (key == "kernel_params") {
      cfg.kernel_params.clear();
      for (const auto& item : split_list(value)) {
        const auto v = to_double(item);
        if (!v) err(key, "'" + item + "' is not a number");
        else cfg.kernel_params.push_back(*v);
      }
    } else if (key == "dimension") {
      const auto v = to_integer(value);
      if (!v || *v < 2) err(key, "must be an integer >= 2");
      else cfg.dimension = static_cast<int>(*v);
    } else if (key == "levels") {
      cfg.levels.clear();
      for (const auto& item : split_list(value)) {
        const auto v = to_double(item);
        if (!v || *v <= 0.0) err(key, "'" + item + "' is not a positive number");
        else cfg.levels.push_back(*v);
      }
      if (cfg.levels.empty()) err(key, "empty list");
    } else if (key == "level_rule") {
      const auto c = rule_value(value, "sqrt_log");
      if (!c || *c <= 0.0) err(key, "expected 'sqrt_log:<c>' with c > 0");
      else cfg.level_rule_c = *c;
    } else if (key == "windows") {
      cfg.windows.clear();
      for (const auto& item : split_list(value)) {
        const auto v = to_double(item);
        if (!v || *v <= 0.0) err(key, "'" + item + "' is not a positive number");
        else cfg.windows.push_back(*v);
      }
      if (cfg.windows.empty()) err(key, "empty list");
    } else if (key == "window_rule") {
      const auto c = rule_value(value, "expected_count");
      if (!c || *c <= 0.0) err(key, "expected 'expected_count:<lambda>' with lambda > 0");
      else cfg.window_rule_count = *c;
    } else if (key == "replicates") {
      const auto v = to_integer(value);
      if (!v || *v < 1) err(key, "must be an integer >= 1");
      else cfg.replicates = static_cast<long>(*v);
    } else if (key == "seed") {
      const auto v = to_u64(value);
      if (!v) err(key, "must be a nonnegative 64-bit integer");
      else cfg.seed = *v;
    } else if (key == "grid_factor") {
      const auto v = to_double(value);
      if (!v || *v <= 0.0) err(key, "must be a positive number");
      else cfg.grid_factor = *v;
    } else if (key == "tau_policy") {
      if (value != "radius" && value != "none") err(key, "must be 'radius' or 'none'");
      else cfg.tau_policy = value;
    } else if (key == "output") {
      if (value.empty()) err(key, "must not be empty");
      else cfg.output = value;
    } else if (key == "threads") {
      const auto v = to_integer(value);
      if (!v || *v < 0) err(key, "must be an integer >= 0 (0 = all cores)");
      else cfg.threads = static_cast<int>(*v);
    } else if (key == "palm_pairs") {
      const auto v = to_integer(value);
      if (!v || *v < 0) err(key, "must be an integer >= 0");
      else cfg.palm_pairs = static_cast<long>(*v);
    } else {
      err(key, "unknown key");
    }
  }
  if (!seen.count("seed")) err("seed", "missing required field 'seed' (no entropy default)");
  if (!seen.count("replicates")) err("replicates", "missing required field 'replicates'");
  if (!seen.count("schema_version")) warn("schema_version", "not given; assuming 1");
  const bool have_levels = !cfg.levels.empty(), have_windows = !cfg.windows.empty();
  if (have_levels && cfg.level_rule_c) err("level_rule", "give either levels or level_rule, not both");
  if (have_windows && cfg.window_rule_count) err("window_rule", "give either windows or window_rule, not both");
  if (!have_levels && !cfg.level_rule_c) err("levels", "missing: give levels or level_rule");
  if (!have_windows && !cfg.window_rule_count) err("windows", "missing: give windows or window_rule");
  if (cfg.level_rule_c && cfg.window_rule_count) {
    err("window_rule", "window_rule needs explicit levels; level_rule needs explicit windows");
  }
  if (cfg.dimension != 2) err("dimension", "experiments are implemented for dimension 2");
  if (cfg.palm_pairs > 0 && cfg.kernel != "bargmann-fock" && cfg.kernel != "bf") {
    err("palm_pairs", "Palm pairs are implemented for the Bargmann-Fock kernel");
  }
  if (cfg.kernel == "gaussian" && cfg.kernel_params.size() != 1) {
    err("kernel_params", "gaussian kernel needs one parameter (length)");
  }
  if (rep.ok()) {
    try {
      for (const auto& c : expand_cells(cfg)) {
        if (c.u > 2.0 * std::sqrt(std::log(c.window_side))) {
          std::ostringstream m;
          m << "u = " << c.u << ", R = " << c.window_side
            << " outside theorem window u <= 2 sqrt(log R) = "
            << (c.window_side > 1.0 ? 2.0 * std::sqrt(std::log(c.window_side)) : 0.0);
          warn("levels", m.str());
        }
      }
    } catch (const Error& e) {
      err("kernel", e.what());
    }
  }
  return rep;
}

ValidationReport validate_config(const std::string& path) {
  ExperimentConfig cfg;
  return parse_config(read_key_values(path), cfg);
}

int resolve_threads(int configured) {
  if (const char* env = std::getenv("GP_THREADS")) {
    const auto v = to_integer(trim(env));
    if (v && *v >= 1) return static_cast<int>(*v);
  }
  if (configured >= 1) return configured;
  return std::max(1u, std::thread::hardware_concurrency());
}

std::vector<CellSpec> expand_cells(const ExperimentConfig& cfg) {
  if (!cfg.seed) fail(ErrorCode::kConfig, "seed missing");
  const KernelModel kernel = KernelModel::from_id(cfg.kernel, cfg.dimension, cfg.kernel_params);
  std::vector<std::pair<double, double>> pairs;
  if (!cfg.levels.empty() && !cfg.windows.empty()) {
    for (double u : cfg.levels)
      for (double r : cfg.windows) pairs.emplace_back(u, r);
  } else if (cfg.level_rule_c) {
    for (double r : cfg.windows) {
      if (!(r > 1.0)) fail(ErrorCode::kConfig, "level_rule needs windows > 1");
      pairs.emplace_back(*cfg.level_rule_c * std::sqrt(std::log(r)), r);
    }
  } else if (cfg.window_rule_count) {
    for (double u : cfg.levels) {
      const double density = expected_maxima_density(kernel, u).density;
      pairs.emplace_back(u, std::sqrt(*cfg.window_rule_count / density));
    }
  }
  std::vector<CellSpec> cells;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    cells.push_back({static_cast<int>(i), pairs[i].first, pairs[i].second,
                     derive_seed(*cfg.seed, {kCellTag, i})});
  }
  return cells;
}

CellResult run_cell(const ExperimentConfig& cfg, const CellSpec& cell, int threads) {
  const auto start = std::chrono::steady_clock::now();
  CellResult res;
  res.cell = cell;
  const KernelModel kernel = KernelModel::from_id(cfg.kernel, cfg.dimension, cfg.kernel_params);
  const double u = cell.u, side = cell.window_side;
  const double mu = mu_scaling(u, 2);
  const bool unit_box_fits = side / mu >= 1.0;
  const Box2 unit_box = Box2::centered(1.0);
  ScanOptions scan;
  scan.grid_factor = cfg.grid_factor;
  scan.window = Box2::centered(side);

  res.records.resize(cfg.replicates);
  parallel_for(cfg.replicates, threads, [&](long r) {
    ReplicateRecord& rec = res.records[r];
    rec.replicate = r;
    rec.seed = derive_seed(cell.seed, {kReplicateTag, static_cast<std::uint64_t>(r)});
    const FieldRealization f = sample_for_cell(kernel, cell, cfg.grid_factor, rec.seed);
    ScanTally tally;
    const auto maxima = find_local_maxima(f, u, scan, &tally);
    rec.count = static_cast<long>(maxima.size());
    rec.not_converged = tally.not_converged;
    const PointPattern pattern = rescale_points(maxima, u, side);
    rec.cluster_pairs = cfg.tau_policy == "radius" ? cluster_pairs(pattern, u) : 0;
    rec.unit_box_empty = std::none_of(pattern.points.begin(), pattern.points.end(),
                                      [&](const Vec2& p) { return unit_box.contains(p); });
  });

  std::vector<long> counts;
  long pairs = 0, empty = 0;
  for (const auto& rec : res.records) {
    counts.push_back(rec.count);
    pairs += rec.cluster_pairs;
    empty += rec.unit_box_empty;
  }
  const double n = static_cast<double>(counts.size());
  res.lambda_hat = std::accumulate(counts.begin(), counts.end(), 0.0) / n;
  res.kac_rice_count = expected_count(kernel, u, side * side);
  res.histogram = histogram_pmf(counts);
  if (res.lambda_hat > 0.0) res.tv_empirical = tv_to_poisson(counts, std::nullopt, cell.seed);
  res.tv_kac_rice = tv_to_poisson(counts, res.kac_rice_count, cell.seed);
  res.in_theorem_window = side > 1.0 && u <= 2.0 * std::sqrt(std::log(side));
  if (unit_box_fits) res.avoidance_unit_box = AvoidanceResult{unit_box, empty / n, std::exp(-1.0)};
  res.cluster_pair_rate = pairs / n;

  if (cfg.palm_pairs > 0) {
    std::vector<double> diffs(cfg.palm_pairs);
    parallel_for(cfg.palm_pairs, threads, [&](long p) {
      const std::uint64_t s = derive_seed(cell.seed, {kPalmTag, static_cast<std::uint64_t>(p)});
      const FieldRealization f = sample_bf_series(s, Box2::centered(side));
      const PalmPair pair = palm_couple(f, u, derive_seed(s, {kPalmTag}));
      diffs[p] = palm_count_discrepancy({pair}, u, side, scan).value;
    });
    McEstimate est;
    est.samples = cfg.palm_pairs;
    double sum = 0.0, sum_sq = 0.0;
    for (double d : diffs) {
      sum += d;
      sum_sq += d * d;
    }
    est.value = sum / cfg.palm_pairs;
    est.std_error = cfg.palm_pairs > 1
                        ? std::sqrt(std::max(0.0, sum_sq / cfg.palm_pairs - est.value * est.value) /
                                    (cfg.palm_pairs - 1))
                        : 0.0;
    res.palm_discrepancy = est;
  }
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return res;
}

std::string cell_report_json(const CellResult& r) {
  json j;
  j["schema_version"] = kSchemaVersion;
  j["cell"] = r.cell.index;
  j["u"] = r.cell.u;
  j["R"] = r.cell.window_side;
  j["mu"] = mu_scaling(r.cell.u, 2);
  j["seed"] = r.cell.seed;
  j["status"] = r.status;
  if (!r.message.empty()) j["message"] = r.message;
  j["n_replicates"] = r.records.size();
  j["lambda_hat"] = r.lambda_hat;
  j["kac_rice_expected_count"] = r.kac_rice_count;
  j["kac_rice_correction"] = "O(u^-1), constant unknown";
  j["count_histogram"] = r.histogram;
  j["tv_to_poisson"] = tv_json(r.tv_empirical);
  j["tv_to_poisson_kac_rice"] = tv_json(r.tv_kac_rice);
  j["in_theorem_window"] = r.in_theorem_window;
  // TV is shift and scale invariant, so the normalised-count distance equals the raw one.
  j["qclt"] = r.in_theorem_window ? tv_json(r.tv_empirical) : json(nullptr);
  if (r.avoidance_unit_box) {
    const auto& a = *r.avoidance_unit_box;
    j["avoidance"] = json::array({json{{"box", {a.box.x0, a.box.x1, a.box.y0, a.box.y1}},
                                       {"p_empty", a.p_empty},
                                       {"poisson", a.poisson}}});
  } else {
    j["avoidance"] = json::array();
  }
  j["cluster_pair_rate"] = r.cluster_pair_rate;
  j["tau"] = cluster_radius(r.cell.u);
  if (r.palm_discrepancy) {
    j["palm_discrepancy"] = {{"mean", r.palm_discrepancy->value},
                             {"se", r.palm_discrepancy->std_error},
                             {"pairs", r.palm_discrepancy->samples}};
  } else {
    j["palm_discrepancy"] = nullptr;
  }
  long nc = 0;
  for (const auto& rec : r.records) nc += rec.not_converged;
  j["newton_not_converged"] = nc;
  j["runtime_seconds"] = r.seconds;
  return j.dump(2);
}

std::string counts_csv(const std::vector<CellResult>& results) {
  std::ostringstream out;
  out << "cell,u,R,replicate,seed,count,cluster_pairs\n";
  out << std::setprecision(17);
  for (const auto& r : results) {
    for (const auto& rec : r.records) {
      out << r.cell.index << ',' << r.cell.u << ',' << r.cell.window_side << ',' << rec.replicate << ','
          << rec.seed << ',' << rec.count << ',' << rec.cluster_pairs << '\n';
    }
  }
  return out.str();
}

int run_experiment(const ExperimentConfig& cfg, const std::optional<std::string>& output_override) {
  const auto start = std::chrono::steady_clock::now();
  const std::filesystem::path dir = output_override.value_or(cfg.output);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorCode::kIo, "cannot create output directory '" + dir.string() + "': " + ec.message());
  const int threads = resolve_threads(cfg.threads);
  const auto cells = expand_cells(cfg);
  std::vector<CellResult> results;
  int failed = 0;
  json cell_status = json::array();
  for (const auto& cell : cells) {
    CellResult r;
    try {
      r = run_cell(cfg, cell, threads);
    } catch (const std::exception& e) {
      r = CellResult{};
      r.cell = cell;
      r.status = "failed";
      r.message = e.what();
      ++failed;
    }
    cell_status.push_back({{"cell", cell.index},
                           {"u", cell.u},
                           {"R", cell.window_side},
                           {"seed", cell.seed},
                           {"status", r.status},
                           {"message", r.message}});
    results.push_back(std::move(r));
  }
  auto write = [&](const std::string& name, const std::string& text) {
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) fail(ErrorCode::kIo, "cannot write '" + (dir / name).string() + "'");
    out << text;
  };
  write("counts.csv", counts_csv(results));
  json report;
  report["schema_version"] = kSchemaVersion;
  report["cells"] = json::array();
  for (const auto& r : results) {
    if (r.status == "ok") report["cells"].push_back(json::parse(cell_report_json(r)));
    else report["cells"].push_back({{"cell", r.cell.index}, {"status", r.status}, {"message", r.message}});
  }
  write("report.json", report.dump(2) + "\n");
  json manifest;
  manifest["schema_version"] = kSchemaVersion;
  manifest["tool"] = "gpmax";
  manifest["version"] = kVersion;
  manifest["config"] = config_json(cfg);
  manifest["threads"] = threads;
  manifest["rng"] = "philox4x32-10, streams derived by splitmix64 from (seed, cell, replicate)";
  manifest["cells"] = cell_status;
  manifest["wall_seconds"] =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write("manifest.json", manifest.dump(2) + "\n");
  return failed;
}

}  // namespace gpmax
