// Command-line front end; talks to the library only through gpmax.h.
#include <CLI11.hpp>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "gpmax/gpmax.h"

namespace {

using nlohmann::json;

struct CliError {
  int exit_code;
  std::string message;
};

void check(gpm_status s, const char* what) {
  if (s != GPM_OK) {
    const int code = (s == GPM_CONFIG || s == GPM_INVALID_ARGUMENT) ? 2 : 1;
    throw CliError{code, std::string(what) + ": " + gpm_last_error()};
  }
}

struct KernelDeleter {
  void operator()(gpm_kernel* k) const { gpm_kernel_destroy(k); }
};
struct FieldDeleter {
  void operator()(gpm_field* f) const { gpm_field_destroy(f); }
};
struct PalmDeleter {
  void operator()(gpm_palm* p) const { gpm_palm_destroy(p); }
};
struct FreeDeleter {
  void operator()(void* p) const { gpm_free(p); }
};
using KernelPtr = std::unique_ptr<gpm_kernel, KernelDeleter>;
using FieldPtr = std::unique_ptr<gpm_field, FieldDeleter>;
using PalmPtr = std::unique_ptr<gpm_palm, PalmDeleter>;

std::string take_string(char* s) {
  std::unique_ptr<char, FreeDeleter> guard(s);
  return s ? std::string(s) : std::string();
}

struct KernelArgs {
  std::string id = "bargmann-fock";
  std::vector<double> params;
};

void add_kernel_options(CLI::App* app, KernelArgs& k) {
  app->add_option("--kernel", k.id, "kernel id: bargmann-fock | random-plane-wave | gaussian")
      ->capture_default_str();
  app->add_option("--param", k.params, "kernel parameter (repeatable; gaussian: length)");
}

KernelPtr make_kernel(const KernelArgs& k) {
  gpm_kernel* raw = nullptr;
  check(gpm_kernel_create(k.id.c_str(), 2, k.params.data(), k.params.size(), &raw), "kernel");
  return KernelPtr(raw);
}

bool is_bf(const std::string& id) { return id == "bargmann-fock" || id == "bf"; }
bool is_rpw(const std::string& id) { return id == "random-plane-wave" || id == "rpw"; }

struct SampleArgs {
  std::uint64_t seed = 0;
  double window = 20.0;
  double tolerance = 1e-10;
  double grid_h = 0.25;  // lattice for grid-only kernels
  double pad = -1.0;
};

// Field on [-w/2, w/2]^2: series samplers for BF and RPW, circulant grid otherwise.
FieldPtr sample_field(const KernelArgs& k, const gpm_kernel* kernel, const SampleArgs& s) {
  gpm_field* raw = nullptr;
  const double half = 0.5 * s.window;
  if (is_bf(k.id)) {
    check(gpm_sample_bf(s.seed, gpm_box{-half, half, -half, half}, s.tolerance, &raw), "sample");
  } else if (is_rpw(k.id)) {
    check(gpm_sample_rpw(s.seed, half, s.tolerance, &raw), "sample");
  } else {
    check(gpm_sample_grid(kernel, gpm_box{-half, half, -half, half}, s.grid_h, s.pad, s.seed, &raw),
          "sample");
  }
  return FieldPtr(raw);
}

struct Lattice {
  double x0, y0, h;
  int nx, ny;
};

// Origin-anchored lattice of spacing h inside [-w/2, w/2]^2, or the field's own lattice.
Lattice output_lattice(const gpm_field* field, double window, double h) {
  gpm_field_info info{};
  check(gpm_field_info_get(field, &info), "field info");
  Lattice l{};
  if (!info.has_evaluator) {
    check(gpm_field_native_grid(field, &l.x0, &l.y0, &l.h, &l.nx, &l.ny), "grid");
    return l;
  }
  const double half = 0.5 * window;
  const long i0 = static_cast<long>(std::ceil(-half / h - 1e-9));
  const long i1 = static_cast<long>(std::floor(half / h + 1e-9));
  l = Lattice{i0 * h, i0 * h, h, static_cast<int>(i1 - i0 + 1), static_cast<int>(i1 - i0 + 1)};
  return l;
}

std::vector<double> lattice_values(const gpm_field* field, const Lattice& l) {
  std::vector<double> v(static_cast<std::size_t>(l.nx) * l.ny);
  check(gpm_field_grid(field, l.x0, l.y0, l.h, l.nx, l.ny, v.data()), "grid values");
  return v;
}

// Writes to `path` or stdout when path is empty or "-".
void emit(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CliError{1, "cannot write '" + path + "'"};
  out << text;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

int run_sample(const KernelArgs& k, const SampleArgs& s, double h, const std::string& out,
               const std::string& meta) {
  auto kernel = make_kernel(k);
  auto field = sample_field(k, kernel.get(), s);
  const Lattice l = output_lattice(field.get(), s.window, h);
  const auto v = lattice_values(field.get(), l);
  std::ostringstream csv;
  csv << "x,y,value\n";
  for (int j = 0; j < l.ny; ++j)
    for (int i = 0; i < l.nx; ++i)
      csv << fmt(l.x0 + i * l.h) << ',' << fmt(l.y0 + j * l.h) << ','
          << fmt(v[static_cast<std::size_t>(j) * l.nx + i]) << '\n';
  emit(out, csv.str());
  gpm_field_info info{};
  check(gpm_field_info_get(field.get(), &info), "field info");
  json m{{"schema_version", 1},
         {"kernel", k.id},
         {"kernel_params", k.params},
         {"seed", s.seed},
         {"N", info.truncation},
         {"tolerance", s.tolerance},
         {"truncation_error_bound", info.truncation_error_bound},
         {"domain", {info.domain.x0, info.domain.x1, info.domain.y0, info.domain.y1}},
         {"grid", {{"x0", l.x0}, {"y0", l.y0}, {"h", l.h}, {"nx", l.nx}, {"ny", l.ny}}},
         {"version", gpm_version()}};
  if (meta.empty()) std::cerr << m.dump(2) << '\n';
  else emit(meta, m.dump(2) + "\n");
  return 0;
}

int run_maxima(const KernelArgs& k, const SampleArgs& s, double level, double grid_factor,
               const std::string& out) {
  auto kernel = make_kernel(k);
  auto field = sample_field(k, kernel.get(), s);
  const double half = 0.5 * s.window;
  const gpm_box window{-half, half, -half, half};
  gpm_critical_point* pts = nullptr;
  size_t n = 0;
  check(gpm_find_maxima(field.get(), level, grid_factor, &window, &pts, &n), "maxima");
  std::unique_ptr<gpm_critical_point, FreeDeleter> guard(pts);
  std::ostringstream csv;
  csv << "x,y,height,eig1,eig2,index\n";
  for (size_t i = 0; i < n; ++i) {
    const auto& p = pts[i];
    csv << fmt(p.x) << ',' << fmt(p.y) << ',' << fmt(p.height) << ',' << fmt(p.eig1) << ','
        << fmt(p.eig2) << ',' << p.index << '\n';
  }
  emit(out, csv.str());
  return 0;
}

int run_intensity(const KernelArgs& k, double level, std::optional<double> window) {
  auto kernel = make_kernel(k);
  gpm_intensity rep{};
  check(gpm_intensity_get(kernel.get(), level, &rep), "intensity");
  json j{{"schema_version", 1},
         {"kernel", k.id},
         {"u", rep.u},
         {"d", rep.d},
         {"density", rep.density},
         {"relative_correction", "O(u^-1), constant unknown"},
         {"mu", rep.mu},
         {"tau", rep.tau}};
  if (window) {
    double l = 0.0;
    check(gpm_expected_max_level(kernel.get(), *window, &l), "expected maximum level");
    j["window_side"] = *window;
    j["expected_count"] = rep.density * *window * *window;
    j["expected_max_level"] = l;
  }
  std::cout << j.dump(2) << '\n';
  return 0;
}

int run_palm(const KernelArgs& k, const SampleArgs& s, double level, double h, const std::string& out,
             const std::string& meta) {
  auto kernel = make_kernel(k);
  auto field = sample_field(k, kernel.get(), s);
  gpm_palm* raw = nullptr;
  check(gpm_palm_couple(field.get(), level, s.seed, &raw), "palm");
  PalmPtr palm(raw);
  gpm_field* tilde_raw = nullptr;
  check(gpm_palm_tilde(palm.get(), &tilde_raw), "palm");
  FieldPtr tilde(tilde_raw);
  const Lattice l = output_lattice(field.get(), s.window, h);
  const auto f = lattice_values(field.get(), l);
  const auto g = lattice_values(tilde.get(), l);
  std::ostringstream csv;
  csv << "x,y,f,f_tilde\n";
  for (int j = 0; j < l.ny; ++j)
    for (int i = 0; i < l.nx; ++i) {
      const std::size_t idx = static_cast<std::size_t>(j) * l.nx + i;
      csv << fmt(l.x0 + i * l.h) << ',' << fmt(l.y0 + j * l.h) << ',' << fmt(f[idx]) << ','
          << fmt(g[idx]) << '\n';
    }
  emit(out, csv.str());
  gpm_palm_info info{};
  check(gpm_palm_info_get(palm.get(), &info), "palm");
  json m{{"schema_version", 1},
         {"kernel", k.id},
         {"seed", s.seed},
         {"u", level},
         {"xi", info.xi},
         {"hessian", {{info.hess[0], info.hess[2]}, {info.hess[2], info.hess[1]}}},
         {"ess", info.ess}};
  if (meta.empty()) std::cerr << m.dump(2) << '\n';
  else emit(meta, m.dump(2) + "\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gpmax: high local maxima of stationary Gaussian fields"};
  app.set_version_flag("--version", gpm_version());
  app.require_subcommand(1);

  KernelArgs kernel;
  SampleArgs samp;
  double h = 0.1, level = 3.0, grid_factor = 0.25;
  std::string out, meta, config, output_dir;
  std::optional<double> intensity_window;
  long replicates = 100, palm_pairs = 0;
  int threads = 0;

  auto add_sampling = [&](CLI::App* sub, bool seed_required) {
    add_kernel_options(sub, kernel);
    auto* seed = sub->add_option("--seed", samp.seed, "master seed");
    if (seed_required) seed->required();
    sub->add_option("--window", samp.window, "window side R; domain [-R/2, R/2]^2")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    sub->add_option("--tolerance", samp.tolerance, "series truncation tolerance")->capture_default_str();
    sub->add_option("--lattice", samp.grid_h, "circulant lattice spacing (grid kernels)")
        ->capture_default_str();
    sub->add_option("--pad", samp.pad, "circulant padding length; < 0 for minimal embedding")
        ->capture_default_str();
  };

  auto* sample = app.add_subcommand("sample", "sample a field and write grid values as CSV");
  add_sampling(sample, true);
  sample->add_option("--grid", h, "output lattice spacing (series fields)")->capture_default_str();
  sample->add_option("-o,--out", out, "CSV output (default stdout)");
  sample->add_option("--meta", meta, "metadata JSON output (default stderr)");

  auto* maxima = app.add_subcommand("maxima", "local maxima above a level as CSV");
  add_sampling(maxima, true);
  maxima->add_option("--level", level, "level u")->required();
  maxima->add_option("--grid-factor", grid_factor, "scan spacing b / max(u, 1)")->capture_default_str();
  maxima->add_option("-o,--out", out, "CSV output (default stdout)");

  auto* intensity = app.add_subcommand("intensity", "Kac-Rice intensity report as JSON");
  add_kernel_options(intensity, kernel);
  intensity->add_option("--level", level, "level u")->required();
  intensity->add_option("--window", intensity_window, "window side R for counts and l_R");

  auto* palm = app.add_subcommand("palm", "Palm-coupled field pair as CSV");
  add_sampling(palm, true);
  palm->add_option("--level", level, "level u")->required();
  palm->add_option("--grid", h, "output lattice spacing")->capture_default_str();
  palm->add_option("-o,--out", out, "CSV output (default stdout)");
  palm->add_option("--meta", meta, "draw metadata JSON (default stderr)");

  auto* diagnose = app.add_subcommand("diagnose", "diagnostics report for one (u, R) cell");
  add_kernel_options(diagnose, kernel);
  diagnose->add_option("--seed", samp.seed, "master seed")->required();
  diagnose->add_option("--level", level, "level u")->required();
  diagnose->add_option("--window", samp.window, "window side R")->required();
  diagnose->add_option("--replicates", replicates, "replicates")->capture_default_str();
  diagnose->add_option("--grid-factor", grid_factor, "scan spacing factor")->capture_default_str();
  diagnose->add_option("--threads", threads, "worker threads; 0 = all cores (GP_THREADS overrides)");
  diagnose->add_option("--palm-pairs", palm_pairs, "Palm pairs for the count discrepancy");
  diagnose->add_option("-o,--out", out, "report JSON (default stdout)");
  diagnose->add_option("--counts", meta, "per-replicate counts CSV");

  auto* experiment = app.add_subcommand("experiment", "run an experiment config");
  experiment->add_option("config", config, "config file")->required()->check(CLI::ExistingFile);
  experiment->add_option("--output", output_dir, "output directory (overrides config)");

  auto* validate = app.add_subcommand("validate", "check an experiment config");
  validate->add_option("config", config, "config file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*sample) return run_sample(kernel, samp, h, out, meta);
    if (*maxima) return run_maxima(kernel, samp, level, grid_factor, out);
    if (*intensity) return run_intensity(kernel, level, intensity_window);
    if (*palm) return run_palm(kernel, samp, level, h, out, meta);
    if (*diagnose) {
      auto k = make_kernel(kernel);
      char* report = nullptr;
      char* counts = nullptr;
      check(gpm_diagnose_cell(k.get(), level, samp.window, replicates, samp.seed, grid_factor, threads,
                              palm_pairs, &report, &counts),
            "diagnose");
      const std::string r = take_string(report), c = take_string(counts);
      emit(out, r + "\n");
      if (!meta.empty()) emit(meta, c);
      return 0;
    }
    if (*experiment) {
      int failed = 0;
      check(gpm_run_experiment(config.c_str(), output_dir.empty() ? nullptr : output_dir.c_str(), &failed),
            "experiment");
      if (failed > 0) {
        std::cerr << "experiment: " << failed << " cell(s) failed; see manifest.json\n";
        return 1;
      }
      return 0;
    }
    if (*validate) {
      char* report = nullptr;
      check(gpm_validate_config(config.c_str(), &report), "validate");
      const std::string r = take_string(report);
      std::cout << r << '\n';
      return json::parse(r).at("ok").get<bool>() ? 0 : 2;
    }
  } catch (const CliError& e) {
    std::cerr << "gpmax: " << e.message << '\n';
    return e.exit_code;
  }
  return 0;
}
