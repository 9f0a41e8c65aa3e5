#include "gpmax/gpmax.h"

#include <cstdlib>
#include <cstring>
#include <json.hpp>
#include <new>
#include <sstream>
#include <string>

#include "gpmax/critpoints.hpp"
#include "gpmax/error.hpp"
#include "gpmax/experiment.hpp"
#include "gpmax/kacrice.hpp"
#include "gpmax/palm.hpp"

struct gpm_kernel {
  gpmax::KernelModel model;
};

struct gpm_field {
  gpmax::FieldRealization field;
};

struct gpm_palm {
  gpmax::PalmPair pair;
};

namespace {

thread_local std::string g_last_error;

gpm_status to_status(gpmax::ErrorCode code) {
  switch (code) {
    case gpmax::ErrorCode::kInvalidArgument: return GPM_INVALID_ARGUMENT;
    case gpmax::ErrorCode::kDomain: return GPM_DOMAIN;
    case gpmax::ErrorCode::kNumerical: return GPM_NUMERICAL;
    case gpmax::ErrorCode::kUnsupported: return GPM_UNSUPPORTED;
    case gpmax::ErrorCode::kIo: return GPM_IO;
    case gpmax::ErrorCode::kConfig: return GPM_CONFIG;
  }
  return GPM_INTERNAL;
}

// Runs `body`, translating exceptions into status codes and the thread-local message.
template <class F>
gpm_status guarded(F&& body) {
  try {
    g_last_error.clear();
    body();
    return GPM_OK;
  } catch (const gpmax::Error& e) {
    g_last_error = e.what();
    return to_status(e.code());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return GPM_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return GPM_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return GPM_INTERNAL;
  }
}

void require(bool ok, const char* what) {
  if (!ok) gpmax::fail(gpmax::ErrorCode::kInvalidArgument, what);
}

gpmax::Box2 to_box(const gpm_box& b) { return {b.x0, b.x1, b.y0, b.y1}; }

char* dup_string(const std::string& s) {
  char* p = static_cast<char*>(std::malloc(s.size() + 1));
  if (!p) throw std::bad_alloc();
  std::memcpy(p, s.c_str(), s.size() + 1);
  return p;
}

template <class T>
T* alloc_array(std::size_t n) {
  T* p = static_cast<T*>(std::malloc(std::max<std::size_t>(n, 1) * sizeof(T)));
  if (!p) throw std::bad_alloc();
  return p;
}

std::string issues_text(const gpmax::ValidationReport& rep) {
  std::ostringstream out;
  for (std::size_t i = 0; i < rep.errors.size(); ++i) {
    if (i) out << "; ";
    out << rep.errors[i].field << ": " << rep.errors[i].message;
  }
  return out.str();
}

}  // namespace

extern "C" {

const char* gpm_version(void) { return gpmax::kVersion; }

const char* gpm_last_error(void) { return g_last_error.c_str(); }

void gpm_free(void* ptr) { std::free(ptr); }

gpm_status gpm_kernel_create(const char* id, int dim, const double* params, size_t n_params,
                             gpm_kernel** out) {
  return guarded([&] {
    require(id && out, "null argument");
    require(n_params == 0 || params, "null params");
    *out = new gpm_kernel{gpmax::KernelModel::from_id(id, dim, std::span<const double>(params, n_params))};
  });
}

void gpm_kernel_destroy(gpm_kernel* kernel) { delete kernel; }

gpm_status gpm_kernel_eval(const gpm_kernel* kernel, double x, double y, int ax, int ay, double* out) {
  return guarded([&] {
    require(kernel && out, "null argument");
    *out = kernel->model.eval2(x, y, ax, ay);
  });
}

gpm_status gpm_kernel_moment_matrix(const gpm_kernel* kernel, double** out, size_t* n) {
  return guarded([&] {
    require(kernel && out && n, "null argument");
    const auto& m = kernel->model.sigma_joint();
    double* buf = alloc_array<double>(m.size());
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) buf[i * m.cols() + j] = m(i, j);
    *out = buf;
    *n = static_cast<size_t>(m.rows());
  });
}

gpm_status gpm_sample_bf(uint64_t seed, gpm_box domain, double tolerance, gpm_field** out) {
  return guarded([&] {
    require(out != nullptr, "null argument");
    gpmax::SeriesOptions opts;
    if (tolerance > 0.0) opts.tolerance = tolerance;
    *out = new gpm_field{gpmax::sample_bf_series(seed, to_box(domain), opts)};
  });
}

gpm_status gpm_sample_rpw(uint64_t seed, double radius, double tolerance, gpm_field** out) {
  return guarded([&] {
    require(out != nullptr, "null argument");
    gpmax::SeriesOptions opts;
    if (tolerance > 0.0) opts.tolerance = tolerance;
    *out = new gpm_field{gpmax::sample_rpw_bessel(seed, radius, opts)};
  });
}

gpm_status gpm_sample_grid(const gpm_kernel* kernel, gpm_box domain, double h, double pad,
                           uint64_t seed, gpm_field** out) {
  return guarded([&] {
    require(kernel && out, "null argument");
    require(h > 0.0, "grid spacing must be > 0");
    gpmax::CirculantOptions opts;
    opts.pad_length = pad;
    const auto spec = gpmax::GridSpec::anchored(to_box(domain), h);
    *out = new gpm_field{gpmax::sample_stationary_grid(kernel->model, spec, seed, opts)};
  });
}

gpm_status gpm_sample_block(const gpm_kernel* kernel, double block_side, double gap, gpm_box domain,
                            uint64_t seed, gpm_field** out) {
  return guarded([&] {
    require(kernel && out, "null argument");
    *out = new gpm_field{
        gpmax::sample_block_independent(kernel->model, block_side, gap, to_box(domain), seed)};
  });
}

void gpm_field_destroy(gpm_field* field) { delete field; }

gpm_status gpm_field_info_get(const gpm_field* field, gpm_field_info* out) {
  return guarded([&] {
    require(field && out, "null argument");
    const auto& f = field->field;
    const auto& d = f.domain();
    *out = gpm_field_info{static_cast<gpm_sampler>(f.kind()),
                          f.seed(),
                          gpm_box{d.x0, d.x1, d.y0, d.y1},
                          f.truncation(),
                          f.truncation_error_bound(),
                          f.has_evaluator() ? 1 : 0,
                          f.has_grid() ? f.grid().spec.h : 0.0};
  });
}

gpm_status gpm_field_jet(const gpm_field* field, double x, double y, double jet[GPM_JET_SIZE]) {
  return guarded([&] {
    require(field && jet, "null argument");
    require(field->field.has_evaluator(), "field has grid values only");
    const gpmax::Jet2 j = field->field.jet({x, y}, 2);
    jet[0] = j.value;
    jet[1] = j.grad.x();
    jet[2] = j.grad.y();
    jet[3] = j.hess(0, 0);
    jet[4] = j.hess(1, 1);
    jet[5] = j.hess(0, 1);
  });
}

gpm_status gpm_field_grid(const gpm_field* field, double x0, double y0, double h, int nx, int ny,
                          double* out) {
  return guarded([&] {
    require(field && out, "null argument");
    require(nx > 0 && ny > 0 && h > 0.0, "empty lattice");
    gpmax::GridSpec spec{x0, y0, h, nx, ny};
    const Eigen::MatrixXd v = field->field.values_on(spec);
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i < nx; ++i) out[static_cast<std::size_t>(j) * nx + i] = v(i, j);
  });
}

gpm_status gpm_field_native_grid(const gpm_field* field, double* x0, double* y0, double* h, int* nx,
                                 int* ny) {
  return guarded([&] {
    require(field && x0 && y0 && h && nx && ny, "null argument");
    require(field->field.has_grid(), "field carries no lattice");
    const auto& s = field->field.grid().spec;
    *x0 = s.x0;
    *y0 = s.y0;
    *h = s.h;
    *nx = s.nx;
    *ny = s.ny;
  });
}

gpm_status gpm_find_maxima(const gpm_field* field, double u, double grid_factor, const gpm_box* window,
                           gpm_critical_point** out, size_t* n) {
  return guarded([&] {
    require(field && out && n, "null argument");
    gpmax::ScanOptions opts;
    if (grid_factor > 0.0) opts.grid_factor = grid_factor;
    if (window) opts.window = to_box(*window);
    const auto pts = gpmax::find_local_maxima(field->field, u, opts);
    auto* buf = alloc_array<gpm_critical_point>(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const auto& p = pts[i];
      buf[i] = gpm_critical_point{p.location.x(), p.location.y(), p.height,
                                  p.hess_eigs[0], p.hess_eigs[1], p.morse_index};
    }
    *out = buf;
    *n = pts.size();
  });
}

gpm_status gpm_intensity_get(const gpm_kernel* kernel, double u, gpm_intensity* out) {
  return guarded([&] {
    require(kernel && out, "null argument");
    const auto rep = gpmax::expected_maxima_density(kernel->model, u);
    *out = gpm_intensity{u, rep.d, rep.density, gpmax::mu_scaling(u, rep.d), gpmax::cluster_radius(u)};
  });
}

gpm_status gpm_expected_max_level(const gpm_kernel* kernel, double window_side, double* out) {
  return guarded([&] {
    require(kernel && out, "null argument");
    *out = gpmax::expected_max_level(kernel->model, window_side);
  });
}

gpm_status gpm_palm_couple(const gpm_field* field, double u, uint64_t seed, gpm_palm** out) {
  return guarded([&] {
    require(field && out, "null argument");
    const auto& f = field->field;
    *out = new gpm_palm{f.kernel().is_monochromatic() ? gpmax::palm_couple_monochromatic(f, u, seed)
                                                      : gpmax::palm_couple(f, u, seed)};
  });
}

void gpm_palm_destroy(gpm_palm* palm) { delete palm; }

gpm_status gpm_palm_info_get(const gpm_palm* palm, gpm_palm_info* out) {
  return guarded([&] {
    require(palm && out, "null argument");
    const auto& d = palm->pair.draw;
    *out = gpm_palm_info{d.xi, {d.z(0, 0), d.z(1, 1), d.z(0, 1)}, d.ess};
  });
}

gpm_status gpm_palm_tilde(const gpm_palm* palm, gpm_field** out) {
  return guarded([&] {
    require(palm && out, "null argument");
    *out = new gpm_field{palm->pair.f_tilde};
  });
}

gpm_status gpm_validate_config(const char* path, char** report_json) {
  return guarded([&] {
    require(path && report_json, "null argument");
    const auto rep = gpmax::validate_config(path);
    nlohmann::json j;
    j["schema_version"] = gpmax::kSchemaVersion;
    j["ok"] = rep.ok();
    j["errors"] = nlohmann::json::array();
    j["warnings"] = nlohmann::json::array();
    for (const auto& e : rep.errors) j["errors"].push_back({{"field", e.field}, {"message", e.message}});
    for (const auto& w : rep.warnings)
      j["warnings"].push_back({{"field", w.field}, {"message", w.message}});
    *report_json = dup_string(j.dump(2));
  });
}

gpm_status gpm_run_experiment(const char* path, const char* output_dir, int* failed_cells) {
  return guarded([&] {
    require(path && failed_cells, "null argument");
    gpmax::ExperimentConfig cfg;
    const auto rep = gpmax::parse_config(gpmax::read_key_values(path), cfg);
    if (!rep.ok()) gpmax::fail(gpmax::ErrorCode::kConfig, issues_text(rep));
    std::optional<std::string> dir;
    if (output_dir) dir = output_dir;
    *failed_cells = gpmax::run_experiment(cfg, dir);
  });
}

gpm_status gpm_diagnose_cell(const gpm_kernel* kernel, double u, double window_side, long replicates,
                             uint64_t seed, double grid_factor, int threads, long palm_pairs,
                             char** report_json, char** counts_csv) {
  return guarded([&] {
    require(kernel && report_json && counts_csv, "null argument");
    require(replicates >= 1, "replicates must be >= 1");
    require(u > 0.0 && window_side > 0.0, "level and window must be positive");
    gpmax::ExperimentConfig cfg;
    cfg.kernel = kernel->model.id();
    cfg.kernel_params = kernel->model.params();
    cfg.dimension = kernel->model.dim();
    cfg.levels = {u};
    cfg.windows = {window_side};
    cfg.replicates = replicates;
    cfg.seed = seed;
    if (grid_factor > 0.0) cfg.grid_factor = grid_factor;
    cfg.threads = threads;
    cfg.palm_pairs = palm_pairs;
    const auto cells = gpmax::expand_cells(cfg);
    const auto result = gpmax::run_cell(cfg, cells.front(), gpmax::resolve_threads(threads));
    *report_json = dup_string(gpmax::cell_report_json(result));
    *counts_csv = dup_string(gpmax::counts_csv({result}));
  });
}

}  // extern "C"
