#ifndef UNFOLDCOV_H
#define UNFOLDCOV_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum UcStatus {
  UC_STATUS_OK = 0,
  UC_STATUS_NULL_POINTER = 1,
  UC_STATUS_INVALID_ARGUMENT = 2,
  UC_STATUS_BUFFER_TOO_SMALL = 3,
  UC_STATUS_CONFIG = 4,
  UC_STATUS_NUMERICAL = 5,
  UC_STATUS_TOY_LOSS = 6,
  UC_STATUS_IO = 7,
  UC_STATUS_PANIC = 8,
} UcStatus;

// Covariance estimation methods.
typedef enum UcMethod {
  UC_METHOD_INVERSE_HESSIAN = 0,
  UC_METHOD_FREQUENTIST_TOYS = 1,
  UC_METHOD_HYBRID_TOYS = 2,
} UcMethod;

// Run configuration.
typedef struct UcConfig UcConfig;

// Covariance matrix over the truth bins.
typedef struct UcCovariance UcCovariance;

// Result of a nominal fit.
typedef struct UcFit UcFit;

// Data, response model, constraints and τ.
typedef struct UcProblem UcProblem;

// Outcome of a full scenario run.
typedef struct UcReport UcReport;

// One row of a run's summary table.
typedef struct UcSummary {
  enum UcMethod method;
  double tau;
  double avg_sigma_rel;
  double avg_global_corr;
  double chi2_ndf;
  size_t t_used;
  double converged_fraction;
  // 0 when the inverse Hessian is used with regularization.
  bool valid;
} UcSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message describing the most recent failure on the calling thread; empty
// when none. Valid until the next failing call on the same thread.
const char *uc_last_error(void);

// Reads a run config file.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum UcStatus uc_config_from_file(const char *path, struct UcConfig **out);

// Default config for a built-in scenario (`double_gaussian` or `exponential`).
//
// # Safety
// `name` must be a NUL-terminated string and `out` a valid pointer.
enum UcStatus uc_config_builtin(const char *name, struct UcConfig **out);

// # Safety
// `config` must be a live handle.
enum UcStatus uc_config_set_seed(struct UcConfig *config, uint64_t seed);

// # Safety
// `config` must be a live handle.
enum UcStatus uc_config_set_toys(struct UcConfig *config, size_t toys);

// Replaces the τ grid.
//
// # Safety
// `config` must be a live handle and `taus` point to `n` values.
enum UcStatus uc_config_set_taus(struct UcConfig *config, const double *taus, size_t n);

// Selects methods by code, see [`UcMethod`].
//
// # Safety
// `config` must be a live handle and `methods` point to `n` codes.
enum UcStatus uc_config_set_methods(struct UcConfig *config, const uint32_t *methods, size_t n);

// # Safety
// `config` must be a live handle and `dir` a NUL-terminated string.
enum UcStatus uc_config_set_output_dir(struct UcConfig *config, const char *dir);

// # Safety
// `config` must be null or a handle not yet freed.
void uc_config_free(struct UcConfig *config);

// Runs the full comparison and writes its output files.
//
// # Safety
// `config` must be a live handle and `out` a valid pointer.
enum UcStatus uc_run_scenario(const struct UcConfig *config, struct UcReport **out);

// Number of summary rows, one per (τ, method).
//
// # Safety
// `report` must be a live handle.
size_t uc_report_len(const struct UcReport *report);

// # Safety
// `report` must be a live handle and `out` a valid pointer.
enum UcStatus uc_report_summary(const struct UcReport *report, size_t index, struct UcSummary *out);

// # Safety
// `report` must be null or a handle not yet freed.
void uc_report_free(struct UcReport *report);

// Problem of a configured scenario at one τ, with its observed data drawn
// from the config's seed.
//
// # Safety
// `config` must be a live handle and `out` a valid pointer.
enum UcStatus uc_problem_from_config(const struct UcConfig *config,
                                     double tau,
                                     struct UcProblem **out);

// Problem with a fixed response and no nuisance parameters. `response` is
// row-major with `n_reco` rows and `n_truth` columns; bins are unit-width.
//
// # Safety
// `observed` and `background` must point to `n_reco` values, `response`
// to `n_reco * n_truth` values, and `out` must be valid.
enum UcStatus uc_problem_new(const double *observed,
                             const double *response,
                             const double *background,
                             size_t n_reco,
                             size_t n_truth,
                             double tau,
                             struct UcProblem **out);

// # Safety
// `problem` must be a live handle.
size_t uc_problem_n_truth(const struct UcProblem *problem);

// # Safety
// `problem` must be a live handle.
size_t uc_problem_n_nuisance(const struct UcProblem *problem);

// # Safety
// `problem` must be null or a handle not yet freed.
void uc_problem_free(struct UcProblem *problem);

// Maximizes Φ from the data-driven starting point.
//
// # Safety
// `problem` must be a live handle and `out` a valid pointer.
enum UcStatus uc_fit(const struct UcProblem *problem, struct UcFit **out);

// # Safety
// `fit` must be a live handle.
bool uc_fit_converged(const struct UcFit *fit);

// Copies μ̂ into `out`, which holds `len` values.
//
// # Safety
// `fit` must be a live handle and `out` point to `len` writable values.
enum UcStatus uc_fit_mu(const struct UcFit *fit, double *out, size_t len);

// Copies θ̂ into `out`, which holds `len` values.
//
// # Safety
// `fit` must be a live handle and `out` point to `len` writable values.
enum UcStatus uc_fit_theta(const struct UcFit *fit, double *out, size_t len);

// # Safety
// `fit` must be null or a handle not yet freed.
void uc_fit_free(struct UcFit *fit);

// Covariance of μ̂ by `method`, a [`UcMethod`] code. `n_toys` and `seed`
// are ignored by the inverse Hessian.
//
// # Safety
// `problem` and `fit` must be live handles and `out` a valid pointer.
enum UcStatus uc_covariance(const struct UcProblem *problem,
                            const struct UcFit *fit,
                            uint32_t method,
                            size_t n_toys,
                            uint64_t seed,
                            struct UcCovariance **out);

// # Safety
// `cov` must be a live handle.
size_t uc_covariance_dim(const struct UcCovariance *cov);

// Copies the matrix row-major into `out`, which holds `len` values.
//
// # Safety
// `cov` must be a live handle and `out` point to `len` writable values.
enum UcStatus uc_covariance_values(const struct UcCovariance *cov, double *out, size_t len);

// Mean over bins of √V_ii / μ̂_i.
//
// # Safety
// `cov` must be a live handle, `mu_hat` point to `n` values and `out` be valid.
enum UcStatus uc_avg_rel_error(const struct UcCovariance *cov,
                               const double *mu_hat,
                               size_t n,
                               double *out);

// Mean global correlation coefficient.
//
// # Safety
// `cov` must be a live handle and `out` valid.
enum UcStatus uc_avg_global_correlation(const struct UcCovariance *cov, double *out);

// χ²/ndf of `mu_hat` against `mu_true`.
//
// # Safety
// `cov` must be a live handle, `mu_hat` and `mu_true` point to `n` values
// and `out` be valid.
enum UcStatus uc_chi2_ndf(const struct UcCovariance *cov,
                          const double *mu_hat,
                          const double *mu_true,
                          size_t n,
                          double *out);

// # Safety
// `cov` must be null or a handle not yet freed.
void uc_covariance_free(struct UcCovariance *cov);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* UNFOLDCOV_H */
