#ifndef PFCLASSO_PFCLASSO_H
#define PFCLASSO_PFCLASSO_H

/* C interface to the grouped production-function estimator.
 *
 * Objects are opaque handles released with the matching *_free function.
 * Every function returns a pfc_status; on failure pfc_last_error() gives a
 * message for the calling thread. Strings returned through char** are
 * allocated by the library and released with pfc_string_free. JSON
 * arguments may be NULL to accept defaults. */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#  if defined(PFC_BUILDING_LIBRARY)
#    define PFC_API __declspec(dllexport)
#  else
#    define PFC_API __declspec(dllimport)
#  endif
#else
#  define PFC_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum pfc_status {
  PFC_OK = 0,
  PFC_ERR_CONFIG = 1,    /* invalid configuration or argument */
  PFC_ERR_IO = 2,        /* file could not be read or written */
  PFC_ERR_DATA = 3,      /* malformed or inconsistent input data */
  PFC_ERR_DOMAIN = 4,    /* parameter outside its domain */
  PFC_ERR_NUMERICAL = 5, /* solver failure */
  PFC_ERR_INTERNAL = 6
} pfc_status;

typedef struct pfc_panel pfc_panel;
typedef struct pfc_fit pfc_fit;
typedef struct pfc_selection pfc_selection;
typedef struct pfc_simulation pfc_simulation;

PFC_API const char* pfc_last_error(void);
PFC_API void pfc_string_free(char* s);
PFC_API const char* pfc_version(void);
/* 0 selects the hardware concurrency. */
PFC_API pfc_status pfc_set_threads(unsigned n);

/* Panels ------------------------------------------------------------------ */

/* schema_json: {"firm": "...", ..., "delimiter": ",", "prices_normalized": bool} */
PFC_API pfc_status pfc_panel_load_csv(const char* path, const char* schema_json,
                                      pfc_panel** out);
PFC_API pfc_status pfc_panel_write_csv(const pfc_panel* panel, const char* path);
/* {"firms", "observations", "usable_rows", "mean_usable_periods", "balanced",
 *  "has_labor", "has_share", "extra_columns"} */
PFC_API pfc_status pfc_panel_info(const pfc_panel* panel, char** json_out);
PFC_API pfc_status pfc_panel_subset_balanced(const pfc_panel* panel, long t0, long t1,
                                             pfc_panel** out);
PFC_API void pfc_panel_free(pfc_panel* panel);

/* Simulation -------------------------------------------------------------- */

PFC_API pfc_status pfc_simulate(const char* sim_json, pfc_simulation** out);
/* Borrowed view of the simulated panel; valid while the simulation lives. */
PFC_API pfc_status pfc_simulation_panel(const pfc_simulation* sim, const pfc_panel** out);
/* Writes <prefix>panel.csv, <prefix>truth.csv and, if latent != 0,
 * <prefix>latent.csv. */
PFC_API pfc_status pfc_simulation_write(const pfc_simulation* sim, const char* prefix,
                                        int latent);
/* 1-based true group of each firm; `groups` must hold `n` = number of firms. */
PFC_API pfc_status pfc_simulation_groups(const pfc_simulation* sim, int* groups, size_t n);
PFC_API void pfc_simulation_free(pfc_simulation* sim);

/* Estimation -------------------------------------------------------------- */

/* spec_json: {"strategy": "gnr"|"acf"|"dynpanel", "ar1_intercept", "labor"};
 *   missing fields default to gnr, true and the panel's labor column.
 * classo_json: {"J", "lambda", "lambda_exponent", "outer_tol", "inner_tol",
 *   "max_outer", "max_inner", "classification_threshold", "weighting",
 *   "multistart", "multistart_scale", "seed"} */
PFC_API pfc_status pfc_fit_run(const pfc_panel* panel, const char* spec_json,
                               const char* classo_json, pfc_fit** out);
/* Group-wise GMM on a given partition: 1-based labels, 0 = excluded. */
PFC_API pfc_status pfc_fit_partition(const pfc_panel* panel, const char* spec_json,
                                     const int* groups, size_t n, int num_groups,
                                     const char* weighting, pfc_fit** out);
/* Partition taken from an extra panel column; levels in sorted order. */
PFC_API pfc_status pfc_fit_partition_column(const pfc_panel* panel, const char* spec_json,
                                            const char* column, const char* weighting,
                                            pfc_fit** out);
PFC_API pfc_status pfc_fit_load_json(const char* path, pfc_fit** out);
PFC_API pfc_status pfc_fit_to_json(const pfc_fit* fit, char** json_out);
PFC_API pfc_status pfc_fit_write_assignments(const pfc_fit* fit, const char* path);
/* Residuals need the panel the fit was run on. */
PFC_API pfc_status pfc_fit_write_residuals(const pfc_fit* fit, const pfc_panel* panel,
                                           const char* path);
PFC_API pfc_status pfc_fit_num_groups(const pfc_fit* fit, int* out);
PFC_API pfc_status pfc_fit_num_params(const pfc_fit* fit, int* out);
/* theta (length P) and covariance (P*P, row-major) of a 1-based group. */
PFC_API pfc_status pfc_fit_group(const pfc_fit* fit, int group, double* theta,
                                 double* covariance);
/* 1-based group per firm, 0 for unclassified. */
PFC_API pfc_status pfc_fit_assignments(const pfc_fit* fit, int* groups, size_t n);
PFC_API void pfc_fit_free(pfc_fit* fit);

/* Selection --------------------------------------------------------------- */

/* grid_json: {"J_values": [...], "a_values": [...]}
 * penalties_json: [{"form": "p1"|"p2", "r": x}, ...] (NULL: p1 r=1, p2 r=0.25) */
PFC_API pfc_status pfc_select_run(const pfc_panel* panel, const char* spec_json,
                                  const char* classo_json, const char* grid_json,
                                  const char* penalties_json, pfc_selection** out);
/* Minimizing (lambda, J) for the given penalty index. */
PFC_API pfc_status pfc_selection_best(const pfc_selection* sel, size_t penalty,
                                      double* lambda, int* J);
PFC_API pfc_status pfc_selection_write_surface(const pfc_selection* sel, const char* path);
PFC_API pfc_status pfc_selection_to_json(const pfc_selection* sel, char** json_out);
PFC_API void pfc_selection_free(pfc_selection* sel);

/* Pipelines --------------------------------------------------------------- */

/* Writes <prefix>summary.csv and <prefix>summary.json. */
PFC_API pfc_status pfc_montecarlo_run(const char* mc_json, const char* prefix,
                                      char** summary_json_out);
/* labels_path: CSV holding a firm column and `label_column`; when NULL the
 * label is read from the assignment file itself. */
PFC_API pfc_status pfc_crosstab(const char* assignments_path, const char* labels_path,
                                const char* firm_column, const char* label_column,
                                const char* out_path);
/* {"fits": [{"msr", "residuals", "groups", "parameters"}, ...]} */
PFC_API pfc_status pfc_compare_fits(const pfc_panel* panel, const pfc_fit* const* fits,
                                    size_t count, char** json_out);
PFC_API pfc_status pfc_tfp_write(const pfc_panel* panel, const pfc_fit* fit,
                                 const char* path);

#ifdef __cplusplus
}
#endif

#endif /* PFCLASSO_PFCLASSO_H */
