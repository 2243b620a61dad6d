#ifndef SIRTV_H
#define SIRTV_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

// Result of every fallible call. Values 2-4 match the CLI exit codes.
typedef enum SirtvStatus {
  SIRTV_STATUS_OK = 0,
  SIRTV_STATUS_NULL_POINTER = 1,
  SIRTV_STATUS_INVALID_INPUT = 2,
  SIRTV_STATUS_NUMERICAL = 3,
  SIRTV_STATUS_OPTIMIZATION = 4,
  SIRTV_STATUS_PANIC = 5,
} SirtvStatus;

typedef struct SirtvErrorTable SirtvErrorTable;

typedef struct SirtvFit SirtvFit;

typedef struct SirtvSchedule SirtvSchedule;

typedef struct SirtvSeries SirtvSeries;

typedef struct SirtvTrajectory SirtvTrajectory;

// Model and optimizer settings for `sirtv_fit`.
typedef struct SirtvFitOptions {
  double population;
  double gamma;
  double initial_infected;
  size_t substeps_per_day;
  double beta_lower;
  double beta_upper;
  // Relative-improvement stopping threshold per stage.
  double tolerance;
  // Iteration cap per stage.
  size_t max_iterations;
} SirtvFitOptions;

typedef struct SirtvStage {
  size_t segment_count;
  double initial_cost;
  double final_cost;
  size_t iterations;
  bool converged;
  bool polish;
} SirtvStage;

typedef struct SirtvErrorRow {
  size_t start_day;
  size_t horizon;
  double error;
} SirtvErrorRow;

typedef struct SirtvSummary {
  size_t count;
  double mean;
  double std;
  double mean_abs;
} SirtvSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failure on this thread, or null. The pointer is
// valid until the next `sirtv_*` call on the same thread.
const char *sirtv_last_error(void);

// Library version as a static NUL-terminated string.
const char *sirtv_version(void);

// Daily rates; `values[k]` applies on day `k+1`.
enum SirtvStatus sirtv_schedule_new(const double *values, size_t len, struct SirtvSchedule **out);

size_t sirtv_schedule_len(const struct SirtvSchedule *schedule);

// Copies the rates into `out` (capacity `len`).
enum SirtvStatus sirtv_schedule_values(const struct SirtvSchedule *schedule,
                                       double *out,
                                       size_t len);

void sirtv_schedule_free(struct SirtvSchedule *schedule);

// Integrates the model from `initial_infected` infected and no recovered.
enum SirtvStatus sirtv_simulate(double population,
                                double gamma,
                                double initial_infected,
                                size_t substeps_per_day,
                                const struct SirtvSchedule *schedule,
                                struct SirtvTrajectory **out);

// Number of day boundaries (horizon + 1).
size_t sirtv_trajectory_len(const struct SirtvTrajectory *trajectory);

// Copies S, I and R at each day boundary. Any of the buffers may be null.
enum SirtvStatus sirtv_trajectory_states(const struct SirtvTrajectory *trajectory,
                                         double *s,
                                         double *i,
                                         double *r,
                                         size_t len);

// Copies `N - S(t)` at each day boundary.
enum SirtvStatus sirtv_trajectory_cumulative(const struct SirtvTrajectory *trajectory,
                                             double *out,
                                             size_t len);

void sirtv_trajectory_free(struct SirtvTrajectory *trajectory);

// Series from daily counts; the first count belongs to `year-month-day`.
enum SirtvStatus sirtv_series_from_daily(int32_t year,
                                         uint32_t month,
                                         uint32_t day,
                                         const uint64_t *counts,
                                         size_t len,
                                         struct SirtvSeries **out);

// Loads a `date,count` file.
enum SirtvStatus sirtv_series_load(const char *path, struct SirtvSeries **out);

size_t sirtv_series_len(const struct SirtvSeries *series);

// Copies the cumulative counts `Y(1..=H)` into `out`.
enum SirtvStatus sirtv_series_cumulative(const struct SirtvSeries *series,
                                         uint64_t *out,
                                         size_t len);

void sirtv_series_free(struct SirtvSeries *series);

struct SirtvFitOptions sirtv_fit_options_default(void);

// Fits daily rates to `series`. A null `options` means the defaults.
enum SirtvStatus sirtv_fit(const struct SirtvSeries *series,
                           const struct SirtvFitOptions *options,
                           struct SirtvFit **out);

// A copy of the fitted daily rates.
enum SirtvStatus sirtv_fit_schedule(const struct SirtvFit *fit, struct SirtvSchedule **out);

// Final SSE, or NaN for a null handle.
double sirtv_fit_final_cost(const struct SirtvFit *fit);

size_t sirtv_fit_stage_count(const struct SirtvFit *fit);

enum SirtvStatus sirtv_fit_stage(const struct SirtvFit *fit, size_t index, struct SirtvStage *out);

void sirtv_fit_free(struct SirtvFit *fit);

// Relative error of a `horizon`-day forecast from day `t0`. The frozen rate
// is the last fitted one (`mean_window = 0`) or the mean of the last
// `mean_window` fitted rates.
enum SirtvStatus sirtv_prediction_error(const struct SirtvFit *fit,
                                        size_t t0,
                                        size_t horizon,
                                        size_t mean_window,
                                        double *out);

// Errors for every feasible start day `>= start_day_min` and each horizon.
enum SirtvStatus sirtv_rolling_evaluation(const struct SirtvFit *fit,
                                          const size_t *horizons,
                                          size_t horizon_count,
                                          size_t start_day_min,
                                          size_t mean_window,
                                          struct SirtvErrorTable **out);

size_t sirtv_error_table_len(const struct SirtvErrorTable *table);

// Rows are ordered by start day, then horizon.
enum SirtvStatus sirtv_error_table_row(const struct SirtvErrorTable *table,
                                       size_t index,
                                       struct SirtvErrorRow *out);

enum SirtvStatus sirtv_error_summary(const struct SirtvErrorTable *table,
                                     size_t horizon,
                                     struct SirtvSummary *out);

void sirtv_error_table_free(struct SirtvErrorTable *table);

// `R0 = beta / gamma`.
enum SirtvStatus sirtv_reproduction_number(double beta, double gamma, double *out);

// `i0 * exp((beta - gamma) * t)`.
enum SirtvStatus sirtv_early_phase_infected(double i0,
                                            double beta,
                                            double gamma,
                                            double t,
                                            double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SIRTV_H */
