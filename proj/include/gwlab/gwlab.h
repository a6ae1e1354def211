#ifndef GWLAB_H
#define GWLAB_H

#include <stddef.h>
#include <stdint.h>

#if defined(GWLAB_BUILDING)
#define GWLAB_API __attribute__((visibility("default")))
#else
#define GWLAB_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef struct gwlab_source gwlab_source;
typedef struct gwlab_point gwlab_point;
typedef struct gwlab_code gwlab_code;

typedef enum gwlab_status {
    GWLAB_OK = 0,
    GWLAB_ERR_DOMAIN = 1,
    GWLAB_ERR_INFEASIBLE = 2,
    GWLAB_ERR_SUPPORT = 3,
    GWLAB_ERR_SHAPE = 4,
    GWLAB_ERR_SCHEMA = 5,
    GWLAB_ERR_IO = 6,
    GWLAB_ERR_CONVERGENCE = 7,
    GWLAB_ERR_BUDGET = 8,
    GWLAB_ERR_ARGUMENT = 9,
    GWLAB_ERR_INTERNAL = 10
} gwlab_status;

typedef struct gwlab_levels {
    double r1;
    double r2;
    double d1;
    double d2;
} gwlab_levels;

typedef struct gwlab_solve_options {
    int restarts;
    uint64_t seed;
    unsigned threads;
} gwlab_solve_options;

enum { GWLAB_COMPONENT_X = 0, GWLAB_COMPONENT_Y = 1 };
enum { GWLAB_BACKOFF_LEMMA = 0, GWLAB_BACKOFF_NONE = 1 };
enum { GWLAB_EXPONENT_DESCENT = 0, GWLAB_EXPONENT_GRID = 1 };

GWLAB_API const char* gwlab_version(void);
/* Message of the last failed call on this thread; empty after a success. */
GWLAB_API const char* gwlab_last_error(void);
GWLAB_API const char* gwlab_status_name(gwlab_status status);
/* Frees strings returned through char** out-parameters. */
GWLAB_API void gwlab_string_free(char* s);
GWLAB_API void gwlab_solve_options_default(gwlab_solve_options* opts);

/* Sources. JSON schema {"px_y": [[..]], "dx": [[..]], "dy": [[..]]}. */
GWLAB_API gwlab_status gwlab_source_from_json(const char* json, gwlab_source** out);
GWLAB_API gwlab_status gwlab_source_load(const char* path, gwlab_source** out);
GWLAB_API gwlab_status gwlab_source_dsbs(double p, gwlab_source** out);
GWLAB_API gwlab_status gwlab_source_shape(const gwlab_source* src, size_t* nx, size_t* ny, size_t* kx, size_t* ky);
GWLAB_API void gwlab_source_free(gwlab_source* src);

/* Single-letter and joint rate-distortion. */
GWLAB_API gwlab_status gwlab_rate_distortion(const gwlab_source* src, int component, double D, double* rate,
                                             double* slope);
GWLAB_API gwlab_status gwlab_joint_rate_distortion(const gwlab_source* src, double D1, double D2, double* rate,
                                                   double* nu1, double* nu2);
/* Joint solution with its tilted table, moments and output marginal. */
GWLAB_API gwlab_status gwlab_joint_rd_json(const gwlab_source* src, double D1, double D2, char** json);

/* Least common rate; the point keeps a copy of the source. opts may be NULL. */
GWLAB_API gwlab_status gwlab_gw_solve(const gwlab_source* src, const gwlab_levels* levels,
                                      const gwlab_solve_options* opts, gwlab_point** out);
GWLAB_API void gwlab_point_free(gwlab_point* pt);
/* r0, r1, r2 */
GWLAB_API gwlab_status gwlab_point_rates(const gwlab_point* pt, double rates[3]);
/* lambda1, lambda2, gamma1, gamma2 */
GWLAB_API gwlab_status gwlab_point_multipliers(const gwlab_point* pt, double mult[4]);
GWLAB_API gwlab_status gwlab_point_json(const gwlab_point* pt, char** json);
GWLAB_API gwlab_status gwlab_point_tilted_json(const gwlab_point* pt, char** json);
GWLAB_API gwlab_status gwlab_point_dispersion(const gwlab_point* pt, double* variance, double* third_abs_moment);

/* Half-space test L0 + lambda1 L1 + lambda2 L2 >= sqrt(V) Qinv(eps). */
GWLAB_API gwlab_status gwlab_second_order(const gwlab_point* pt, double V, double eps, const double L[3],
                                          double* threshold, int* contains);
/* out = {central, slack, lower, upper} */
GWLAB_API gwlab_status gwlab_excess_approx(const gwlab_point* pt, double V, double T, double n, const double L[3],
                                           double out[4]);

GWLAB_API gwlab_status gwlab_error_exponent_json(const gwlab_source* src, double r0, const gwlab_levels* levels,
                                                 int method, const gwlab_solve_options* opts, char** json);

GWLAB_API gwlab_status gwlab_md_constant(const gwlab_point* pt, const double theta[3], double V, double* value);
/* Rows for the samples (n[i], rho[i]). */
GWLAB_API gwlab_status gwlab_md_report_json(const gwlab_point* pt, const double theta[3], double V, const double* n,
                                            const double* rho, size_t count, char** json);

/* Rows of (n, r_sum for each eps, first-order sum) written to out, row-major, points * (neps + 2) doubles. */
GWLAB_API gwlab_status gwlab_dsbs_figure(double p, double D, double delta, const double* eps, size_t neps,
                                         double n_min, double n_max, int points, double* out);
/* Closed forms: joint rate, tilted values (current and older display), variances, Pangloss triplet. */
GWLAB_API gwlab_status gwlab_dsbs_closed_json(double p, double D, double delta, char** json);

/* Type-covering codes. log2_m holds log2 of the three message set sizes. */
GWLAB_API gwlab_status gwlab_code_build(const gwlab_source* src, size_t n, const double log2_m[3], int backoff,
                                        double d1, double d2, const gwlab_solve_options* opts, gwlab_code** out);
GWLAB_API gwlab_status gwlab_code_read(const char* path, gwlab_code** out);
GWLAB_API gwlab_status gwlab_code_write(const gwlab_code* code, const char* path);
GWLAB_API gwlab_status gwlab_code_json(const gwlab_code* code, char** json);
GWLAB_API void gwlab_code_free(gwlab_code* code);
GWLAB_API gwlab_status gwlab_simulate_json(const gwlab_code* code, const gwlab_source* src, size_t trials,
                                           uint64_t seed, unsigned threads, char** json);
GWLAB_API gwlab_status gwlab_exact_tail(const gwlab_code* code, const gwlab_source* src, double* tail);

/* Identity checks on the tilted densities. failures receives the number of failed rows. */
GWLAB_API gwlab_status gwlab_verify_json(const gwlab_source* src, const gwlab_levels* levels,
                                         const gwlab_solve_options* opts, char** json, int* failures);

#ifdef __cplusplus
}
#endif

#endif
