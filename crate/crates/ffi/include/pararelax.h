#ifndef PARARELAX_H
#define PARARELAX_H

#include <stddef.h>
#include <stdint.h>

typedef enum PrFormat {
  PR_FORMAT_LP_TEXT = 0,
  PR_FORMAT_JSON = 1,
} PrFormat;

typedef enum PrSide {
  PR_SIDE_UNDER = 0,
  PR_SIDE_OVER = 1,
} PrSide;

typedef enum PrStatus {
  PR_STATUS_OK = 0,
  PR_STATUS_NULL_POINTER = 1,
  PR_STATUS_INVALID_ARGUMENT = 2,
  PR_STATUS_DOMAIN_ERROR = 3,
  PR_STATUS_COMPUTATION_FAILED = 4,
  PR_STATUS_PARSE_ERROR = 5,
  PR_STATUS_OUT_OF_RANGE = 6,
  PR_STATUS_PANIC = 7,
} PrStatus;

typedef enum PrTechnique {
  PR_TECHNIQUE_PARA = 0,
  PR_TECHNIQUE_PWL = 1,
} PrTechnique;

// A univariate function.
typedef struct PrFunction PrFunction;

// A relaxed model.
typedef struct PrModel PrModel;

// A PARA approximation.
typedef struct PrPara PrPara;

// A reformulated problem.
typedef struct PrProblem PrProblem;

// A shifted PWL relaxation.
typedef struct PrPwl PrPwl;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread; empty after a success.
// The pointer stays valid until the next call on the same thread.
const char *pr_last_error(void);

// Frees a string returned by this library.
//
// # Safety
// `s` must be NULL or a string returned by this library, not yet freed.
void pr_string_free(char *s);

// Creates a function from a name: `sin`, `cos`, `exp`, `ln`, `const0`,
// optionally prefixed by `-`.
//
// # Safety
// `name` must be a NUL-terminated string; `out` must be writable.
enum PrStatus pr_function_new(const char *name, struct PrFunction **out);

// Applies `x -> scale * x + shift` to the argument.
//
// # Safety
// `f` must be a live handle.
enum PrStatus pr_function_with_pre(struct PrFunction *f, double scale, double shift);

// # Safety
// `f` must be a live handle; `out` must be writable.
enum PrStatus pr_function_eval(const struct PrFunction *f, double x, double *out);

// # Safety
// `f` must be NULL or a handle from [`pr_function_new`], not yet freed.
void pr_function_free(struct PrFunction *f);

// Runs the outer loop on `[lo, hi]`. `lambda` is the shrink factor in (0, 1).
//
// # Safety
// `f` must be a live handle; `out` must be writable.
enum PrStatus pr_para_approximate(const struct PrFunction *f,
                                  double lo,
                                  double hi,
                                  double eps,
                                  enum PrSide s,
                                  double lambda,
                                  struct PrPara **out);

// Uniform constructive approximation with Lipschitz bound `lipschitz`.
//
// # Safety
// `f` must be a live handle; `out` must be writable.
enum PrStatus pr_para_construct(const struct PrFunction *f,
                                double lo,
                                double hi,
                                double eps,
                                double lipschitz,
                                struct PrPara **out);

// Number of parabolas.
//
// # Safety
// `a` must be NULL or a live handle.
size_t pr_para_len(const struct PrPara *a);

// Coefficients `p(x) = a x^2 + b x + c` and the piece `[t_lo, t_hi]` of
// parabola `index`. Any output pointer may be NULL.
//
// # Safety
// `approx` must be a live handle; non-NULL outputs must be writable.
enum PrStatus pr_para_piece(const struct PrPara *approx,
                            size_t index,
                            double *a,
                            double *b,
                            double *c,
                            double *t_lo,
                            double *t_hi);

// Envelope value (max of the parabolas under, min over).
//
// # Safety
// `approx` must be a live handle; `out` must be writable.
enum PrStatus pr_para_envelope(const struct PrPara *approx, double x, double *out);

// Sampled verification; `pass` receives 1 or 0, `worst_relative` the
// largest violation relative to `1 + |f|`.
//
// # Safety
// `approx` must be a live handle; outputs must be writable.
enum PrStatus pr_para_verify(const struct PrPara *approx,
                             size_t samples,
                             int *pass,
                             double *worst_relative);

// # Safety
// `a` must be NULL or a live handle, not yet freed.
void pr_para_free(struct PrPara *a);

// Shifted interpolant with `f - eps <= w <= f` on `[lo, hi]`.
//
// # Safety
// `f` must be a live handle; `out` must be writable.
enum PrStatus pr_pwl_relax(const struct PrFunction *f,
                           double lo,
                           double hi,
                           double eps,
                           struct PrPwl **out);

// Number of linear pieces.
//
// # Safety
// `p` must be NULL or a live handle.
size_t pr_pwl_pieces(const struct PrPwl *p);

// Breakpoint `index` (0..=pieces) and its shifted value.
//
// # Safety
// `p` must be a live handle; non-NULL outputs must be writable.
enum PrStatus pr_pwl_breakpoint(const struct PrPwl *p, size_t index, double *t, double *value);

// Value of the shifted interpolant.
//
// # Safety
// `p` must be a live handle; `out` must be writable.
enum PrStatus pr_pwl_eval(const struct PrPwl *p, double x, double *out);

// # Safety
// `p` must be NULL or a live handle, not yet freed.
void pr_pwl_free(struct PrPwl *p);

// Rounds `[lo, hi]` outward to the look-up-table grid of `name`
// (`sin`, `cos`, `exp` or `ln`).
//
// # Safety
// `name` must be a NUL-terminated string; outputs must be writable.
enum PrStatus pr_round_bounds(const char *name,
                              double lo,
                              double hi,
                              double *out_lo,
                              double *out_hi);

// Parses and reformulates a JSON problem.
//
// # Safety
// `json` must be a NUL-terminated string; `out` must be writable.
enum PrStatus pr_problem_from_json(const char *json, struct PrProblem **out);

// Number of univariate constraints after reformulation.
//
// # Safety
// `p` must be NULL or a live handle.
size_t pr_problem_univariate_count(const struct PrProblem *p);

// # Safety
// `p` must be NULL or a live handle, not yet freed.
void pr_problem_free(struct PrProblem *p);

// Builds the PARA or PWL relaxation of a problem.
//
// # Safety
// `problem` must be a live handle; `out` must be writable.
enum PrStatus pr_relax(const struct PrProblem *problem,
                       enum PrTechnique technique,
                       double eps,
                       double lambda,
                       struct PrModel **out);

// Variable, binary and row counts of a model. Any output may be NULL.
//
// # Safety
// `m` must be a live handle; non-NULL outputs must be writable.
enum PrStatus pr_model_sizes(const struct PrModel *m,
                             size_t *variables,
                             size_t *binaries,
                             size_t *rows);

// Serialises a model; free the result with [`pr_string_free`].
//
// # Safety
// `m` must be a live handle; `out` must be writable.
enum PrStatus pr_model_write(const struct PrModel *m, enum PrFormat format, char **out);

// # Safety
// `m` must be NULL or a live handle, not yet freed.
void pr_model_free(struct PrModel *m);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PARARELAX_H */
