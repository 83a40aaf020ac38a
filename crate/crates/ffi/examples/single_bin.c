/* Unfolds one Poisson bin and prints its variance by every method.
 *
 *   cargo build -p unfoldcov-ffi --release
 *   cc crates/ffi/examples/single_bin.c -Icrates/ffi/include \
 *      target/release/libunfoldcov_ffi.a -lpthread -ldl -lm -o single_bin
 */
#include <stdio.h>

#include "unfoldcov.h"

static int check(UcStatus status) {
    if (status != UC_STATUS_OK) {
        fprintf(stderr, "error %d: %s\n", (int)status, uc_last_error());
        return 1;
    }
    return 0;
}

int main(void) {
    const double observed[1] = {100.0};
    const double response[1] = {1.0};
    const double background[1] = {0.0};
    UcProblem *problem = NULL;
    UcFit *fit = NULL;
    if (check(uc_problem_new(observed, response, background, 1, 1, 0.0, &problem))) return 1;
    if (check(uc_fit(problem, &fit))) return 1;
    for (uint32_t method = 0; method < 3; ++method) {
        UcCovariance *cov = NULL;
        double variance = 0.0;
        if (check(uc_covariance(problem, fit, method, 2000, 1, &cov))) return 1;
        if (check(uc_covariance_values(cov, &variance, 1))) return 1;
        printf("method %u: variance %.3f\n", method, variance);
        uc_covariance_free(cov);
    }
    uc_fit_free(fit);
    uc_problem_free(problem);
    return 0;
}
