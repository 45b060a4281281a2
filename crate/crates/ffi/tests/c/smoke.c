#include <math.h>
#include <stdio.h>
#include <string.h>

#include "l2o.h"

#define CHECK(cond)                                              \
    do {                                                         \
        if (!(cond)) {                                           \
            fprintf(stderr, "%s:%d: %s\n", __FILE__, __LINE__, #cond); \
            return 1;                                            \
        }                                                        \
    } while (0)

int main(int argc, char **argv) {
    double v = 0.0;
    const double f[2] = {3.0, 5.0}, f_star[2] = {1.0, 3.0};
    CHECK(l2o_relative_loss(f, f_star, 2, &v) == L2O_STATUS_OK);
    CHECK(v == 1.0);

    const double x_hat[2] = {1.0, 0.0}, x_star[2] = {2.0, 0.0};
    CHECK(l2o_nmse_db(x_hat, x_star, 2, &v) == L2O_STATUS_OK);
    CHECK(fabs(v - 10.0 * log10(0.25)) < 1e-12);

    /* 2 x 3 dictionary, column-major */
    const double a[6] = {1.0, 0.0, 0.0, 1.0, 0.6, 0.8};
    L2oUnrolled *net = NULL;
    CHECK(l2o_unrolled_ista_init("nope", a, 2, 3, 0.1, 4, &net) == L2O_STATUS_CONFIG);
    char msg[256];
    CHECK(l2o_last_error(msg, sizeof msg) > 0 && strstr(msg, "nope") != NULL);
    CHECK(l2o_unrolled_ista_init("alista", a, 2, 3, 0.1, 4, &net) == L2O_STATUS_OK);
    size_t m = 0, n = 0, depth = 0;
    CHECK(l2o_unrolled_shape(net, &m, &n, &depth) == L2O_STATUS_OK);
    CHECK(m == 2 && n == 3 && depth == 4);
    const double b[2] = {1.0, 0.5};
    double x[3] = {0};
    CHECK(l2o_unrolled_forward(net, b, 1, 4, x) == L2O_STATUS_OK);
    CHECK(x[0] > 0.0);
    CHECK(l2o_unrolled_forward(net, b, 1, 9, x) == L2O_STATUS_INVALID_ARGUMENT);
    if (argc > 1) {
        char path[512];
        snprintf(path, sizeof path, "%s/net.ol2o", argv[1]);
        CHECK(l2o_unrolled_save(net, path) == L2O_STATUS_OK);
        L2oUnrolled *back = NULL;
        CHECK(l2o_unrolled_load(path, &back) == L2O_STATUS_OK);
        double y[3] = {0};
        CHECK(l2o_unrolled_forward(back, b, 1, 4, y) == L2O_STATUS_OK);
        CHECK(memcmp(x, y, sizeof x) == 0);
        l2o_unrolled_free(back);
    }
    l2o_unrolled_free(net);

    L2oLstm *lstm = NULL;
    L2oLstmSession *s = NULL;
    CHECK(l2o_lstm_init(7, 4, 2, &lstm) == L2O_STATUS_OK);
    CHECK(l2o_lstm_session_new(lstm, 3, &s) == L2O_STATUS_OK);
    const double g[3] = {0.5, -1.0, 0.0};
    double u[3];
    CHECK(l2o_lstm_session_step(s, g, 3, u) == L2O_STATUS_OK);
    CHECK(isfinite(u[0]) && isfinite(u[1]) && isfinite(u[2]));
    CHECK(l2o_lstm_session_step(s, g, 2, u) == L2O_STATUS_DIMENSION_MISMATCH);
    CHECK(l2o_lstm_session_step(NULL, g, 3, u) == L2O_STATUS_NULL_POINTER);
    l2o_lstm_session_free(s);
    l2o_lstm_free(lstm);
    l2o_lstm_free(NULL);

    printf("ok %s\n", l2o_version());
    return 0;
}
