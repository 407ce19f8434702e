#include <math.h>
#include <stdio.h>
#include <string.h>

#include "wsoftmax.h"

int main(void) {
    WsSimplex *s = NULL;
    size_t rows = 0, cols = 0;
    double w[12];
    if (ws_simplex_new(4, &s) != WS_STATUS_OK) return 1;
    if (ws_simplex_shape(s, &rows, &cols) != WS_STATUS_OK || rows != 3 || cols != 4) return 2;
    if (ws_simplex_copy_weights(s, w, 12) != WS_STATUS_OK) return 3;
    ws_simplex_free(s);

    /* columns 0 and 1: cosine -1/3 */
    double d = 0.0;
    for (size_t r = 0; r < rows; r++) d += w[r * cols] * w[r * cols + 1];
    if (fabs(d + 1.0 / 3.0) > 1e-12) return 4;

    double logits[2] = {0.05, -0.05}, p[2];
    if (ws_softmax_probs(logits, 2, p) != WS_STATUS_OK || fabs(p[0] - 0.525) > 1e-3) return 5;

    if (ws_simplex_new(1, &s) != WS_STATUS_INVALID_ARGUMENT || s != NULL) return 6;
    if (strlen(ws_last_error_message()) == 0) return 7;

    printf("ok %s\n", ws_version());
    return 0;
}
