/* Exercises the public header from C. Prints "count <n>" and "ok" on success. */
#include <math.h>
#include <stdio.h>
#include <string.h>

#include "adn.h"

#define N 32

static int fail(const char *what, AdnStatus s) {
    fprintf(stderr, "%s: status %d: %s\n", what, (int)s, adn_last_error_message());
    return 1;
}

int main(void) {
    AdnModel *model = NULL;
    AdnStatus s = adn_model_init(2, 1, 7, &model);
    if (s != ADN_STATUS_OK) return fail("init", s);

    uint64_t count = 0;
    s = adn_model_parameter_count(model, &count);
    if (s != ADN_STATUS_OK) return fail("count", s);
    printf("count %llu\n", (unsigned long long)count);

    static float image[N * N], out[N * N];
    for (int i = 0; i < N * N; i++) image[i] = (float)((i % N) * 10 - 100);
    image[N * N / 2 + N / 2] = 3000.0f; /* one metal pixel */

    s = adn_remove_artifacts(model, image, N, N, out);
    if (s != ADN_STATUS_OK) return fail("remove", s);
    for (int i = 0; i < N * N; i++)
        if (!isfinite(out[i])) return fail("remove output", s);
    if (out[N * N / 2 + N / 2] != 3000.0f) return fail("metal restamp", s);

    s = adn_baseline(ADN_BASELINE_LI, image, N, out);
    if (s != ADN_STATUS_OK) return fail("baseline", s);

    s = adn_remove_artifacts(NULL, image, N, N, out);
    if (s != ADN_STATUS_NULL_POINTER || strlen(adn_last_error_message()) == 0)
        return fail("null model", s);
    s = adn_remove_artifacts(model, image, 30, 30, out);
    if (s != ADN_STATUS_INVALID_ARGUMENT) return fail("odd size", s);
    s = adn_model_load("/nonexistent/model.adnc", &model);
    if (s != ADN_STATUS_IO) return fail("missing file", s);

    adn_model_free(model);
    adn_model_free(NULL);
    printf("ok %s\n", adn_version());
    return 0;
}
