#include <stdio.h>
#include <string.h>

#include "nrdc.h"

#define CHECK(call)                                                      \
    do {                                                                 \
        NrdcStatus s_ = (call);                                          \
        if (s_ != NRDC_STATUS_OK) {                                      \
            fprintf(stderr, "%s -> %d: %s\n", #call, s_, nrdc_last_error()); \
            return 1;                                                    \
        }                                                                \
    } while (0)

int main(void) {
    NrdcConfig *cfg = NULL;
    NrdcRun *run = NULL;
    NrdcSignature *sig = NULL;
    double mean = 0.0, se = 0.0, area = 0.0;
    double pts[] = {0.0, 0.0, 1.0, 0.0, 1.0, 1.0};
    size_t word[] = {0, 1};

    CHECK(nrdc_config_from_preset("lq_fbm_markov", "smoke", &cfg));
    CHECK(nrdc_config_set_batches(cfg, 1));
    CHECK(nrdc_train(cfg, 1, &run));
    CHECK(nrdc_run_evaluation(run, &mean, &se));
    if (!(mean > 0.0 && se > 0.0)) return 2;

    CHECK(nrdc_signature_of_path(pts, 3, 2, 2, &sig));
    CHECK(nrdc_signature_coeff(sig, word, 2, &area));
    if (area != 1.0) return 3;

    if (nrdc_config_from_preset("missing", NULL, &cfg) != NRDC_STATUS_CONFIG) return 4;
    if (strstr(nrdc_last_error(), "missing") == NULL) return 5;

    printf("%s %.6f %.6f\n", nrdc_version(), mean, se);
    nrdc_signature_free(sig);
    nrdc_run_free(run);
    nrdc_config_free(cfg);
    return 0;
}
