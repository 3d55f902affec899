/* Minimal consumer of the C API: train a short run, print the first
 * generated points, save a run directory.
 *
 * Build (from the repository root, after `cargo build --release`):
 *   cc crates/ffi/examples/smoke.c -Icrates/ffi/include \
 *      target/release/libsparse_evolve_ffi.a -lm -lpthread -ldl -o smoke
 */
#include <stdio.h>
#include <stdlib.h>

#include "sparse_evolve.h"

static int die(const char *where) {
    fprintf(stderr, "%s: %s\n", where, se_last_error());
    return 1;
}

int main(void) {
    const char *cfg =
        "{\"steps\": 200, \"batch\": 32, \"g_hidden\": [16], \"d_hidden\": [16],"
        " \"latent_dim\": 4, \"eval_interval\": 100, \"eval_samples\": 256,"
        " \"eval_projections\": 4}";

    printf("sparse-evolve %s\n", se_version());

    SeRun *run = NULL;
    if (se_run_new(cfg, &run) != SE_OK) return die("se_run_new");
    if (se_run_execute(run) != SE_OK) return die("se_run_execute");

    uint64_t done = 0;
    se_run_steps_done(run, &done);
    printf("steps done: %llu\n", (unsigned long long)done);

    double xy[8];
    if (se_run_sample(run, 4, 7, true, xy) != SE_OK) return die("se_run_sample");
    for (int i = 0; i < 4; i++) {
        printf("sample %d: (%+.4f, %+.4f)\n", i, xy[2 * i], xy[2 * i + 1]);
    }

    if (se_run_save(run, "smoke-run") != SE_OK) return die("se_run_save");
    printf("run directory written to smoke-run/\n");

    se_run_free(run);
    return 0;
}
