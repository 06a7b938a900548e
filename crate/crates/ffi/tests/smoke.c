/* Blurs a synthetic scene with a box kernel and restores it through the C API. */
#include <math.h>
#include <stdio.h>
#include <stdlib.h>

#include "satdeblur.h"

#define H 32
#define W 32
#define KS 5

static int check(SdStatus s, const char *what) {
    if (s != SD_STATUS_OK) {
        const char *msg = sd_last_error_message();
        printf("%s failed with %d: %s\n", what, (int)s, msg ? msg : "(none)");
        return 1;
    }
    return 0;
}

int main(void) {
    static double sharp[H * W], blurry[H * W];
    double taps[KS * KS];
    for (int i = 0; i < KS * KS; i++)
        taps[i] = 1.0;
    for (int y = 0; y < H; y++)
        for (int x = 0; x < W; x++)
            sharp[y * W + x] = ((x / 6 + y / 6) % 2) ? 0.8 : 0.1;
    for (int y = 0; y < H; y++)
        for (int x = 0; x < W; x++) {
            double acc = 0.0;
            for (int i = 0; i < KS; i++)
                for (int j = 0; j < KS; j++)
                    acc += sharp[((y - i + KS / 2 + H) % H) * W + (x - j + KS / 2 + W) % W];
            blurry[y * W + x] = acc / (KS * KS);
        }

    SdImage *gt = NULL, *b = NULL, *out = NULL;
    SdKernel *k = NULL;
    SdSolverConfig *cfg = NULL;
    if (check(sd_image_new(H, W, 1, sharp, &gt), "gt") || check(sd_image_new(H, W, 1, blurry, &b), "blurry") ||
        check(sd_kernel_new(KS, KS, taps, &k), "kernel") || check(sd_solver_config_new(&cfg), "config") ||
        check(sd_solver_config_set_iterations(cfg, 50), "iterations") || check(sd_deblur(b, k, cfg, &out), "deblur"))
        return 1;

    double before = 0.0, after = 0.0;
    if (check(sd_psnr(b, gt, &before), "psnr") || check(sd_psnr(out, gt, &after), "psnr"))
        return 1;

    if (sd_solver_config_set_map(cfg, "no_such_map") != SD_STATUS_OK)
        return 1;
    SdImage *bad = NULL;
    if (sd_deblur(b, k, cfg, &bad) != SD_STATUS_CONFIG || sd_last_error_message() == NULL || bad != NULL) {
        printf("expected a config error\n");
        return 1;
    }

    printf("satdeblur %s: %.2f dB -> %.2f dB %s\n", sd_version(), before, after, after > before ? "improved" : "worse");
    sd_image_free(gt);
    sd_image_free(b);
    sd_image_free(out);
    sd_kernel_free(k);
    sd_solver_config_free(cfg);
    return after > before ? 0 : 1;
}
