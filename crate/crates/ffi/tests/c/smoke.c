/* Loads a joint checkpoint, encodes a grey image, decodes it under category 0
   and checks a bad call reports an error. Prints the category on success. */
#include <math.h>
#include <stdio.h>
#include <stdlib.h>

#include "vmi.h"

int main(int argc, char **argv) {
    if (argc != 2) {
        fprintf(stderr, "usage: smoke CHECKPOINT\n");
        return 2;
    }
    VmiModel *model = NULL;
    if (vmi_model_load(argv[1], &model) != VMI_STATUS_OK) {
        fprintf(stderr, "load: %s\n", vmi_last_error_message());
        return 1;
    }
    VmiModelInfo info;
    if (vmi_model_info(model, &info) != VMI_STATUS_OK || info.cat_k == 0) {
        return 1;
    }
    double *image = malloc(info.input_dim * sizeof(double));
    double *mu = malloc(info.gauss_dim * sizeof(double));
    double *probs = malloc(info.cat_k * sizeof(double));
    double *pixels = malloc(info.input_dim * sizeof(double));
    for (size_t i = 0; i < info.input_dim; i++) {
        image[i] = 0.5;
    }
    if (vmi_model_encode(model, image, 1, mu, probs) != VMI_STATUS_OK) {
        return 1;
    }
    double total = 0.0;
    for (size_t k = 0; k < info.cat_k; k++) {
        total += probs[k];
    }
    if (fabs(total - 1.0) > 1e-9) {
        return 1;
    }
    uint32_t category = 0;
    if (vmi_model_decode(model, mu, &category, 1, pixels) != VMI_STATUS_OK) {
        return 1;
    }
    if (vmi_model_classify(model, image, 1, &category) != VMI_STATUS_OK) {
        return 1;
    }
    uint32_t bad = (uint32_t)info.cat_k;
    if (vmi_model_decode(model, mu, &bad, 1, pixels) != VMI_STATUS_INVALID_ARGUMENT ||
        vmi_last_error_message() == NULL) {
        return 1;
    }
    printf("%u\n", category);
    vmi_model_free(model);
    free(image);
    free(mu);
    free(probs);
    free(pixels);
    return 0;
}
