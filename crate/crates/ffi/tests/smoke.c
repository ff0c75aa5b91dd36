#include <stdio.h>
#include <string.h>

#include "nff.h"

#define CHECK(call)                                                       \
    do {                                                                  \
        NffStatus s_ = (call);                                            \
        if (s_ != NFF_STATUS_OK) {                                        \
            fprintf(stderr, "%s -> %d: %s\n", #call, (int)s_, nff_last_error()); \
            return 1;                                                     \
        }                                                                 \
    } while (0)

int main(int argc, char **argv) {
    if (argc != 2) {
        return 2;
    }
    NffScene *scene = NULL;
    NffGenerator *gen = NULL;
    NffRender *render = NULL;
    const double *rgb = NULL;
    size_t h = 0, w = 0;

    if (nff_scene_make("no-such-preset", 0, &scene) != NFF_STATUS_INVALID_ARGUMENT || !nff_last_error()) {
        return 3;
    }
    CHECK(nff_scene_make("tiny", 1, &scene));
    CHECK(nff_generator_init(scene, 2, &gen));
    CHECK(nff_render(gen, scene, 0, true, &render));
    CHECK(nff_render_rgb(render, &rgb, &h, &w));
    CHECK(nff_render_write_ppm(render, argv[1]));
    printf("%s %zux%zu %.6f\n", nff_version(), w, h, rgb[0]);

    nff_render_free(render);
    nff_generator_free(gen);
    nff_scene_free(scene);
    return 0;
}
