#include <math.h>
#include <stdio.h>
#include "dragguide.h"

#define CHECK(expr)                                                         \
    do {                                                                    \
        DgStatus s_ = (expr);                                               \
        if (s_ != DG_STATUS_OK) {                                           \
            fprintf(stderr, "%s failed with %d: %s\n", #expr, (int)s_,      \
                    dg_last_error_message());                               \
            return 1;                                                       \
        }                                                                   \
    } while (0)

int main(void) {
    DgSchedule *schedule = NULL;
    CHECK(dg_schedule_new(DG_SCHEDULE_KIND_LOG_LINEAR, 40, 0.0, 20.0, &schedule));
    if (dg_schedule_steps(schedule) != 40) return 2;

    double points[2] = {-3.0, 3.0};
    DgMixture *mixture = NULL;
    CHECK(dg_mixture_empirical(points, 2, 1, 1, 1, &mixture));

    DgSampleOptions options = dg_sample_options_default();
    options.seed = 5;
    double final_state = 0.0;
    CHECK(dg_sample(mixture, NULL, schedule, &options, &final_state, 1, NULL));
    if (fabs(fabs(final_state) - 3.0) > 1e-6) return 3;

    if (dg_schedule_sigma(schedule, 41, &final_state) != DG_STATUS_STEP_OUT_OF_RANGE) return 4;
    if (dg_last_error_message() == NULL) return 5;

    dg_mixture_free(mixture);
    dg_schedule_free(schedule);
    printf("ok %s\n", dg_version());
    return 0;
}
