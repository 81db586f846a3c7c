/* Minimal C consumer of the library: load a built-in scenario, inspect its
 * shape, solve one step, check the certificate, and run a short simulation.
 * Compiled and executed by the `api` test suite when a C compiler is
 * available. */

#include <stdint.h>
#include <stdio.h>
#include <string.h>

#include "admpc.h"

static int fail(const char *what) {
    fprintf(stderr, "%s: %s\n", what, admpc_last_error());
    return 1;
}

int main(void) {
    AdmpcScenario *scenario = NULL;
    if (admpc_scenario_load("example1", &scenario) != ADMPC_STATUS_OK)
        return fail("load");
    if (admpc_scenario_state_dim(scenario) != 2 ||
        admpc_scenario_control_dim(scenario) != 2 ||
        admpc_scenario_horizon(scenario) != 2 ||
        admpc_scenario_default_steps(scenario) != 10)
        return fail("shape");

    int8_t signs[4];
    if (admpc_scenario_sign_vector(scenario, signs, 4) != ADMPC_STATUS_OK)
        return fail("signs");
    if (signs[0] != 1 || signs[1] != -1 || signs[2] != 1 || signs[3] != -1)
        return fail("sign values");

    AdmpcSolution *solution = NULL;
    if (admpc_solve(scenario, NULL, 0, &solution) != ADMPC_STATUS_OK)
        return fail("solve");
    if (!admpc_solution_exact(solution))
        return fail("exactness certificate");

    double u[4];
    if (admpc_solution_control(solution, u, 4) != ADMPC_STATUS_OK)
        return fail("control");
    double r2 = u[0] * u[0] + u[1] * u[1];
    if (r2 < 0.2 - 1e-6 || r2 > 0.5 + 1e-6)
        return fail("first control left its annulus");

    char *csv = NULL;
    if (admpc_simulate(scenario, 3, ADMPC_FORMAT_CSV, &csv) != ADMPC_STATUS_OK)
        return fail("simulate");
    if (strncmp(csv, "k,x0,x1,u0,u1,", 14) != 0)
        return fail("csv header");

    admpc_string_free(csv);
    admpc_solution_free(solution);
    admpc_scenario_free(scenario);
    return 0;
}
