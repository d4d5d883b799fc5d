#include <math.h>
#include <stdio.h>
#include <string.h>

#include "lina.h"

static int fail(const char *what) {
    char *msg = lina_last_error_message();
    fprintf(stderr, "%s: %s\n", what, msg ? msg : "(no message)");
    lina_string_free(msg);
    return 1;
}

int main(void) {
    LinaProgram *p = NULL;
    if (lina_program_parse("(def square ((x R);) (R;) (mul x x))", &p) != LINA_STATUS_OK)
        return fail("parse");
    if (lina_program_check(p) != LINA_STATUS_OK)
        return fail("check");

    double x = 3.0, g = 0.0;
    size_t n = 0;
    if (lina_gradient(p, "square", &x, 1, &g, 1, &n) != LINA_STATUS_OK)
        return fail("gradient");
    if (n != 1 || fabs(g - 6.0) > 1e-12)
        return fail("gradient value");

    LinaProgram *q = NULL;
    if (lina_jvp(p, "square", &q) != LINA_STATUS_OK)
        return fail("jvp");
    double dx = 1.0, y = 0.0, dy = 0.0;
    size_t ny = 0, ndy = 0;
    uint64_t work = 0;
    if (lina_eval(q, "square.jvp", &x, 1, &dx, 1, &y, 1, &ny, &dy, 1, &ndy, &work) != LINA_STATUS_OK)
        return fail("eval");
    if (y != 9.0 || dy != 6.0 || work != 4)
        return fail("eval values");

    LinaProgram *bad = NULL;
    if (lina_program_parse("(def f", &bad) != LINA_STATUS_PARSE_ERROR || bad != NULL)
        return fail("expected parse error");

    printf("ok %s\n", lina_version());
    lina_program_free(q);
    lina_program_free(p);
    return 0;
}
