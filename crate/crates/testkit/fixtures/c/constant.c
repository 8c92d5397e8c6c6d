/* Behaves identically for every input. */
#include "rt.h"

static int run(void) {
    u32 x = 1;
    for (int i = 0; i < 10; i++)
        x = x * 3 + 1;
    put_u64(x);
    putc_('\n');
    return 0;
}
