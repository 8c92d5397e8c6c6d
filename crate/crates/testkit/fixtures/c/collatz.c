#include "rt.h"

static u8 in[64];

static int run(void) {
    usize n = read_stdin(in, sizeof in);
    u64 seed = 27;
    for (usize i = 0; i < n && i < 8; i++)
        seed = seed * 257 + in[i];
    seed = seed % 100000 + 1;
    u64 best = 0, best_start = 0;
    for (u64 s = seed; s < seed + 40; s++) {
        u64 x = s, steps = 0;
        i64 signed_sum = 0;
        while (x != 1) {
            x = (x & 1) ? 3 * x + 1 : x >> 1;
            signed_sum += (i64)(x % 7) - 3;
            steps++;
        }
        if (steps > best) {
            best = steps;
            best_start = s;
        }
        if (s == seed) {
            put_i64(signed_sum);
            putc_('\n');
        }
    }
    put_u64(best_start);
    putc_(' ');
    put_u64(best);
    putc_('\n');
    return 0;
}
