#include "rt.h"

static u8 in[3072];
static const char tbl[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

static int run(void) {
    usize n = read_stdin(in, sizeof in);
    usize i = 0;
    for (; i + 2 < n; i += 3) {
        u32 v = (u32)in[i] << 16 | (u32)in[i + 1] << 8 | in[i + 2];
        char q[4] = {tbl[v >> 18], tbl[(v >> 12) & 63], tbl[(v >> 6) & 63], tbl[v & 63]};
        out(q, 4);
    }
    if (n - i == 1) {
        u32 v = (u32)in[i] << 16;
        char q[4] = {tbl[v >> 18], tbl[(v >> 12) & 63], '=', '='};
        out(q, 4);
    } else if (n - i == 2) {
        u32 v = (u32)in[i] << 16 | (u32)in[i + 1] << 8;
        char q[4] = {tbl[v >> 18], tbl[(v >> 12) & 63], tbl[(v >> 6) & 63], '='};
        out(q, 4);
    }
    putc_('\n');
    return 0;
}
