/* Builds two 4x4 matrices from the input bytes and prints their product. */
#include "rt.h"

static u8 in[32];

static int run(void) {
    usize n = read_stdin(in, sizeof in);
    double a[4][4], b[4][4], c[4][4];
    for (int i = 0; i < 16; i++) {
        a[i / 4][i % 4] = (i < (int)n ? in[i] : i) / 8.0 - 3.0;
        b[i / 4][i % 4] = (i + 16 < (int)n ? in[i + 16] : 2 * i) * 0.25f;
    }
    for (int i = 0; i < 4; i++)
        for (int j = 0; j < 4; j++) {
            double s = 0;
            for (int k = 0; k < 4; k++)
                s += a[i][k] * b[k][j];
            c[i][j] = s;
        }
    for (int i = 0; i < 4; i++) {
        for (int j = 0; j < 4; j++) {
            double v = c[i][j] * 1000.0;
            i64 r = (i64)(v < 0 ? v - 0.5 : v + 0.5);
            put_i64(r);
            putc_(j == 3 ? '\n' : ' ');
        }
    }
    float f = (float)c[0][0];
    put_hex(*(u32 *)&f, 8);
    putc_('\n');
    return 0;
}
