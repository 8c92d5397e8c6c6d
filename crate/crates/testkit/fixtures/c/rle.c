#include "rt.h"

static u8 in[4096];
static u8 enc[8192];
static u8 dec[4096];

static int run(void) {
    usize n = read_stdin(in, sizeof in);
    usize e = 0;
    for (usize i = 0; i < n;) {
        usize j = i;
        while (j < n && in[j] == in[i] && j - i < 255)
            j++;
        enc[e++] = (u8)(j - i);
        enc[e++] = in[i];
        i = j;
    }
    usize d = 0;
    for (usize i = 0; i < e; i += 2)
        for (u8 k = 0; k < enc[i]; k++)
            dec[d++] = enc[i + 1];
    for (usize i = 0; i < e; i++)
        put_hex(enc[i], 2);
    putc_('\n');
    if (d != n || memcmp(dec, in, n) != 0) {
        puts_("mismatch\n");
        return 1;
    }
    return 0;
}
