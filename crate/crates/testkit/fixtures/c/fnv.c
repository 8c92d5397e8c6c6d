#include "rt.h"

static u8 buf[16384];

static int run(void) {
    usize n = read_stdin(buf, sizeof buf);
    u64 h = 0xcbf29ce484222325ull;
    u32 h32 = 0x811c9dc5u;
    for (usize i = 0; i < n; i++) {
        h = (h ^ buf[i]) * 0x100000001b3ull;
        h32 = (h32 ^ buf[i]) * 0x01000193u;
    }
    put_hex(h, 16);
    putc_(' ');
    put_hex(h32, 8);
    putc_('\n');
    return 0;
}
