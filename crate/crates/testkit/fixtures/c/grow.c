/* Growable byte vector built with realloc; prints it back in words. */
#include "rt.h"

static u8 in[4096];

static int run(void) {
    usize n = read_stdin(in, sizeof in);
    u8 *vec = 0;
    usize len = 0, cap = 0;
    for (usize i = 0; i < n; i++) {
        if (len == cap) {
            cap = cap ? cap * 2 : 4;
            u8 *next = realloc(vec, cap);
            if (!next)
                return 1;
            vec = next;
        }
        vec[len++] = in[i] ^ 0x20;
    }
    u32 *words = calloc(len / 4 + 1, 4);
    if (len && !words)
        return 1;
    for (usize i = 0; i < len; i++)
        words[i / 4] |= (u32)vec[i] << (8 * (i % 4));
    for (usize i = 0; i < (len + 3) / 4; i++) {
        put_hex(words[i], 8);
        putc_(' ');
    }
    putc_('\n');
    free(words);
    free(vec);
    put_u64(cap);
    putc_('\n');
    return 0;
}
