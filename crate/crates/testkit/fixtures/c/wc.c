#include "rt.h"

static u8 buf[16384];

static int is_space(u8 c) { return c == ' ' || c == '\n' || c == '\t' || c == '\r'; }

static int run(void) {
    usize n = read_stdin(buf, sizeof buf);
    u32 lines = 0, words = 0;
    int in_word = 0;
    for (usize i = 0; i < n; i++) {
        if (buf[i] == '\n')
            lines++;
        if (is_space(buf[i])) {
            in_word = 0;
        } else if (!in_word) {
            in_word = 1;
            words++;
        }
    }
    put_u64(lines);
    putc_(' ');
    put_u64(words);
    putc_(' ');
    put_u64(n);
    putc_('\n');
    return lines > 100 ? 3 : 0;
}
