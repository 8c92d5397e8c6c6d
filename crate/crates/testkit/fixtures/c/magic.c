/* Crashes only for inputs starting with "42" that are long enough to run
   past an 8-byte frame-local buffer. */
#include "rt.h"

static u8 input[4096];

NOINLINE static void copy_tail(const u8 *src, usize n) {
    char buf[8];
    memcpy(buf, src, n);
    out(buf, n < 8 ? n : 8);
}

static int run(void) {
    usize n = read_stdin(input, sizeof input);
    if (n > 0 && input[0] == '4') {
        puts_("four\n");
        if (n > 1 && input[1] == '2') {
            puts_("forty-two\n");
            copy_tail(input + 2, n - 2);
        }
    } else {
        puts_("nope\n");
    }
    return 0;
}
