/* Reverse-Polish integer calculator. */
#include "rt.h"

static u8 buf[4096];
static i32 stack[64];

static int run(void) {
    usize n = read_stdin(buf, sizeof buf);
    int sp = 0;
    i32 acc = 0;
    int have = 0;
    for (usize i = 0; i <= n; i++) {
        u8 c = i < n ? buf[i] : ' ';
        if (c >= '0' && c <= '9') {
            acc = acc * 10 + (c - '0');
            have = 1;
            continue;
        }
        if (have) {
            if (sp == 64) {
                puts_("overflow\n");
                return 1;
            }
            stack[sp++] = acc;
            acc = 0;
            have = 0;
        }
        if (c == '+' || c == '-' || c == '*' || c == '/' || c == '%') {
            if (sp < 2) {
                puts_("underflow\n");
                return 1;
            }
            i32 b = stack[--sp], a = stack[--sp];
            i32 r;
            switch (c) {
            case '+': r = (i32)((u32)a + (u32)b); break;
            case '-': r = (i32)((u32)a - (u32)b); break;
            case '*': r = (i32)((u32)a * (u32)b); break;
            default:
                if (b == 0 || (a == (i32)0x80000000 && b == -1)) {
                    puts_("division error\n");
                    return 2;
                }
                r = c == '/' ? a / b : a % b;
            }
            stack[sp++] = r;
        } else if (c == '\n' && sp) {
            put_i64(stack[sp - 1]);
            putc_('\n');
        }
    }
    if (sp) {
        put_i64(stack[sp - 1]);
        putc_('\n');
    }
    return 0;
}
