/* Byte-code interpreter dispatching through a function table. */
#include "rt.h"

static u8 in[1024];
static i32 acc;

NOINLINE static void op_inc(u8 a) { acc += a; }
NOINLINE static void op_dec(u8 a) { acc -= a; }
NOINLINE static void op_mul(u8 a) { acc *= (a | 1); }
NOINLINE static void op_rot(u8 a) { acc = (i32)(((u32)acc << (a & 31)) | ((u32)acc >> ((32 - (a & 31)) & 31))); }
NOINLINE static void op_print(u8 a) {
    (void)a;
    put_i64(acc);
    putc_('\n');
}

static void (*const ops[])(u8) = {op_inc, op_dec, op_mul, op_rot, op_print};

static int run(void) {
    usize n = read_stdin(in, sizeof in);
    for (usize i = 0; i + 1 < n; i += 2)
        ops[in[i] % 5](in[i + 1]);
    op_print(0);
    return 0;
}
