/* Prints its arguments and the environment, one per line. */
#include "rt.h"

WASI(args_sizes_get) u32 __wasi_args_sizes_get(usize *argc, usize *size);
WASI(args_get) u32 __wasi_args_get(u8 **argv, u8 *buf);
WASI(environ_sizes_get) u32 __wasi_environ_sizes_get(usize *count, usize *size);
WASI(environ_get) u32 __wasi_environ_get(u8 **env, u8 *buf);

static u8 *ptrs[64];
static u8 strs[4096];

static int run(void) {
    usize argc, size;
    if (__wasi_args_sizes_get(&argc, &size) || argc > 64 || size > sizeof strs)
        return 1;
    __wasi_args_get(ptrs, strs);
    for (usize i = 0; i < argc; i++) {
        puts_((const char *)ptrs[i]);
        putc_('\n');
    }
    if (__wasi_environ_sizes_get(&argc, &size) || argc > 64 || size > sizeof strs)
        return 1;
    __wasi_environ_get(ptrs, strs);
    for (usize i = 0; i < argc; i++) {
        puts_((const char *)ptrs[i]);
        putc_('\n');
    }
    return (int)argc;
}
