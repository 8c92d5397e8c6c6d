/* Prints the file named by argv[1] from the preopened directory (fd 3). */
#include "rt.h"

WASI(args_sizes_get) u32 __wasi_args_sizes_get(usize *argc, usize *size);
WASI(args_get) u32 __wasi_args_get(u8 **argv, u8 *buf);
WASI(path_open)
u32 __wasi_path_open(u32 dirfd, u32 dirflags, const u8 *path, usize path_len, u32 oflags, u64 rights,
                     u64 inheriting, u32 fdflags, u32 *fd);
WASI(fd_close) u32 __wasi_fd_close(u32 fd);

static u8 *ptrs[8];
static u8 strs[1024];
static u8 buf[4096];

static int run(void) {
    usize argc, size;
    if (__wasi_args_sizes_get(&argc, &size) || argc < 2 || argc > 8 || size > sizeof strs)
        return 64;
    __wasi_args_get(ptrs, strs);
    const u8 *path = ptrs[1];
    while (*path == '/')
        path++;
    u32 fd;
    u32 err = __wasi_path_open(3, 0, path, str_len((const char *)path), 0, 2, 0, 0, &fd);
    if (err) {
        puts_("open failed\n");
        return 2;
    }
    for (;;) {
        ciovec v = {buf, sizeof buf};
        usize n;
        if (__wasi_fd_read(fd, &v, 1, &n) || n == 0)
            break;
        if (n >= 2 && buf[0] == 'O' && buf[1] == 'K')
            puts_("magic ");
        out(buf, n);
    }
    __wasi_fd_close(fd);
    return 0;
}
