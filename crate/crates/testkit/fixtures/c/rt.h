/* Minimal freestanding runtime for the fixture programs. */
#ifndef RT_H
#define RT_H

typedef unsigned char u8;
typedef unsigned short u16;
typedef unsigned int u32;
typedef int i32;
typedef unsigned long long u64;
typedef long long i64;
typedef unsigned long usize;

#define WASI(name) __attribute__((import_module("wasi_snapshot_preview1"), import_name(#name)))
#define EXPORT(name) __attribute__((export_name(#name)))
#define NOINLINE __attribute__((noinline))

typedef struct {
    const u8 *buf;
    usize len;
} ciovec;

WASI(fd_write) u32 __wasi_fd_write(u32 fd, const ciovec *iovs, usize n, usize *written);
WASI(fd_read) u32 __wasi_fd_read(u32 fd, const ciovec *iovs, usize n, usize *nread);
WASI(proc_exit) _Noreturn void __wasi_proc_exit(u32 code);

void *memcpy(void *dst, const void *src, usize n) {
    u8 *d = dst;
    const u8 *s = src;
    while (n--)
        *d++ = *s++;
    return dst;
}

void *memset(void *dst, int c, usize n) {
    u8 *d = dst;
    while (n--)
        *d++ = (u8)c;
    return dst;
}

void *memmove(void *dst, const void *src, usize n) {
    u8 *d = dst;
    const u8 *s = src;
    if (d < s) {
        while (n--)
            *d++ = *s++;
    } else {
        while (n--)
            d[n] = s[n];
    }
    return dst;
}

int memcmp(const void *a, const void *b, usize n) {
    const u8 *x = a, *y = b;
    for (; n; n--, x++, y++)
        if (*x != *y)
            return *x - *y;
    return 0;
}

static usize str_len(const char *s) {
    usize n = 0;
    while (s[n])
        n++;
    return n;
}

static void write_fd(u32 fd, const void *p, usize n) {
    ciovec v = {p, n};
    usize w;
    while (n) {
        if (__wasi_fd_write(fd, &v, 1, &w) || w == 0)
            return;
        v.buf += w;
        v.len -= w;
        n -= w;
    }
}

static void out(const void *p, usize n) { write_fd(1, p, n); }
static void puts_(const char *s) { out(s, str_len(s)); }
static void putc_(char c) { out(&c, 1); }

static void put_u64(u64 v) {
    char tmp[24];
    int i = 24;
    do {
        tmp[--i] = (char)('0' + v % 10);
        v /= 10;
    } while (v);
    out(tmp + i, 24 - i);
}

static void put_i64(i64 v) {
    if (v < 0) {
        putc_('-');
        put_u64((u64)0 - (u64)v);
    } else {
        put_u64((u64)v);
    }
}

static void put_hex(u64 v, int digits) {
    static const char hex[] = "0123456789abcdef";
    for (int i = digits - 1; i >= 0; i--)
        putc_(hex[(v >> (i * 4)) & 15]);
}

/* Reads at most cap bytes of stdin. */
static usize read_stdin(u8 *buf, usize cap) {
    usize total = 0;
    while (total < cap) {
        ciovec v = {buf + total, cap - total};
        usize n;
        if (__wasi_fd_read(0, &v, 1, &n) || n == 0)
            break;
        total += n;
    }
    return total;
}

/* First-fit allocator on pages obtained with memory.grow. */
typedef struct chunk {
    u32 size;
    struct chunk *next;
} chunk;

static chunk *free_list;
static u8 *bump, *bump_end;

NOINLINE static void *core_alloc(u32 n) {
    if (n > 0xFFFF0000u)
        return 0;
    n = (n + 7) & ~7u;
    if (n < 8)
        n = 8;
    for (chunk **pp = &free_list; *pp; pp = &(*pp)->next) {
        if ((*pp)->size >= n) {
            chunk *c = *pp;
            *pp = c->next;
            return (u8 *)c + 8;
        }
    }
    if ((usize)(bump_end - bump) < n + 8) {
        u32 pages = (n + 8 + 65535) / 65536;
        int old = __builtin_wasm_memory_grow(0, pages);
        if (old < 0)
            return 0;
        u8 *base = (u8 *)((usize)old * 65536);
        if (base != bump_end)
            bump = base;
        bump_end = base + (usize)pages * 65536;
    }
    chunk *c = (chunk *)bump;
    c->size = n;
    bump += n + 8;
    return (u8 *)c + 8;
}

NOINLINE static void core_free(void *p) {
    if (!p)
        return;
    chunk *c = (chunk *)((u8 *)p - 8);
    c->next = free_list;
    free_list = c;
}

NOINLINE static void *core_calloc(u32 nitems, u32 size) {
    u64 total = (u64)nitems * size;
    if (total > 0xFFFFFFFFu)
        return 0;
    void *p = core_alloc((u32)total);
    if (p)
        memset(p, 0, (usize)total);
    return p;
}

EXPORT(malloc) NOINLINE void *malloc(usize n) { return core_alloc(n); }

EXPORT(calloc) NOINLINE void *calloc(usize nitems, usize size) { return core_calloc(nitems, size); }

EXPORT(free) NOINLINE void free(void *p) { core_free(p); }

EXPORT(realloc) NOINLINE void *realloc(void *p, usize n) {
    if (!p)
        return core_alloc(n);
    void *q = core_alloc(n);
    if (!q)
        return 0;
    u32 old = ((chunk *)((u8 *)p - 8))->size;
    memcpy(q, p, old < n ? old : n);
    core_free(p);
    return q;
}

static int run(void);

EXPORT(_start) void _start(void) { __wasi_proc_exit((u32)run()); }

#endif
