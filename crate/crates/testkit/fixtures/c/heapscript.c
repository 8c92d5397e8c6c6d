/* Executes a byte script against a small table of heap chunks:
   'a' slot size   allocate
   'c' slot n m    calloc
   'r' slot size   realloc
   'w' slot off v  write one byte at payload[off] (off is signed)
   'f' slot        free
   'p' slot        print a checksum of the payload */
#include "rt.h"

#define SLOTS 8

static u8 script[4096];
static u8 *slot[SLOTS];
static u32 len[SLOTS];

static int run(void) {
    usize n = read_stdin(script, sizeof script);
    usize i = 0;
    while (i < n) {
        u8 op = script[i++];
        if (i >= n)
            break;
        u32 s = script[i++] % SLOTS;
        switch (op) {
        case 'a':
            if (i >= n)
                return 0;
            len[s] = script[i++];
            slot[s] = malloc(len[s]);
            break;
        case 'c':
            if (i + 1 >= n)
                return 0;
            len[s] = (u32)script[i] * script[i + 1];
            slot[s] = calloc(script[i], script[i + 1]);
            i += 2;
            break;
        case 'r':
            if (i >= n)
                return 0;
            len[s] = script[i++];
            slot[s] = realloc(slot[s], len[s]);
            break;
        case 'w':
            if (i + 1 >= n)
                return 0;
            if (slot[s])
                slot[s][(signed char)script[i]] = script[i + 1];
            i += 2;
            break;
        case 'f':
            free(slot[s]);
            slot[s] = 0;
            len[s] = 0;
            break;
        case 'p': {
            u32 h = 0;
            for (u32 k = 0; slot[s] && k < len[s]; k++)
                h = h * 31 + slot[s][k];
            put_u64(h);
            putc_('\n');
            break;
        }
        default:
            break;
        }
    }
    return 0;
}
