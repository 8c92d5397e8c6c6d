#include "rt.h"

static u8 buf[8192];

static void quicksort(u8 *a, int lo, int hi) {
    while (lo < hi) {
        u8 pivot = a[(lo + hi) / 2];
        int i = lo, j = hi;
        while (i <= j) {
            while (a[i] < pivot)
                i++;
            while (a[j] > pivot)
                j--;
            if (i <= j) {
                u8 t = a[i];
                a[i] = a[j];
                a[j] = t;
                i++;
                j--;
            }
        }
        if (j - lo < hi - i) {
            quicksort(a, lo, j);
            lo = i;
        } else {
            quicksort(a, i, hi);
            hi = j;
        }
    }
}

static int run(void) {
    usize n = read_stdin(buf, sizeof buf);
    quicksort(buf, 0, (int)n - 1);
    out(buf, n);
    putc_('\n');
    return 0;
}
