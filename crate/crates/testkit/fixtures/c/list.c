/* Sorted singly linked list of input bytes, then reversed and freed. */
#include "rt.h"

typedef struct node {
    struct node *next;
    u8 value;
} node;

static u8 in[2048];

static int run(void) {
    usize n = read_stdin(in, sizeof in);
    node *head = 0;
    for (usize i = 0; i < n; i++) {
        node *m = malloc(sizeof *m);
        if (!m)
            return 1;
        m->value = in[i];
        node **pp = &head;
        while (*pp && (*pp)->value < m->value)
            pp = &(*pp)->next;
        m->next = *pp;
        *pp = m;
    }
    node *rev = 0;
    while (head) {
        node *next = head->next;
        head->next = rev;
        rev = head;
        head = next;
    }
    u32 count = 0;
    while (rev) {
        node *next = rev->next;
        putc_((char)rev->value);
        free(rev);
        rev = next;
        count++;
    }
    putc_('\n');
    put_u64(count);
    putc_('\n');
    return 0;
}
