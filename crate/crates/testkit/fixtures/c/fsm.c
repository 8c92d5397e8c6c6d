/* Tokenizer state machine driven by a dense switch. */
#include "rt.h"

static u8 in[4096];

enum { START, IDENT, NUMBER, STRING, ESCAPE, COMMENT, PUNCT };

static int run(void) {
    usize n = read_stdin(in, sizeof in);
    int state = START;
    u32 counts[7] = {0};
    for (usize i = 0; i <= n; i++) {
        u8 c = i < n ? in[i] : 0;
        int cls = c == 0 ? 0 : (c >= 'a' && c <= 'z') || c == '_' ? 1 : (c >= '0' && c <= '9') ? 2 : c == '"' ? 3 : c == '\\' ? 4 : c == '#' ? 5 : c == '\n' ? 6 : 7;
        switch (state) {
        case START:
            switch (cls) {
            case 1: state = IDENT; break;
            case 2: state = NUMBER; break;
            case 3: state = STRING; break;
            case 5: state = COMMENT; break;
            case 7: state = PUNCT; break;
            default: break;
            }
            break;
        case IDENT:
            if (cls != 1 && cls != 2) {
                counts[IDENT]++;
                state = START;
                i--;
            }
            break;
        case NUMBER:
            if (cls != 2) {
                counts[NUMBER]++;
                state = START;
                i--;
            }
            break;
        case STRING:
            if (cls == 4)
                state = ESCAPE;
            else if (cls == 3 || cls == 0) {
                counts[STRING]++;
                state = START;
            }
            break;
        case ESCAPE:
            counts[ESCAPE]++;
            state = cls == 0 ? START : STRING;
            break;
        case COMMENT:
            if (cls == 6 || cls == 0) {
                counts[COMMENT]++;
                state = START;
            }
            break;
        case PUNCT:
            counts[PUNCT]++;
            state = START;
            i--;
            break;
        }
        if (c == 0)
            break;
    }
    for (int k = 1; k < 7; k++) {
        put_u64(counts[k]);
        putc_(k == 6 ? '\n' : ' ');
    }
    return 0;
}
