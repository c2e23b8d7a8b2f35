/*
 * Golden-vector replay driver for emitted inference sources.
 *
 * Reads the vector CSV (input_0..input_{F-1},expected_class,expected_trees)
 * from stdin or from a path argument, runs predict_with_count on each row
 * and prints one line per vector. Exits nonzero on any mismatch.
 */
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#include "inference.h"

#define LINE_MAX_LEN 65536

int main(int argc, char **argv) {
    FILE *in = stdin;
    if (argc > 1) {
        in = fopen(argv[1], "r");
        if (!in) {
            fprintf(stderr, "cannot open %s\n", argv[1]);
            return 2;
        }
    }
    static char line[LINE_MAX_LEN];
    if (!fgets(line, LINE_MAX_LEN, in)) {
        printf("vacuous: empty vector file\n");
        return 0;
    }
    int count = 0;
    int failures = 0;
    while (fgets(line, LINE_MAX_LEN, in)) {
        if (line[0] == '\n' || line[0] == '\0') {
            continue;
        }
        input_t x[INPUT_LEN];
        char *tok = strtok(line, ",\n");
        int fields = 0;
        for (int i = 0; i < INPUT_LEN && tok; i++) {
            x[i] = (input_t)strtol(tok, NULL, 10);
            tok = strtok(NULL, ",\n");
            fields++;
        }
        if (fields < INPUT_LEN || !tok) {
            fprintf(stderr, "vector %d: malformed row\n", count + 1);
            return 2;
        }
        long expected_class = strtol(tok, NULL, 10);
        tok = strtok(NULL, ",\n");
        if (!tok) {
            fprintf(stderr, "vector %d: missing expected_trees\n", count + 1);
            return 2;
        }
        long expected_trees = strtol(tok, NULL, 10);
        int32_t trees = 0;
        int cls = predict_with_count(x, &trees);
        count++;
        int ok = (cls == (int)expected_class) && ((long)trees == expected_trees);
        if (!ok) {
            failures++;
        }
        printf("vector %d: %s class=%d trees=%d expected_class=%ld expected_trees=%ld\n",
               count, ok ? "pass" : "FAIL", cls, (int)trees,
               expected_class, expected_trees);
    }
    if (count == 0) {
        printf("vacuous: header only, 0 vectors\n");
        if (in != stdin) {
            fclose(in);
        }
        return 0;
    }
    printf("summary: %d/%d pass\n", count - failures, count);
    if (in != stdin) {
        fclose(in);
    }
    return failures ? 1 : 0;
}
