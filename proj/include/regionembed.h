/*
 * C interface to the region embedding pipeline.
 *
 * All functions are thread-compatible (no shared mutable state between
 * contexts); error messages are thread-local. Strings returned through
 * out-parameters are heap-allocated and must be released with
 * regionembed_free().
 */
#ifndef REGIONEMBED_H
#define REGIONEMBED_H

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum regionembed_status {
    REGIONEMBED_OK = 0,
    REGIONEMBED_E_VALIDATION = 1, /* bad input file, config or identifier */
    REGIONEMBED_E_NUMERIC = 2,    /* non-finite values during training */
    REGIONEMBED_E_USAGE = 3       /* API misuse: null handle or argument */
} regionembed_status;

typedef struct regionembed_ctx regionembed_ctx;

const char* regionembed_version(void);

/* Message describing the most recent failure on this thread. */
const char* regionembed_last_error(void);

/* Creates a context from a JSON config document (may be "{}"; defaults are
 * documented in the README). Returns NULL on parse failure, in which case
 * regionembed_last_error() has the details. */
regionembed_ctx* regionembed_open(const char* config_json);
void regionembed_close(regionembed_ctx* ctx);

/* Runs one pipeline stage: synth, build-graphs, train-kg, train, embed,
 * eval-cluster, eval-popularity, ablate or all. Artifacts are written under
 * the config's output directory. When report_json is non-NULL it receives
 * the JSON run report. */
regionembed_status regionembed_run(regionembed_ctx* ctx, const char* subcommand,
                                   char** report_json);

/* Shape and contents of the embedding matrix produced by a previous train or
 * all run of this context's output directory. Rows follow the region file
 * order; the buffer must hold rows*cols doubles, row-major. */
regionembed_status regionembed_embedding_shape(regionembed_ctx* ctx, size_t* rows, size_t* cols);
regionembed_status regionembed_embedding_copy(regionembed_ctx* ctx, double* buffer,
                                              size_t buffer_len);

void regionembed_free(char* ptr);

#ifdef __cplusplus
}
#endif

#endif /* REGIONEMBED_H */
