#ifndef KSEG_H
#define KSEG_H

/* C interface to the slag segmentation toolkit. All entry points return a
 * status code; on failure kseg_last_error() describes the most recent error
 * on the calling thread. Configuration travels through an opaque handle. */

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum kseg_status {
  KSEG_OK = 0,
  KSEG_ERR_IO = 1,
  KSEG_ERR_CONFIG = 2,
  KSEG_ERR_SHAPE = 3,
  KSEG_ERR_NUMERIC = 4,
  KSEG_ERR_STATE = 5,
  KSEG_ERR_INVALID_ARGUMENT = 6
} kseg_status;

typedef struct kseg_config kseg_config;

const char* kseg_version(void);

/* thread-local message for the last failed call; never NULL */
const char* kseg_last_error(void);

/* short machine-parsable class name for a status code ("io", "config", ...) */
const char* kseg_status_name(kseg_status status);

kseg_config* kseg_config_new(void);
void kseg_config_free(kseg_config* cfg);

/* key=value file; values already set are overwritten */
kseg_status kseg_config_load_file(kseg_config* cfg, const char* path);
kseg_status kseg_config_set(kseg_config* cfg, const char* key, const char* value);

/* writes the dataset (pairs + discriminator frames) and the two evaluation
 * streams under the configured output directory */
kseg_status kseg_generate(kseg_config* cfg);

/* trains the configured model; out_checkpoint_path (optional, may be NULL)
 * receives the written checkpoint path */
kseg_status kseg_train(kseg_config* cfg, char* out_checkpoint_path, size_t cap);

/* evaluates the configured checkpoint on a split; out_report (optional)
 * receives a human-readable table */
kseg_status kseg_eval(kseg_config* cfg, const char* split, char* out_report, size_t cap);

/* runs the streaming monitor; out_summary (optional) receives a JSON summary */
kseg_status kseg_stream(kseg_config* cfg, char* out_summary, size_t cap);

/* finite-difference gradient checks; out_report (optional) receives one line
 * per check; fails if any relative error exceeds the tolerance */
kseg_status kseg_gradcheck(double tolerance, char* out_report, size_t cap);

#ifdef __cplusplus
}
#endif

#endif /* KSEG_H */
