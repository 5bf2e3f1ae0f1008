#ifndef S2A_C_H
#define S2A_C_H

/* C interface to the hyperspectral detection pipeline. All functions return
 * a status code: 0 success, 1 validation/input error, 2 numerical failure.
 * On failure, s2a_last_error() describes the problem (thread-local). */

#ifdef __cplusplus
extern "C" {
#endif

typedef struct s2a_config s2a_config;

#define S2A_OK 0
#define S2A_ERR_VALIDATION 1
#define S2A_ERR_NUMERIC 2

/* Creates a config with built-in defaults. Never fails; returns NULL only on
 * allocation failure. */
s2a_config* s2a_config_new(void);

/* Loads a `key = value` config file into a fresh handle. */
int s2a_config_load(const char* path, s2a_config** out);

/* Sets one key (same keys as the config file, e.g. "train.lr", "seed"). */
int s2a_config_set(s2a_config* cfg, const char* key, const char* value);

void s2a_config_free(s2a_config* cfg);

/* Runs one pipeline command: generate | decouple | bandselect | pca | split |
 * train | detect | eval | gradcheck. */
int s2a_run(const s2a_config* cfg, const char* command);

/* Message for the last failing call on this thread; empty string if none. */
const char* s2a_last_error(void);

const char* s2a_version(void);

#ifdef __cplusplus
}
#endif

#endif /* S2A_C_H */
