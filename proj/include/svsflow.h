/*
 * svsflow — singing-voice synthesis pipeline over discrete audio tokens
 * and flow-matched mel generation.
 *
 * C API over the shared library: one opaque context carries the pipeline
 * configuration; every call returns a status code and leaves a message
 * retrievable with svsf_last_error() on failure.
 */

#ifndef SVSFLOW_H
#define SVSFLOW_H

#ifdef __cplusplus
extern "C" {
#endif

typedef struct svsf_ctx svsf_ctx;

/* status codes double as CLI exit codes */
enum svsf_status {
    SVSF_OK = 0,
    SVSF_ERR_USAGE = 1,          /* bad arguments or malformed input */
    SVSF_ERR_MISSING_PREREQ = 2, /* required artifact absent (stage order) */
    SVSF_ERR_RUNTIME = 3
};

const char *svsf_version(void);

/* config_path may be NULL for built-in defaults; the file holds
 * `key = value` lines, '#' starts a comment */
int svsf_ctx_create(const char *config_path, svsf_ctx **out);
void svsf_ctx_destroy(svsf_ctx *ctx);

/* override a single config key (same keys as the config file) */
int svsf_ctx_set(svsf_ctx *ctx, const char *key, const char *value);

/* message for the most recent failing call on this context */
const char *svsf_last_error(const svsf_ctx *ctx);

/* writes scores, wavs and manifest under corpus_dir; refuses to
 * overwrite an existing corpus unless force is nonzero */
int svsf_build_corpus(svsf_ctx *ctx, int force);

/* stage is "codec", "lm" or "flow"; stages must be trained in that order.
 * "flow" trains the variant selected by the `mode` config key. */
int svsf_train(svsf_ctx *ctx, const char *stage);

/* full inference chain for one score: tokens -> mel -> waveform; writes
 * <stem>.wav plus token and mel dumps into out_dir */
int svsf_synthesize(svsf_ctx *ctx, const char *score_path, int singer_id, const char *out_dir);

/* every score of a manifest split through the inference chain */
int svsf_synthesize_split(svsf_ctx *ctx, const char *split, const char *out_dir);

/* codec encode->decode->vocoder resynthesis of the split references;
 * the decoder-side quality bound */
int svsf_resynthesize_split(svsf_ctx *ctx, const char *split, const char *out_dir);

/* scores system_dir wavs against the split references; writes CSV/JSON
 * reports and long-format points under report_dir */
int svsf_evaluate(svsf_ctx *ctx, const char *split, const char *system_dir);

/* merges all evaluation points in report_dir into summary_long.csv */
int svsf_report(svsf_ctx *ctx);

#ifdef __cplusplus
}
#endif

#endif /* SVSFLOW_H */
