#include "svsflow.h"

#include <string>

#include "common.hpp"
#include "pipeline.hpp"

struct svsf_ctx {
    svs::pipeline_config cfg;
    std::string last_error;
};

namespace {

template <typename Fn>
int guarded(svsf_ctx *ctx, Fn &&fn) {
    if (!ctx) return SVSF_ERR_USAGE;
    try {
        fn();
        ctx->last_error.clear();
        return SVSF_OK;
    } catch (const svs::error &e) {
        ctx->last_error = e.what();
        return int(e.code);
    } catch (const std::exception &e) {
        ctx->last_error = e.what();
        return SVSF_ERR_RUNTIME;
    }
}

} // namespace

extern "C" {

const char *svsf_version(void) { return "0.1.0"; }

int svsf_ctx_create(const char *config_path, svsf_ctx **out) {
    if (!out) return SVSF_ERR_USAGE;
    *out = nullptr;
    auto *ctx = new (std::nothrow) svsf_ctx();
    if (!ctx) return SVSF_ERR_RUNTIME;
    if (config_path) {
        try {
            ctx->cfg = svs::pipeline_config::from_file(config_path);
        } catch (const svs::error &e) {
            delete ctx;
            return int(e.code);
        } catch (const std::exception &) {
            delete ctx;
            return SVSF_ERR_RUNTIME;
        }
    }
    *out = ctx;
    return SVSF_OK;
}

void svsf_ctx_destroy(svsf_ctx *ctx) { delete ctx; }

int svsf_ctx_set(svsf_ctx *ctx, const char *key, const char *value) {
    if (!key || !value) return SVSF_ERR_USAGE;
    return guarded(ctx, [&] { ctx->cfg.set(key, value); });
}

const char *svsf_last_error(const svsf_ctx *ctx) {
    return ctx ? ctx->last_error.c_str() : "null context";
}

int svsf_build_corpus(svsf_ctx *ctx, int force) {
    return guarded(ctx, [&] {
        svs::pipeline p(ctx->cfg);
        p.cmd_build_corpus(force != 0);
    });
}

int svsf_train(svsf_ctx *ctx, const char *stage) {
    if (!stage) return SVSF_ERR_USAGE;
    return guarded(ctx, [&] {
        svs::pipeline p(ctx->cfg);
        p.cmd_train(stage);
    });
}

int svsf_synthesize(svsf_ctx *ctx, const char *score_path, int singer_id, const char *out_dir) {
    if (!score_path || !out_dir) return SVSF_ERR_USAGE;
    return guarded(ctx, [&] {
        svs::pipeline p(ctx->cfg);
        p.cmd_synthesize(score_path, singer_id, out_dir);
    });
}

int svsf_synthesize_split(svsf_ctx *ctx, const char *split, const char *out_dir) {
    if (!split || !out_dir) return SVSF_ERR_USAGE;
    return guarded(ctx, [&] {
        svs::pipeline p(ctx->cfg);
        p.synthesize_split(split, out_dir);
    });
}

int svsf_resynthesize_split(svsf_ctx *ctx, const char *split, const char *out_dir) {
    if (!split || !out_dir) return SVSF_ERR_USAGE;
    return guarded(ctx, [&] {
        svs::pipeline p(ctx->cfg);
        p.resynthesize_split(split, out_dir);
    });
}

int svsf_evaluate(svsf_ctx *ctx, const char *split, const char *system_dir) {
    if (!split || !system_dir) return SVSF_ERR_USAGE;
    return guarded(ctx, [&] {
        svs::pipeline p(ctx->cfg);
        p.cmd_evaluate(split, system_dir);
    });
}

int svsf_report(svsf_ctx *ctx) {
    return guarded(ctx, [&] {
        svs::pipeline p(ctx->cfg);
        p.cmd_report();
    });
}

} // extern "C"
