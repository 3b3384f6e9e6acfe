// svsflow command line: thin shell over the C API.

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <string>

#include "svsflow.h"

static void usage(FILE *out) {
    fprintf(out,
            "usage: svsflow <command> [flags]\n"
            "\n"
            "commands:\n"
            "  build-corpus            generate the synthetic singing corpus\n"
            "  train-codec             fit the residual quantizer on the train split\n"
            "  train-lm                train the multi-stream token model\n"
            "  train-flow              train the flow-matching mel generator (--mode)\n"
            "  synthesize              score -> waveform (--score + --singer, or --split)\n"
            "  evaluate                score a system dir against split references\n"
            "  report                  merge evaluation points into one summary CSV\n"
            "\n"
            "flags:\n"
            "  --config PATH           key = value config file\n"
            "  --seed N                global seed\n"
            "  --mode flow1|flow2      flow conditioning variant\n"
            "  --out DIR               output directory (synthesize)\n"
            "  --force                 allow build-corpus to overwrite\n"
            "  --ode-steps N           ODE integration steps\n"
            "  --split train|dev|test  manifest split (synthesize/evaluate)\n"
            "  --n-utts N              corpus size (build-corpus)\n"
            "  --score PATH            score JSON (synthesize)\n"
            "  --singer N              singer id for the speaker prompt (synthesize)\n"
            "  --system DIR            synthesized wavs to evaluate\n"
            "\n"
            "exit codes: 0 ok, 1 usage, 2 missing prerequisite, 3 runtime failure\n");
}

static int fail_usage(const char *msg) {
    fprintf(stderr, "error: %s\n\n", msg);
    usage(stderr);
    return SVSF_ERR_USAGE;
}

int main(int argc, char **argv) {
    if (argc < 2) {
        usage(stderr);
        return SVSF_ERR_USAGE;
    }
    const std::string command = argv[1];
    if (command == "--help" || command == "-h" || command == "help") {
        usage(stdout);
        return SVSF_OK;
    }

    const char *config_path = nullptr;
    std::string score, out_dir, split, system_dir;
    const char *seed = nullptr, *mode = nullptr, *ode_steps = nullptr, *n_utts = nullptr;
    int singer = -1;
    bool force = false;

    for (int i = 2; i < argc; i++) {
        const std::string arg = argv[i];
        auto next = [&](const char *name) -> const char * {
            if (i + 1 >= argc) {
                fprintf(stderr, "error: %s needs a value\n", name);
                exit(SVSF_ERR_USAGE);
            }
            return argv[++i];
        };
        if (arg == "--config") config_path = next("--config");
        else if (arg == "--seed") seed = next("--seed");
        else if (arg == "--mode") mode = next("--mode");
        else if (arg == "--out") out_dir = next("--out");
        else if (arg == "--force") force = true;
        else if (arg == "--ode-steps") ode_steps = next("--ode-steps");
        else if (arg == "--split") split = next("--split");
        else if (arg == "--n-utts") n_utts = next("--n-utts");
        else if (arg == "--score") score = next("--score");
        else if (arg == "--singer") singer = atoi(next("--singer"));
        else if (arg == "--system") system_dir = next("--system");
        else return fail_usage(("unknown flag: " + arg).c_str());
    }

    svsf_ctx *ctx = nullptr;
    int rc = svsf_ctx_create(config_path, &ctx);
    if (rc != SVSF_OK) {
        fprintf(stderr, "error: cannot load config %s\n", config_path ? config_path : "(default)");
        return rc;
    }

    auto set = [&](const char *key, const char *value) {
        if (rc == SVSF_OK && value) {
            rc = svsf_ctx_set(ctx, key, value);
            if (rc != SVSF_OK) fprintf(stderr, "error: %s\n", svsf_last_error(ctx));
        }
    };
    set("seed", seed);
    set("mode", mode);
    set("ode_steps", ode_steps);
    set("n_utts", n_utts);

    if (rc == SVSF_OK) {
        if (command == "build-corpus") {
            rc = svsf_build_corpus(ctx, force ? 1 : 0);
        } else if (command == "train-codec") {
            rc = svsf_train(ctx, "codec");
        } else if (command == "train-lm") {
            rc = svsf_train(ctx, "lm");
        } else if (command == "train-flow") {
            rc = svsf_train(ctx, "flow");
        } else if (command == "synthesize") {
            if (out_dir.empty()) out_dir = "artifacts/synth";
            if (!split.empty())
                rc = svsf_synthesize_split(ctx, split.c_str(), out_dir.c_str());
            else if (!score.empty() && singer >= 0)
                rc = svsf_synthesize(ctx, score.c_str(), singer, out_dir.c_str());
            else {
                svsf_ctx_destroy(ctx);
                return fail_usage("synthesize needs --score and --singer, or --split");
            }
        } else if (command == "evaluate") {
            if (split.empty() || system_dir.empty()) {
                svsf_ctx_destroy(ctx);
                return fail_usage("evaluate needs --split and --system");
            }
            rc = svsf_evaluate(ctx, split.c_str(), system_dir.c_str());
        } else if (command == "report") {
            rc = svsf_report(ctx);
        } else {
            svsf_ctx_destroy(ctx);
            return fail_usage(("unknown command: " + command).c_str());
        }
        if (rc != SVSF_OK) fprintf(stderr, "error: %s\n", svsf_last_error(ctx));
    }

    svsf_ctx_destroy(ctx);
    return rc;
}
