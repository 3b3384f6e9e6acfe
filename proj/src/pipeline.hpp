#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cfm.hpp"
#include "common.hpp"
#include "corpus.hpp"
#include "dsp.hpp"
#include "lm.hpp"
#include "metrics.hpp"
#include "rvq.hpp"
#include "score.hpp"

namespace svs {

//
// Orchestration: configuration, the stage DAG (corpus -> codec -> lm ->
// flow -> synthesize -> evaluate) and artifact persistence. One global
// seed feeds every stage through named substreams, so stages can be rerun
// independently yet reproducibly.
//

struct pipeline_config {
    std::string corpus_dir = "data/corpus";
    std::string ckpt_dir = "artifacts/checkpoints";
    std::string report_dir = "artifacts/reports";
    uint64_t seed = 42;
    std::string mode = "flow1"; // flow1 | flow2

    stft_config stft;

    int n_utts = 200;
    int n_singers = 2;

    int rvq_stages = 8;
    int64_t rvq_codebook = 256;
    int kmeans_iters = 30;
    int64_t kmeans_max_points = 12000;

    int64_t lm_dim = 128;
    int lm_layers = 2;
    int lm_heads = 4;
    int64_t lm_max_frames = 768;
    int64_t lm_steps = 600;
    double lm_lr = 3e-4;
    int64_t lm_warmup = 40;
    int sample_top_k = 8;
    double sample_temperature = 0.7;

    int flow_window = 4;
    int64_t flow_width = 256;
    int flow_hidden = 3;
    int flow_epochs = 4;
    double flow_lr = 3e-4;
    double flow_lr_final = 1e-4;
    int64_t flow_warmup = 50;

    std::string ode_solver = "euler"; // euler | midpoint
    int ode_steps = 32;
    int gl_iters = 256;
    int64_t prompt_frames = 150;

    void set(const std::string &key, const std::string &value); // unknown key errors
    std::string serialize() const;                              // reloadable key=value text
    static pipeline_config from_file(const std::string &path);

    ode_config make_ode(uint64_t seed) const;
};

// checkpoint stage tags
enum class stage_tag : int { codec = 1, lm = 2, flow = 3 };

struct pipeline {
    pipeline_config cfg;

    explicit pipeline(pipeline_config c) : cfg(std::move(c)) {}

    // stage artifact paths
    std::string manifest_path() const { return cfg.corpus_dir + "/manifest.jsonl"; }
    std::string codec_ckpt() const { return cfg.ckpt_dir + "/codec.ckpt"; }
    std::string lm_ckpt() const { return cfg.ckpt_dir + "/lm.ckpt"; }
    std::string flow_ckpt(const std::string &mode) const {
        return cfg.ckpt_dir + "/" + mode + ".ckpt";
    }

    corpus_manifest cmd_build_corpus(bool force);
    // stage in {codec, lm, flow}; flow trains cfg.mode
    void cmd_train(const std::string &stage);
    void cmd_synthesize(const std::string &score_path, int singer_id, const std::string &out_dir);
    // every score in the split through the full inference chain
    void synthesize_split(const std::string &split, const std::string &out_dir);
    // codec encode->decode->vocoder on the split references (quality bound)
    void resynthesize_split(const std::string &split, const std::string &out_dir);
    metric_report cmd_evaluate(const std::string &split, const std::string &system_dir);
    void cmd_report();

    // trains one flow variant: flow1, flow2 or uncond (ablation baseline)
    void train_flow_mode(const std::string &mode);

    // loads + verifies magic/version/stage; names the missing stage on failure
    checkpoint require_checkpoint(const std::string &path, stage_tag tag,
                                  const std::string &stage_name) const;

    corpus_manifest load_manifest() const;
    uint64_t stage_seed(const std::string &stage) const { return substream_seed(cfg.seed, stage); }

    // cached per-utterance training-side artifacts
    struct utt_data {
        std::string utt_id;
        music_score score;
        mel_spec mel;
        stream_matrix tokens;
        std::vector<int> midi;
    };
    std::vector<utt_data> load_split_data(const corpus_manifest &m, const std::string &split,
                                          const rvq_model &rvq) const;

    void write_config_snapshot(const std::string &dir, const std::string &command) const;
};

// stem of a path without directories or extension (utt_0042)
std::string path_stem(const std::string &path);

} // namespace svs
