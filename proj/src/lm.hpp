#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "checkpoint.hpp"
#include "common.hpp"
#include "score.hpp"
#include "tensor.hpp"

namespace svs {

//
// Causal multi-stream token model over task grids: per-stream input
// embeddings summed per frame, pre-norm attention blocks, and one output
// head per stream. All streams of a frame are predicted in parallel from
// the previous frame (frame-level autoregression, no delay pattern).
//

struct lm_config {
    int64_t model_dim = 128;
    int layers = 2;
    int heads = 4;
    int64_t max_frames = 768;
    int64_t text_vocab = 0; // specials + phonemes + pitches
    int64_t codebook = 256; // codec ids per stream, offset by text_vocab
    int64_t n_streams = 9;

    int64_t vocab() const { return text_vocab + codebook; }
    void validate() const;
};

struct lm_params {
    lm_config cfg;
    // ordered, named parameter list drives the optimizer and checkpoints
    std::vector<tensor_ptr> all;

    std::vector<tensor_ptr> stream_emb; // n_streams × [V×D]
    tensor_ptr pos_emb;                 // [max_frames×D]
    struct block {
        tensor_ptr ln1_g, ln1_b;
        tensor_ptr wq, bq, wk, bk, wv, bv, wo, bo;
        tensor_ptr ln2_g, ln2_b;
        tensor_ptr w_fc, b_fc, w_proj, b_proj;
    };
    std::vector<block> blocks;
    tensor_ptr lnf_g, lnf_b;
    std::vector<tensor_ptr> head_w, head_b; // n_streams × [D×V], [V]
};

// output heads start at zero so an untrained model is exactly uniform
lm_params lm_init(const lm_config &cfg, uint64_t seed);

// logits per stream, one row per grid row; row t depends only on rows <= t
std::vector<tensor_ptr> lm_forward(tape &tp, const lm_params &p, const task_sequence &seq);

// mean next-frame cross-entropy over target rows and streams; gradients
// never touch predictions made inside the condition region
tensor_ptr lm_loss(tape &tp, const std::vector<tensor_ptr> &logits, const task_sequence &seq);

struct lm_sampling {
    enum class mode { greedy, top_k };
    mode kind = mode::greedy;
    int top_k = 8;
    double temperature = 1.0;
    uint64_t seed = 0;
    // constrain sampled target rows to codec ids; with it off, emitting
    // <eos> or <tgt_sep> in stream 0 stops generation early
    bool restrict_to_codec = true;
};

// autoregressive decode with per-layer KV caches; arithmetic matches the
// tape forward exactly, so greedy decode of a memorized sequence
// reproduces it bit-for-bit
stream_matrix lm_generate(const lm_params &p, const task_sequence &cond, int64_t max_frames,
                          const lm_sampling &sampling);

// tape-free logits for one fully specified grid (consistency probes)
matrix lm_infer_logits(const lm_params &p, const task_sequence &seq, int64_t stream);

struct lm_train_config {
    int64_t steps = 2000;
    double lr = 3e-4;
    int64_t warmup = 40;
    double min_lr_ratio = 0.3; // cosine floor
    double clip = 1.0;
};

struct lm_trainer {
    lm_params &params;
    lm_train_config cfg;
    adam_state opt;
    int64_t step = 0;

    lm_trainer(lm_params &p, const lm_train_config &c);
    double current_lr() const;
    // one forward/backward/update on a single sequence; returns the loss
    double train_step(const task_sequence &seq);
};

checkpoint lm_to_checkpoint(const lm_params &p);
lm_params lm_from_checkpoint(const checkpoint &ck);

} // namespace svs
