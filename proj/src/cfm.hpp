#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "checkpoint.hpp"
#include "common.hpp"
#include "dsp.hpp"
#include "rvq.hpp"
#include "tensor.hpp"

namespace svs {

//
// Flow matching over mel frames: a velocity field trained by regressing
// the linear source->target path velocity at uniformly sampled times,
// then sampled at inference by integrating an ODE from Gaussian noise.
//

struct flow_sample {
    matrix x0;       // source draw, N(0, I)
    matrix x1;       // target (standardized mel)
    matrix xt;       // (1-t)·x0 + t·x1
    matrix u_target; // x1 - x0
    double t = 0.0;
};

// interpolant and path velocity for a given draw
flow_sample make_flow_sample(const matrix &x1, const matrix &x0, double t);
// t ~ U[0,1], x0 ~ N(0,I); endpoints land on x0 / x1 to machine precision
flow_sample sample_path(const matrix &x1, rng &r);

struct flow_config {
    int window = 4; // frames of context on each side
    int hidden_layers = 3;
    int64_t width = 256;
    int64_t t_embed_dim = 64;
    int64_t mel_bins = 80;
    int64_t cond_dim = 0;           // codec-embedding dims per frame; 0 = unconditional
    bool pitch_cond = false;        // learned midi embedding channel
    int64_t pitch_embed_dim = 16;

    int64_t frame_cond_dim() const { return cond_dim + (pitch_cond ? pitch_embed_dim : 0); }
    int64_t input_dim() const {
        return (2 * window + 1) * (mel_bins + frame_cond_dim()) + t_embed_dim;
    }
};

struct velocity_net {
    flow_config cfg;
    std::vector<tensor_ptr> all;
    std::vector<tensor_ptr> w, b; // hidden_layers + 1 linear layers
    tensor_ptr pitch_emb;         // [128 × pitch_embed_dim] when pitch_cond
    // mel-space standardization (applied to x1, x_t and the acoustic
    // part of the condition); fitted on the training mels
    std::vector<double> mel_mean, mel_std;
};

// final layer starts at zero, so the untrained field is identically 0
velocity_net flow_init(const flow_config &cfg, uint64_t seed);
void flow_fit_standardization(velocity_net &net, const std::vector<const mel_spec *> &mels);

matrix standardize_mel(const velocity_net &net, const mel_spec &mel);
mel_spec destandardize_mel(const velocity_net &net, const matrix &m);

// predicted velocity for all frames at time t; cond may be null when the
// net is unconditional, midi only used when cfg.pitch_cond
tensor_ptr velocity_forward(tape &tp, const velocity_net &net, const tensor_ptr &xt, double t,
                            const matrix *cond, const std::vector<int> *midi);

struct flow_batch_item {
    const flow_sample *sample;
    const matrix *cond;            // may be null
    const std::vector<int> *midi;  // may be null
};

// mean over batch, frames and dims of the squared velocity error
tensor_ptr cfm_loss(tape &tp, const velocity_net &net, const std::vector<flow_batch_item> &batch);

struct ode_config {
    enum class solver_kind { euler, midpoint };
    solver_kind solver = solver_kind::euler;
    int steps = 32;
    uint64_t seed = 0;
};

using velocity_field = std::function<void(const matrix &x, double t, matrix &u)>;

// fixed-step integration from a given start state over t in [0,1]
matrix ode_integrate(const velocity_field &field, matrix x0, const ode_config &cfg);
// same, with x0 ~ N(0,I) drawn from cfg.seed
matrix ode_solve(const velocity_net &net, const matrix *cond, const std::vector<int> *midi,
                 int64_t frames, const ode_config &cfg);

struct flow_train_config {
    int epochs = 4;
    double lr = 3e-4;
    double lr_final = 1e-4; // linear decay target after warmup
    int64_t warmup = 50;
    uint64_t seed = 0;
    double divergence_abort = 1e6;
};

struct flow_train_item {
    matrix x1;             // standardized mel
    matrix cond;           // empty when unconditional
    std::vector<int> midi; // empty unless pitch conditioning
};

// seeded-shuffled single-sample steps; returns per-step losses
std::vector<double> train_flow(velocity_net &net, const std::vector<flow_train_item> &dataset,
                               const flow_train_config &cfg);

// full synthesis conditioning: codec embedding (+ score pitch for flow2)
mel_spec synthesize_mel(const velocity_net &net, const rvq_model &rvq, const stream_matrix &tokens,
                        const std::vector<int> *score_midi, const ode_config &cfg);

checkpoint flow_to_checkpoint(const velocity_net &net);
velocity_net flow_from_checkpoint(const checkpoint &ck);

} // namespace svs
