#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "checkpoint.hpp"
#include "common.hpp"
#include "dsp.hpp"

namespace svs {

//
// Residual vector quantizer over mel frames: 8 acoustic stages, each
// quantizing the residual left by the stages before it, plus one
// "semantic" stream over mean-variance-normalized, context-stacked mel.
// Only the acoustic stages take part in decoding.
//

struct codebook {
    matrix centroids; // K×D
    int stage = 0;
};

struct rvq_model {
    std::vector<codebook> acoustic;
    codebook semantic;
    std::vector<double> mel_mean, mel_std; // per-dim stats for the semantic path
    int context = 2;                       // semantic features stack ±context frames

    bool trained() const { return !acoustic.empty() && semantic.centroids.rows > 0; }
    int64_t n_streams() const { return int64_t(acoustic.size()) + 1; }
    int64_t codebook_size() const { return acoustic.empty() ? 0 : acoustic[0].centroids.rows; }
    int64_t semantic_dim() const { return semantic.centroids.cols; }
};

// F×n_q token grid; stream 0 semantic, streams 1.. acoustic residual stages
struct stream_matrix {
    int64_t frames = 0;
    int64_t streams = 0;
    std::vector<uint16_t> tokens;

    stream_matrix() = default;
    stream_matrix(int64_t f, int64_t s) : frames(f), streams(s), tokens(size_t(f * s), 0) {}
    uint16_t &at(int64_t f, int64_t s) { return tokens[size_t(f * streams + s)]; }
    uint16_t at(int64_t f, int64_t s) const { return tokens[size_t(f * streams + s)]; }
};

// k-means++ init + Lloyd iterations; empty clusters reseeded to the
// farthest points; centroids snapped to the 2^-32 grid shared with mel
// values so residual chains stay exact
codebook fit_kmeans(const matrix &points, int64_t k, int iters, uint64_t seed,
                    double *inertia_out = nullptr);

struct rvq_train_config {
    int stages = 8;
    int64_t codebook_size = 256;
    int kmeans_iters = 30;
    int64_t max_points = 12000; // frames subsampled per stage fit
    int context = 2;
};

rvq_model rvq_train(const std::vector<const mel_spec *> &mels, const rvq_train_config &cfg,
                    uint64_t seed);

stream_matrix rvq_encode(const mel_spec &mel, const rvq_model &model);
// also returns the per-frame residual after all stages, defined as
// mel - rvq_decode(tokens); with grid-snapped values the identity
// decode + residual == mel holds bit-exactly
stream_matrix rvq_encode_with_residual(const mel_spec &mel, const rvq_model &model,
                                       matrix *residual);

// sum of the chosen acoustic centroids per frame (semantic stream unused)
matrix rvq_decode(const stream_matrix &tokens, const rvq_model &model);

// per-frame condition features: decoded acoustic sum ++ semantic centroid
matrix codec_embedding(const stream_matrix &tokens, const rvq_model &model);

// semantic feature construction is shared by training and encoding
matrix semantic_features(const mel_spec &mel, const rvq_model &model);

void stream_matrix_save(const std::string &path, const stream_matrix &sm);
stream_matrix stream_matrix_load(const std::string &path);

checkpoint rvq_to_checkpoint(const rvq_model &model);
rvq_model rvq_from_checkpoint(const checkpoint &ck);

} // namespace svs
