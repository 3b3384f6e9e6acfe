#include "rvq.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>

namespace svs {

static const double kGrid = 4294967296.0; // 2^32, matches the mel value grid

static double snap_grid(double x) { return std::round(x * kGrid) / kGrid; }

static double sqdist(const double *a, const double *b, int64_t d) {
    double acc = 0.0;
    for (int64_t i = 0; i < d; i++) {
        double t = a[i] - b[i];
        acc += t * t;
    }
    return acc;
}

// nearest centroid, ties broken toward the lower index
static int64_t nearest(const matrix &centroids, const double *x, double *dist_out = nullptr) {
    int64_t best = 0;
    double best_d = sqdist(centroids.row(0), x, centroids.cols);
    for (int64_t k = 1; k < centroids.rows; k++) {
        double d = sqdist(centroids.row(k), x, centroids.cols);
        if (d < best_d) {
            best_d = d;
            best = k;
        }
    }
    if (dist_out) *dist_out = best_d;
    return best;
}

codebook fit_kmeans(const matrix &points, int64_t k, int iters, uint64_t seed,
                    double *inertia_out) {
    const int64_t n = points.rows, d = points.cols;
    if (n < k)
        fail(errc::usage, strfmt("fit_kmeans: %lld points for %lld clusters",
                                 (long long)n, (long long)k));
    rng r(seed);
    codebook cb;
    cb.centroids = matrix(k, d);

    // k-means++ seeding
    std::vector<double> min_d(size_t(n), 0.0);
    int64_t first = r.uniform_int(n);
    std::copy_n(points.row(first), d, cb.centroids.row(0));
    for (int64_t i = 0; i < n; i++) min_d[size_t(i)] = sqdist(points.row(i), cb.centroids.row(0), d);
    for (int64_t c = 1; c < k; c++) {
        double total = 0.0;
        for (int64_t i = 0; i < n; i++) total += min_d[size_t(i)];
        int64_t chosen = 0;
        if (total > 0.0) {
            double target = r.uniform() * total, run = 0.0;
            for (int64_t i = 0; i < n; i++) {
                run += min_d[size_t(i)];
                if (run >= target) { chosen = i; break; }
                chosen = i;
            }
        } else {
            chosen = r.uniform_int(n); // all points coincide with a centroid
        }
        std::copy_n(points.row(chosen), d, cb.centroids.row(c));
        for (int64_t i = 0; i < n; i++)
            min_d[size_t(i)] = std::min(min_d[size_t(i)],
                                        sqdist(points.row(i), cb.centroids.row(c), d));
    }

    std::vector<int64_t> assign(size_t(n), -1);
    std::vector<int64_t> counts(size_t(k), 0);
    std::vector<double> sums(size_t(k * d), 0.0);
    for (int it = 0; it < iters; it++) {
        bool changed = false;
        for (int64_t i = 0; i < n; i++) {
            int64_t a = nearest(cb.centroids, points.row(i));
            if (a != assign[size_t(i)]) { assign[size_t(i)] = a; changed = true; }
        }
        if (!changed && it > 0) break;
        std::fill(counts.begin(), counts.end(), 0);
        std::fill(sums.begin(), sums.end(), 0.0);
        for (int64_t i = 0; i < n; i++) {
            int64_t a = assign[size_t(i)];
            counts[size_t(a)]++;
            const double *p = points.row(i);
            double *s = sums.data() + a * d;
            for (int64_t j = 0; j < d; j++) s[j] += p[j];
        }
        for (int64_t c = 0; c < k; c++) {
            if (counts[size_t(c)] > 0) {
                for (int64_t j = 0; j < d; j++)
                    cb.centroids.at(c, j) = sums[size_t(c * d + j)] / double(counts[size_t(c)]);
            } else {
                // reseed an empty cluster to the point farthest from its centroid
                int64_t far_i = 0;
                double far_d = -1.0;
                for (int64_t i = 0; i < n; i++) {
                    double dd = sqdist(points.row(i), cb.centroids.row(assign[size_t(i)]), d);
                    if (dd > far_d) { far_d = dd; far_i = i; }
                }
                std::copy_n(points.row(far_i), d, cb.centroids.row(c));
            }
        }
    }

    // exact duplicates would make token ids ambiguous; push each duplicate
    // to the currently worst-represented point
    for (int pass = 0; pass < 8; pass++) {
        bool dup = false;
        for (int64_t a = 0; a < k && !dup; a++)
            for (int64_t b = a + 1; b < k && !dup; b++)
                if (memcmp(cb.centroids.row(a), cb.centroids.row(b), size_t(d) * 8) == 0) {
                    int64_t far_i = 0;
                    double far_d = -1.0;
                    for (int64_t i = 0; i < n; i++) {
                        double dd;
                        nearest(cb.centroids, points.row(i), &dd);
                        if (dd > far_d) { far_d = dd; far_i = i; }
                    }
                    if (far_d <= 0.0) goto done; // fewer distinct points than clusters
                    std::copy_n(points.row(far_i), d, cb.centroids.row(b));
                    dup = true;
                }
        if (!dup) break;
    }
done:

    for (auto &v : cb.centroids.v) v = snap_grid(v);

    if (inertia_out) {
        double inertia = 0.0;
        for (int64_t i = 0; i < n; i++) {
            double dd;
            nearest(cb.centroids, points.row(i), &dd);
            inertia += dd;
        }
        *inertia_out = inertia;
    }
    return cb;
}

//
// model training
//

static void stack_context(const mel_spec &mel, int context, const std::vector<double> &mean,
                          const std::vector<double> &stdd, int64_t f, double *out) {
    const int64_t d = mel.bins;
    int64_t w = 0;
    for (int c = -context; c <= context; c++) {
        int64_t src = std::clamp<int64_t>(f + c, 0, mel.frames - 1);
        for (int64_t j = 0; j < d; j++)
            out[w * d + j] = (mel.at(src, j) - mean[size_t(j)]) / stdd[size_t(j)];
        w++;
    }
}

matrix semantic_features(const mel_spec &mel, const rvq_model &model) {
    const int64_t d = mel.bins;
    const int64_t sd = d * (2 * model.context + 1);
    matrix out(mel.frames, sd);
    for (int64_t f = 0; f < mel.frames; f++)
        stack_context(mel, model.context, model.mel_mean, model.mel_std, f, out.row(f));
    return out;
}

// deterministic subsample: evenly strided rows
static matrix subsample_rows(const matrix &m, int64_t max_rows) {
    if (m.rows <= max_rows) return m;
    matrix out(max_rows, m.cols);
    for (int64_t i = 0; i < max_rows; i++) {
        int64_t src = i * m.rows / max_rows;
        std::copy_n(m.row(src), m.cols, out.row(i));
    }
    return out;
}

rvq_model rvq_train(const std::vector<const mel_spec *> &mels, const rvq_train_config &cfg,
                    uint64_t seed) {
    if (mels.empty()) fail(errc::usage, "rvq_train: no training data");
    const int64_t d = mels[0]->bins;
    int64_t total = 0;
    for (const auto *m : mels) total += m->frames;
    if (total < cfg.codebook_size)
        fail(errc::usage, "rvq_train: fewer frames than codebook entries");

    rvq_model model;
    model.context = cfg.context;
    model.mel_mean.assign(size_t(d), 0.0);
    model.mel_std.assign(size_t(d), 0.0);
    for (const auto *m : mels)
        for (int64_t f = 0; f < m->frames; f++)
            for (int64_t j = 0; j < d; j++) model.mel_mean[size_t(j)] += m->at(f, j);
    for (auto &v : model.mel_mean) v /= double(total);
    for (const auto *m : mels)
        for (int64_t f = 0; f < m->frames; f++)
            for (int64_t j = 0; j < d; j++) {
                double t = m->at(f, j) - model.mel_mean[size_t(j)];
                model.mel_std[size_t(j)] += t * t;
            }
    for (auto &v : model.mel_std) v = std::max(std::sqrt(v / double(total)), 1e-6);

    // acoustic stages: quantize, subtract, fit the next stage on what is left
    matrix residual(total, d);
    int64_t row = 0;
    for (const auto *m : mels) {
        std::copy_n(m->v.data(), m->frames * d, residual.row(row));
        row += m->frames;
    }
    for (int s = 0; s < cfg.stages; s++) {
        matrix fit_points = subsample_rows(residual, cfg.max_points);
        codebook cb = fit_kmeans(fit_points, cfg.codebook_size, cfg.kmeans_iters,
                                 substream_seed(seed, strfmt("rvq_stage_%d", s)));
        cb.stage = s;
        // the zero vector is always quantizable, so per-frame residual
        // energy can never grow across stages
        {
            int64_t nz = 0;
            double best = 1e300;
            for (int64_t c = 0; c < cb.centroids.rows; c++) {
                double nn = 0.0;
                for (int64_t j = 0; j < d; j++) nn += cb.centroids.at(c, j) * cb.centroids.at(c, j);
                if (nn < best) { best = nn; nz = c; }
            }
            for (int64_t j = 0; j < d; j++) cb.centroids.at(nz, j) = 0.0;
        }
        for (int64_t i = 0; i < total; i++) {
            double *r = residual.row(i);
            int64_t tok = nearest(cb.centroids, r);
            const double *c = cb.centroids.row(tok);
            for (int64_t j = 0; j < d; j++) r[j] -= c[j];
        }
        model.acoustic.push_back(std::move(cb));
    }

    // semantic stream: one codebook over normalized context-stacked frames
    {
        const int64_t sd = d * (2 * cfg.context + 1);
        matrix feats(total, sd);
        row = 0;
        for (const auto *m : mels) {
            for (int64_t f = 0; f < m->frames; f++)
                stack_context(*m, cfg.context, model.mel_mean, model.mel_std, f, feats.row(row + f));
            row += m->frames;
        }
        matrix fit_points = subsample_rows(feats, cfg.max_points);
        model.semantic = fit_kmeans(fit_points, cfg.codebook_size, cfg.kmeans_iters,
                                    substream_seed(seed, "rvq_semantic"));
        model.semantic.stage = -1;
    }
    return model;
}

//
// encode / decode
//

stream_matrix rvq_encode_with_residual(const mel_spec &mel, const rvq_model &model,
                                       matrix *residual) {
    if (!model.trained()) fail(errc::missing_prereq, "rvq_encode: model not trained");
    if (mel.bins != model.acoustic[0].centroids.cols)
        fail(errc::usage, "rvq_encode: mel dims do not match the model");
    const int64_t d = mel.bins;
    stream_matrix sm(mel.frames, model.n_streams());

    matrix sem = semantic_features(mel, model);
    std::vector<double> r(size_t(d), 0.0);
    for (int64_t f = 0; f < mel.frames; f++) {
        sm.at(f, 0) = uint16_t(nearest(model.semantic.centroids, sem.row(f)));
        std::copy_n(mel.v.data() + f * d, d, r.data());
        for (size_t s = 0; s < model.acoustic.size(); s++) {
            int64_t tok = nearest(model.acoustic[s].centroids, r.data());
            sm.at(f, int64_t(s) + 1) = uint16_t(tok);
            const double *c = model.acoustic[s].centroids.row(tok);
            for (int64_t j = 0; j < d; j++) r[size_t(j)] -= c[j];
        }
    }
    if (residual) {
        // defined against the decode-side summation order so that
        // decode + residual reproduces the input exactly
        matrix dec = rvq_decode(sm, model);
        *residual = matrix(mel.frames, d);
        for (int64_t f = 0; f < mel.frames; f++)
            for (int64_t j = 0; j < d; j++)
                residual->at(f, j) = mel.at(f, j) - dec.at(f, j);
    }
    return sm;
}

stream_matrix rvq_encode(const mel_spec &mel, const rvq_model &model) {
    return rvq_encode_with_residual(mel, model, nullptr);
}

matrix rvq_decode(const stream_matrix &tokens, const rvq_model &model) {
    if (!model.trained()) fail(errc::missing_prereq, "rvq_decode: model not trained");
    if (tokens.streams != model.n_streams())
        fail(errc::usage, "rvq_decode: stream count does not match the model");
    const int64_t d = model.acoustic[0].centroids.cols;
    const int64_t k = model.codebook_size();
    matrix out(tokens.frames, d);
    for (int64_t f = 0; f < tokens.frames; f++) {
        double *dst = out.row(f);
        for (size_t s = 0; s < model.acoustic.size(); s++) {
            uint16_t tok = tokens.at(f, int64_t(s) + 1);
            if (tok >= k)
                fail(errc::usage, strfmt("rvq_decode: token %u out of range [0,%lld) at frame %lld",
                                         unsigned(tok), (long long)k, (long long)f));
            const double *c = model.acoustic[s].centroids.row(tok);
            for (int64_t j = 0; j < d; j++) dst[j] += c[j];
        }
    }
    return out;
}

matrix codec_embedding(const stream_matrix &tokens, const rvq_model &model) {
    matrix dec = rvq_decode(tokens, model);
    const int64_t d = dec.cols;
    const int64_t sd = model.semantic_dim();
    const int64_t k = model.semantic.centroids.rows;
    matrix out(tokens.frames, d + sd);
    for (int64_t f = 0; f < tokens.frames; f++) {
        std::copy_n(dec.row(f), d, out.row(f));
        uint16_t tok = tokens.at(f, 0);
        if (tok >= k)
            fail(errc::usage, strfmt("codec_embedding: semantic token %u out of range [0,%lld)",
                                     unsigned(tok), (long long)k));
        std::copy_n(model.semantic.centroids.row(tok), sd, out.row(f) + d);
    }
    return out;
}

//
// persistence
//

void stream_matrix_save(const std::string &path, const stream_matrix &sm) {
    FILE *f = fopen(path.c_str(), "wb");
    if (!f) fail(errc::runtime, "cannot write token grid: " + path);
    uint32_t frames = uint32_t(sm.frames), streams = uint32_t(sm.streams);
    fwrite(&frames, 4, 1, f);
    fwrite(&streams, 4, 1, f);
    fwrite(sm.tokens.data(), 2, sm.tokens.size(), f);
    bool bad = ferror(f);
    fclose(f);
    if (bad) fail(errc::runtime, "write failure: " + path);
}

stream_matrix stream_matrix_load(const std::string &path) {
    FILE *f = fopen(path.c_str(), "rb");
    if (!f) fail(errc::missing_prereq, "token grid missing: " + path);
    uint32_t frames = 0, streams = 0;
    if (fread(&frames, 4, 1, f) != 1 || fread(&streams, 4, 1, f) != 1) {
        fclose(f);
        fail(errc::runtime, "token grid truncated: " + path);
    }
    stream_matrix sm(frames, streams);
    size_t n = size_t(frames) * streams;
    if (n && fread(sm.tokens.data(), 2, n, f) != n) {
        fclose(f);
        fail(errc::runtime, "token grid truncated: " + path);
    }
    fclose(f);
    return sm;
}

checkpoint rvq_to_checkpoint(const rvq_model &model) {
    checkpoint ck;
    ck.add_scalar("meta/stages", double(model.acoustic.size()));
    ck.add_scalar("meta/context", double(model.context));
    for (size_t s = 0; s < model.acoustic.size(); s++) {
        const auto &cb = model.acoustic[s];
        ck.add(strfmt("acoustic/%zu", s), {cb.centroids.rows, cb.centroids.cols}, cb.centroids.v);
    }
    ck.add("semantic", {model.semantic.centroids.rows, model.semantic.centroids.cols},
           model.semantic.centroids.v);
    ck.add("mel_mean", {int64_t(model.mel_mean.size())}, model.mel_mean);
    ck.add("mel_std", {int64_t(model.mel_std.size())}, model.mel_std);
    return ck;
}

rvq_model rvq_from_checkpoint(const checkpoint &ck) {
    rvq_model model;
    int stages = int(ck.get_scalar("meta/stages"));
    model.context = int(ck.get_scalar("meta/context"));
    for (int s = 0; s < stages; s++) {
        const named_array &a = ck.get(strfmt("acoustic/%d", s));
        codebook cb;
        cb.stage = s;
        cb.centroids = matrix(a.dims[0], a.dims[1]);
        cb.centroids.v = a.data;
        model.acoustic.push_back(std::move(cb));
    }
    const named_array &sem = ck.get("semantic");
    model.semantic.stage = -1;
    model.semantic.centroids = matrix(sem.dims[0], sem.dims[1]);
    model.semantic.centroids.v = sem.data;
    model.mel_mean = ck.get("mel_mean").data;
    model.mel_std = ck.get("mel_std").data;
    return model;
}

} // namespace svs
