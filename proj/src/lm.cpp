#include "lm.hpp"

#include <algorithm>
#include <cmath>

namespace svs {

static const double kMaskNegInf = -1e30;

void lm_config::validate() const {
    if (model_dim % heads != 0)
        fail(errc::usage, strfmt("lm_config: model_dim %lld not divisible by %d heads",
                                 (long long)model_dim, heads));
    if (text_vocab <= 0 || codebook <= 0 || n_streams <= 0)
        fail(errc::usage, "lm_config: vocab sizes unset");
}

lm_params lm_init(const lm_config &cfg, uint64_t seed) {
    cfg.validate();
    rng r(seed);
    lm_params p;
    p.cfg = cfg;
    const int64_t d = cfg.model_dim;
    const int64_t v = cfg.vocab();

    auto param = [&](std::vector<int64_t> shape, double scale, const std::string &name) {
        tensor_ptr t = scale == 0.0 ? make_tensor(shape, true, name)
                                    : randn_tensor(r, shape, scale, true, name);
        p.all.push_back(t);
        return t;
    };
    auto ones_param = [&](std::vector<int64_t> shape, const std::string &name) {
        tensor_ptr t = make_tensor(shape, true, name);
        std::fill(t->data.begin(), t->data.end(), 1.0);
        p.all.push_back(t);
        return t;
    };

    for (int64_t s = 0; s < cfg.n_streams; s++)
        p.stream_emb.push_back(param({v, d}, 0.02, strfmt("emb/s%lld", (long long)s)));
    p.pos_emb = param({cfg.max_frames, d}, 0.02, "pos");
    for (int l = 0; l < cfg.layers; l++) {
        lm_params::block b;
        auto pre = strfmt("layer%d/", l);
        b.ln1_g = ones_param({d}, pre + "ln1_g");
        b.ln1_b = param({d}, 0.0, pre + "ln1_b");
        b.wq = param({d, d}, 0.02, pre + "wq");
        b.bq = param({d}, 0.0, pre + "bq");
        b.wk = param({d, d}, 0.02, pre + "wk");
        b.bk = param({d}, 0.0, pre + "bk");
        b.wv = param({d, d}, 0.02, pre + "wv");
        b.bv = param({d}, 0.0, pre + "bv");
        b.wo = param({d, d}, 0.02, pre + "wo");
        b.bo = param({d}, 0.0, pre + "bo");
        b.ln2_g = ones_param({d}, pre + "ln2_g");
        b.ln2_b = param({d}, 0.0, pre + "ln2_b");
        b.w_fc = param({d, 4 * d}, 0.02, pre + "w_fc");
        b.b_fc = param({4 * d}, 0.0, pre + "b_fc");
        b.w_proj = param({4 * d, d}, 0.02, pre + "w_proj");
        b.b_proj = param({d}, 0.0, pre + "b_proj");
        p.blocks.push_back(std::move(b));
    }
    p.lnf_g = ones_param({d}, "lnf_g");
    p.lnf_b = param({d}, 0.0, "lnf_b");
    for (int64_t s = 0; s < cfg.n_streams; s++) {
        p.head_w.push_back(param({d, v}, 0.0, strfmt("head/s%lld_w", (long long)s)));
        p.head_b.push_back(param({v}, 0.0, strfmt("head/s%lld_b", (long long)s)));
    }
    return p;
}

//
// tape forward
//

std::vector<tensor_ptr> lm_forward(tape &tp, const lm_params &p, const task_sequence &seq) {
    const lm_config &cfg = p.cfg;
    const int64_t L = seq.rows;
    if (L > cfg.max_frames)
        fail(errc::usage, strfmt("lm_forward: sequence of %lld rows exceeds max_frames %lld",
                                 (long long)L, (long long)cfg.max_frames));
    if (L < 1) fail(errc::usage, "lm_forward: empty sequence");
    if (seq.streams != cfg.n_streams) fail(errc::usage, "lm_forward: stream count mismatch");

    // summed per-stream embeddings plus learned positions
    std::vector<int64_t> ids(size_t(L), 0);
    for (int64_t r = 0; r < L; r++) ids[size_t(r)] = seq.at(r, 0);
    tensor_ptr x = tp.embedding(p.stream_emb[0], ids);
    for (int64_t s = 1; s < cfg.n_streams; s++) {
        for (int64_t r = 0; r < L; r++) ids[size_t(r)] = seq.at(r, s);
        x = tp.add(x, tp.embedding(p.stream_emb[size_t(s)], ids));
    }
    std::vector<int64_t> pos(size_t(L), 0);
    for (int64_t r = 0; r < L; r++) pos[size_t(r)] = r;
    x = tp.add(x, tp.embedding(p.pos_emb, pos));

    // one additive causal mask shared by all layers
    tensor_ptr mask = make_tensor({L, L});
    for (int64_t i = 0; i < L; i++)
        for (int64_t j = i + 1; j < L; j++) mask->data[size_t(i * L + j)] = kMaskNegInf;

    const int64_t dh = cfg.model_dim / cfg.heads;
    const double att_scale = 1.0 / std::sqrt(double(dh));

    for (const auto &b : p.blocks) {
        tensor_ptr h = tp.layer_norm(x, b.ln1_g, b.ln1_b);
        tensor_ptr q = tp.add(tp.matmul(h, b.wq), b.bq);
        tensor_ptr k = tp.add(tp.matmul(h, b.wk), b.bk);
        tensor_ptr v = tp.add(tp.matmul(h, b.wv), b.bv);
        std::vector<tensor_ptr> ctx;
        for (int hd = 0; hd < cfg.heads; hd++) {
            tensor_ptr qh = tp.slice_cols(q, hd * dh, (hd + 1) * dh);
            tensor_ptr kh = tp.slice_cols(k, hd * dh, (hd + 1) * dh);
            tensor_ptr vh = tp.slice_cols(v, hd * dh, (hd + 1) * dh);
            tensor_ptr scores = tp.add(tp.scale(tp.matmul(qh, tp.transpose(kh)), att_scale), mask);
            tensor_ptr att = tp.softmax_rows(scores);
            ctx.push_back(tp.matmul(att, vh));
        }
        tensor_ptr merged = tp.add(tp.matmul(tp.concat_cols(ctx), b.wo), b.bo);
        x = tp.add(x, merged);
        tensor_ptr m = tp.layer_norm(x, b.ln2_g, b.ln2_b);
        m = tp.gelu(tp.add(tp.matmul(m, b.w_fc), b.b_fc));
        m = tp.add(tp.matmul(m, b.w_proj), b.b_proj);
        x = tp.add(x, m);
    }
    x = tp.layer_norm(x, p.lnf_g, p.lnf_b);

    std::vector<tensor_ptr> logits;
    for (int64_t s = 0; s < cfg.n_streams; s++)
        logits.push_back(tp.add(tp.matmul(x, p.head_w[size_t(s)]), p.head_b[size_t(s)]));
    return logits;
}

tensor_ptr lm_loss(tape &tp, const std::vector<tensor_ptr> &logits, const task_sequence &seq) {
    if (!seq.has_target()) fail(errc::usage, "lm_loss: sequence has no target region");
    const int64_t t0 = seq.target_start;
    const int64_t L = seq.rows;
    const int64_t n_streams = seq.streams;

    // logits at row r predict row r+1, so target rows [t0, L) are scored
    // by logits rows [t0-1, L-1); condition-region predictions never
    // enter the loss and therefore carry exactly zero gradient
    tensor_ptr total;
    for (int64_t s = 0; s < n_streams; s++) {
        tensor_ptr sl = tp.slice_rows(logits[size_t(s)], t0 - 1, L - 1);
        std::vector<int64_t> labels(size_t(L - t0));
        for (int64_t r = t0; r < L; r++) labels[size_t(r - t0)] = seq.at(r, s);
        tensor_ptr ce = tp.softmax_cross_entropy(sl, labels);
        total = total ? tp.add(total, ce) : ce;
    }
    return tp.scale(total, 1.0 / double(n_streams));
}

//
// tape-free inference with KV caches; the arithmetic mirrors the tape ops
// operation for operation so both paths agree bitwise
//

namespace {

struct infer_state {
    const lm_params &p;
    int64_t rows_fed = 0;
    // per layer: cached keys/values, rows × model_dim
    std::vector<std::vector<double>> k_cache, v_cache;

    explicit infer_state(const lm_params &params) : p(params) {
        k_cache.resize(size_t(p.cfg.layers));
        v_cache.resize(size_t(p.cfg.layers));
    }

    static void vecmat(const double *x, const tensor &w, double *out) {
        const int64_t k = w.shape[0], n = w.shape[1];
        std::fill(out, out + n, 0.0);
        for (int64_t l = 0; l < k; l++) {
            const double xl = x[l];
            const double *row = w.data.data() + l * n;
            for (int64_t j = 0; j < n; j++) out[j] += xl * row[j];
        }
    }

    static void add_bias(double *x, const tensor &b, int64_t n) {
        for (int64_t j = 0; j < n; j++) x[j] += b.data[j];
    }

    static void layer_norm_row(const double *x, const tensor &g, const tensor &b, int64_t n,
                               double *out) {
        double mu = 0.0;
        for (int64_t j = 0; j < n; j++) mu += x[j];
        mu /= double(n);
        double var = 0.0;
        for (int64_t j = 0; j < n; j++) {
            double d = x[j] - mu;
            var += d * d;
        }
        var /= double(n);
        double is = 1.0 / std::sqrt(var + 1e-5);
        for (int64_t j = 0; j < n; j++) out[j] = g.data[j] * ((x[j] - mu) * is) + b.data[j];
    }

    // feed one grid row, return final hidden state (model_dim)
    std::vector<double> feed(const int32_t *tokens) {
        const lm_config &cfg = p.cfg;
        const int64_t d = cfg.model_dim;
        const int64_t pos = rows_fed;
        if (pos >= cfg.max_frames)
            fail(errc::usage, "lm_generate: sequence exceeds max_frames");

        std::vector<double> x(size_t(d), 0.0);
        for (int64_t s = 0; s < cfg.n_streams; s++) {
            int32_t tok = tokens[s];
            if (tok < 0 || tok >= cfg.vocab())
                fail(errc::usage, strfmt("lm_generate: token %d out of range", tok));
            const double *e = p.stream_emb[size_t(s)]->data.data() + int64_t(tok) * d;
            for (int64_t j = 0; j < d; j++) x[size_t(j)] += e[j];
        }
        const double *pe = p.pos_emb->data.data() + pos * d;
        for (int64_t j = 0; j < d; j++) x[size_t(j)] += pe[j];

        const int64_t dh = d / cfg.heads;
        const double att_scale = 1.0 / std::sqrt(double(dh));
        std::vector<double> h(size_t(d), 0.0), q(size_t(d), 0.0), k(size_t(d), 0.0), v(size_t(d), 0.0);
        std::vector<double> merged(size_t(d), 0.0), tmp(size_t(4 * d), 0.0);

        for (int l = 0; l < cfg.layers; l++) {
            const auto &b = p.blocks[size_t(l)];
            layer_norm_row(x.data(), *b.ln1_g, *b.ln1_b, d, h.data());
            vecmat(h.data(), *b.wq, q.data());
            add_bias(q.data(), *b.bq, d);
            vecmat(h.data(), *b.wk, k.data());
            add_bias(k.data(), *b.bk, d);
            vecmat(h.data(), *b.wv, v.data());
            add_bias(v.data(), *b.bv, d);
            k_cache[size_t(l)].insert(k_cache[size_t(l)].end(), k.begin(), k.end());
            v_cache[size_t(l)].insert(v_cache[size_t(l)].end(), v.begin(), v.end());
            const int64_t n_keys = pos + 1;
            std::vector<double> ctx(size_t(d), 0.0), att(size_t(n_keys), 0.0);
            for (int hd = 0; hd < cfg.heads; hd++) {
                const int64_t off = hd * dh;
                double mx = -1e300;
                for (int64_t j = 0; j < n_keys; j++) {
                    const double *kj = k_cache[size_t(l)].data() + j * d + off;
                    double acc = 0.0;
                    for (int64_t t = 0; t < dh; t++) acc += q[size_t(off + t)] * kj[t];
                    att[size_t(j)] = acc * att_scale;
                    mx = std::max(mx, att[size_t(j)]);
                }
                double sum = 0.0;
                for (int64_t j = 0; j < n_keys; j++) {
                    att[size_t(j)] = std::exp(att[size_t(j)] - mx);
                    sum += att[size_t(j)];
                }
                for (int64_t j = 0; j < n_keys; j++) {
                    const double w = att[size_t(j)] / sum;
                    const double *vj = v_cache[size_t(l)].data() + j * d + off;
                    for (int64_t t = 0; t < dh; t++) ctx[size_t(off + t)] += w * vj[t];
                }
            }
            vecmat(ctx.data(), *b.wo, merged.data());
            add_bias(merged.data(), *b.bo, d);
            for (int64_t j = 0; j < d; j++) x[size_t(j)] += merged[size_t(j)];

            layer_norm_row(x.data(), *b.ln2_g, *b.ln2_b, d, h.data());
            vecmat(h.data(), *b.w_fc, tmp.data());
            add_bias(tmp.data(), *b.b_fc, 4 * d);
            for (int64_t j = 0; j < 4 * d; j++) {
                double xx = tmp[size_t(j)];
                tmp[size_t(j)] = 0.5 * xx * (1.0 + std::erf(xx * 0.70710678118654752440));
            }
            std::vector<double> proj(size_t(d), 0.0);
            vecmat(tmp.data(), *b.w_proj, proj.data());
            add_bias(proj.data(), *b.b_proj, d);
            for (int64_t j = 0; j < d; j++) x[size_t(j)] += proj[size_t(j)];
        }
        layer_norm_row(x.data(), *p.lnf_g, *p.lnf_b, d, h.data());
        rows_fed++;
        return h;
    }

    std::vector<double> head_logits(const std::vector<double> &h, int64_t stream) const {
        std::vector<double> out(size_t(p.cfg.vocab()), 0.0);
        vecmat(h.data(), *p.head_w[size_t(stream)], out.data());
        add_bias(out.data(), *p.head_b[size_t(stream)], p.cfg.vocab());
        return out;
    }
};

int64_t sample_stream(const std::vector<double> &logits, int64_t lo, int64_t hi,
                      const lm_sampling &s, rng &r) {
    if (s.kind == lm_sampling::mode::greedy) {
        int64_t best = lo;
        for (int64_t i = lo + 1; i < hi; i++)
            if (logits[size_t(i)] > logits[size_t(best)]) best = i;
        return best;
    }
    // top-k with temperature; ties resolved by index for determinism
    std::vector<int64_t> idx;
    for (int64_t i = lo; i < hi; i++) idx.push_back(i);
    const int64_t k = std::min<int64_t>(std::max(1, s.top_k), hi - lo);
    std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&](int64_t a, int64_t b) {
        if (logits[size_t(a)] != logits[size_t(b)]) return logits[size_t(a)] > logits[size_t(b)];
        return a < b;
    });
    const double temp = std::max(s.temperature, 1e-6);
    double mx = logits[size_t(idx[0])];
    std::vector<double> prob(size_t(k), 0.0);
    double sum = 0.0;
    for (int64_t i = 0; i < k; i++) {
        prob[size_t(i)] = std::exp((logits[size_t(idx[size_t(i)])] - mx) / temp);
        sum += prob[size_t(i)];
    }
    double target = r.uniform() * sum, run = 0.0;
    for (int64_t i = 0; i < k; i++) {
        run += prob[size_t(i)];
        if (run >= target) return idx[size_t(i)];
    }
    return idx[size_t(k - 1)];
}

} // namespace

stream_matrix lm_generate(const lm_params &p, const task_sequence &cond, int64_t max_frames,
                          const lm_sampling &sampling) {
    if (cond.has_target())
        fail(errc::usage, "lm_generate: expected an inference-mode sequence (no target)");
    const lm_config &cfg = p.cfg;
    rng r(sampling.seed);
    infer_state st(p);

    std::vector<double> h;
    for (int64_t row = 0; row < cond.rows; row++) h = st.feed(&cond.grid[size_t(row * cond.streams)]);

    stream_matrix out(max_frames, cfg.n_streams);
    std::vector<int32_t> row_tokens(size_t(cfg.n_streams), 0);
    int64_t emitted = 0;
    for (; emitted < max_frames; emitted++) {
        bool stop = false;
        for (int64_t s = 0; s < cfg.n_streams; s++) {
            std::vector<double> logits = st.head_logits(h, s);
            int64_t lo = sampling.restrict_to_codec ? cfg.text_vocab : 0;
            int64_t id = sample_stream(logits, lo, cfg.vocab(), sampling, r);
            if (id < cfg.text_vocab) {
                // an end marker emitted in the open id space stops decoding
                if (s == 0 && (id == 2 /*<eos>*/ || id == 5 /*<tgt_sep>*/)) { stop = true; break; }
                id = cfg.text_vocab; // clamp stray text tokens to codec id 0
            }
            row_tokens[size_t(s)] = int32_t(id);
            out.at(emitted, s) = uint16_t(id - cfg.text_vocab);
        }
        if (stop) break;
        if (emitted + 1 < max_frames) h = st.feed(row_tokens.data());
    }
    if (emitted < max_frames) {
        stream_matrix trimmed(emitted, cfg.n_streams);
        std::copy_n(out.tokens.data(), size_t(emitted * cfg.n_streams), trimmed.tokens.data());
        return trimmed;
    }
    return out;
}

matrix lm_infer_logits(const lm_params &p, const task_sequence &seq, int64_t stream) {
    infer_state st(p);
    matrix out(seq.rows, p.cfg.vocab());
    for (int64_t row = 0; row < seq.rows; row++) {
        std::vector<double> h = st.feed(&seq.grid[size_t(row * seq.streams)]);
        std::vector<double> logits = st.head_logits(h, stream);
        std::copy(logits.begin(), logits.end(), out.row(row));
    }
    return out;
}

//
// training
//

lm_trainer::lm_trainer(lm_params &p, const lm_train_config &c) : params(p), cfg(c) {
    opt.lr = c.lr;
    opt.beta1 = 0.9;
    opt.beta2 = 0.95;
    opt.init(params.all);
}

double lm_trainer::current_lr() const {
    if (step < cfg.warmup) return cfg.lr * double(step + 1) / double(cfg.warmup);
    double progress = cfg.steps > cfg.warmup
                          ? double(step - cfg.warmup) / double(cfg.steps - cfg.warmup)
                          : 1.0;
    progress = std::min(progress, 1.0);
    const double floor = cfg.lr * cfg.min_lr_ratio;
    return floor + 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress)) * (cfg.lr - floor);
}

double lm_trainer::train_step(const task_sequence &seq) {
    tape tp;
    auto logits = lm_forward(tp, params, seq);
    tensor_ptr loss = lm_loss(tp, logits, seq);
    tp.backward(loss, params.all);
    if (cfg.clip > 0.0) clip_grad_norm(params.all, cfg.clip);
    opt.lr = current_lr();
    adam_step(params.all, opt);
    step++;
    return loss->data[0];
}

//
// persistence
//

checkpoint lm_to_checkpoint(const lm_params &p) {
    checkpoint ck;
    ck.add_scalar("meta/model_dim", double(p.cfg.model_dim));
    ck.add_scalar("meta/layers", double(p.cfg.layers));
    ck.add_scalar("meta/heads", double(p.cfg.heads));
    ck.add_scalar("meta/max_frames", double(p.cfg.max_frames));
    ck.add_scalar("meta/text_vocab", double(p.cfg.text_vocab));
    ck.add_scalar("meta/codebook", double(p.cfg.codebook));
    ck.add_scalar("meta/n_streams", double(p.cfg.n_streams));
    for (const auto &t : p.all) ck.add(t->name, t->shape, t->data);
    return ck;
}

lm_params lm_from_checkpoint(const checkpoint &ck) {
    lm_config cfg;
    cfg.model_dim = int64_t(ck.get_scalar("meta/model_dim"));
    cfg.layers = int(ck.get_scalar("meta/layers"));
    cfg.heads = int(ck.get_scalar("meta/heads"));
    cfg.max_frames = int64_t(ck.get_scalar("meta/max_frames"));
    cfg.text_vocab = int64_t(ck.get_scalar("meta/text_vocab"));
    cfg.codebook = int64_t(ck.get_scalar("meta/codebook"));
    cfg.n_streams = int64_t(ck.get_scalar("meta/n_streams"));
    lm_params p = lm_init(cfg, 0);
    for (auto &t : p.all) {
        const named_array &a = ck.get(t->name);
        if (int64_t(a.data.size()) != t->numel())
            fail(errc::runtime, "lm checkpoint: size mismatch for " + t->name);
        t->data = a.data;
    }
    return p;
}

} // namespace svs
