#include "cfm.hpp"

#include <algorithm>
#include <cmath>

namespace svs {

flow_sample make_flow_sample(const matrix &x1, const matrix &x0, double t) {
    if (x0.rows != x1.rows || x0.cols != x1.cols)
        fail(errc::usage, "make_flow_sample: endpoint shapes differ");
    flow_sample s;
    s.t = t;
    s.x1 = x1;
    s.x0 = x0;
    s.xt = matrix(x1.rows, x1.cols);
    s.u_target = matrix(x1.rows, x1.cols);
    for (size_t i = 0; i < x1.v.size(); i++) {
        s.xt.v[i] = (1.0 - t) * s.x0.v[i] + t * s.x1.v[i];
        s.u_target.v[i] = s.x1.v[i] - s.x0.v[i];
    }
    return s;
}

flow_sample sample_path(const matrix &x1, rng &r) {
    for (double v : x1.v)
        if (!std::isfinite(v)) fail(errc::usage, "sample_path: non-finite target");
    const double t = r.uniform();
    matrix x0(x1.rows, x1.cols);
    for (auto &v : x0.v) v = r.normal();
    return make_flow_sample(x1, x0, t);
}

velocity_net flow_init(const flow_config &cfg, uint64_t seed) {
    rng r(seed);
    velocity_net net;
    net.cfg = cfg;
    net.mel_mean.assign(size_t(cfg.mel_bins), 0.0);
    net.mel_std.assign(size_t(cfg.mel_bins), 1.0);

    std::vector<int64_t> dims;
    dims.push_back(cfg.input_dim());
    for (int i = 0; i < cfg.hidden_layers; i++) dims.push_back(cfg.width);
    dims.push_back(cfg.mel_bins);

    for (size_t l = 0; l + 1 < dims.size(); l++) {
        const bool last = l + 2 == dims.size();
        const double scale = last ? 0.0 : 1.0 / std::sqrt(double(dims[l]));
        tensor_ptr w = scale == 0.0
                           ? make_tensor({dims[l], dims[l + 1]}, true, strfmt("flow/w%zu", l))
                           : randn_tensor(r, {dims[l], dims[l + 1]}, scale, true,
                                          strfmt("flow/w%zu", l));
        tensor_ptr b = make_tensor({dims[l + 1]}, true, strfmt("flow/b%zu", l));
        net.w.push_back(w);
        net.b.push_back(b);
        net.all.push_back(w);
        net.all.push_back(b);
    }
    if (cfg.pitch_cond) {
        net.pitch_emb = randn_tensor(r, {128, cfg.pitch_embed_dim}, 0.5, true, "flow/pitch_emb");
        net.all.push_back(net.pitch_emb);
    }
    return net;
}

void flow_fit_standardization(velocity_net &net, const std::vector<const mel_spec *> &mels) {
    const int64_t d = net.cfg.mel_bins;
    std::vector<double> mean(size_t(d), 0.0), var(size_t(d), 0.0);
    int64_t total = 0;
    for (const auto *m : mels) {
        if (m->bins != d) fail(errc::usage, "flow_fit_standardization: mel dim mismatch");
        for (int64_t f = 0; f < m->frames; f++)
            for (int64_t j = 0; j < d; j++) mean[size_t(j)] += m->at(f, j);
        total += m->frames;
    }
    if (total == 0) fail(errc::usage, "flow_fit_standardization: empty dataset");
    for (auto &v : mean) v /= double(total);
    for (const auto *m : mels)
        for (int64_t f = 0; f < m->frames; f++)
            for (int64_t j = 0; j < d; j++) {
                double t = m->at(f, j) - mean[size_t(j)];
                var[size_t(j)] += t * t;
            }
    net.mel_mean = mean;
    for (int64_t j = 0; j < d; j++)
        net.mel_std[size_t(j)] = std::max(std::sqrt(var[size_t(j)] / double(total)), 1e-6);
}

matrix standardize_mel(const velocity_net &net, const mel_spec &mel) {
    matrix out(mel.frames, mel.bins);
    for (int64_t f = 0; f < mel.frames; f++)
        for (int64_t j = 0; j < mel.bins; j++)
            out.at(f, j) = (mel.at(f, j) - net.mel_mean[size_t(j)]) / net.mel_std[size_t(j)];
    return out;
}

mel_spec destandardize_mel(const velocity_net &net, const matrix &m) {
    mel_spec mel;
    mel.frames = m.rows;
    mel.bins = m.cols;
    mel.v.resize(m.v.size());
    for (int64_t f = 0; f < m.rows; f++)
        for (int64_t j = 0; j < m.cols; j++)
            mel.at(f, j) = m.at(f, j) * net.mel_std[size_t(j)] + net.mel_mean[size_t(j)];
    return mel;
}

// geometric frequency ladder over [1, 1000], sin/cos pairs
static void time_embedding(double t, int64_t dim, double *out) {
    const int64_t half = dim / 2;
    for (int64_t i = 0; i < half; i++) {
        double freq = std::pow(1000.0, double(i) / double(std::max<int64_t>(half - 1, 1)));
        out[2 * i] = std::sin(freq * t);
        out[2 * i + 1] = std::cos(freq * t);
    }
    if (dim % 2) out[dim - 1] = t;
}

tensor_ptr velocity_forward(tape &tp, const velocity_net &net, const tensor_ptr &xt, double t,
                            const matrix *cond, const std::vector<int> *midi) {
    const flow_config &cfg = net.cfg;
    const int64_t frames = xt->rows();
    if (xt->cols() != cfg.mel_bins) fail(errc::usage, "velocity_forward: mel dim mismatch");
    if (cfg.cond_dim > 0) {
        if (!cond) fail(errc::usage, "velocity_forward: conditional net given no condition");
        if (cond->cols != cfg.cond_dim) fail(errc::usage, "velocity_forward: condition dim mismatch");
        if (cond->rows != frames) fail(errc::usage, "velocity_forward: condition frame mismatch");
    }
    if (cfg.pitch_cond) {
        if (!midi) fail(errc::usage, "velocity_forward: pitch conditioning given no midi");
        if (int64_t(midi->size()) != frames)
            fail(errc::usage, "velocity_forward: midi frame mismatch");
    }

    std::vector<tensor_ptr> parts;
    for (int dlt = -cfg.window; dlt <= cfg.window; dlt++) parts.push_back(tp.shift_rows(xt, dlt));

    tensor_ptr temb = make_tensor({frames, cfg.t_embed_dim});
    std::vector<double> row(size_t(cfg.t_embed_dim), 0.0);
    time_embedding(t, cfg.t_embed_dim, row.data());
    for (int64_t f = 0; f < frames; f++)
        std::copy(row.begin(), row.end(), temb->data.begin() + f * cfg.t_embed_dim);
    parts.push_back(temb);

    if (cfg.cond_dim > 0) {
        // acoustic dims share the mel standardization; semantic dims are
        // already in normalized space
        tensor_ptr c = make_tensor({frames, cfg.cond_dim});
        for (int64_t f = 0; f < frames; f++)
            for (int64_t j = 0; j < cfg.cond_dim; j++) {
                double v = cond->at(f, j);
                if (j < cfg.mel_bins)
                    v = (v - net.mel_mean[size_t(j)]) / net.mel_std[size_t(j)];
                c->data[size_t(f * cfg.cond_dim + j)] = v;
            }
        for (int dlt = -cfg.window; dlt <= cfg.window; dlt++) parts.push_back(tp.shift_rows(c, dlt));
    }
    if (cfg.pitch_cond) {
        std::vector<int64_t> ids(size_t(frames), 0);
        for (int64_t f = 0; f < frames; f++)
            ids[size_t(f)] = std::clamp((*midi)[size_t(f)], 0, 127);
        tensor_ptr pe = tp.embedding(net.pitch_emb, ids);
        for (int dlt = -cfg.window; dlt <= cfg.window; dlt++) parts.push_back(tp.shift_rows(pe, dlt));
    }

    tensor_ptr h = tp.concat_cols(parts);
    for (size_t l = 0; l < net.w.size(); l++) {
        h = tp.add(tp.matmul(h, net.w[l]), net.b[l]);
        if (l + 1 < net.w.size()) h = tp.gelu(h);
    }
    return h;
}

tensor_ptr cfm_loss(tape &tp, const velocity_net &net, const std::vector<flow_batch_item> &batch) {
    if (batch.empty()) fail(errc::usage, "cfm_loss: empty batch");
    tensor_ptr total;
    int64_t count = 0;
    for (const auto &item : batch) {
        const flow_sample &s = *item.sample;
        tensor_ptr xt = make_tensor({s.xt.rows, s.xt.cols}, s.xt.v);
        tensor_ptr u = velocity_forward(tp, net, xt, s.t, item.cond, item.midi);
        tensor_ptr tgt = make_tensor({s.u_target.rows, s.u_target.cols}, s.u_target.v);
        tensor_ptr d = tp.sub(u, tgt);
        tensor_ptr sq = tp.sum_all(tp.mul(d, d));
        total = total ? tp.add(total, sq) : sq;
        count += s.u_target.rows * s.u_target.cols;
    }
    return tp.scale(total, 1.0 / double(count));
}

//
// ODE integration
//

matrix ode_integrate(const velocity_field &field, matrix x, const ode_config &cfg) {
    if (cfg.steps < 1) fail(errc::usage, "ode_integrate: steps must be >= 1");
    const double h = 1.0 / double(cfg.steps);
    matrix u(x.rows, x.cols), xm(x.rows, x.cols), u2(x.rows, x.cols);
    for (int k = 0; k < cfg.steps; k++) {
        const double t = double(k) * h;
        field(x, t, u);
        if (cfg.solver == ode_config::solver_kind::euler) {
            for (size_t i = 0; i < x.v.size(); i++) x.v[i] += h * u.v[i];
        } else {
            for (size_t i = 0; i < x.v.size(); i++) xm.v[i] = x.v[i] + 0.5 * h * u.v[i];
            field(xm, t + 0.5 * h, u2);
            for (size_t i = 0; i < x.v.size(); i++) x.v[i] += h * u2.v[i];
        }
        for (double v : x.v)
            if (!std::isfinite(v))
                fail(errc::runtime, strfmt("ode_integrate: non-finite state at step %d", k));
    }
    return x;
}

matrix ode_solve(const velocity_net &net, const matrix *cond, const std::vector<int> *midi,
                 int64_t frames, const ode_config &cfg) {
    rng r(cfg.seed);
    matrix x0(frames, net.cfg.mel_bins);
    for (auto &v : x0.v) v = r.normal();
    velocity_field field = [&](const matrix &x, double t, matrix &u) {
        tape tp;
        tensor_ptr xt = make_tensor({x.rows, x.cols}, x.v);
        tensor_ptr out = velocity_forward(tp, net, xt, t, cond, midi);
        u.rows = x.rows;
        u.cols = x.cols;
        u.v = out->data;
    };
    return ode_integrate(field, std::move(x0), cfg);
}

//
// training
//

std::vector<double> train_flow(velocity_net &net, const std::vector<flow_train_item> &dataset,
                               const flow_train_config &cfg) {
    if (dataset.empty()) fail(errc::usage, "train_flow: empty dataset");
    rng r(cfg.seed);
    adam_state opt;
    opt.beta1 = 0.9;
    opt.beta2 = 0.95;
    opt.lr = cfg.lr;
    opt.init(net.all);

    const int64_t steps_total = int64_t(cfg.epochs) * int64_t(dataset.size());
    std::vector<double> losses;
    losses.reserve(size_t(steps_total));
    std::vector<size_t> order(dataset.size());
    for (size_t i = 0; i < order.size(); i++) order[i] = i;

    int64_t step = 0;
    for (int epoch = 0; epoch < cfg.epochs; epoch++) {
        // seeded Fisher-Yates reshuffle per epoch
        for (size_t i = order.size(); i > 1; i--)
            std::swap(order[i - 1], order[size_t(r.uniform_int(int64_t(i)))]);
        for (size_t oi = 0; oi < order.size(); oi++) {
            const flow_train_item &item = dataset[order[oi]];
            flow_sample s = sample_path(item.x1, r);
            flow_batch_item bi;
            bi.sample = &s;
            bi.cond = item.cond.empty() ? nullptr : &item.cond;
            bi.midi = item.midi.empty() ? nullptr : &item.midi;

            tape tp;
            tensor_ptr loss = cfm_loss(tp, net, {bi});
            const double lv = loss->data[0];
            if (!std::isfinite(lv) || lv > cfg.divergence_abort)
                fail(errc::runtime,
                     strfmt("train_flow: diverged at step %lld (loss %.3e)", (long long)step, lv));
            tp.backward(loss, net.all);

            if (step < cfg.warmup)
                opt.lr = cfg.lr * double(step + 1) / double(cfg.warmup);
            else {
                double prog = steps_total > cfg.warmup
                                  ? double(step - cfg.warmup) / double(steps_total - cfg.warmup)
                                  : 1.0;
                opt.lr = cfg.lr + (cfg.lr_final - cfg.lr) * std::min(prog, 1.0);
            }
            adam_step(net.all, opt);
            losses.push_back(lv);
            step++;
        }
    }
    return losses;
}

mel_spec synthesize_mel(const velocity_net &net, const rvq_model &rvq, const stream_matrix &tokens,
                        const std::vector<int> *score_midi, const ode_config &cfg) {
    matrix cond = codec_embedding(tokens, rvq);
    int64_t frames = cond.rows;

    std::vector<int> midi;
    const std::vector<int> *midi_ptr = nullptr;
    if (net.cfg.pitch_cond) {
        if (!score_midi) fail(errc::usage, "synthesize_mel: pitch conditioning needs score pitch");
        int64_t diff = std::llabs((long long)(int64_t(score_midi->size()) - frames));
        if (diff > 1)
            fail(errc::usage, strfmt("synthesize_mel: pitch frames (%zu) misaligned with tokens (%lld)",
                                     score_midi->size(), (long long)frames));
        frames = std::min<int64_t>(frames, int64_t(score_midi->size()));
        midi.assign(score_midi->begin(), score_midi->begin() + frames);
        midi_ptr = &midi;
        if (cond.rows > frames) {
            matrix trimmed(frames, cond.cols);
            std::copy_n(cond.v.data(), frames * cond.cols, trimmed.v.data());
            cond = std::move(trimmed);
        }
    }

    const matrix *cond_ptr = net.cfg.cond_dim > 0 ? &cond : nullptr;
    if (net.cfg.cond_dim > 0 && cond.cols != net.cfg.cond_dim)
        fail(errc::usage, "synthesize_mel: condition dims do not match the trained net");

    matrix out = ode_solve(net, cond_ptr, midi_ptr, frames, cfg);
    mel_spec mel = destandardize_mel(net, out);
    mel.frame_rate = 50.0;
    return mel;
}

//
// persistence
//

checkpoint flow_to_checkpoint(const velocity_net &net) {
    checkpoint ck;
    ck.add_scalar("meta/window", double(net.cfg.window));
    ck.add_scalar("meta/hidden_layers", double(net.cfg.hidden_layers));
    ck.add_scalar("meta/width", double(net.cfg.width));
    ck.add_scalar("meta/t_embed_dim", double(net.cfg.t_embed_dim));
    ck.add_scalar("meta/mel_bins", double(net.cfg.mel_bins));
    ck.add_scalar("meta/cond_dim", double(net.cfg.cond_dim));
    ck.add_scalar("meta/pitch_cond", net.cfg.pitch_cond ? 1.0 : 0.0);
    ck.add_scalar("meta/pitch_embed_dim", double(net.cfg.pitch_embed_dim));
    ck.add("mel_mean", {int64_t(net.mel_mean.size())}, net.mel_mean);
    ck.add("mel_std", {int64_t(net.mel_std.size())}, net.mel_std);
    for (const auto &t : net.all) ck.add(t->name, t->shape, t->data);
    return ck;
}

velocity_net flow_from_checkpoint(const checkpoint &ck) {
    flow_config cfg;
    cfg.window = int(ck.get_scalar("meta/window"));
    cfg.hidden_layers = int(ck.get_scalar("meta/hidden_layers"));
    cfg.width = int64_t(ck.get_scalar("meta/width"));
    cfg.t_embed_dim = int64_t(ck.get_scalar("meta/t_embed_dim"));
    cfg.mel_bins = int64_t(ck.get_scalar("meta/mel_bins"));
    cfg.cond_dim = int64_t(ck.get_scalar("meta/cond_dim"));
    cfg.pitch_cond = ck.get_scalar("meta/pitch_cond") != 0.0;
    cfg.pitch_embed_dim = int64_t(ck.get_scalar("meta/pitch_embed_dim"));
    velocity_net net = flow_init(cfg, 0);
    net.mel_mean = ck.get("mel_mean").data;
    net.mel_std = ck.get("mel_std").data;
    for (auto &t : net.all) {
        const named_array &a = ck.get(t->name);
        if (int64_t(a.data.size()) != t->numel())
            fail(errc::runtime, "flow checkpoint: size mismatch for " + t->name);
        t->data = a.data;
    }
    return net;
}

} // namespace svs
