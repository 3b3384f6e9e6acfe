#include "pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace svs {

namespace fsys = std::filesystem;

std::string path_stem(const std::string &path) { return fsys::path(path).stem().string(); }

//
// configuration
//

void pipeline_config::set(const std::string &key, const std::string &value) {
    auto as_i64 = [&]() { return int64_t(std::stoll(value)); };
    auto as_int = [&]() { return int(std::stoll(value)); };
    auto as_f64 = [&]() { return std::stod(value); };
    try {
        if (key == "corpus_dir") corpus_dir = value;
        else if (key == "ckpt_dir") ckpt_dir = value;
        else if (key == "report_dir") report_dir = value;
        else if (key == "seed") seed = uint64_t(std::stoull(value));
        else if (key == "mode") mode = value;
        else if (key == "sample_rate") stft.sample_rate = as_int();
        else if (key == "hop") stft.hop = as_int();
        else if (key == "window") stft.window = as_int();
        else if (key == "fft_size") stft.fft_size = as_int();
        else if (key == "mel_bins") stft.mel_bins = as_int();
        else if (key == "fmin") stft.fmin = as_f64();
        else if (key == "fmax") stft.fmax = as_f64();
        else if (key == "n_utts") n_utts = as_int();
        else if (key == "n_singers") n_singers = as_int();
        else if (key == "rvq_stages") rvq_stages = as_int();
        else if (key == "rvq_codebook") rvq_codebook = as_i64();
        else if (key == "kmeans_iters") kmeans_iters = as_int();
        else if (key == "kmeans_max_points") kmeans_max_points = as_i64();
        else if (key == "lm_dim") lm_dim = as_i64();
        else if (key == "lm_layers") lm_layers = as_int();
        else if (key == "lm_heads") lm_heads = as_int();
        else if (key == "lm_max_frames") lm_max_frames = as_i64();
        else if (key == "lm_steps") lm_steps = as_i64();
        else if (key == "lm_lr") lm_lr = as_f64();
        else if (key == "lm_warmup") lm_warmup = as_i64();
        else if (key == "sample_top_k") sample_top_k = as_int();
        else if (key == "sample_temperature") sample_temperature = as_f64();
        else if (key == "flow_window") flow_window = as_int();
        else if (key == "flow_width") flow_width = as_i64();
        else if (key == "flow_hidden") flow_hidden = as_int();
        else if (key == "flow_epochs") flow_epochs = as_int();
        else if (key == "flow_lr") flow_lr = as_f64();
        else if (key == "flow_lr_final") flow_lr_final = as_f64();
        else if (key == "flow_warmup") flow_warmup = as_i64();
        else if (key == "ode_solver") ode_solver = value;
        else if (key == "ode_steps") ode_steps = as_int();
        else if (key == "gl_iters") gl_iters = as_int();
        else if (key == "prompt_frames") prompt_frames = as_i64();
        else fail(errc::usage, "unknown config key: " + key);
    } catch (const error &) {
        throw;
    } catch (const std::exception &) {
        fail(errc::usage, strfmt("bad value for config key %s: %s", key.c_str(), value.c_str()));
    }
    if (key == "mode" && mode != "flow1" && mode != "flow2")
        fail(errc::usage, "mode must be flow1 or flow2");
    if (key == "ode_solver" && ode_solver != "euler" && ode_solver != "midpoint")
        fail(errc::usage, "ode_solver must be euler or midpoint");
}

std::string pipeline_config::serialize() const {
    std::ostringstream o;
    o << "ckpt_dir = " << ckpt_dir << "\n";
    o << "corpus_dir = " << corpus_dir << "\n";
    o << "fft_size = " << stft.fft_size << "\n";
    o << "flow_epochs = " << flow_epochs << "\n";
    o << "flow_hidden = " << flow_hidden << "\n";
    o << strfmt("flow_lr = %.9g\n", flow_lr);
    o << strfmt("flow_lr_final = %.9g\n", flow_lr_final);
    o << "flow_warmup = " << flow_warmup << "\n";
    o << "flow_width = " << flow_width << "\n";
    o << "flow_window = " << flow_window << "\n";
    o << strfmt("fmax = %.9g\n", stft.fmax);
    o << strfmt("fmin = %.9g\n", stft.fmin);
    o << "gl_iters = " << gl_iters << "\n";
    o << "hop = " << stft.hop << "\n";
    o << "kmeans_iters = " << kmeans_iters << "\n";
    o << "kmeans_max_points = " << kmeans_max_points << "\n";
    o << "lm_dim = " << lm_dim << "\n";
    o << "lm_heads = " << lm_heads << "\n";
    o << "lm_layers = " << lm_layers << "\n";
    o << strfmt("lm_lr = %.9g\n", lm_lr);
    o << "lm_max_frames = " << lm_max_frames << "\n";
    o << "lm_steps = " << lm_steps << "\n";
    o << "lm_warmup = " << lm_warmup << "\n";
    o << "mel_bins = " << stft.mel_bins << "\n";
    o << "mode = " << mode << "\n";
    o << "n_singers = " << n_singers << "\n";
    o << "n_utts = " << n_utts << "\n";
    o << "ode_solver = " << ode_solver << "\n";
    o << "ode_steps = " << ode_steps << "\n";
    o << "prompt_frames = " << prompt_frames << "\n";
    o << "report_dir = " << report_dir << "\n";
    o << "rvq_codebook = " << rvq_codebook << "\n";
    o << "rvq_stages = " << rvq_stages << "\n";
    o << "sample_rate = " << stft.sample_rate << "\n";
    o << "sample_top_k = " << sample_top_k << "\n";
    o << strfmt("sample_temperature = %.9g\n", sample_temperature);
    o << "seed = " << seed << "\n";
    o << "window = " << stft.window << "\n";
    return o.str();
}

pipeline_config pipeline_config::from_file(const std::string &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(errc::usage, "config file missing: " + path);
    pipeline_config cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        lineno++;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        size_t eq = line.find('=');
        if (eq == std::string::npos) {
            bool blank = line.find_first_not_of(" \t\r") == std::string::npos;
            if (!blank) fail(errc::usage, strfmt("%s:%d: expected key = value", path.c_str(), lineno));
            continue;
        }
        auto trim = [](std::string s) {
            size_t a = s.find_first_not_of(" \t\r");
            size_t b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return cfg;
}

ode_config pipeline_config::make_ode(uint64_t s) const {
    ode_config oc;
    oc.solver = ode_solver == "midpoint" ? ode_config::solver_kind::midpoint
                                         : ode_config::solver_kind::euler;
    oc.steps = ode_steps;
    oc.seed = s;
    return oc;
}

void pipeline::write_config_snapshot(const std::string &dir, const std::string &command) const {
    std::error_code ec;
    fsys::create_directories(dir, ec);
    const std::string path = dir + "/" + command + ".config.txt";
    FILE *f = fopen(path.c_str(), "wb");
    if (!f) fail(errc::runtime, "cannot write config snapshot: " + path);
    const std::string body = cfg.serialize();
    fwrite(body.data(), 1, body.size(), f);
    fclose(f);
}

//
// stage helpers
//

checkpoint pipeline::require_checkpoint(const std::string &path, stage_tag tag,
                                        const std::string &stage_name) const {
    if (!fsys::exists(path))
        fail(errc::missing_prereq,
             stage_name + " checkpoint missing: " + path + " (run train-" + stage_name + " first)");
    checkpoint ck = checkpoint::load(path);
    if (!ck.has("meta/stage") || int(ck.get_scalar("meta/stage")) != int(tag))
        fail(errc::missing_prereq, stage_name + " checkpoint has the wrong stage tag: " + path);
    return ck;
}

corpus_manifest pipeline::load_manifest() const {
    if (!fsys::exists(manifest_path()))
        fail(errc::missing_prereq,
             "corpus manifest missing: " + manifest_path() + " (run build-corpus first)");
    return manifest_load(manifest_path());
}

corpus_manifest pipeline::cmd_build_corpus(bool force) {
    if (fsys::exists(manifest_path()) && !force)
        fail(errc::usage, "corpus already exists at " + cfg.corpus_dir + " (use --force to rebuild)");
    corpus_config ccfg;
    ccfg.n_utts = cfg.n_utts;
    ccfg.n_singers = cfg.n_singers;
    corpus_manifest m = build_corpus(ccfg, cfg.stft, cfg.seed, cfg.corpus_dir);
    write_config_snapshot(cfg.corpus_dir, "build-corpus");
    return m;
}

std::vector<pipeline::utt_data> pipeline::load_split_data(const corpus_manifest &m,
                                                          const std::string &split,
                                                          const rvq_model &rvq) const {
    std::vector<utt_data> out;
    for (const auto *e : m.split_entries(split)) {
        utt_data u;
        u.utt_id = path_stem(e->wav_path);
        u.score = score_from_file(m.resolve(e->score_path), default_phoneme_inventory());
        u.score.singer_id = e->singer_id;
        waveform w = wav_read(m.resolve(e->wav_path));
        u.mel = mel_spectrogram(w, cfg.stft);
        u.tokens = rvq_encode(u.mel, rvq);
        u.midi = expand_midi(u.score, cfg.stft.frames_per_second());
        out.push_back(std::move(u));
    }
    return out;
}

//
// training commands
//

static void write_curve_csv(const std::string &path, const std::vector<double> &losses) {
    FILE *f = fopen(path.c_str(), "wb");
    if (!f) fail(errc::runtime, "cannot write curve: " + path);
    fprintf(f, "step,loss\n");
    for (size_t i = 0; i < losses.size(); i++) fprintf(f, "%zu,%.9f\n", i, losses[i]);
    fclose(f);
}

void pipeline::cmd_train(const std::string &stage) {
    std::error_code ec;
    fsys::create_directories(cfg.ckpt_dir, ec);

    if (stage == "codec") {
        corpus_manifest m = load_manifest();
        std::vector<mel_spec> mels;
        for (const auto *e : m.split_entries("train"))
            mels.push_back(mel_spectrogram(wav_read(m.resolve(e->wav_path)), cfg.stft));
        if (mels.empty()) fail(errc::missing_prereq, "corpus has no train split");
        std::vector<const mel_spec *> ptrs;
        for (const auto &x : mels) ptrs.push_back(&x);

        rvq_train_config rc;
        rc.stages = cfg.rvq_stages;
        rc.codebook_size = cfg.rvq_codebook;
        rc.kmeans_iters = cfg.kmeans_iters;
        rc.max_points = cfg.kmeans_max_points;
        rvq_model model = rvq_train(ptrs, rc, stage_seed("codec"));

        // per-stage residual energy doubles as the training curve
        std::vector<double> curve;
        {
            int64_t total = 0;
            matrix res(0, 0);
            for (const auto &mel : mels) total += mel.frames;
            res = matrix(total, mels[0].bins);
            int64_t row = 0;
            for (const auto &mel : mels) {
                std::copy_n(mel.v.data(), mel.frames * mel.bins, res.row(row));
                row += mel.frames;
            }
            for (const auto &cb : model.acoustic) {
                double energy = 0.0;
                for (int64_t i = 0; i < res.rows; i++) {
                    double *r = res.row(i);
                    int64_t best = 0;
                    double best_d = 1e300;
                    for (int64_t c = 0; c < cb.centroids.rows; c++) {
                        double dd = 0.0;
                        const double *cc = cb.centroids.row(c);
                        for (int64_t j = 0; j < res.cols; j++) {
                            double t = r[j] - cc[j];
                            dd += t * t;
                        }
                        if (dd < best_d) { best_d = dd; best = c; }
                    }
                    const double *cc = cb.centroids.row(best);
                    for (int64_t j = 0; j < res.cols; j++) r[j] -= cc[j];
                    energy += best_d;
                }
                curve.push_back(energy / double(res.rows));
            }
        }

        checkpoint ck = rvq_to_checkpoint(model);
        ck.add_scalar("meta/stage", double(int(stage_tag::codec)));
        ck.save(codec_ckpt());
        write_curve_csv(cfg.ckpt_dir + "/codec_curve.csv", curve);
        write_config_snapshot(cfg.ckpt_dir, "train-codec");
        return;
    }

    if (stage == "lm") {
        corpus_manifest m = load_manifest();
        rvq_model rvq = rvq_from_checkpoint(require_checkpoint(codec_ckpt(), stage_tag::codec, "codec"));
        token_vocab vocab = build_vocab(default_phoneme_inventory());
        vocab_save_tsv(cfg.ckpt_dir + "/vocab.tsv", vocab);

        std::vector<utt_data> data = load_split_data(m, "train", rvq);
        if (data.empty()) fail(errc::missing_prereq, "corpus has no train split");

        // speaker prompt: opening target frames of the next train utterance
        // by the same singer
        std::vector<task_sequence> seqs;
        for (size_t i = 0; i < data.size(); i++) {
            stream_matrix prompt;
            for (size_t off = 1; off < data.size(); off++) {
                const utt_data &cand = data[(i + off) % data.size()];
                if (cand.score.singer_id != data[i].score.singer_id) continue;
                int64_t n = std::min<int64_t>(cfg.prompt_frames, cand.tokens.frames);
                prompt = stream_matrix(n, cand.tokens.streams);
                std::copy_n(cand.tokens.tokens.data(), size_t(n * cand.tokens.streams),
                            prompt.tokens.data());
                break;
            }
            auto frames = expand_frames(data[i].score, vocab, cfg.stft.frames_per_second());
            seqs.push_back(assemble_template(frames, prompt, &data[i].tokens, vocab,
                                             rvq.codebook_size(), rvq.n_streams(),
                                             cfg.prompt_frames));
        }

        lm_config lc;
        lc.model_dim = cfg.lm_dim;
        lc.layers = cfg.lm_layers;
        lc.heads = cfg.lm_heads;
        lc.max_frames = cfg.lm_max_frames;
        lc.text_vocab = vocab.size();
        lc.codebook = rvq.codebook_size();
        lc.n_streams = rvq.n_streams();
        lm_params params = lm_init(lc, stage_seed("lm_init"));

        lm_train_config tc;
        tc.steps = cfg.lm_steps;
        tc.lr = cfg.lm_lr;
        tc.warmup = cfg.lm_warmup;
        lm_trainer trainer(params, tc);

        rng order_rng(stage_seed("lm_order"));
        std::vector<size_t> order(seqs.size());
        for (size_t i = 0; i < order.size(); i++) order[i] = i;
        std::vector<double> losses;
        size_t cursor = order.size();
        for (int64_t step = 0; step < cfg.lm_steps; step++) {
            if (cursor >= order.size()) {
                for (size_t i = order.size(); i > 1; i--)
                    std::swap(order[i - 1], order[size_t(order_rng.uniform_int(int64_t(i)))]);
                cursor = 0;
            }
            losses.push_back(trainer.train_step(seqs[order[cursor++]]));
        }

        checkpoint ck = lm_to_checkpoint(params);
        ck.add_scalar("meta/stage", double(int(stage_tag::lm)));
        ck.save(lm_ckpt());
        write_curve_csv(cfg.ckpt_dir + "/lm_curve.csv", losses);
        write_config_snapshot(cfg.ckpt_dir, "train-lm");
        return;
    }

    if (stage == "flow") {
        train_flow_mode(cfg.mode);
        return;
    }
    fail(errc::usage, "unknown training stage: " + stage + " (codec, lm or flow)");
}

void pipeline::train_flow_mode(const std::string &mode) {
    if (mode != "flow1" && mode != "flow2" && mode != "uncond")
        fail(errc::usage, "flow mode must be flow1, flow2 or uncond");
    std::error_code ec;
    fsys::create_directories(cfg.ckpt_dir, ec);
    corpus_manifest m = load_manifest();
    rvq_model rvq = rvq_from_checkpoint(require_checkpoint(codec_ckpt(), stage_tag::codec, "codec"));
    // the stage order is part of the pipeline contract even though flow
    // training itself conditions on ground-truth tokens
    require_checkpoint(lm_ckpt(), stage_tag::lm, "lm");

    std::vector<utt_data> data = load_split_data(m, "train", rvq);
    if (data.empty()) fail(errc::missing_prereq, "corpus has no train split");

    flow_config fc;
    fc.window = cfg.flow_window;
    fc.width = cfg.flow_width;
    fc.hidden_layers = cfg.flow_hidden;
    fc.mel_bins = cfg.stft.mel_bins;
    fc.cond_dim = mode == "uncond" ? 0 : 80 + rvq.semantic_dim();
    fc.pitch_cond = mode == "flow2";
    velocity_net net = flow_init(fc, stage_seed("flow_init_" + mode));

    std::vector<const mel_spec *> mels;
    for (const auto &u : data) mels.push_back(&u.mel);
    flow_fit_standardization(net, mels);

    std::vector<flow_train_item> items;
    for (const auto &u : data) {
        flow_train_item it;
        it.x1 = standardize_mel(net, u.mel);
        if (fc.cond_dim > 0) it.cond = codec_embedding(u.tokens, rvq);
        if (fc.pitch_cond) {
            it.midi = u.midi;
            int64_t diff = int64_t(it.midi.size()) - it.x1.rows;
            if (diff > 1 || diff < -1)
                fail(errc::runtime, "flow training: score frames misaligned with mel for " + u.utt_id);
            int64_t n = std::min<int64_t>(int64_t(it.midi.size()), it.x1.rows);
            it.midi.resize(size_t(n));
            if (it.x1.rows > n) {
                matrix t1(n, it.x1.cols);
                std::copy_n(it.x1.v.data(), n * it.x1.cols, t1.v.data());
                it.x1 = std::move(t1);
            }
            if (it.cond.rows > n) {
                matrix t2(n, it.cond.cols);
                std::copy_n(it.cond.v.data(), n * it.cond.cols, t2.v.data());
                it.cond = std::move(t2);
            }
        }
        items.push_back(std::move(it));
    }

    flow_train_config tc;
    tc.epochs = cfg.flow_epochs;
    tc.lr = cfg.flow_lr;
    tc.lr_final = cfg.flow_lr_final;
    tc.warmup = cfg.flow_warmup;
    tc.seed = stage_seed("flow_train_" + mode);
    std::vector<double> losses = train_flow(net, items, tc);

    checkpoint ck = flow_to_checkpoint(net);
    ck.add_scalar("meta/stage", double(int(stage_tag::flow)));
    ck.add_scalar("meta/flow_mode", mode == "flow1" ? 1.0 : mode == "flow2" ? 2.0 : 0.0);
    ck.save(flow_ckpt(mode));
    write_curve_csv(cfg.ckpt_dir + "/" + mode + "_curve.csv", losses);
    write_config_snapshot(cfg.ckpt_dir, "train-flow-" + mode);
}

//
// inference commands
//

namespace {

struct loaded_stages {
    rvq_model rvq;
    lm_params lm;
    velocity_net flow;
};

} // namespace

void pipeline::cmd_synthesize(const std::string &score_path, int singer_id,
                              const std::string &out_dir) {
    corpus_manifest m = load_manifest();
    rvq_model rvq = rvq_from_checkpoint(require_checkpoint(codec_ckpt(), stage_tag::codec, "codec"));
    lm_params lm = lm_from_checkpoint(require_checkpoint(lm_ckpt(), stage_tag::lm, "lm"));
    velocity_net flow =
        flow_from_checkpoint(require_checkpoint(flow_ckpt(cfg.mode), stage_tag::flow, "flow"));
    std::error_code ec;
    fsys::create_directories(out_dir, ec);

    token_vocab vocab = build_vocab(default_phoneme_inventory());
    music_score score = score_from_file(score_path, default_phoneme_inventory());

    // prompt: opening frames of the singer's first train utterance
    stream_matrix prompt;
    for (const auto *e : m.split_entries("train")) {
        if (e->singer_id != singer_id) continue;
        waveform w = wav_read(m.resolve(e->wav_path));
        mel_spec mel = mel_spectrogram(w, cfg.stft);
        stream_matrix tok = rvq_encode(mel, rvq);
        int64_t n = std::min<int64_t>(cfg.prompt_frames, tok.frames);
        prompt = stream_matrix(n, tok.streams);
        std::copy_n(tok.tokens.data(), size_t(n * tok.streams), prompt.tokens.data());
        break;
    }
    if (prompt.frames == 0)
        fail(errc::usage, strfmt("unknown singer_id %d: no prompt source in the train split",
                                 singer_id));

    const std::string utt = path_stem(score_path);
    auto frames = expand_frames(score, vocab, cfg.stft.frames_per_second());
    if (frames.empty()) fail(errc::usage, "score expands to zero frames: " + score_path);
    task_sequence cond = assemble_template(frames, prompt, nullptr, vocab, rvq.codebook_size(),
                                           rvq.n_streams(), cfg.prompt_frames);

    lm_sampling sampling;
    sampling.kind = cfg.sample_top_k <= 1 ? lm_sampling::mode::greedy : lm_sampling::mode::top_k;
    sampling.top_k = cfg.sample_top_k;
    sampling.temperature = cfg.sample_temperature;
    sampling.seed = stage_seed("sample_" + utt);
    stream_matrix tokens = lm_generate(lm, cond, int64_t(frames.size()), sampling);

    std::vector<int> midi = expand_midi(score, cfg.stft.frames_per_second());
    const std::vector<int> *midi_ptr = flow.cfg.pitch_cond ? &midi : nullptr;
    mel_spec mel =
        synthesize_mel(flow, rvq, tokens, midi_ptr, cfg.make_ode(stage_seed("ode_" + utt)));
    waveform wav = griffin_lim_vocode(mel, cfg.stft, cfg.gl_iters);

    wav_write(out_dir + "/" + utt + ".wav", wav);
    stream_matrix_save(out_dir + "/" + utt + ".tokens.bin", tokens);
    checkpoint mel_ck;
    mel_ck.add("mel", {mel.frames, mel.bins}, mel.v);
    mel_ck.save(out_dir + "/" + utt + ".mel.ckpt");
    write_config_snapshot(out_dir, "synthesize");
}

void pipeline::synthesize_split(const std::string &split, const std::string &out_dir) {
    corpus_manifest m = load_manifest();
    auto entries = m.split_entries(split);
    if (entries.empty()) fail(errc::missing_prereq, "no utterances in split: " + split);
    for (const auto *e : entries)
        cmd_synthesize(m.resolve(e->score_path), e->singer_id, out_dir);
}

void pipeline::resynthesize_split(const std::string &split, const std::string &out_dir) {
    corpus_manifest m = load_manifest();
    rvq_model rvq = rvq_from_checkpoint(require_checkpoint(codec_ckpt(), stage_tag::codec, "codec"));
    std::error_code ec;
    fsys::create_directories(out_dir, ec);
    auto entries = m.split_entries(split);
    if (entries.empty()) fail(errc::missing_prereq, "no utterances in split: " + split);
    for (const auto *e : entries) {
        waveform w = wav_read(m.resolve(e->wav_path));
        mel_spec mel = mel_spectrogram(w, cfg.stft);
        stream_matrix tok = rvq_encode(mel, rvq);
        matrix dec = rvq_decode(tok, rvq);
        mel_spec mel_hat;
        mel_hat.frames = dec.rows;
        mel_hat.bins = dec.cols;
        mel_hat.v = dec.v;
        waveform out = griffin_lim_vocode(mel_hat, cfg.stft, cfg.gl_iters);
        wav_write(out_dir + "/" + path_stem(e->wav_path) + ".wav", out);
    }
    write_config_snapshot(out_dir, "resynthesize");
}

metric_report pipeline::cmd_evaluate(const std::string &split, const std::string &system_dir) {
    corpus_manifest m = load_manifest();
    auto entries = m.split_entries(split);
    if (entries.empty()) fail(errc::missing_prereq, "no utterances in split: " + split);

    std::vector<eval_pair> pairs;
    int64_t present = 0;
    for (const auto *e : entries) {
        eval_pair p;
        p.utt_id = path_stem(e->wav_path);
        p.ref_wav = m.resolve(e->wav_path);
        p.hyp_wav = system_dir + "/" + p.utt_id + ".wav";
        if (fsys::exists(p.hyp_wav)) present++;
        pairs.push_back(std::move(p));
    }
    if (present == 0)
        fail(errc::missing_prereq, "no synthesized wavs for split " + split + " in " + system_dir);

    metric_report report = evaluate_corpus(pairs, cfg.stft);

    std::error_code ec;
    fsys::create_directories(cfg.report_dir, ec);
    const std::string system = path_stem(system_dir.back() == '/'
                                             ? system_dir.substr(0, system_dir.size() - 1)
                                             : system_dir);
    const std::string base = cfg.report_dir + "/" + system + "_" + split;
    report_save_csv(base + ".csv", report);
    report_save_json(base + ".json", report);

    // long-format points for external charting
    FILE *f = fopen((base + "_points.csv").c_str(), "wb");
    if (!f) fail(errc::runtime, "cannot write points csv");
    fprintf(f, "system,metric,value\n");
    for (const auto &r : report.rows) {
        if (!r.ok) continue;
        fprintf(f, "%s,f0_rmse,%.6f\n", system.c_str(), r.f0_rmse_hz);
        fprintf(f, "%s,f0_corr,%.6f\n", system.c_str(), r.f0_correlation);
        fprintf(f, "%s,mcd,%.6f\n", system.c_str(), r.mcd_db);
        fprintf(f, "%s,voiced_overlap,%.6f\n", system.c_str(), r.voiced_overlap_frac);
    }
    fclose(f);
    write_config_snapshot(cfg.report_dir, "evaluate-" + system + "-" + split);
    return report;
}

void pipeline::cmd_report() {
    if (!fsys::is_directory(cfg.report_dir))
        fail(errc::missing_prereq, "report dir missing: " + cfg.report_dir);
    std::vector<std::string> points;
    for (const auto &e : fsys::directory_iterator(cfg.report_dir)) {
        std::string name = e.path().filename().string();
        if (name.size() > 11 && name.substr(name.size() - 11) == "_points.csv")
            points.push_back(e.path().string());
    }
    if (points.empty())
        fail(errc::missing_prereq, "no evaluation points in " + cfg.report_dir + " (run evaluate first)");
    std::sort(points.begin(), points.end());

    const std::string out_path = cfg.report_dir + "/summary_long.csv";
    FILE *out = fopen(out_path.c_str(), "wb");
    if (!out) fail(errc::runtime, "cannot write summary: " + out_path);
    fprintf(out, "system,metric,value\n");
    for (const auto &p : points) {
        std::ifstream in(p, std::ios::binary);
        std::string line;
        bool header = true;
        while (std::getline(in, line)) {
            if (header) { header = false; continue; }
            if (!line.empty()) fprintf(out, "%s\n", line.c_str());
        }
    }
    fclose(out);
}

} // namespace svs
