#include "corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace svs {

namespace fsys = std::filesystem;
using nlohmann::json;

static const double kPi = 3.14159265358979323846;
static const double kPortamentoSec = 0.030;
static const double kAttackSec = 0.010;
static const int kPartials = 12;

const std::vector<std::string> &default_phoneme_inventory() {
    static const std::vector<std::string> inv = {"rest", "a", "e", "i", "o", "u",
                                                 "k",    "s", "t", "n", "m", "r"};
    return inv;
}

static const std::map<std::string, formant_set> &base_formants() {
    static const std::map<std::string, formant_set> table = {
        {"a", {{800.0, 1150.0, 2900.0}, {80.0, 110.0, 170.0}, 1.0, 0.0}},
        {"e", {{420.0, 2000.0, 2800.0}, {70.0, 100.0, 160.0}, 1.0, 0.0}},
        {"i", {{290.0, 2250.0, 3000.0}, {60.0, 100.0, 160.0}, 1.0, 0.0}},
        {"o", {{450.0, 820.0, 2830.0}, {70.0, 90.0, 170.0}, 1.0, 0.0}},
        {"u", {{330.0, 710.0, 2700.0}, {60.0, 90.0, 170.0}, 1.0, 0.0}},
        {"k", {{520.0, 1500.0, 2500.0}, {120.0, 160.0, 200.0}, 0.35, 0.40}},
        {"s", {{500.0, 1600.0, 2600.0}, {140.0, 180.0, 220.0}, 0.25, 0.50}},
        {"t", {{480.0, 1550.0, 2550.0}, {120.0, 160.0, 200.0}, 0.35, 0.40}},
        {"n", {{300.0, 1700.0, 2600.0}, {90.0, 130.0, 180.0}, 0.85, 0.10}},
        {"m", {{280.0, 1320.0, 2500.0}, {90.0, 130.0, 180.0}, 0.85, 0.10}},
        {"r", {{350.0, 1300.0, 1720.0}, {90.0, 130.0, 180.0}, 0.90, 0.05}},
    };
    return table;
}

singer_profile make_singer_profile(int singer_id, uint64_t seed) {
    rng r(seed);
    singer_profile p;
    p.singer_id = singer_id;
    for (const auto &[phn, base] : base_formants()) {
        formant_set fs = base;
        for (int k = 0; k < 3; k++) {
            fs.f[k] = std::clamp(base.f[k] * (1.0 + 0.08 * (2.0 * r.uniform() - 1.0)), 200.0, 4000.0);
            fs.bw[k] = base.bw[k] * (1.0 + 0.15 * (2.0 * r.uniform() - 1.0));
        }
        p.formants[phn] = fs;
    }
    p.vibrato_rate_hz = 5.0 + 1.5 * r.uniform();
    p.vibrato_depth_cents = 15.0 + 20.0 * r.uniform();
    p.breathiness = 0.01 + 0.03 * r.uniform();
    return p;
}

//
// score generation
//

static const int kScaleDegrees[7] = {0, 2, 4, 5, 7, 9, 11};

music_score gen_score(rng &r, int phrase_len_notes, const std::vector<std::string> &inventory,
                      int key) {
    if (phrase_len_notes < 1) fail(errc::usage, "gen_score: phrase length must be >= 1");
    std::vector<std::string> vowels, consonants;
    for (const auto &p : inventory) {
        if (p == "rest") continue;
        if (p == "a" || p == "e" || p == "i" || p == "o" || p == "u")
            vowels.push_back(p);
        else
            consonants.push_back(p);
    }
    if (vowels.empty()) fail(errc::usage, "gen_score: inventory has no vowels");

    static const double kDurations[4] = {0.12, 0.24, 0.36, 0.48};
    static const double kDurWeights[4] = {0.20, 0.40, 0.25, 0.15};

    music_score score;
    double t = 0.0;
    // walk over scale degrees; degree 0 anchored near G3+key
    int degree = 7; // one octave up from the anchor
    bool pending_vowel = false;
    int prev_midi = -1;
    for (int i = 0; i < phrase_len_notes; i++) {
        // small melodic steps keep the walk singable and inside a band
        // the pitch tracker resolves cleanly
        double u = r.uniform();
        int step = u < 0.10 ? -2 : u < 0.35 ? -1 : u < 0.65 ? 0 : u < 0.90 ? 1 : 2;
        degree = std::clamp(degree + step, 0, 10);
        int midi = 55 + key + kScaleDegrees[degree % 7] + 12 * (degree / 7);

        double du = r.uniform();
        double dur = kDurations[3];
        double acc = 0.0;
        for (int k = 0; k < 4; k++) {
            acc += kDurWeights[k];
            if (du < acc) { dur = kDurations[k]; break; }
        }

        std::string phoneme;
        if (pending_vowel) {
            phoneme = vowels[size_t(r.uniform_int(int64_t(vowels.size())))];
            pending_vowel = false;
            midi = prev_midi; // the vowel carries the consonant's pitch
        } else if (!consonants.empty() && dur <= 0.24 && i + 1 < phrase_len_notes &&
                   r.uniform() < 0.35) {
            phoneme = consonants[size_t(r.uniform_int(int64_t(consonants.size())))];
            dur = 0.12;
            pending_vowel = true;
        } else {
            phoneme = vowels[size_t(r.uniform_int(int64_t(vowels.size())))];
        }

        // occasional breath gap, kept on the frame grid
        if (!score.notes.empty() && !pending_vowel && prev_midi != -1 && r.uniform() < 0.12)
            t += r.uniform() < 0.5 ? 0.12 : 0.24;

        note n;
        n.phoneme = phoneme;
        n.midi = midi;
        n.start_s = t;
        n.end_s = t + dur;
        score.notes.push_back(n);
        t = n.end_s;
        prev_midi = midi;
    }
    return score;
}

//
// rendering
//

namespace {

struct f0_model {
    const music_score &score;
    const singer_profile &profile;

    // instantaneous F0 in Hz at time t, 0 when no voiced note is active
    double at(double t) const {
        const note *cur = nullptr;
        const note *prev_voiced = nullptr;
        for (const auto &n : score.notes) {
            if (t >= n.start_s && t < n.end_s) { cur = &n; break; }
            if (n.end_s <= t && n.midi > 0) prev_voiced = &n;
        }
        if (!cur || cur->midi == 0) return 0.0;
        double cents = double(cur->midi) * 100.0;
        // glide in from the previous voiced note over the first 30 ms,
        // but only when the two notes are adjacent
        if (prev_voiced && std::fabs(prev_voiced->end_s - cur->start_s) < 1e-6) {
            double frac = std::min((t - cur->start_s) / kPortamentoSec, 1.0);
            double from = double(prev_voiced->midi) * 100.0;
            cents = from + (cents - from) * frac;
        }
        cents += profile.vibrato_depth_cents * std::sin(2.0 * kPi * profile.vibrato_rate_hz * t);
        return 440.0 * std::pow(2.0, (cents - 6900.0) / 1200.0);
    }
};

double resonance(double f, const formant_set &fs) {
    static const double kFormantGain[3] = {1.0, 0.63, 0.35};
    double h = 0.0;
    for (int k = 0; k < 3; k++) {
        double d = (f - fs.f[k]) / fs.bw[k];
        h += kFormantGain[k] / (1.0 + d * d);
    }
    return h;
}

} // namespace

waveform render_singing(const music_score &score, const singer_profile &profile,
                        const stft_config &cfg, uint64_t noise_seed) {
    const int sr = cfg.sample_rate;
    const int64_t n = int64_t(std::llround(score.end_time() * double(sr)));
    waveform w;
    w.sample_rate = sr;
    w.samples.assign(size_t(std::max<int64_t>(n, 0)), 0.0);
    if (n <= 0) return w;

    f0_model f0{score, profile};
    rng noise(noise_seed);
    std::vector<double> phase(size_t(kPartials), 0.0);
    const double nyq_guard = 0.485 * double(sr);

    size_t note_idx = 0;
    for (int64_t i = 0; i < n; i++) {
        const double t = double(i) / double(sr);
        while (note_idx < score.notes.size() && t >= score.notes[note_idx].end_s) note_idx++;
        const note *cur = (note_idx < score.notes.size() && t >= score.notes[note_idx].start_s)
                              ? &score.notes[note_idx]
                              : nullptr;
        // draw noise every sample so the stream stays aligned across scores
        const double nz = noise.normal();
        if (!cur || cur->midi == 0) continue; // rest or gap

        const double hz = f0.at(t);
        const formant_set &fs = profile.formants.count(cur->phoneme)
                                    ? profile.formants.at(cur->phoneme)
                                    : profile.formants.begin()->second;
        const double env = std::min({1.0, (t - cur->start_s) / kAttackSec,
                                     (cur->end_s - t) / kAttackSec});
        double sample = 0.0;
        for (int p = 0; p < kPartials; p++) {
            const double pf = hz * double(p + 1);
            phase[size_t(p)] += 2.0 * kPi * pf / double(sr);
            if (phase[size_t(p)] > 2.0 * kPi) phase[size_t(p)] -= 2.0 * kPi;
            if (pf >= nyq_guard) continue;
            sample += fs.voicing * resonance(pf, fs) / double(p + 1) * std::sin(phase[size_t(p)]);
        }
        // consonant onset: 20 ms of shaped noise
        const double dt = t - cur->start_s;
        if (fs.noise > 0.0 && dt < 0.020)
            sample += fs.noise * std::sin(kPi * dt / 0.020) * nz;
        sample += profile.breathiness * nz;
        w.samples[size_t(i)] = env * sample;
    }

    double peak = 0.0;
    for (double v : w.samples) peak = std::max(peak, std::fabs(v));
    if (peak > 1e-9) {
        const double s = 0.9 / peak;
        for (auto &v : w.samples) v *= s;
    }
    return w;
}

std::vector<double> render_f0_curve(const music_score &score, const singer_profile &profile,
                                    const stft_config &cfg, int64_t frames) {
    f0_model f0{score, profile};
    std::vector<double> out(size_t(frames), 0.0);
    for (int64_t f = 0; f < frames; f++)
        out[size_t(f)] = f0.at(double(f * cfg.hop) / double(cfg.sample_rate));
    return out;
}

//
// corpus build
//

std::vector<const manifest_entry *> corpus_manifest::split_entries(const std::string &split) const {
    std::vector<const manifest_entry *> out;
    for (const auto &e : entries)
        if (e.split == split) out.push_back(&e);
    return out;
}

corpus_manifest build_corpus(const corpus_config &ccfg, const stft_config &cfg, uint64_t seed,
                             const std::string &out_dir) {
    if (ccfg.n_utts < ccfg.n_singers)
        fail(errc::usage, "build_corpus: need at least one utterance per singer");
    std::error_code ec;
    fsys::create_directories(out_dir + "/scores", ec);
    fsys::create_directories(out_dir + "/wavs", ec);
    if (!fsys::is_directory(out_dir + "/scores") || !fsys::is_directory(out_dir + "/wavs"))
        fail(errc::runtime, "build_corpus: cannot create output directories under " + out_dir);

    std::vector<singer_profile> singers;
    for (int s = 0; s < ccfg.n_singers; s++)
        singers.push_back(make_singer_profile(s, substream_seed(seed, strfmt("singer_%d", s))));

    corpus_manifest manifest;
    manifest.seed = seed;
    manifest.root = out_dir;
    const auto &inventory = default_phoneme_inventory();

    for (int i = 0; i < ccfg.n_utts; i++) {
        rng r(substream_seed(seed, strfmt("utt_%04d", i)));
        const int singer = i % ccfg.n_singers;
        const int phrase_len =
            ccfg.phrase_min_notes +
            int(r.uniform_int(int64_t(ccfg.phrase_max_notes - ccfg.phrase_min_notes + 1)));
        const int key = int(r.uniform_int(12));
        music_score score = gen_score(r, phrase_len, inventory, key);
        while (!score.notes.empty() && score.end_time() > ccfg.max_seconds)
            score.notes.pop_back();
        score.singer_id = singer;

        waveform w = render_singing(score, singers[size_t(singer)], cfg,
                                    substream_seed(seed, strfmt("noise_%04d", i)));

        manifest_entry e;
        e.score_path = strfmt("scores/utt_%04d.json", i);
        e.wav_path = strfmt("wavs/utt_%04d.wav", i);
        e.singer_id = singer;
        const double frac = double(i) / double(ccfg.n_utts);
        e.split = frac < 0.8 ? "train" : frac < 0.9 ? "dev" : "test";
        score_to_file(out_dir + "/" + e.score_path, score);
        wav_write(out_dir + "/" + e.wav_path, w);
        manifest.entries.push_back(std::move(e));
    }
    manifest_save(out_dir + "/manifest.jsonl", manifest);
    return manifest;
}

void manifest_save(const std::string &path, const corpus_manifest &m) {
    FILE *f = fopen(path.c_str(), "wb");
    if (!f) fail(errc::runtime, "cannot write manifest: " + path);
    fprintf(f, "{\"seed\": %llu}\n", (unsigned long long)m.seed);
    for (const auto &e : m.entries)
        fprintf(f, "{\"score\": \"%s\", \"wav\": \"%s\", \"singer_id\": %d, \"split\": \"%s\"}\n",
                e.score_path.c_str(), e.wav_path.c_str(), e.singer_id, e.split.c_str());
    fclose(f);
}

corpus_manifest manifest_load(const std::string &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(errc::missing_prereq, "manifest missing: " + path);
    corpus_manifest m;
    m.root = fsys::path(path).parent_path().string();
    if (m.root.empty()) m.root = ".";
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const std::exception &e) {
            fail(errc::runtime, strfmt("manifest parse error: %s", e.what()));
        }
        if (first && j.contains("seed")) {
            m.seed = j["seed"].get<uint64_t>();
            first = false;
            continue;
        }
        first = false;
        manifest_entry e;
        e.score_path = j.value("score", "");
        e.wav_path = j.value("wav", "");
        e.singer_id = j.value("singer_id", 0);
        e.split = j.value("split", "");
        if (e.score_path.empty() || e.wav_path.empty() || e.split.empty())
            fail(errc::runtime, "manifest entry incomplete: " + line);
        m.entries.push_back(std::move(e));
    }
    return m;
}

} // namespace svs
