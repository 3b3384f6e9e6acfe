#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "common.hpp"
#include "dsp.hpp"
#include "score.hpp"

namespace svs {

//
// Procedural singing corpus: deterministic harmonic "singing" rendered
// from generated scores, so every pipeline stage has ground truth (known
// F0 curve, known mel) at desk scale.
//

struct formant_set {
    double f[3];    // center Hz
    double bw[3];   // bandwidth Hz
    double voicing; // harmonic gain 0..1
    double noise;   // onset noise gain 0..1
};

struct singer_profile {
    int singer_id = 0;
    std::map<std::string, formant_set> formants; // per phoneme
    double vibrato_rate_hz = 5.5;
    double vibrato_depth_cents = 25.0;
    double breathiness = 0.02; // broadband noise mix
};

// 5 vowels + 6 consonants + rest
const std::vector<std::string> &default_phoneme_inventory();

// per-singer perturbation of a base formant table; fully seeded
singer_profile make_singer_profile(int singer_id, uint64_t seed);

// random walk over a diatonic scale; durations from {0.12,0.24,0.36,0.48} s
// (all whole frame multiples); short notes may come as consonant+vowel
// pairs; occasional gaps become rests downstream
music_score gen_score(rng &r, int phrase_len_notes, const std::vector<std::string> &inventory,
                      int key);

// additive synthesis: 12 partials at 1/n amplitudes shaped by the active
// phoneme's formant resonances; 30 ms linear-in-cents portamento between
// voiced notes plus vibrato; consonant onsets as 20 ms shaped noise
waveform render_singing(const music_score &score, const singer_profile &profile,
                        const stft_config &cfg, uint64_t noise_seed);

// the renderer's own instantaneous F0 at each frame center (0 in rests);
// ground truth for pitch-tracking checks
std::vector<double> render_f0_curve(const music_score &score, const singer_profile &profile,
                                    const stft_config &cfg, int64_t frames);

struct manifest_entry {
    std::string score_path; // relative to the manifest directory
    std::string wav_path;
    int singer_id = 0;
    std::string split; // train | dev | test
};

struct corpus_manifest {
    std::vector<manifest_entry> entries;
    uint64_t seed = 0;
    std::string root; // directory the relative paths resolve against

    std::vector<const manifest_entry *> split_entries(const std::string &split) const;
    std::string resolve(const std::string &rel) const { return root + "/" + rel; }
};

struct corpus_config {
    int n_utts = 200;
    int n_singers = 2;
    int phrase_min_notes = 6;
    int phrase_max_notes = 12;
    double max_seconds = 4.6; // scores are truncated past this
};

// writes out_dir/{scores,wavs}/utt_%04d.* and out_dir/manifest.jsonl;
// 80/10/10 split by utterance index, byte-reproducible from the seed
corpus_manifest build_corpus(const corpus_config &ccfg, const stft_config &cfg, uint64_t seed,
                             const std::string &out_dir);

void manifest_save(const std::string &path, const corpus_manifest &m);
corpus_manifest manifest_load(const std::string &path);

} // namespace svs
