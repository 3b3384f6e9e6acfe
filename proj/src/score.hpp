#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "common.hpp"
#include "rvq.hpp"

namespace svs {

//
// Score front-end: notes -> frame-level (phoneme, pitch) token tuples at
// 50 fps, duration encoded implicitly by the repeat count of each tuple,
// plus vocabulary management and the condition/target grid template.
//

struct note {
    std::string phoneme;
    int midi = 0; // 0 reserved for rest
    double start_s = 0.0;
    double end_s = 0.0;

    double duration() const { return end_s - start_s; }
};

struct music_score {
    std::vector<note> notes; // non-overlapping, sorted by start
    int singer_id = 0;

    double end_time() const { return notes.empty() ? 0.0 : notes.back().end_s; }
};

struct token_vocab {
    std::vector<std::string> id_to_token;
    std::map<std::string, int64_t> token_to_id;

    int64_t size() const { return int64_t(id_to_token.size()); }
    int64_t id(const std::string &tok) const;
    const std::string &token(int64_t id) const;

    int64_t pad() const { return 0; }
    int64_t bos() const { return 1; }
    int64_t eos() const { return 2; }
    int64_t task_svs() const { return 3; }
    int64_t cond_sep() const { return 4; }
    int64_t tgt_sep() const { return 5; }

    int64_t phoneme_id(const std::string &p) const { return id("svs_phn_" + p); }
    int64_t pitch_id(int midi) const;
};

// deterministic layout: specials, then svs_phn_* sorted, then svs_pitch_0..127
token_vocab build_vocab(const std::vector<std::string> &phoneme_inventory);
void vocab_save_tsv(const std::string &path, const token_vocab &vocab);

// JSON score document; validates and materializes inter-note gaps as rests
music_score load_score(const std::string &json_text, const std::vector<std::string> &inventory);
music_score score_from_file(const std::string &path, const std::vector<std::string> &inventory);
void score_to_file(const std::string &path, const music_score &score);

// round-half-up of (duration * fps)
int64_t note_repeat_count(const note &n, int fps);

struct frame_tuple {
    int64_t phn_token = 0;
    int64_t pitch_token = 0;
};

// each note contributes round(duration*fps) identical tuples; zero-repeat
// notes are dropped with a warning on stderr
std::vector<frame_tuple> expand_frames(const music_score &score, const token_vocab &vocab,
                                       int fps = 50);
// frame-aligned midi values (rest = 0), same repeat rule
std::vector<int> expand_midi(const music_score &score, int fps = 50);

//
// Task grid: one row per frame, 9 streams. Condition rows carry the
// phoneme token in stream 0 and the pitch token in stream 1; prompt and
// target rows carry codec tokens offset into the combined id space
// [0, text_vocab) ++ [text_vocab, text_vocab + codebook).
//

struct task_sequence {
    int64_t rows = 0;
    int64_t streams = 0;
    std::vector<int32_t> grid;
    int64_t cond_start = 0;
    int64_t prompt_start = 0;
    int64_t target_start = 0;
    int64_t target_frames = 0;
    int64_t text_vocab = 0; // codec ids start here

    int32_t &at(int64_t r, int64_t s) { return grid[size_t(r * streams + s)]; }
    int32_t at(int64_t r, int64_t s) const { return grid[size_t(r * streams + s)]; }
    bool has_target() const { return target_frames > 0; }
};

inline constexpr int64_t kPromptMaxFrames = 150; // 3 s at 50 fps

// layout: task marker row, condition rows, separator, prompt rows,
// separator, target rows (training) or nothing (inference).
// strict_alignment enforces the training-data contract that condition and
// target frame counts agree within one frame (both trimmed to the min).
task_sequence assemble_template(const std::vector<frame_tuple> &frames,
                                const stream_matrix &prompt, const stream_matrix *target,
                                const token_vocab &vocab, int64_t codebook_size,
                                int64_t n_streams, int64_t prompt_max = kPromptMaxFrames,
                                bool strict_alignment = true);

} // namespace svs
