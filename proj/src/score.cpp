#include "score.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace svs {

using nlohmann::json;

int64_t token_vocab::id(const std::string &tok) const {
    auto it = token_to_id.find(tok);
    if (it == token_to_id.end()) fail(errc::usage, "unknown token: " + tok);
    return it->second;
}

const std::string &token_vocab::token(int64_t id) const {
    if (id < 0 || id >= size())
        fail(errc::usage, strfmt("token id %lld out of range", (long long)id));
    return id_to_token[size_t(id)];
}

int64_t token_vocab::pitch_id(int midi) const {
    if (midi < 0 || midi > 127)
        fail(errc::usage, strfmt("midi %d out of range 0-127", midi));
    return id(strfmt("svs_pitch_%d", midi));
}

token_vocab build_vocab(const std::vector<std::string> &phoneme_inventory) {
    if (phoneme_inventory.empty()) fail(errc::usage, "build_vocab: empty phoneme inventory");
    std::set<std::string> seen;
    for (const auto &p : phoneme_inventory)
        if (!seen.insert(p).second) fail(errc::usage, "build_vocab: duplicate phoneme: " + p);

    token_vocab v;
    auto push = [&](const std::string &tok) {
        v.token_to_id[tok] = v.size();
        v.id_to_token.push_back(tok);
    };
    push("<pad>");
    push("<bos>");
    push("<eos>");
    push("<task_svs>");
    push("<cond_sep>");
    push("<tgt_sep>");
    std::vector<std::string> sorted(phoneme_inventory);
    std::sort(sorted.begin(), sorted.end());
    for (const auto &p : sorted) push("svs_phn_" + p);
    for (int m = 0; m <= 127; m++) push(strfmt("svs_pitch_%d", m));
    return v;
}

void vocab_save_tsv(const std::string &path, const token_vocab &vocab) {
    FILE *f = fopen(path.c_str(), "wb");
    if (!f) fail(errc::runtime, "cannot write vocab: " + path);
    for (int64_t i = 0; i < vocab.size(); i++)
        fprintf(f, "%s\t%lld\n", vocab.id_to_token[size_t(i)].c_str(), (long long)i);
    fclose(f);
}

//
// score loading
//

static const double kTimeEps = 1e-9;

music_score load_score(const std::string &json_text, const std::vector<std::string> &inventory) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const std::exception &e) {
        fail(errc::usage, strfmt("score parse error: %s", e.what()));
    }
    std::set<std::string> inv(inventory.begin(), inventory.end());

    music_score score;
    score.singer_id = doc.value("singer_id", 0);
    if (!doc.contains("notes") || !doc["notes"].is_array())
        fail(errc::usage, "score has no notes array");

    std::vector<note> raw;
    for (const auto &jn : doc["notes"]) {
        note n;
        n.phoneme = jn.value("phoneme", "");
        n.midi = jn.value("midi", -1);
        n.start_s = jn.value("start_s", -1.0);
        n.end_s = jn.value("end_s", -1.0);
        if (n.end_s <= n.start_s + kTimeEps)
            fail(errc::usage, strfmt("note '%s' at %.4fs has non-positive duration",
                                     n.phoneme.c_str(), n.start_s));
        if (n.midi < 0 || n.midi > 127)
            fail(errc::usage, strfmt("note '%s' at %.4fs: midi %d out of 0-127",
                                     n.phoneme.c_str(), n.start_s, n.midi));
        if (!inv.count(n.phoneme))
            fail(errc::usage, strfmt("note at %.4fs: unknown phoneme '%s'",
                                     n.start_s, n.phoneme.c_str()));
        if ((n.phoneme == "rest") != (n.midi == 0))
            fail(errc::usage, strfmt("note '%s' at %.4fs: midi 0 is reserved for rests",
                                     n.phoneme.c_str(), n.start_s));
        raw.push_back(std::move(n));
    }

    for (size_t i = 0; i + 1 < raw.size(); i++) {
        if (raw[i + 1].start_s < raw[i].start_s)
            fail(errc::usage, strfmt("notes not sorted: '%s' at %.4fs before '%s' at %.4fs",
                                     raw[i].phoneme.c_str(), raw[i].start_s,
                                     raw[i + 1].phoneme.c_str(), raw[i + 1].start_s));
        if (raw[i + 1].start_s < raw[i].end_s - kTimeEps)
            fail(errc::usage,
                 strfmt("overlapping notes: '%s' [%.4f,%.4f) and '%s' [%.4f,%.4f)",
                        raw[i].phoneme.c_str(), raw[i].start_s, raw[i].end_s,
                        raw[i + 1].phoneme.c_str(), raw[i + 1].start_s, raw[i + 1].end_s));
    }

    // materialize gaps as rests so the frame grid stays gapless
    for (size_t i = 0; i < raw.size(); i++) {
        if (!score.notes.empty()) {
            double gap = raw[i].start_s - score.notes.back().end_s;
            if (gap > kTimeEps) {
                if (!inv.count("rest"))
                    fail(errc::usage, strfmt("gap of %.4fs needs a 'rest' phoneme in the inventory",
                                             gap));
                note rest;
                rest.phoneme = "rest";
                rest.midi = 0;
                rest.start_s = score.notes.back().end_s;
                rest.end_s = raw[i].start_s;
                score.notes.push_back(rest);
            }
        }
        score.notes.push_back(raw[i]);
    }
    return score;
}

music_score score_from_file(const std::string &path, const std::vector<std::string> &inventory) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(errc::missing_prereq, "score file missing: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return load_score(ss.str(), inventory);
}

void score_to_file(const std::string &path, const music_score &score) {
    FILE *f = fopen(path.c_str(), "wb");
    if (!f) fail(errc::runtime, "cannot write score: " + path);
    fprintf(f, "{\n  \"singer_id\": %d,\n  \"notes\": [\n", score.singer_id);
    for (size_t i = 0; i < score.notes.size(); i++) {
        const note &n = score.notes[i];
        fprintf(f, "    {\"phoneme\": \"%s\", \"midi\": %d, \"start_s\": %.6f, \"end_s\": %.6f}%s\n",
                n.phoneme.c_str(), n.midi, n.start_s, n.end_s,
                i + 1 < score.notes.size() ? "," : "");
    }
    fprintf(f, "  ]\n}\n");
    fclose(f);
}

//
// frame expansion
//

int64_t note_repeat_count(const note &n, int fps) {
    return int64_t(std::floor(n.duration() * double(fps) + 0.5));
}

std::vector<frame_tuple> expand_frames(const music_score &score, const token_vocab &vocab,
                                       int fps) {
    std::vector<frame_tuple> frames;
    for (const note &n : score.notes) {
        int64_t reps = note_repeat_count(n, fps);
        if (reps == 0) {
            fprintf(stderr, "warning: note '%s' at %.4fs shorter than one frame, dropped\n",
                    n.phoneme.c_str(), n.start_s);
            continue;
        }
        frame_tuple t;
        t.phn_token = vocab.phoneme_id(n.phoneme);
        t.pitch_token = vocab.pitch_id(n.midi);
        frames.insert(frames.end(), size_t(reps), t);
    }
    return frames;
}

std::vector<int> expand_midi(const music_score &score, int fps) {
    std::vector<int> out;
    for (const note &n : score.notes) {
        int64_t reps = note_repeat_count(n, fps);
        if (reps > 0) out.insert(out.end(), size_t(reps), n.midi);
    }
    return out;
}

//
// task template
//

task_sequence assemble_template(const std::vector<frame_tuple> &frames,
                                const stream_matrix &prompt, const stream_matrix *target,
                                const token_vocab &vocab, int64_t codebook_size,
                                int64_t n_streams, int64_t prompt_max, bool strict_alignment) {
    if (prompt.frames > prompt_max)
        fail(errc::usage, strfmt("prompt of %lld frames exceeds the %lld frame limit",
                                 (long long)prompt.frames, (long long)prompt_max));
    if (prompt.frames > 0 && prompt.streams != n_streams)
        fail(errc::usage, "prompt stream count mismatch");

    int64_t n_cond = int64_t(frames.size());
    int64_t n_target = target ? target->frames : 0;
    if (target && target->streams != n_streams)
        fail(errc::usage, "target stream count mismatch");
    if (target && strict_alignment) {
        if (std::llabs((long long)(n_cond - n_target)) > 1)
            fail(errc::usage,
                 strfmt("condition (%lld) and target (%lld) frames differ by more than one",
                        (long long)n_cond, (long long)n_target));
        int64_t n = std::min(n_cond, n_target);
        n_cond = n;
        n_target = n;
    }

    task_sequence seq;
    seq.streams = n_streams;
    seq.text_vocab = vocab.size();
    seq.rows = 1 + n_cond + 1 + prompt.frames + 1 + n_target;
    seq.grid.assign(size_t(seq.rows * n_streams), int32_t(vocab.pad()));
    seq.cond_start = 1;
    seq.prompt_start = 1 + n_cond + 1;
    seq.target_start = seq.prompt_start + prompt.frames + 1;
    seq.target_frames = n_target;

    seq.at(0, 0) = int32_t(vocab.task_svs());
    for (int64_t f = 0; f < n_cond; f++) {
        seq.at(seq.cond_start + f, 0) = int32_t(frames[size_t(f)].phn_token);
        seq.at(seq.cond_start + f, 1) = int32_t(frames[size_t(f)].pitch_token);
    }
    seq.at(seq.prompt_start - 1, 0) = int32_t(vocab.cond_sep());
    for (int64_t f = 0; f < prompt.frames; f++)
        for (int64_t s = 0; s < n_streams; s++) {
            uint16_t tok = prompt.at(f, s);
            if (tok >= codebook_size)
                fail(errc::usage, strfmt("prompt token %u out of codebook range", unsigned(tok)));
            seq.at(seq.prompt_start + f, s) = int32_t(seq.text_vocab + tok);
        }
    seq.at(seq.target_start - 1, 0) = int32_t(vocab.tgt_sep());
    for (int64_t f = 0; f < n_target; f++)
        for (int64_t s = 0; s < n_streams; s++) {
            uint16_t tok = target->at(f, s);
            if (tok >= codebook_size)
                fail(errc::usage, strfmt("target token %u out of codebook range", unsigned(tok)));
            seq.at(seq.target_start + f, s) = int32_t(seq.text_vocab + tok);
        }
    return seq;
}

} // namespace svs
