#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "corpus.hpp"
#include "score.hpp"

using namespace svs;

static const std::vector<std::string> kInv = {"rest", "a", "i", "k"};

TEST_CASE("vocab layout: specials, sorted phonemes, pitches") {
    token_vocab v = build_vocab({"a"});
    CHECK(v.size() == 6 + 1 + 128);
    CHECK(v.token(0) == "<pad>");
    CHECK(v.token(5) == "<tgt_sep>");
    CHECK(v.token(6) == "svs_phn_a");
    CHECK(v.token(7) == "svs_pitch_0");
    CHECK(v.token(134) == "svs_pitch_127");

    // bijective and stable
    token_vocab v2 = build_vocab({"a"});
    for (int64_t i = 0; i < v.size(); i++) {
        CHECK(v.id(v.token(i)) == i);
        CHECK(v2.token(i) == v.token(i));
    }
    CHECK_THROWS_AS(build_vocab({"a", "a"}), error);
    CHECK_THROWS_AS(build_vocab({}), error);
}

TEST_CASE("load_score: empty, gap rests, validation errors") {
    music_score empty = load_score(R"({"singer_id": 1, "notes": []})", kInv);
    CHECK(empty.notes.empty());
    token_vocab v = build_vocab(kInv);
    CHECK(expand_frames(empty, v).empty());

    music_score gapped = load_score(
        R"({"notes": [
            {"phoneme": "a", "midi": 60, "start_s": 0.0, "end_s": 0.2},
            {"phoneme": "i", "midi": 62, "start_s": 0.3, "end_s": 0.5}
        ]})",
        kInv);
    REQUIRE(gapped.notes.size() == 3);
    CHECK(gapped.notes[1].phoneme == "rest");
    CHECK(gapped.notes[1].midi == 0);
    CHECK(gapped.notes[1].start_s == doctest::Approx(0.2));
    CHECK(gapped.notes[1].end_s == doctest::Approx(0.3));

    CHECK_THROWS_WITH_AS(
        load_score(R"({"notes": [
            {"phoneme": "a", "midi": 60, "start_s": 0.0, "end_s": 0.3},
            {"phoneme": "i", "midi": 62, "start_s": 0.2, "end_s": 0.5}
        ]})",
                   kInv),
        doctest::Contains("overlapping"), error);
    CHECK_THROWS_AS(load_score(
        R"({"notes": [{"phoneme": "a", "midi": 60, "start_s": 0.5, "end_s": 0.5}]})", kInv), error);
    CHECK_THROWS_AS(load_score(
        R"({"notes": [{"phoneme": "a", "midi": 200, "start_s": 0.0, "end_s": 0.5}]})", kInv), error);
    CHECK_THROWS_AS(load_score(
        R"({"notes": [{"phoneme": "zz", "midi": 60, "start_s": 0.0, "end_s": 0.5}]})", kInv), error);
    CHECK_THROWS_AS(load_score(
        R"({"notes": [{"phoneme": "a", "midi": 0, "start_s": 0.0, "end_s": 0.5}]})", kInv), error);
}

TEST_CASE("expand_frames: repeat rule with round-half-up") {
    token_vocab v = build_vocab(kInv);
    music_score s = load_score(
        R"({"notes": [{"phoneme": "a", "midi": 69, "start_s": 0.0, "end_s": 0.1}]})", kInv);
    auto frames = expand_frames(s, v);
    REQUIRE(frames.size() == 5); // 0.10 * 50
    for (const auto &t : frames) {
        CHECK(t.phn_token == v.phoneme_id("a"));
        CHECK(t.pitch_token == v.pitch_id(69));
    }

    music_score tiny = load_score(
        R"({"notes": [{"phoneme": "a", "midi": 69, "start_s": 0.0, "end_s": 0.03}]})", kInv);
    CHECK(expand_frames(tiny, v).size() == 2); // round(1.5) = 2 half-up
}

TEST_CASE("frame-count identity over random generated scores") {
    token_vocab v = build_vocab(default_phoneme_inventory());
    rng r(2718);
    for (int trial = 0; trial < 200; trial++) {
        music_score s = gen_score(r, 1 + int(r.uniform_int(12)), default_phoneme_inventory(),
                                  int(r.uniform_int(12)));
        // through the file round trip so rests are materialized
        auto dir = std::filesystem::temp_directory_path();
        std::string path = (dir / "score_prop.json").string();
        score_to_file(path, s);
        music_score loaded = score_from_file(path, default_phoneme_inventory());
        std::remove(path.c_str());

        auto frames = expand_frames(loaded, v);
        int64_t want = 0;
        for (const auto &n : loaded.notes) want += note_repeat_count(n, 50);
        CHECK(int64_t(frames.size()) == want);

        // pitch alignment: every frame matches the note active at its time
        int64_t cursor = 0;
        for (const auto &n : loaded.notes) {
            int64_t reps = note_repeat_count(n, 50);
            for (int64_t k = 0; k < reps; k++) {
                CHECK(frames[size_t(cursor + k)].pitch_token == v.pitch_id(n.midi));
                // frame index stays inside the note's rounded time range
                CHECK(cursor + k >= int64_t(std::floor(n.start_s * 50.0 + 0.5)) - 0);
                CHECK(cursor + k < int64_t(std::floor(n.end_s * 50.0 + 0.5)));
            }
            cursor += reps;
        }
    }
}

TEST_CASE("round trip: run-length decode recovers durations within one frame") {
    token_vocab v = build_vocab(default_phoneme_inventory());
    rng r(31415);
    const std::vector<std::string> vowels = {"a", "e", "i", "o", "u"};
    for (int trial = 0; trial < 50; trial++) {
        // adjacent notes are forced distinct so runs map 1:1 onto notes;
        // durations are deliberately off the frame grid
        music_score s;
        double t = 0.0;
        for (int i = 0; i < 8; i++) {
            note n;
            n.phoneme = vowels[size_t(i % vowels.size())];
            n.midi = 55 + int(r.uniform_int(12));
            n.start_s = t;
            n.end_s = t + 0.05 + 0.4 * r.uniform();
            if (note_repeat_count(n, 50) == 0) n.end_s = n.start_s + 0.05;
            t = n.end_s;
            s.notes.push_back(n);
        }
        for (size_t i = 1; i < s.notes.size(); i++)
            if (s.notes[i].phoneme == s.notes[i - 1].phoneme &&
                s.notes[i].midi == s.notes[i - 1].midi)
                s.notes[i].midi = s.notes[i].midi == 55 ? 56 : s.notes[i].midi - 1;

        auto frames = expand_frames(s, v);
        std::vector<int64_t> runs;
        for (size_t i = 0; i < frames.size(); i++) {
            if (i == 0 || frames[i].phn_token != frames[i - 1].phn_token ||
                frames[i].pitch_token != frames[i - 1].pitch_token)
                runs.push_back(1);
            else
                runs.back()++;
        }
        REQUIRE(runs.size() == s.notes.size());
        for (size_t i = 0; i < runs.size(); i++)
            CHECK(std::fabs(double(runs[i]) / 50.0 - s.notes[i].duration()) <= 1.0 / 50.0 + 1e-9);
    }
}

TEST_CASE("template layout: markers, boundaries, loss region") {
    token_vocab v = build_vocab(kInv);
    const int64_t K = 16, NQ = 9;

    // degenerate: no condition, no prompt, no target -> 3 marker rows
    task_sequence deg = assemble_template({}, stream_matrix(), nullptr, v, K, NQ);
    CHECK(deg.rows == 3);
    CHECK(deg.at(0, 0) == v.task_svs());
    CHECK(deg.at(1, 0) == v.cond_sep());
    CHECK(deg.at(2, 0) == v.tgt_sep());
    CHECK(deg.target_frames == 0);

    // 5-frame condition, 2-frame prompt, 7-frame target
    std::vector<frame_tuple> cond(5);
    for (auto &t : cond) {
        t.phn_token = v.phoneme_id("a");
        t.pitch_token = v.pitch_id(60);
    }
    stream_matrix prompt(2, NQ), target(7, NQ);
    for (auto &x : prompt.tokens) x = 3;
    for (auto &x : target.tokens) x = 5;
    task_sequence seq =
        assemble_template(cond, prompt, &target, v, K, NQ, kPromptMaxFrames, false);
    CHECK(seq.rows == 17);
    CHECK(seq.cond_start == 1);
    CHECK(seq.prompt_start == 7);
    CHECK(seq.target_start == 10);
    CHECK(seq.target_frames == 7); // the loss region covers the target rows
    CHECK(seq.at(0, 0) == v.task_svs());
    CHECK(seq.at(6, 0) == v.cond_sep());
    CHECK(seq.at(9, 0) == v.tgt_sep());
    CHECK(seq.at(1, 0) == v.phoneme_id("a"));
    CHECK(seq.at(1, 1) == v.pitch_id(60));
    CHECK(seq.at(1, 2) == v.pad());
    CHECK(seq.at(7, 0) == v.size() + 3);
    CHECK(seq.at(10, 4) == v.size() + 5);

    // strict alignment enforces the one-frame contract
    CHECK_THROWS_AS(assemble_template(cond, prompt, &target, v, K, NQ), error);
    stream_matrix target6(6, NQ);
    task_sequence trimmed = assemble_template(cond, prompt, &target6, v, K, NQ);
    CHECK(trimmed.target_frames == 5); // trimmed to the condition length

    stream_matrix long_prompt(kPromptMaxFrames + 1, NQ);
    CHECK_THROWS_AS(assemble_template(cond, long_prompt, &target, v, K, NQ), error);
}

TEST_CASE("score file round trip preserves notes") {
    rng r(5);
    music_score s = gen_score(r, 8, default_phoneme_inventory(), 7);
    s.singer_id = 3;
    auto path = (std::filesystem::temp_directory_path() / "score_rt.json").string();
    score_to_file(path, s);
    music_score back = score_from_file(path, default_phoneme_inventory());
    CHECK(back.singer_id == 3);
    // rests may be materialized on load; compare the non-rest sequence
    std::vector<note> orig, loaded;
    for (const auto &n : s.notes)
        if (n.phoneme != "rest") orig.push_back(n);
    for (const auto &n : back.notes)
        if (n.phoneme != "rest") loaded.push_back(n);
    REQUIRE(orig.size() == loaded.size());
    for (size_t i = 0; i < orig.size(); i++) {
        CHECK(orig[i].phoneme == loaded[i].phoneme);
        CHECK(orig[i].midi == loaded[i].midi);
        CHECK(orig[i].start_s == doctest::Approx(loaded[i].start_s).epsilon(1e-9));
        CHECK(orig[i].end_s == doctest::Approx(loaded[i].end_s).epsilon(1e-9));
    }
    std::remove(path.c_str());
}

TEST_CASE("vocab TSV export lists token then id") {
    token_vocab v = build_vocab({"a"});
    auto path = (std::filesystem::temp_directory_path() / "vocab.tsv").string();
    vocab_save_tsv(path, v);
    FILE *f = fopen(path.c_str(), "rb");
    REQUIRE(f);
    char tok[64];
    long long id;
    REQUIRE(fscanf(f, "%63s\t%lld", tok, &id) == 2);
    CHECK(std::string(tok) == "<pad>");
    CHECK(id == 0);
    fclose(f);
    std::remove(path.c_str());
}
