#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "corpus.hpp"
#include "dsp.hpp"
#include "metrics.hpp"

using namespace svs;

static const double kTau = 6.283185307179586476925286766559;

static waveform make_sine(double hz, double seconds, double amp = 0.5, int sr = 16000) {
    waveform w;
    w.sample_rate = sr;
    w.samples.resize(size_t(seconds * sr));
    for (size_t i = 0; i < w.samples.size(); i++)
        w.samples[i] = amp * std::sin(kTau * hz * double(i) / sr);
    return w;
}

static waveform make_noise(double seconds, uint64_t seed, double amp = 0.3) {
    rng r(seed);
    waveform w;
    w.samples.resize(size_t(seconds * 16000));
    for (auto &v : w.samples) v = amp * r.normal();
    return w;
}

TEST_CASE("stft: silence gives zero magnitudes, short input errors") {
    stft_config cfg;
    waveform w;
    w.samples.assign(16000, 0.0);
    complex_spec s = stft(w, cfg);
    CHECK(s.frames == 50);
    CHECK(s.bins == 513);
    for (size_t i = 0; i < s.re.size(); i++) {
        CHECK(s.re[i] == 0.0);
        CHECK(s.im[i] == 0.0);
    }
    waveform tiny;
    tiny.samples.assign(512, 0.0);
    CHECK_THROWS_AS(stft(tiny, cfg), error);
}

TEST_CASE("stft: 1 kHz sine peaks at bin 64") {
    stft_config cfg;
    waveform w = make_sine(1000.0, 1.0);
    complex_spec s = stft(w, cfg);
    // interior frame, away from edge padding
    int64_t f = 25;
    int64_t peak = 0;
    double best = -1.0;
    for (int64_t b = 0; b < s.bins; b++) {
        double m = std::hypot(s.re[size_t(f * s.bins + b)], s.im[size_t(f * s.bins + b)]);
        if (m > best) { best = m; peak = b; }
    }
    CHECK(peak == 64); // 1000 Hz / (16000/1024)
}

TEST_CASE("stft: Parseval per frame against the windowed time-domain energy") {
    stft_config cfg;
    waveform w = make_noise(0.5, 42);
    complex_spec s = stft(w, cfg);

    // reproduce the centered frame extraction independently
    auto window_energy = [&](int64_t f) {
        double acc = 0.0;
        for (int i = 0; i < cfg.window; i++) {
            int64_t idx = f * cfg.hop - cfg.window / 2 + i;
            double x;
            int64_t n = int64_t(w.samples.size());
            if (idx < 0) x = w.samples[size_t(-idx)];
            else if (idx >= n) x = w.samples[size_t(2 * n - 2 - idx)];
            else x = w.samples[size_t(idx)];
            double win = 0.5 - 0.5 * std::cos(kTau * 0.5 * 2.0 * double(i) / cfg.window);
            acc += (x * win) * (x * win);
        }
        return acc;
    };

    for (int64_t f = 2; f < s.frames - 2; f += 7) {
        double spec_energy = 0.0;
        for (int64_t b = 0; b < s.bins; b++) {
            double p = s.re[size_t(f * s.bins + b)] * s.re[size_t(f * s.bins + b)] +
                       s.im[size_t(f * s.bins + b)] * s.im[size_t(f * s.bins + b)];
            spec_energy += (b == 0 || b == s.bins - 1) ? p : 2.0 * p;
        }
        spec_energy /= double(cfg.fft_size);
        double td = window_energy(f);
        CHECK(std::fabs(spec_energy - td) / std::max(td, 1e-12) < 1e-6);
    }
}

TEST_CASE("mel: silence hits the log floor everywhere") {
    stft_config cfg;
    waveform w;
    w.samples.assign(16000, 0.0);
    mel_spec mel = mel_spectrogram(w, cfg);
    CHECK(mel.frames == 50);
    CHECK(mel.bins == 80);
    const double floor = std::log(1e-10);
    for (double v : mel.v) CHECK(v == doctest::Approx(floor).epsilon(1e-9));
}

TEST_CASE("mel filterbank: positive row sums, full band coverage") {
    stft_config cfg;
    matrix fb = mel_filterbank(cfg);
    REQUIRE(fb.rows == 80);
    for (int64_t m = 0; m < fb.rows; m++) {
        double sum = 0.0;
        for (int64_t b = 0; b < fb.cols; b++) sum += fb.at(m, b);
        CHECK(sum > 0.0);
    }
    // every bin strictly inside (fmin, fmax) is touched by some filter
    // (the fmin edge itself sits at a triangle endpoint with zero weight)
    const double df = double(cfg.sample_rate) / cfg.fft_size;
    for (int64_t b = 0; b < fb.cols; b++) {
        double f = b * df;
        if (f <= cfg.fmin || f >= cfg.fmax) continue;
        double w = 0.0;
        for (int64_t m = 0; m < fb.rows; m++) w = std::max(w, fb.at(m, b));
        CHECK(w > 0.0);
    }
}

TEST_CASE("mel: white noise produces roughly flat band energies") {
    stft_config cfg;
    waveform w = make_noise(10.0, 7);
    mel_spec mel = mel_spectrogram(w, cfg);
    std::vector<double> band(80, 0.0);
    for (int64_t f = 0; f < mel.frames; f++)
        for (int64_t b = 0; b < 80; b++) band[size_t(b)] += std::exp(mel.at(f, b));
    double mean = 0.0;
    for (double v : band) mean += v;
    mean /= 80.0;
    double var = 0.0;
    for (double v : band) var += (v - mean) * (v - mean);
    double cov = std::sqrt(var / 80.0) / mean;
    CHECK(cov < 0.5);
}

TEST_CASE("griffin-lim: pitch survives the round trip") {
    stft_config cfg;
    waveform w = make_sine(440.0, 1.0);
    mel_spec mel = mel_spectrogram(w, cfg);
    std::vector<double> residuals;
    waveform out = griffin_lim_vocode(mel, cfg, 32, &residuals);
    CHECK(out.samples.size() == size_t(mel.frames * cfg.hop));

    f0_track f0 = yin_f0(out, cfg);
    double mean = 0.0;
    int64_t n = 0;
    for (size_t i = 5; i + 5 < f0.hz.size(); i++)
        if (f0.hz[i] > 0) { mean += f0.hz[i]; n++; }
    REQUIRE(n > 0);
    mean /= double(n);
    CHECK(std::fabs(mean - 440.0) < 5.0);

    // spectral convergence is non-increasing across iterations
    for (size_t i = 1; i < residuals.size(); i++)
        CHECK(residuals[i] <= residuals[i - 1] + 1e-9);
}

TEST_CASE("griffin-lim: the silence floor stays near-silent") {
    stft_config cfg;
    mel_spec mel;
    mel.frames = 40;
    mel.bins = 80;
    mel.v.assign(size_t(40 * 80), std::log(1e-10));
    waveform out = griffin_lim_vocode(mel, cfg, 8);
    double rms = 0.0;
    for (double v : out.samples) rms += v * v;
    rms = std::sqrt(rms / double(out.samples.size()));
    CHECK(rms < 1e-3);
    CHECK_THROWS_AS(griffin_lim_vocode(mel, cfg, 0), error);
}

TEST_CASE("griffin-lim round trip keeps MCD under the vocoder floor") {
    // corpus-mean over a few rendered utterances, the setting the floor
    // is stated for
    stft_config cfg;
    double total = 0.0;
    int count = 0;
    for (uint64_t seed : {5u, 23u, 47u}) {
        rng r(seed);
        singer_profile prof = make_singer_profile(int(seed % 2), 77 + seed);
        music_score score = gen_score(r, 10, default_phoneme_inventory(), int(seed % 12));
        waveform w = render_singing(score, prof, cfg, 99 + seed);
        mel_spec mel = mel_spectrogram(w, cfg);
        waveform out = griffin_lim_vocode(mel, cfg, 256);
        mel_spec mel2 = mel_spectrogram(out, cfg);
        total += mcd(mel, mel2);
        count++;
    }
    CHECK(total / count < 1.5);
}

TEST_CASE("yin: clean tones, noise and silence") {
    stft_config cfg;
    waveform sine = make_sine(440.0, 1.0);
    f0_track f0 = yin_f0(sine, cfg);
    int64_t voiced = 0;
    for (size_t i = 2; i + 2 < f0.hz.size(); i++) {
        if (f0.hz[i] > 0) {
            voiced++;
            CHECK(std::fabs(f0.hz[i] - 440.0) < 1.0);
        }
    }
    CHECK(voiced > 40);

    waveform noise = make_noise(1.0, 3);
    f0_track fn = yin_f0(noise, cfg);
    int64_t unvoiced = 0;
    for (double v : fn.hz)
        if (v == 0.0) unvoiced++;
    CHECK(double(unvoiced) / double(fn.hz.size()) >= 0.9);

    waveform silence;
    silence.samples.assign(16000, 0.0);
    f0_track fs = yin_f0(silence, cfg);
    for (double v : fs.hz) CHECK(v == 0.0);

    CHECK_THROWS_AS(yin_f0(sine, cfg, 500.0, 100.0), error);
}

TEST_CASE("yin: vibrato tones stay within 300 cents of truth") {
    stft_config cfg;
    // +-50 cent vibrato around 330 Hz
    waveform w;
    w.sample_rate = 16000;
    w.samples.resize(24000);
    double phase = 0.0;
    for (size_t i = 0; i < w.samples.size(); i++) {
        double t = double(i) / 16000.0;
        double hz = 330.0 * std::pow(2.0, 50.0 / 1200.0 * std::sin(kTau * 5.5 * t));
        phase += kTau * hz / 16000.0;
        w.samples[i] = 0.5 * std::sin(phase);
    }
    f0_track f0 = yin_f0(w, cfg);
    for (size_t i = 2; i + 2 < f0.hz.size(); i++) {
        if (f0.hz[i] <= 0) continue;
        double cents = 1200.0 * std::log2(f0.hz[i] / 330.0);
        CHECK(std::fabs(cents) < 300.0);
    }
}

TEST_CASE("mel cepstrum: constant frame, orthonormality, brute-force match") {
    mel_spec mel;
    mel.frames = 1;
    mel.bins = 16;
    mel.v.assign(16, 2.5);
    matrix c = mel_cepstrum(mel, 8);
    CHECK(c.at(0, 0) == doctest::Approx(2.5 * std::sqrt(16.0)).epsilon(1e-12));
    for (int k = 1; k < 8; k++) CHECK(std::fabs(c.at(0, k)) < 1e-12);

    // random frame: full-order transform inverts through its own transpose
    rng r(11);
    mel_spec rm;
    rm.frames = 3;
    rm.bins = 12;
    rm.v.resize(36);
    for (auto &v : rm.v) v = r.normal();
    matrix full = mel_cepstrum(rm, 12);
    const double pi = 3.14159265358979323846;
    for (int64_t f = 0; f < 3; f++)
        for (int64_t j = 0; j < 12; j++) {
            double x = 0.0;
            for (int64_t k = 0; k < 12; k++) {
                double basis = (k == 0 ? std::sqrt(1.0 / 12.0) : std::sqrt(2.0 / 12.0)) *
                               std::cos(pi * (double(j) + 0.5) * double(k) / 12.0);
                x += basis * full.at(f, k);
            }
            CHECK(x == doctest::Approx(rm.at(f, j)).epsilon(1e-10));
        }

    // naive O(D^2) oracle for the truncated transform
    for (int64_t k = 0; k < 5; k++) {
        double acc = 0.0;
        for (int64_t j = 0; j < 12; j++) {
            double basis = (k == 0 ? std::sqrt(1.0 / 12.0) : std::sqrt(2.0 / 12.0)) *
                           std::cos(pi * (double(j) + 0.5) * double(k) / 12.0);
            acc += basis * rm.at(0, j);
        }
        CHECK(full.at(0, k) == doctest::Approx(acc).epsilon(1e-12));
    }

    CHECK_THROWS_AS(mel_cepstrum(rm, 13), error);
}

TEST_CASE("wav io: PCM16 round trip within one quantization step") {
    waveform w = make_sine(220.0, 0.25, 0.8);
    auto path = (std::filesystem::temp_directory_path() / "dsp_roundtrip.wav").string();
    wav_write(path, w);
    waveform back = wav_read(path);
    REQUIRE(back.samples.size() == w.samples.size());
    CHECK(back.sample_rate == 16000);
    for (size_t i = 0; i < w.samples.size(); i++)
        CHECK(std::fabs(back.samples[i] - w.samples[i]) <= 1.0 / 32768.0);
    std::remove(path.c_str());
}

TEST_CASE("frame counts stay on the shared 50 Hz grid") {
    stft_config cfg;
    for (int64_t n : {16000, 16001, 16319, 16321, 48000}) {
        waveform w;
        w.samples.assign(size_t(n), 0.01);
        mel_spec mel = mel_spectrogram(w, cfg);
        f0_track f0 = yin_f0(w, cfg);
        CHECK(mel.frames == cfg.frame_count(n));
        CHECK(int64_t(f0.hz.size()) == mel.frames);
    }
}
