#pragma once

#include <complex>
#include <cstdint>
#include <string>
#include <vector>

#include "common.hpp"

namespace svs {

//
// Signal layer. Everything runs on one frame grid: sample_rate / hop =
// 50 frames per second, shared by tokens, mel frames and F0 tracks.
//

struct waveform {
    std::vector<double> samples; // [-1, 1]
    int sample_rate = 16000;

    double duration() const { return double(samples.size()) / double(sample_rate); }
};

struct stft_config {
    int sample_rate = 16000;
    int hop = 320;
    int window = 1024;
    int fft_size = 1024;
    int mel_bins = 80;
    double fmin = 0.0;
    double fmax = 8000.0;

    int frames_per_second() const { return sample_rate / hop; }
    int bins() const { return fft_size / 2 + 1; }
    int64_t frame_count(int64_t n_samples) const { return (n_samples + hop - 1) / hop; }
};

struct complex_spec {
    int64_t frames = 0;
    int64_t bins = 0;
    std::vector<double> re, im; // frames×bins row-major
};

struct mel_spec {
    int64_t frames = 0;
    int64_t bins = 0;
    double frame_rate = 50.0;
    std::vector<double> v; // natural-log mel energies, frames×bins

    double &at(int64_t f, int64_t b) { return v[size_t(f * bins + b)]; }
    double at(int64_t f, int64_t b) const { return v[size_t(f * bins + b)]; }
};

struct f0_track {
    std::vector<double> hz; // per frame, 0 = unvoiced
    double frame_rate = 50.0;
};

// in-place radix-2 complex FFT; n must be a power of two
void fft(std::vector<double> &re, std::vector<double> &im, bool inverse);

// centered frames with reflect padding, frame f at sample f*hop
complex_spec stft(const waveform &w, const stft_config &cfg);
// overlap-add inverse, normalized by the window-square envelope
std::vector<double> istft(const complex_spec &spec, const stft_config &cfg, int64_t out_len);

// triangular mel filterbank, slaney-style area normalization, mel_bins×bins
matrix mel_filterbank(const stft_config &cfg);

// power spectrum through the filterbank, then ln(max(x, 1e-10)).
// Output values are snapped to a 2^-32 grid so residual-quantizer
// arithmetic downstream telescopes exactly in IEEE doubles.
mel_spec mel_spectrogram(const waveform &w, const stft_config &cfg);

// mel -> linear magnitude via clipped pseudo-inverse of the filterbank,
// then `iters` phase-retrieval iterations. Peak-normalized to 0.95 unless
// the output is essentially silent. Per-iteration spectral residuals are
// appended to *residuals when given.
waveform griffin_lim_vocode(const mel_spec &mel, const stft_config &cfg, int iters,
                            std::vector<double> *residuals = nullptr);

// gradient polish of a waveform toward a target mel (used as the last
// vocoder stage; exposed for its own convergence checks)
void refine_to_mel(waveform &w, const mel_spec &mel, const stft_config &cfg, int steps,
                   double lr);

// difference function + cumulative mean normalization + parabolic
// interpolation; frames failing the threshold are unvoiced (0)
f0_track yin_f0(const waveform &w, const stft_config &cfg, double f_min = 60.0,
                double f_max = 1200.0, double threshold = 0.15);

// orthonormal DCT-II of the log-mel rows, coefficients 0..order-1
matrix mel_cepstrum(const mel_spec &mel, int order = 13);

// PCM 16-bit mono RIFF
void wav_write(const std::string &path, const waveform &w);
waveform wav_read(const std::string &path);

double midi_to_hz(double midi);

} // namespace svs
