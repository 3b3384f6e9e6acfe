#include "dsp.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>

namespace svs {

static const double kPi = 3.14159265358979323846;
static const double kLogFloor = 1e-10;
static const double kMelGrid = 4294967296.0; // 2^32

double midi_to_hz(double midi) { return 440.0 * std::pow(2.0, (midi - 69.0) / 12.0); }

//
// FFT
//

void fft(std::vector<double> &re, std::vector<double> &im, bool inverse) {
    const size_t n = re.size();
    if (n == 0 || (n & (n - 1)) != 0 || im.size() != n)
        fail(errc::usage, "fft: size must be a power of two");
    // bit reversal
    for (size_t i = 1, j = 0; i < n; i++) {
        size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) {
            std::swap(re[i], re[j]);
            std::swap(im[i], im[j]);
        }
    }
    for (size_t len = 2; len <= n; len <<= 1) {
        double ang = 2.0 * kPi / double(len) * (inverse ? 1.0 : -1.0);
        double wr = std::cos(ang), wi = std::sin(ang);
        for (size_t i = 0; i < n; i += len) {
            double cr = 1.0, ci = 0.0;
            for (size_t k = 0; k < len / 2; k++) {
                size_t a = i + k, b = i + k + len / 2;
                double xr = re[b] * cr - im[b] * ci;
                double xi = re[b] * ci + im[b] * cr;
                re[b] = re[a] - xr;
                im[b] = im[a] - xi;
                re[a] += xr;
                im[a] += xi;
                double ncr = cr * wr - ci * wi;
                ci = cr * wi + ci * wr;
                cr = ncr;
            }
        }
    }
    if (inverse) {
        for (size_t i = 0; i < n; i++) {
            re[i] /= double(n);
            im[i] /= double(n);
        }
    }
}

static std::vector<double> hann_window(int n) {
    std::vector<double> w(size_t(n), 0.0);
    for (int i = 0; i < n; i++)
        w[i] = 0.5 - 0.5 * std::cos(2.0 * kPi * double(i) / double(n));
    return w;
}

// mirror about the first/last sample without repeating the edge
static std::vector<double> reflect_pad(const std::vector<double> &x, int64_t pad) {
    const int64_t n = int64_t(x.size());
    std::vector<double> out(size_t(n + 2 * pad));
    for (int64_t i = 0; i < n; i++) out[size_t(pad + i)] = x[size_t(i)];
    for (int64_t k = 1; k <= pad; k++) {
        out[size_t(pad - k)] = x[size_t(std::min(k, n - 1))];
        out[size_t(pad + n - 1 + k)] = x[size_t(std::max<int64_t>(n - 1 - k, 0))];
    }
    return out;
}

complex_spec stft(const waveform &w, const stft_config &cfg) {
    const int64_t n = int64_t(w.samples.size());
    if (n < cfg.window)
        fail(errc::usage, strfmt("stft: waveform of %lld samples shorter than one window (%d)",
                                 (long long)n, cfg.window));
    const int64_t pad = cfg.window / 2;
    const std::vector<double> padded = reflect_pad(w.samples, pad);
    const std::vector<double> win = hann_window(cfg.window);

    complex_spec spec;
    spec.frames = cfg.frame_count(n);
    spec.bins = cfg.bins();
    spec.re.assign(size_t(spec.frames * spec.bins), 0.0);
    spec.im.assign(size_t(spec.frames * spec.bins), 0.0);

    std::vector<double> re(size_t(cfg.fft_size)), im(size_t(cfg.fft_size));
    for (int64_t f = 0; f < spec.frames; f++) {
        const double *seg = padded.data() + f * cfg.hop; // centered at f*hop
        for (int i = 0; i < cfg.window; i++) re[size_t(i)] = seg[i] * win[size_t(i)];
        std::fill(re.begin() + cfg.window, re.end(), 0.0);
        std::fill(im.begin(), im.end(), 0.0);
        fft(re, im, false);
        for (int64_t b = 0; b < spec.bins; b++) {
            spec.re[size_t(f * spec.bins + b)] = re[size_t(b)];
            spec.im[size_t(f * spec.bins + b)] = im[size_t(b)];
        }
    }
    return spec;
}

std::vector<double> istft(const complex_spec &spec, const stft_config &cfg, int64_t out_len) {
    const int64_t pad = cfg.window / 2;
    const int64_t total = out_len + 2 * pad;
    std::vector<double> acc(size_t(total), 0.0), wsum(size_t(total), 0.0);
    const std::vector<double> win = hann_window(cfg.window);

    std::vector<double> re(size_t(cfg.fft_size)), im(size_t(cfg.fft_size));
    for (int64_t f = 0; f < spec.frames; f++) {
        // rebuild the full hermitian spectrum from the half kept by stft
        for (int64_t b = 0; b < spec.bins; b++) {
            re[size_t(b)] = spec.re[size_t(f * spec.bins + b)];
            im[size_t(b)] = spec.im[size_t(f * spec.bins + b)];
        }
        for (int64_t b = spec.bins; b < cfg.fft_size; b++) {
            re[size_t(b)] = re[size_t(cfg.fft_size - b)];
            im[size_t(b)] = -im[size_t(cfg.fft_size - b)];
        }
        fft(re, im, true);
        int64_t start = f * cfg.hop; // frame center at pad + f*hop
        for (int i = 0; i < cfg.window; i++) {
            int64_t pos = start + i;
            if (pos < 0 || pos >= total) continue;
            acc[size_t(pos)] += re[size_t(i)] * win[size_t(i)];
            wsum[size_t(pos)] += win[size_t(i)] * win[size_t(i)];
        }
    }
    std::vector<double> out(size_t(out_len), 0.0);
    for (int64_t i = 0; i < out_len; i++) {
        double wgt = wsum[size_t(pad + i)];
        out[size_t(i)] = wgt > 1e-9 ? acc[size_t(pad + i)] / wgt : 0.0;
    }
    return out;
}

//
// mel analysis
//

static double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
static double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

matrix mel_filterbank(const stft_config &cfg) {
    const int nb = cfg.bins();
    matrix fb(cfg.mel_bins, nb);
    const double mel_lo = hz_to_mel(cfg.fmin), mel_hi = hz_to_mel(cfg.fmax);
    std::vector<double> edges(size_t(cfg.mel_bins + 2));
    for (int i = 0; i < cfg.mel_bins + 2; i++)
        edges[size_t(i)] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * double(i) / double(cfg.mel_bins + 1));
    const double df = double(cfg.sample_rate) / double(cfg.fft_size);
    for (int m = 0; m < cfg.mel_bins; m++) {
        const double lo = edges[size_t(m)], mid = edges[size_t(m + 1)], hi = edges[size_t(m + 2)];
        const double norm = 2.0 / (hi - lo);
        for (int b = 0; b < nb; b++) {
            const double f = b * df;
            double w = 0.0;
            if (f > lo && f < mid)
                w = (f - lo) / (mid - lo);
            else if (f >= mid && f < hi)
                w = (hi - f) / (hi - mid);
            fb.at(m, b) = w * norm;
        }
    }
    return fb;
}

static double snap_mel(double x) { return std::round(x * kMelGrid) / kMelGrid; }

mel_spec mel_spectrogram(const waveform &w, const stft_config &cfg) {
    const complex_spec spec = stft(w, cfg);
    const matrix fb = mel_filterbank(cfg);

    mel_spec mel;
    mel.frames = spec.frames;
    mel.bins = cfg.mel_bins;
    mel.frame_rate = double(cfg.frames_per_second());
    mel.v.assign(size_t(mel.frames * mel.bins), 0.0);

    std::vector<double> power(size_t(spec.bins));
    for (int64_t f = 0; f < spec.frames; f++) {
        for (int64_t b = 0; b < spec.bins; b++) {
            double re = spec.re[size_t(f * spec.bins + b)];
            double im = spec.im[size_t(f * spec.bins + b)];
            power[size_t(b)] = re * re + im * im;
        }
        for (int64_t m = 0; m < mel.bins; m++) {
            const double *row = fb.row(m);
            double acc = 0.0;
            for (int64_t b = 0; b < spec.bins; b++) acc += row[b] * power[size_t(b)];
            mel.at(f, m) = snap_mel(std::log(std::max(acc, kLogFloor)));
        }
    }
    return mel;
}

//
// Griffin-Lim
//

// solve A·X = B for SPD A (in-place Cholesky), A is n×n, B/X are n×m
static void solve_spd(matrix &a, matrix &b) {
    const int64_t n = a.rows;
    // ridge keeps near-singular filterbank Gram matrices factorable
    double tr = 0.0;
    for (int64_t i = 0; i < n; i++) tr += a.at(i, i);
    const double ridge = 1e-10 * (tr / double(n));
    for (int64_t i = 0; i < n; i++) a.at(i, i) += ridge;

    for (int64_t j = 0; j < n; j++) {
        double d = a.at(j, j);
        for (int64_t k = 0; k < j; k++) d -= a.at(j, k) * a.at(j, k);
        if (d <= 0.0) fail(errc::runtime, "solve_spd: matrix not positive definite");
        d = std::sqrt(d);
        a.at(j, j) = d;
        for (int64_t i = j + 1; i < n; i++) {
            double s = a.at(i, j);
            for (int64_t k = 0; k < j; k++) s -= a.at(i, k) * a.at(j, k);
            a.at(i, j) = s / d;
        }
    }
    // forward then back substitution per column of B
    for (int64_t c = 0; c < b.cols; c++) {
        for (int64_t i = 0; i < n; i++) {
            double s = b.at(i, c);
            for (int64_t k = 0; k < i; k++) s -= a.at(i, k) * b.at(k, c);
            b.at(i, c) = s / a.at(i, i);
        }
        for (int64_t i = n - 1; i >= 0; i--) {
            double s = b.at(i, c);
            for (int64_t k = i + 1; k < n; k++) s -= a.at(k, i) * b.at(k, c);
            b.at(i, c) = s / a.at(i, i);
        }
    }
}

// clipped pseudo-inverse: fb^T (fb fb^T)^-1, negatives zeroed after apply
static matrix mel_pseudo_inverse(const matrix &fb) {
    const int64_t m = fb.rows, n = fb.cols;
    matrix gram(m, m);
    for (int64_t i = 0; i < m; i++)
        for (int64_t j = 0; j < m; j++) {
            double s = 0.0;
            for (int64_t b = 0; b < n; b++) s += fb.at(i, b) * fb.at(j, b);
            gram.at(i, j) = s;
        }
    matrix rhs(m, n); // (fb fb^T)^-1 fb
    for (int64_t i = 0; i < m; i++)
        for (int64_t b = 0; b < n; b++) rhs.at(i, b) = fb.at(i, b);
    solve_spd(gram, rhs);
    matrix pinv(n, m);
    for (int64_t i = 0; i < m; i++)
        for (int64_t b = 0; b < n; b++) pinv.at(b, i) = rhs.at(i, b);
    return pinv;
}

namespace {

// phase retrieval working state: the magnitude constraint lives in the
// mel domain, so each iteration rescales the estimate toward per-frame
// band consistency instead of snapping to fixed linear magnitudes
struct mel_gl_state {
    const mel_spec &mel;
    const stft_config &cfg;
    const matrix &fb;
    std::vector<double> colsum;  // filter weight per bin
    std::vector<double> mel_pow; // exp(mel), frames×bands
    double target_norm = 0.0;

    mel_gl_state(const mel_spec &m, const stft_config &c, const matrix &f)
        : mel(m), cfg(c), fb(f) {
        colsum.assign(size_t(fb.cols), 0.0);
        for (int64_t mm = 0; mm < fb.rows; mm++)
            for (int64_t b = 0; b < fb.cols; b++) colsum[size_t(b)] += fb.at(mm, b);
        mel_pow.resize(size_t(mel.frames * mel.bins));
        for (size_t i = 0; i < mel_pow.size(); i++) mel_pow[i] = std::exp(mel.v[i]);
        for (double v : mel_pow) target_norm += v * v;
        target_norm = std::sqrt(std::max(target_norm, 1e-300));
    }

    // rms log-band error of a complex estimate, the quantity the
    // cepstral metrics downstream actually respond to
    double residual(const complex_spec &est) const {
        const int64_t nb = fb.cols, nm = fb.rows;
        double acc = 0.0;
        std::vector<double> pw(size_t(nb), 0.0);
        for (int64_t f = 0; f < est.frames; f++) {
            for (int64_t b = 0; b < nb; b++) {
                double re = est.re[size_t(f * nb + b)], im = est.im[size_t(f * nb + b)];
                pw[size_t(b)] = re * re + im * im;
            }
            for (int64_t m = 0; m < nm; m++) {
                const double *row = fb.row(m);
                double band = 0.0;
                for (int64_t b = 0; b < nb; b++) band += row[b] * pw[size_t(b)];
                double d = std::log(std::max(band, 1e-10)) - mel.v[size_t(f * nm + m)];
                acc += d * d;
            }
        }
        return std::sqrt(acc / double(est.frames * nm));
    }

    // rescale each bin by the filter-weighted band power ratio
    void project(const complex_spec &est, complex_spec &out) const {
        const int64_t nb = fb.cols, nm = fb.rows;
        out.frames = est.frames;
        out.bins = est.bins;
        out.re.resize(est.re.size());
        out.im.resize(est.im.size());
        std::vector<double> pw(size_t(nb), 0.0), ratio(size_t(nm), 0.0);
        for (int64_t f = 0; f < est.frames; f++) {
            for (int64_t b = 0; b < nb; b++) {
                double re = est.re[size_t(f * nb + b)], im = est.im[size_t(f * nb + b)];
                pw[size_t(b)] = re * re + im * im;
            }
            for (int64_t m = 0; m < nm; m++) {
                const double *row = fb.row(m);
                double band = 0.0;
                for (int64_t b = 0; b < nb; b++) band += row[b] * pw[size_t(b)];
                ratio[size_t(m)] =
                    std::min(mel_pow[size_t(f * nm + m)] / std::max(band, 1e-16), 1e6);
            }
            for (int64_t b = 0; b < nb; b++) {
                double acc = 0.0;
                for (int64_t m = 0; m < nm; m++) acc += fb.at(m, b) * ratio[size_t(m)];
                double g = colsum[size_t(b)] > 0.0
                               ? std::sqrt(std::max(acc / colsum[size_t(b)], 0.0))
                               : 1.0;
                out.re[size_t(f * nb + b)] = est.re[size_t(f * nb + b)] * g;
                out.im[size_t(f * nb + b)] = est.im[size_t(f * nb + b)] * g;
            }
        }
    }
};

} // namespace

// analysis-by-synthesis polish: gradient steps on the samples against the
// rms log-band error, through the band-power / |FFT|^2 / window chain
void refine_to_mel(waveform &w, const mel_spec &mel, const stft_config &cfg, int steps,
                   double lr) {
    const matrix fb = mel_filterbank(cfg);
    const int64_t nb = cfg.bins(), nm = mel.bins, F = mel.frames;
    const int64_t n = int64_t(w.samples.size());
    const int64_t pad = cfg.window / 2;
    const int64_t N = cfg.fft_size;
    const std::vector<double> win = hann_window(cfg.window);
    const double floor_pow = 1e-10;

    std::vector<double> m_acc(w.samples.size(), 0.0), v_acc(w.samples.size(), 0.0);
    std::vector<double> grad_pad, re(size_t(N), 0.0), im(size_t(N), 0.0);
    std::vector<double> gre(size_t(N), 0.0), gim(size_t(N), 0.0);
    std::vector<double> pw(size_t(nb), 0.0), wband(size_t(nm), 0.0), wbin(size_t(nb), 0.0);

    for (int step = 0; step < steps; step++) {
        std::vector<double> padded = reflect_pad(w.samples, pad);
        grad_pad.assign(padded.size(), 0.0);
        for (int64_t f = 0; f < F; f++) {
            const double *seg = padded.data() + f * cfg.hop;
            for (int i = 0; i < cfg.window; i++) re[size_t(i)] = seg[i] * win[size_t(i)];
            std::fill(re.begin() + cfg.window, re.end(), 0.0);
            std::fill(im.begin(), im.end(), 0.0);
            fft(re, im, false);
            for (int64_t b = 0; b < nb; b++)
                pw[size_t(b)] = re[size_t(b)] * re[size_t(b)] + im[size_t(b)] * im[size_t(b)];
            for (int64_t m = 0; m < nm; m++) {
                const double *row = fb.row(m);
                double band = 0.0;
                for (int64_t b = 0; b < nb; b++) band += row[b] * pw[size_t(b)];
                // soft floor keeps a usable gradient near silence; the
                // extra denominator padding stops near-silent bands from
                // swamping the update
                const double soft = band + floor_pow;
                wband[size_t(m)] = 2.0 * (std::log(soft) - mel.at(f, m)) / (band + 1e-6);
            }
            std::fill(wbin.begin(), wbin.end(), 0.0);
            for (int64_t m = 0; m < nm; m++) {
                const double *row = fb.row(m);
                const double wm = wband[size_t(m)];
                for (int64_t b = 0; b < nb; b++) wbin[size_t(b)] += row[b] * wm;
            }
            // adjoint of |FFT|^2 with the half-spectrum convention
            for (int64_t b = 0; b < N; b++) {
                double wgt = b < nb ? wbin[size_t(b)] : 0.0;
                gre[size_t(b)] = wgt * re[size_t(b)];
                gim[size_t(b)] = wgt * im[size_t(b)];
            }
            fft(gre, gim, true);
            for (int i = 0; i < cfg.window; i++)
                grad_pad[size_t(f * cfg.hop + i)] +=
                    2.0 * double(N) * gre[size_t(i)] * win[size_t(i)];
        }
        // adjoint of the reflect padding
        std::vector<double> grad(w.samples.size(), 0.0);
        for (int64_t i = 0; i < n; i++) grad[size_t(i)] = grad_pad[size_t(pad + i)];
        for (int64_t k = 1; k <= pad; k++) {
            grad[size_t(std::min(k, n - 1))] += grad_pad[size_t(pad - k)];
            grad[size_t(std::max<int64_t>(n - 1 - k, 0))] += grad_pad[size_t(pad + n - 1 + k)];
        }
        // normalized by the frame/band count like the loss itself
        const double scale = 1.0 / double(F * nm);
        const double b1 = 0.9, b2 = 0.999, eps = 1e-12;
        const double bc1 = 1.0 - std::pow(b1, double(step + 1));
        const double bc2 = 1.0 - std::pow(b2, double(step + 1));
        const double lr_t = lr * (1.0 - 0.9 * double(step) / double(std::max(steps - 1, 1)));
        for (size_t i = 0; i < w.samples.size(); i++) {
            double g = grad[i] * scale;
            m_acc[i] = b1 * m_acc[i] + (1.0 - b1) * g;
            v_acc[i] = b2 * v_acc[i] + (1.0 - b2) * g * g;
            w.samples[i] -= lr_t * (m_acc[i] / bc1) / (std::sqrt(v_acc[i] / bc2) + eps);
        }
    }
}

// zero out the sample spans of frames whose mel sits on the log floor,
// with short cosine ramps; phase retrieval leaks pre/post-echo into rests
// that the analysis floor makes disproportionately expensive
static void silence_gate(waveform &w, const mel_spec &mel, const stft_config &cfg) {
    const double floor_ln = std::log(1e-10) + 1e-9;
    std::vector<double> gain(w.samples.size(), 1.0);
    bool any = false;
    for (int64_t f = 0; f < mel.frames; f++) {
        double mx = -1e300;
        for (int64_t b = 0; b < mel.bins; b++) mx = std::max(mx, mel.at(f, b));
        if (mx >= floor_ln) continue;
        any = true;
        int64_t lo = std::max<int64_t>(0, f * cfg.hop - cfg.hop / 2);
        int64_t hi = std::min<int64_t>(int64_t(w.samples.size()), f * cfg.hop + cfg.hop / 2);
        for (int64_t i = lo; i < hi; i++) gain[size_t(i)] = 0.0;
    }
    if (!any) return;
    const int ramp = 48; // 3 ms
    std::vector<double> sm = gain;
    for (int64_t i = 0; i < int64_t(gain.size()); i++) {
        if (gain[size_t(i)] != 0.0) continue;
        for (int k = 1; k <= ramp; k++) {
            double g = 0.5 - 0.5 * std::cos(kPi * double(k) / double(ramp));
            if (i >= k) sm[size_t(i - k)] = std::min(sm[size_t(i - k)], g);
            if (i + k < int64_t(sm.size())) sm[size_t(i + k)] = std::min(sm[size_t(i + k)], g);
        }
    }
    for (size_t i = 0; i < w.samples.size(); i++) w.samples[i] *= sm[i];
}

waveform griffin_lim_vocode(const mel_spec &mel, const stft_config &cfg, int iters,
                            std::vector<double> *residuals) {
    if (iters < 1) fail(errc::usage, "griffin_lim_vocode: iters must be >= 1");
    for (double v : mel.v)
        if (!std::isfinite(v)) fail(errc::usage, "griffin_lim_vocode: non-finite mel input");

    const matrix fb = mel_filterbank(cfg);
    const matrix pinv = mel_pseudo_inverse(fb);
    const int64_t nb = cfg.bins();
    const int64_t nm = mel.bins;
    mel_gl_state st(mel, cfg, fb);

    // initial linear magnitudes: clipped pseudo-inverse, refined by
    // multiplicative non-negative least-squares updates (the raw min-norm
    // solution oscillates too hard on harmonic spectra)
    matrix mag(mel.frames, nb);
    {
        std::vector<double> mp(size_t(nm), 0.0), p(size_t(nb), 0.0), num(size_t(nb), 0.0);
        std::vector<double> fbp(size_t(nm), 0.0), den(size_t(nb), 0.0);
        for (int64_t f = 0; f < mel.frames; f++) {
            for (int64_t m = 0; m < nm; m++) mp[size_t(m)] = st.mel_pow[size_t(f * nm + m)];
            double mean_p = 0.0;
            for (int64_t b = 0; b < nb; b++) {
                const double *row = pinv.row(b);
                double acc = 0.0;
                for (int64_t m = 0; m < nm; m++) acc += row[m] * mp[size_t(m)];
                p[size_t(b)] = std::max(acc, 0.0);
                mean_p += p[size_t(b)];
            }
            mean_p /= double(nb);
            for (int64_t b = 0; b < nb; b++) p[size_t(b)] = std::max(p[size_t(b)], 1e-8 * mean_p);
            std::fill(num.begin(), num.end(), 0.0);
            for (int64_t m = 0; m < nm; m++) {
                const double *row = fb.row(m);
                const double w = mp[size_t(m)];
                for (int64_t b = 0; b < nb; b++) num[size_t(b)] += row[b] * w;
            }
            for (int it = 0; it < 60; it++) {
                for (int64_t m = 0; m < nm; m++) {
                    const double *row = fb.row(m);
                    double acc = 0.0;
                    for (int64_t b = 0; b < nb; b++) acc += row[b] * p[size_t(b)];
                    fbp[size_t(m)] = acc;
                }
                std::fill(den.begin(), den.end(), 0.0);
                for (int64_t m = 0; m < nm; m++) {
                    const double *row = fb.row(m);
                    const double w = fbp[size_t(m)];
                    for (int64_t b = 0; b < nb; b++) den[size_t(b)] += row[b] * w;
                }
                for (int64_t b = 0; b < nb; b++)
                    p[size_t(b)] *= num[size_t(b)] / std::max(den[size_t(b)], 1e-300);
            }
            for (int64_t b = 0; b < nb; b++) mag.at(f, b) = std::sqrt(p[size_t(b)]);
        }
    }

    const int64_t out_len = mel.frames * cfg.hop;
    complex_spec S;
    S.frames = mel.frames;
    S.bins = nb;
    S.re.resize(mag.v.size());
    S.im.resize(mag.v.size());
    // per-bin linear phase advance: coherent for quasi-stationary content
    for (int64_t f = 0; f < mel.frames; f++)
        for (int64_t b = 0; b < nb; b++) {
            double ang = 2.0 * kPi * double(cfg.hop) * double(b) / double(cfg.fft_size) * double(f);
            S.re[size_t(f * nb + b)] = mag.at(f, b) * std::cos(ang);
            S.im[size_t(f * nb + b)] = mag.at(f, b) * std::sin(ang);
        }

    // accelerated alternating projections; the momentum path may wander,
    // so the retained state (and the logged convergence) is the best
    // estimate seen so far, and the output is synthesized from it
    const double momentum = 0.99;
    waveform out;
    out.sample_rate = cfg.sample_rate;
    complex_spec est, prev_est, extrap;
    std::vector<double> best_samples;
    bool have_prev = false;
    double best_resid = 1e300;
    for (int it = 0; it < iters; it++) {
        out.samples = istft(S, cfg, out_len);
        est = stft(out, cfg);
        double r = st.residual(est);
        if (!have_prev || r < best_resid) {
            best_resid = r;
            best_samples = out.samples;
        }
        if (residuals) residuals->push_back(best_resid);
        extrap = est;
        if (have_prev)
            for (size_t i = 0; i < extrap.re.size(); i++) {
                extrap.re[i] -= momentum / (1.0 + momentum) * prev_est.re[i];
                extrap.im[i] -= momentum / (1.0 + momentum) * prev_est.im[i];
            }
        st.project(extrap, S);
        prev_est = est;
        have_prev = true;
    }
    out.samples = std::move(best_samples);
    silence_gate(out, mel, cfg);
    refine_to_mel(out, mel, cfg, 240, 2e-3);
    silence_gate(out, mel, cfg);

    double peak = 0.0;
    for (double v : out.samples) peak = std::max(peak, std::fabs(v));
    if (peak > 1e-3) { // do not amplify numerical silence
        const double s = 0.95 / peak;
        for (auto &v : out.samples) v *= s;
    }
    return out;
}

//
// YIN pitch tracking
//

f0_track yin_f0(const waveform &w, const stft_config &cfg, double f_min, double f_max,
                double threshold) {
    if (f_min >= f_max) fail(errc::usage, "yin_f0: f_min must be below f_max");
    const int64_t n = int64_t(w.samples.size());
    if (n < cfg.window)
        fail(errc::usage, strfmt("yin_f0: waveform of %lld samples shorter than one window (%d)",
                                 (long long)n, cfg.window));
    const int64_t pad = cfg.window / 2;
    const std::vector<double> padded = reflect_pad(w.samples, pad);
    const int wsize = cfg.window;
    const int half = wsize / 2;
    const int tau_min = std::max(2, int(std::floor(double(cfg.sample_rate) / f_max)));
    const int tau_max = std::min(half - 2, int(std::ceil(double(cfg.sample_rate) / f_min)));
    if (tau_min >= tau_max) fail(errc::usage, "yin_f0: search band empty at this sample rate");

    f0_track track;
    track.frame_rate = double(cfg.frames_per_second());
    const int64_t frames = cfg.frame_count(n);
    track.hz.assign(size_t(frames), 0.0);

    std::vector<double> d(size_t(half + 1), 0.0), dn(size_t(half + 1), 0.0);
    for (int64_t f = 0; f < frames; f++) {
        const double *center = padded.data() + pad + f * cfg.hop;
        // difference function over a support symmetric about the frame
        // center, so glides do not bias the estimate toward the past
        for (int tau = 1; tau <= half; tau++) {
            const double *x = center - (half + tau) / 2;
            double acc = 0.0;
            for (int j = 0; j < half; j++) {
                double diff = x[j] - x[j + tau];
                acc += diff * diff;
            }
            d[size_t(tau)] = acc;
        }
        // cumulative mean normalization
        dn[0] = 1.0;
        double running = 0.0;
        for (int tau = 1; tau <= half; tau++) {
            running += d[size_t(tau)];
            dn[size_t(tau)] = running > 0.0 ? d[size_t(tau)] * double(tau) / running : 1.0;
        }
        // first dip under threshold, descended to its local minimum;
        // vibrato at short lags can keep every dip above the threshold,
        // so a clear global minimum still counts as voiced
        int tau = -1;
        for (int t = tau_min; t <= tau_max; t++) {
            if (dn[size_t(t)] < threshold) {
                tau = t;
                while (tau + 1 <= tau_max && dn[size_t(tau + 1)] < dn[size_t(tau)]) tau++;
                break;
            }
        }
        if (tau < 0) {
            int tg = tau_min;
            for (int t = tau_min + 1; t <= tau_max; t++)
                if (dn[size_t(t)] < dn[size_t(tg)]) tg = t;
            if (dn[size_t(tg)] < 2.0 * threshold) tau = tg;
        }
        if (tau < 0) continue; // unvoiced
        // strong upper harmonics can carve a marginal dip at a fraction
        // of the true period (2/3 or 1/2); when the accepted dip is weak
        // and a much deeper one sits near a small multiple of the lag,
        // that multiple is the true period. A deep first dip is trusted:
        // every multiple of a true period dips too.
        for (int hop = 0; hop < 3 && dn[size_t(tau)] > 0.08; hop++) {
            int best = -1;
            for (double mult : {1.5, 2.0}) {
                int lo = int(std::floor((mult - 0.15) * tau));
                int hi = std::min(int(std::ceil((mult + 0.15) * tau)), tau_max);
                for (int t = std::max(lo, tau + 1); t <= hi; t++) {
                    bool local_min = dn[size_t(t)] <= dn[size_t(t - 1)] &&
                                     (t + 1 > tau_max || dn[size_t(t)] <= dn[size_t(t + 1)]);
                    if (local_min && dn[size_t(t)] < dn[size_t(tau)] - 0.05 &&
                        (best < 0 || dn[size_t(t)] < dn[size_t(best)]))
                        best = t;
                }
            }
            if (best < 0) break;
            tau = best;
        }
        double refined = double(tau);
        if (tau > 1 && tau < half) {
            double a = dn[size_t(tau - 1)], b = dn[size_t(tau)], c = dn[size_t(tau + 1)];
            double denom = a - 2.0 * b + c;
            if (std::fabs(denom) > 1e-12) refined += 0.5 * (a - c) / denom;
        }
        double hz = double(cfg.sample_rate) / refined;
        if (hz >= f_min && hz <= f_max) track.hz[size_t(f)] = hz;
    }
    return track;
}

//
// mel cepstrum
//

matrix mel_cepstrum(const mel_spec &mel, int order) {
    if (order < 1 || order > mel.bins)
        fail(errc::usage, strfmt("mel_cepstrum: order %d out of range for %lld mel bins",
                                 order, (long long)mel.bins));
    const int64_t d = mel.bins;
    matrix basis(order, d); // orthonormal DCT-II rows
    const double s0 = std::sqrt(1.0 / double(d));
    const double sk = std::sqrt(2.0 / double(d));
    for (int k = 0; k < order; k++)
        for (int64_t j = 0; j < d; j++)
            basis.at(k, j) = (k == 0 ? s0 : sk) * std::cos(kPi * (double(j) + 0.5) * double(k) / double(d));

    matrix out(mel.frames, order);
    for (int64_t f = 0; f < mel.frames; f++) {
        const double *row = mel.v.data() + f * d;
        for (int k = 0; k < order; k++) {
            const double *b = basis.row(k);
            double acc = 0.0;
            for (int64_t j = 0; j < d; j++) acc += b[j] * row[j];
            out.at(f, k) = acc;
        }
    }
    return out;
}

//
// WAV io
//

namespace {
struct file_closer {
    void operator()(FILE *f) const { if (f) fclose(f); }
};
using file_ptr = std::unique_ptr<FILE, file_closer>;
} // namespace

void wav_write(const std::string &path, const waveform &w) {
    file_ptr f(fopen(path.c_str(), "wb"));
    if (!f) fail(errc::runtime, "cannot write wav: " + path);
    const uint32_t n = uint32_t(w.samples.size());
    const uint32_t data_bytes = n * 2;
    const uint32_t sr = uint32_t(w.sample_rate);
    const uint32_t byte_rate = sr * 2;
    uint32_t u32;
    uint16_t u16;
    fwrite("RIFF", 1, 4, f.get());
    u32 = 36 + data_bytes;
    fwrite(&u32, 4, 1, f.get());
    fwrite("WAVE", 1, 4, f.get());
    fwrite("fmt ", 1, 4, f.get());
    u32 = 16;               fwrite(&u32, 4, 1, f.get());
    u16 = 1;                fwrite(&u16, 2, 1, f.get()); // PCM
    u16 = 1;                fwrite(&u16, 2, 1, f.get()); // mono
    u32 = sr;               fwrite(&u32, 4, 1, f.get());
    u32 = byte_rate;        fwrite(&u32, 4, 1, f.get());
    u16 = 2;                fwrite(&u16, 2, 1, f.get()); // block align
    u16 = 16;               fwrite(&u16, 2, 1, f.get()); // bits
    fwrite("data", 1, 4, f.get());
    fwrite(&data_bytes, 4, 1, f.get());
    for (double v : w.samples) {
        long q = std::lrint(std::min(1.0, std::max(-1.0, v)) * 32768.0);
        int16_t s = int16_t(std::min(32767L, std::max(-32768L, q)));
        fwrite(&s, 2, 1, f.get());
    }
    if (ferror(f.get())) fail(errc::runtime, "write failure: " + path);
}

waveform wav_read(const std::string &path) {
    file_ptr f(fopen(path.c_str(), "rb"));
    if (!f) fail(errc::missing_prereq, "cannot open wav: " + path);
    char tag[4];
    uint32_t riff_size;
    if (fread(tag, 1, 4, f.get()) != 4 || memcmp(tag, "RIFF", 4) != 0 ||
        fread(&riff_size, 4, 1, f.get()) != 1 ||
        fread(tag, 1, 4, f.get()) != 4 || memcmp(tag, "WAVE", 4) != 0)
        fail(errc::runtime, "not a RIFF/WAVE file: " + path);

    waveform w;
    uint16_t channels = 0, bits = 0;
    bool have_fmt = false;
    while (fread(tag, 1, 4, f.get()) == 4) {
        uint32_t chunk_size;
        if (fread(&chunk_size, 4, 1, f.get()) != 1) break;
        if (memcmp(tag, "fmt ", 4) == 0) {
            uint16_t fmt_code;
            uint32_t sr, byte_rate;
            uint16_t block_align;
            if (chunk_size < 16) fail(errc::runtime, "bad fmt chunk: " + path);
            fread(&fmt_code, 2, 1, f.get());
            fread(&channels, 2, 1, f.get());
            fread(&sr, 4, 1, f.get());
            fread(&byte_rate, 4, 1, f.get());
            fread(&block_align, 2, 1, f.get());
            fread(&bits, 2, 1, f.get());
            if (chunk_size > 16) fseek(f.get(), long(chunk_size - 16), SEEK_CUR);
            if (fmt_code != 1 || channels != 1 || bits != 16)
                fail(errc::runtime, "unsupported wav format (PCM16 mono required): " + path);
            w.sample_rate = int(sr);
            have_fmt = true;
        } else if (memcmp(tag, "data", 4) == 0) {
            if (!have_fmt) fail(errc::runtime, "wav data before fmt: " + path);
            const size_t n = chunk_size / 2;
            w.samples.resize(n);
            std::vector<int16_t> buf(n);
            if (n && fread(buf.data(), 2, n, f.get()) != n)
                fail(errc::runtime, "wav truncated: " + path);
            for (size_t i = 0; i < n; i++) w.samples[i] = double(buf[i]) / 32768.0;
            return w;
        } else {
            fseek(f.get(), long(chunk_size + (chunk_size & 1)), SEEK_CUR);
        }
    }
    fail(errc::runtime, "wav has no data chunk: " + path);
}

} // namespace svs
