#include "metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace svs {

static const double kMcdConst = 10.0 * 1.4142135623730950488 / 2.302585092994045684; // 10*sqrt2/ln10

static int64_t mutual_voiced(const f0_track &ref, const f0_track &hyp,
                             std::vector<int64_t> &idx) {
    const int64_t n = std::min<int64_t>(int64_t(ref.hz.size()), int64_t(hyp.hz.size()));
    idx.clear();
    for (int64_t i = 0; i < n; i++)
        if (ref.hz[size_t(i)] > 0.0 && hyp.hz[size_t(i)] > 0.0) idx.push_back(i);
    return int64_t(idx.size());
}

double f0_rmse(const f0_track &ref, const f0_track &hyp) {
    std::vector<int64_t> idx;
    if (mutual_voiced(ref, hyp, idx) < 1)
        fail(errc::runtime, "f0_rmse undefined: no mutually voiced frames");
    double acc = 0.0;
    for (int64_t i : idx) {
        double d = ref.hz[size_t(i)] - hyp.hz[size_t(i)];
        acc += d * d;
    }
    return std::sqrt(acc / double(idx.size()));
}

double f0_rmse_cents(const f0_track &ref, const f0_track &hyp) {
    std::vector<int64_t> idx;
    if (mutual_voiced(ref, hyp, idx) < 1)
        fail(errc::runtime, "f0_rmse_cents undefined: no mutually voiced frames");
    double acc = 0.0;
    for (int64_t i : idx) {
        double d = 1200.0 * std::log2(ref.hz[size_t(i)] / hyp.hz[size_t(i)]);
        acc += d * d;
    }
    return std::sqrt(acc / double(idx.size()));
}

double f0_corr(const f0_track &ref, const f0_track &hyp) {
    std::vector<int64_t> idx;
    if (mutual_voiced(ref, hyp, idx) < 2)
        fail(errc::runtime, "f0_corr undefined: fewer than two mutually voiced frames");
    double mr = 0.0, mh = 0.0;
    for (int64_t i : idx) {
        mr += ref.hz[size_t(i)];
        mh += hyp.hz[size_t(i)];
    }
    mr /= double(idx.size());
    mh /= double(idx.size());
    double srr = 0.0, shh = 0.0, srh = 0.0;
    for (int64_t i : idx) {
        double a = ref.hz[size_t(i)] - mr;
        double b = hyp.hz[size_t(i)] - mh;
        srr += a * a;
        shh += b * b;
        srh += a * b;
    }
    if (srr <= 0.0 || shh <= 0.0)
        fail(errc::runtime, "f0_corr undefined: zero variance track");
    return srh / std::sqrt(srr * shh);
}

double voiced_overlap(const f0_track &ref, const f0_track &hyp) {
    const int64_t n = std::min<int64_t>(int64_t(ref.hz.size()), int64_t(hyp.hz.size()));
    int64_t both = 0, either = 0;
    for (int64_t i = 0; i < n; i++) {
        bool r = ref.hz[size_t(i)] > 0.0, h = hyp.hz[size_t(i)] > 0.0;
        if (r && h) both++;
        if (r || h) either++;
    }
    return either == 0 ? 1.0 : double(both) / double(either);
}

//
// DTW
//

dtw_result dtw_align(const matrix &costs) {
    const int64_t a = costs.rows, b = costs.cols;
    if (a == 0 || b == 0) fail(errc::usage, "dtw_align: empty cost matrix");
    for (double v : costs.v)
        if (!std::isfinite(v)) fail(errc::usage, "dtw_align: non-finite cost");

    matrix acc(a, b);
    // choice per cell: 0 diagonal, 1 from (i-1,j), 2 from (i,j-1)
    std::vector<uint8_t> choice(size_t(a * b), 0);
    acc.at(0, 0) = costs.at(0, 0);
    for (int64_t i = 1; i < a; i++) {
        acc.at(i, 0) = acc.at(i - 1, 0) + costs.at(i, 0);
        choice[size_t(i * b)] = 1;
    }
    for (int64_t j = 1; j < b; j++) {
        acc.at(0, j) = acc.at(0, j - 1) + costs.at(0, j);
        choice[size_t(j)] = 2;
    }
    for (int64_t i = 1; i < a; i++)
        for (int64_t j = 1; j < b; j++) {
            double diag = acc.at(i - 1, j - 1);
            double up = acc.at(i - 1, j);
            double left = acc.at(i, j - 1);
            double best = diag;
            uint8_t c = 0;
            if (up < best) { best = up; c = 1; }
            if (left < best) { best = left; c = 2; }
            acc.at(i, j) = best + costs.at(i, j);
            choice[size_t(i * b + j)] = c;
        }

    dtw_result res;
    res.cost = acc.at(a - 1, b - 1);
    int64_t i = a - 1, j = b - 1;
    while (true) {
        res.path.emplace_back(i, j);
        if (i == 0 && j == 0) break;
        switch (choice[size_t(i * b + j)]) {
            case 0: i--; j--; break;
            case 1: i--; break;
            default: j--; break;
        }
    }
    std::reverse(res.path.begin(), res.path.end());
    return res;
}

double mcd(const mel_spec &ref, const mel_spec &hyp, int order, bool use_dtw) {
    if (ref.frames == 0 || hyp.frames == 0) fail(errc::usage, "mcd: empty spectrogram");
    if (ref.bins != hyp.bins) fail(errc::usage, "mcd: mel configuration mismatch");
    matrix cr = mel_cepstrum(ref, order);
    matrix ch = mel_cepstrum(hyp, order);
    const int64_t dims = order - 1; // c0 carries overall gain, excluded

    auto dist = [&](int64_t i, int64_t j) {
        double acc = 0.0;
        for (int64_t k = 1; k < order; k++) {
            double d = cr.at(i, k) - ch.at(j, k);
            acc += d * d;
        }
        return std::sqrt(acc);
    };
    (void)dims;

    if (!use_dtw) {
        const int64_t n = std::min(cr.rows, ch.rows);
        double acc = 0.0;
        for (int64_t i = 0; i < n; i++) acc += dist(i, i);
        return kMcdConst * acc / double(n);
    }
    matrix costs(cr.rows, ch.rows);
    for (int64_t i = 0; i < cr.rows; i++)
        for (int64_t j = 0; j < ch.rows; j++) costs.at(i, j) = dist(i, j);
    dtw_result al = dtw_align(costs);
    double acc = 0.0;
    for (const auto &[i, j] : al.path) acc += costs.at(i, j);
    return kMcdConst * acc / double(al.path.size());
}

//
// corpus evaluation
//

static metric_aggregate aggregate(const std::vector<double> &vals) {
    metric_aggregate a;
    a.count = int64_t(vals.size());
    if (vals.empty()) return a;
    for (double v : vals) a.mean += v;
    a.mean /= double(vals.size());
    for (double v : vals) {
        double d = v - a.mean;
        a.stddev += d * d;
    }
    a.stddev = std::sqrt(a.stddev / double(vals.size()));
    return a;
}

void metric_report::finalize() {
    std::sort(rows.begin(), rows.end(),
              [](const utterance_metrics &a, const utterance_metrics &b) {
                  return a.utt_id < b.utt_id;
              });
    std::vector<double> v_rmse, v_corr, v_mcd, v_ov;
    for (const auto &r : rows) {
        if (!r.ok) continue;
        v_rmse.push_back(r.f0_rmse_hz);
        v_corr.push_back(r.f0_correlation);
        v_mcd.push_back(r.mcd_db);
        v_ov.push_back(r.voiced_overlap_frac);
    }
    agg_f0_rmse = aggregate(v_rmse);
    agg_f0_corr = aggregate(v_corr);
    agg_mcd = aggregate(v_mcd);
    agg_voiced = aggregate(v_ov);
}

metric_report evaluate_corpus(const std::vector<eval_pair> &pairs, const stft_config &cfg) {
    if (pairs.empty()) fail(errc::usage, "evaluate_corpus: no pairs");
    metric_report report;
    for (const auto &p : pairs) {
        utterance_metrics um;
        um.utt_id = p.utt_id;
        try {
            waveform ref = wav_read(p.ref_wav);
            waveform hyp = wav_read(p.hyp_wav);
            f0_track fr = yin_f0(ref, cfg);
            f0_track fh = yin_f0(hyp, cfg);
            mel_spec mr = mel_spectrogram(ref, cfg);
            mel_spec mh = mel_spectrogram(hyp, cfg);
            um.f0_rmse_hz = f0_rmse(fr, fh);
            um.f0_correlation = f0_corr(fr, fh);
            um.mcd_db = mcd(mr, mh);
            um.voiced_overlap_frac = voiced_overlap(fr, fh);
            um.ok = true;
        } catch (const error &e) {
            um.ok = false;
            um.fail_reason = e.what();
        }
        report.rows.push_back(std::move(um));
    }
    report.finalize();
    return report;
}

void report_save_csv(const std::string &path, const metric_report &report) {
    FILE *f = fopen(path.c_str(), "wb");
    if (!f) fail(errc::runtime, "cannot write report: " + path);
    fprintf(f, "utterance_id,f0_rmse,f0_corr,mcd,voiced_overlap\n");
    for (const auto &r : report.rows) {
        if (r.ok)
            fprintf(f, "%s,%.6f,%.6f,%.6f,%.6f\n", r.utt_id.c_str(), r.f0_rmse_hz,
                    r.f0_correlation, r.mcd_db, r.voiced_overlap_frac);
        else
            fprintf(f, "%s,,,,\n", r.utt_id.c_str());
    }
    fclose(f);
}

void report_save_json(const std::string &path, const metric_report &report) {
    FILE *f = fopen(path.c_str(), "wb");
    if (!f) fail(errc::runtime, "cannot write report: " + path);
    auto agg = [&](const char *name, const metric_aggregate &a, const char *sep) {
        fprintf(f, "    \"%s\": {\"mean\": %.6f, \"std\": %.6f, \"count\": %lld}%s\n", name, a.mean,
                a.stddev, (long long)a.count, sep);
    };
    fprintf(f, "{\n  \"aggregates\": {\n");
    agg("f0_rmse", report.agg_f0_rmse, ",");
    agg("f0_corr", report.agg_f0_corr, ",");
    agg("mcd", report.agg_mcd, ",");
    agg("voiced_overlap", report.agg_voiced, "");
    fprintf(f, "  },\n  \"failures\": [\n");
    bool first = true;
    for (const auto &r : report.rows) {
        if (r.ok) continue;
        fprintf(f, "%s    {\"utterance_id\": \"%s\", \"reason\": \"%s\"}", first ? "" : ",\n",
                r.utt_id.c_str(), r.fail_reason.c_str());
        first = false;
    }
    fprintf(f, "%s  ]\n}\n", first ? "" : "\n");
    fclose(f);
}

} // namespace svs
