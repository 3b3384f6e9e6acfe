#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "common.hpp"
#include "dsp.hpp"

namespace svs {

//
// Objective evaluation: pitch error/correlation on mutually voiced frames
// and mel-cepstral distortion over a DTW alignment.
//

// RMSE in Hz over frames voiced in both tracks (truncated to the shorter
// track); errors out when no frame is voiced in both
double f0_rmse(const f0_track &ref, const f0_track &hyp);
// non-default variant in cents (1200·log2 ratio)
double f0_rmse_cents(const f0_track &ref, const f0_track &hyp);
// Pearson correlation on mutually voiced frames
double f0_corr(const f0_track &ref, const f0_track &hyp);
// voiced-set Jaccard overlap; 1 when neither track has voiced frames
double voiced_overlap(const f0_track &ref, const f0_track &hyp);

struct dtw_result {
    std::vector<std::pair<int64_t, int64_t>> path; // (0,0) .. (A-1,B-1)
    double cost = 0.0;
};

// monotone minimal-cost path with steps {(1,0),(0,1),(1,1)}; ties prefer
// the diagonal, then (1,0)
dtw_result dtw_align(const matrix &costs);

// mel-cepstra with c0 excluded; per aligned pair (10*sqrt(2)/ln 10)*||dc||,
// averaged over the DTW path (or over min-length frame pairs)
double mcd(const mel_spec &ref, const mel_spec &hyp, int order = 13, bool use_dtw = true);

struct utterance_metrics {
    std::string utt_id;
    bool ok = false;
    double f0_rmse_hz = 0.0;
    double f0_correlation = 0.0;
    double mcd_db = 0.0;
    double voiced_overlap_frac = 0.0;
    std::string fail_reason;
};

struct metric_aggregate {
    double mean = 0.0;
    double stddev = 0.0;
    int64_t count = 0;
};

struct metric_report {
    std::vector<utterance_metrics> rows; // sorted by utterance id
    metric_aggregate agg_f0_rmse, agg_f0_corr, agg_mcd, agg_voiced;

    void finalize(); // sorts rows and recomputes aggregates
};

struct eval_pair {
    std::string utt_id;
    std::string ref_wav;
    std::string hyp_wav;
};

// per-utterance metrics with per-row failure capture; a failed utterance is
// recorded with a reason and excluded from aggregates
metric_report evaluate_corpus(const std::vector<eval_pair> &pairs, const stft_config &cfg);

// columns exactly: utterance_id,f0_rmse,f0_corr,mcd,voiced_overlap
void report_save_csv(const std::string &path, const metric_report &report);
void report_save_json(const std::string &path, const metric_report &report);

} // namespace svs
