#pragma once

#include "tamos/datakit.hpp"
#include "tamos/geometry.hpp"
#include "tamos/inference.hpp"

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace tamos {

struct ScoredBox {
    Box box;
    double score = 0.0;
    bool reported = true;
};

using PredictedTrack = std::vector<std::optional<ScoredBox>>;

/// One ground-truth track with the tracker's output, frame-aligned.
struct EvalTrack {
    std::string sequence;
    int object_id = 0;
    std::vector<MaybeBox> gt;
    PredictedTrack pred;
};

/// Threshold grid 0, 0.01, ..., 1 (101 points).
std::vector<double> overlap_thresholds();

struct SuccessCurve {
    std::vector<double> thresholds;
    std::vector<double> op;  // fraction of GT-present frames with overlap above the threshold
    double auc = 0.0;        // mean of op over the grid
};

/// Frames without ground truth are left out. A missing prediction overlaps 0.
/// OP_T counts overlap > T, except at T = 1 where a perfect overlap counts,
/// so perfect tracking scores AUC 1 and disjoint tracking scores 0.
/// Throws when no frame has ground truth.
SuccessCurve success_curve(const PredictedTrack& pred, std::span<const MaybeBox> gt);

struct PrecisionScores {
    double precision = 0.0;       // centre distance <= 20 px
    double norm_precision = 0.0;  // centre offset / GT size (per axis), Euclidean norm <= 0.2
};

PrecisionScores precision_scores(const PredictedTrack& pred, std::span<const MaybeBox> gt,
                                 double pixel_threshold = 20.0, double normalized_threshold = 0.2);

struct PrCurve {
    std::vector<double> thresholds;  // sorted unique confidences, ascending
    std::vector<double> precision;
    std::vector<double> recall;
    std::vector<double> f1;
    double best_f1 = 0.0;
    double best_threshold = 0.0;
};

/// IoU-weighted long-term precision/recall sweep. A frame reports at
/// threshold t when its prediction is flagged reported and scores >= t.
/// Throws when there are no predictions at all.
PrCurve votlt_curve(const PredictedTrack& pred, std::span<const MaybeBox> gt);

struct TrackResult {
    std::string sequence;
    int object_id = 0;
    int frames = 0;
    SuccessCurve success;
    PrecisionScores precision;
    PrCurve pr;
};

TrackResult evaluate_track(const EvalTrack& track);

struct SummaryRow {
    std::string name;
    int tracks = 0;
    double auc = 0.0;
    double precision = 0.0;
    double norm_precision = 0.0;
    double f1 = 0.0;
};

struct Report {
    std::vector<TrackResult> tracks;
    std::vector<SummaryRow> sequences;  // per-sequence track means
    SummaryRow overall;                 // mean over all tracks
    SuccessCurve mean_success;
    /// Mean precision and recall per confidence threshold on the 101-point
    /// grid; tracks that never report at a threshold are left out of its
    /// precision mean.
    std::vector<double> pr_thresholds, mean_precision, mean_recall;
};

/// Per-track metrics averaged with equal weight per track.
Report aggregate_report(std::span<const TrackResult> tracks);

std::string format_report_tsv(const Report& report);
std::string format_tracks_tsv(const Report& report);
/// Plot data series: threshold and value columns.
std::string success_series_tsv(const Report& report);
std::string pr_series_tsv(const Report& report);
std::string success_plot_svg(const Report& report);
std::string pr_plot_svg(const Report& report);

/// Pairs a ground-truth file with prediction records. Tracks absent in the
/// first frame are not initialised by the tracker and are skipped; a track
/// present in the first frame without predictions is an error.
std::vector<EvalTrack> match_tracks(const std::string& sequence, const AnnotationFile& gt,
                                    std::span<const PredictionRecord> predictions);

/// Keeps frames 0, k, 2k, ...
EvalTrack subsample(const EvalTrack& track, int factor);

}  // namespace tamos
