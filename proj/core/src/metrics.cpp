#include "tamos/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

namespace tamos {

namespace {

double frame_overlap(const std::optional<ScoredBox>& p, const MaybeBox& g) {
    if (!p || !g) return 0.0;
    return iou(p->box, *g);
}

void check_aligned(const PredictedTrack& pred, std::span<const MaybeBox> gt) {
    if (pred.size() != gt.size()) throw std::invalid_argument("metrics: prediction and ground truth lengths differ");
}

std::string fmt(double v, const char* spec = "%.6f") {
    char buf[64];
    std::snprintf(buf, sizeof buf, spec, v);
    return buf;
}

}  // namespace

std::vector<double> overlap_thresholds() {
    std::vector<double> t(101);
    for (int k = 0; k <= 100; ++k) t[static_cast<std::size_t>(k)] = k / 100.0;
    return t;
}

SuccessCurve success_curve(const PredictedTrack& pred, std::span<const MaybeBox> gt) {
    check_aligned(pred, gt);
    std::vector<double> overlaps;
    for (std::size_t i = 0; i < gt.size(); ++i) {
        if (gt[i]) overlaps.push_back(frame_overlap(pred[i], gt[i]));
    }
    if (overlaps.empty()) throw std::invalid_argument("success_curve: no frame with ground truth");
    SuccessCurve c;
    c.thresholds = overlap_thresholds();
    const double count = static_cast<double>(overlaps.size());
    for (double t : c.thresholds) {
        const auto hits = std::count_if(overlaps.begin(), overlaps.end(),
                                        [t](double o) { return t < 1.0 ? o > t : o >= 1.0; });
        c.op.push_back(static_cast<double>(hits) / count);
    }
    double sum = 0.0;
    for (double v : c.op) sum += v;
    c.auc = sum / static_cast<double>(c.op.size());
    return c;
}

PrecisionScores precision_scores(const PredictedTrack& pred, std::span<const MaybeBox> gt, double pixel_threshold,
                                 double normalized_threshold) {
    check_aligned(pred, gt);
    int frames = 0;
    int hits = 0;
    int norm_hits = 0;
    for (std::size_t i = 0; i < gt.size(); ++i) {
        if (!gt[i]) continue;
        ++frames;
        if (!pred[i]) continue;
        const double dx = pred[i]->box.center_x() - gt[i]->center_x();
        const double dy = pred[i]->box.center_y() - gt[i]->center_y();
        if (std::hypot(dx, dy) <= pixel_threshold) ++hits;
        if (std::hypot(dx / gt[i]->w, dy / gt[i]->h) <= normalized_threshold) ++norm_hits;
    }
    if (frames == 0) throw std::invalid_argument("precision_scores: no frame with ground truth");
    return {static_cast<double>(hits) / frames, static_cast<double>(norm_hits) / frames};
}

PrCurve votlt_curve(const PredictedTrack& pred, std::span<const MaybeBox> gt) {
    check_aligned(pred, gt);
    if (std::none_of(pred.begin(), pred.end(), [](const auto& p) { return p.has_value(); })) {
        throw std::invalid_argument("votlt_curve: empty prediction set");
    }
    const auto gt_frames = std::count_if(gt.begin(), gt.end(), [](const MaybeBox& b) { return b.has_value(); });
    if (gt_frames == 0) throw std::invalid_argument("votlt_curve: no frame with ground truth");

    // Reported frames sorted by descending score; sweeping the threshold down
    // adds them in that order.
    struct Item {
        double score;
        double overlap;
        bool gt_present;
    };
    std::vector<Item> items;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] && pred[i]->reported) items.push_back({pred[i]->score, frame_overlap(pred[i], gt[i]), gt[i].has_value()});
    }
    std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) { return a.score > b.score; });

    PrCurve c;
    double overlap_sum = 0.0;
    std::size_t k = 0;
    std::vector<double> th, pr, re;
    while (k < items.size()) {
        const double t = items[k].score;
        while (k < items.size() && items[k].score == t) {
            overlap_sum += items[k].overlap;  // zero when GT is absent
            ++k;
        }
        th.push_back(t);
        pr.push_back(overlap_sum / static_cast<double>(k));
        re.push_back(overlap_sum / static_cast<double>(gt_frames));
    }
    // Ascending threshold order.
    c.thresholds.assign(th.rbegin(), th.rend());
    c.precision.assign(pr.rbegin(), pr.rend());
    c.recall.assign(re.rbegin(), re.rend());
    for (std::size_t i = 0; i < c.thresholds.size(); ++i) {
        const double p = c.precision[i];
        const double r = c.recall[i];
        const double f = p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
        c.f1.push_back(f);
        if (f > c.best_f1) {
            c.best_f1 = f;
            c.best_threshold = c.thresholds[i];
        }
    }
    return c;
}

TrackResult evaluate_track(const EvalTrack& track) {
    TrackResult r;
    r.sequence = track.sequence;
    r.object_id = track.object_id;
    r.frames = static_cast<int>(track.gt.size());
    r.success = success_curve(track.pred, track.gt);
    r.precision = precision_scores(track.pred, track.gt);
    r.pr = votlt_curve(track.pred, track.gt);
    return r;
}

namespace {

SummaryRow summarise(const std::string& name, std::span<const TrackResult* const> tracks) {
    SummaryRow row;
    row.name = name;
    row.tracks = static_cast<int>(tracks.size());
    for (const TrackResult* t : tracks) {
        row.auc += t->success.auc;
        row.precision += t->precision.precision;
        row.norm_precision += t->precision.norm_precision;
        row.f1 += t->pr.best_f1;
    }
    if (!tracks.empty()) {
        const double n = static_cast<double>(tracks.size());
        row.auc /= n;
        row.precision /= n;
        row.norm_precision /= n;
        row.f1 /= n;
    }
    return row;
}

// Value of a stepwise PR curve at threshold t: the entry for the smallest
// swept threshold >= t, i.e. the frames that report at t.
std::optional<std::pair<double, double>> pr_at(const PrCurve& c, double t) {
    const auto it = std::lower_bound(c.thresholds.begin(), c.thresholds.end(), t);
    if (it == c.thresholds.end()) return std::nullopt;
    const auto i = static_cast<std::size_t>(it - c.thresholds.begin());
    return std::make_pair(c.precision[i], c.recall[i]);
}

}  // namespace

Report aggregate_report(std::span<const TrackResult> tracks) {
    Report rep;
    rep.tracks.assign(tracks.begin(), tracks.end());
    std::vector<const TrackResult*> all;
    std::map<std::string, std::vector<const TrackResult*>> by_sequence;
    for (const auto& t : rep.tracks) {
        all.push_back(&t);
        by_sequence[t.sequence].push_back(&t);
    }
    for (const auto& [name, list] : by_sequence) rep.sequences.push_back(summarise(name, list));
    rep.overall = summarise("all", all);

    rep.mean_success.thresholds = overlap_thresholds();
    rep.mean_success.op.assign(rep.mean_success.thresholds.size(), 0.0);
    rep.pr_thresholds = overlap_thresholds();
    rep.mean_precision.assign(rep.pr_thresholds.size(), 0.0);
    rep.mean_recall.assign(rep.pr_thresholds.size(), 0.0);
    if (all.empty()) return rep;
    for (const TrackResult* t : all) {
        for (std::size_t i = 0; i < t->success.op.size(); ++i) rep.mean_success.op[i] += t->success.op[i];
    }
    double sum = 0.0;
    for (double& v : rep.mean_success.op) {
        v /= static_cast<double>(all.size());
        sum += v;
    }
    rep.mean_success.auc = sum / static_cast<double>(rep.mean_success.op.size());
    for (std::size_t i = 0; i < rep.pr_thresholds.size(); ++i) {
        int reporting = 0;
        for (const TrackResult* t : all) {
            const auto pr = pr_at(t->pr, rep.pr_thresholds[i]);
            if (!pr) continue;
            ++reporting;
            rep.mean_precision[i] += pr->first;
            rep.mean_recall[i] += pr->second;
        }
        if (reporting > 0) rep.mean_precision[i] /= reporting;
        rep.mean_recall[i] /= static_cast<double>(all.size());
    }
    return rep;
}

std::string format_report_tsv(const Report& report) {
    std::ostringstream out;
    out << "sequence\ttracks\tsuccess_auc\tprecision\tnorm_precision\tvotlt_f1\n";
    auto row = [&](const SummaryRow& r) {
        out << r.name << '\t' << r.tracks << '\t' << fmt(r.auc) << '\t' << fmt(r.precision) << '\t'
            << fmt(r.norm_precision) << '\t' << fmt(r.f1) << '\n';
    };
    for (const auto& r : report.sequences) row(r);
    row(report.overall);
    return out.str();
}

std::string format_tracks_tsv(const Report& report) {
    std::ostringstream out;
    out << "sequence\tobject\tframes\tsuccess_auc\tprecision\tnorm_precision\tvotlt_f1\tbest_threshold\n";
    for (const auto& t : report.tracks) {
        out << t.sequence << '\t' << t.object_id << '\t' << t.frames << '\t' << fmt(t.success.auc) << '\t'
            << fmt(t.precision.precision) << '\t' << fmt(t.precision.norm_precision) << '\t' << fmt(t.pr.best_f1)
            << '\t' << fmt(t.pr.best_threshold) << '\n';
    }
    return out.str();
}

std::string success_series_tsv(const Report& report) {
    std::ostringstream out;
    out << "threshold\tsuccess\n";
    for (std::size_t i = 0; i < report.mean_success.thresholds.size(); ++i) {
        out << fmt(report.mean_success.thresholds[i], "%.2f") << '\t' << fmt(report.mean_success.op[i]) << '\n';
    }
    return out.str();
}

std::string pr_series_tsv(const Report& report) {
    std::ostringstream out;
    out << "threshold\tprecision\trecall\n";
    for (std::size_t i = 0; i < report.pr_thresholds.size(); ++i) {
        out << fmt(report.pr_thresholds[i], "%.2f") << '\t' << fmt(report.mean_precision[i]) << '\t'
            << fmt(report.mean_recall[i]) << '\n';
    }
    return out.str();
}

namespace {

// Unit-square line plot with axes and a caption.
std::string svg_plot(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                     std::span<const double> xs, std::span<const double> ys) {
    constexpr double W = 480, H = 360, L = 60, R = 20, T = 40, B = 50;
    const double pw = W - L - R, ph = H - T - B;
    std::ostringstream out;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">"
        << title << "</text>\n";
    out << "<rect x=\"" << L << "\" y=\"" << T << "\" width=\"" << pw << "\" height=\"" << ph
        << "\" fill=\"none\" stroke=\"black\"/>\n";
    for (int k = 0; k <= 5; ++k) {
        const double v = k / 5.0;
        const double gx = L + v * pw;
        const double gy = T + (1.0 - v) * ph;
        out << "<line x1=\"" << gx << "\" y1=\"" << T << "\" x2=\"" << gx << "\" y2=\"" << T + ph
            << "\" stroke=\"#ddd\"/>\n";
        out << "<line x1=\"" << L << "\" y1=\"" << gy << "\" x2=\"" << L + pw << "\" y2=\"" << gy
            << "\" stroke=\"#ddd\"/>\n";
        out << "<text x=\"" << gx << "\" y=\"" << T + ph + 16 << "\" text-anchor=\"middle\" font-size=\"11\">"
            << fmt(v, "%.1f") << "</text>\n";
        out << "<text x=\"" << L - 6 << "\" y=\"" << gy + 4 << "\" text-anchor=\"end\" font-size=\"11\">"
            << fmt(v, "%.1f") << "</text>\n";
    }
    out << "<text x=\"" << L + pw / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\" font-size=\"12\">"
        << xlabel << "</text>\n";
    out << "<text x=\"16\" y=\"" << T + ph / 2 << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 16 "
        << T + ph / 2 << ")\">" << ylabel << "</text>\n";
    out << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < xs.size(); ++i) {
        out << fmt(L + std::clamp(xs[i], 0.0, 1.0) * pw, "%.2f") << ','
            << fmt(T + (1.0 - std::clamp(ys[i], 0.0, 1.0)) * ph, "%.2f") << ' ';
    }
    out << "\"/>\n</svg>\n";
    return out.str();
}

}  // namespace

std::string success_plot_svg(const Report& report) {
    return svg_plot("Success plot (AUC " + fmt(report.overall.auc * 100.0, "%.1f") + ")", "Overlap threshold",
                    "Success rate", report.mean_success.thresholds, report.mean_success.op);
}

std::string pr_plot_svg(const Report& report) {
    return svg_plot("Tracking precision/recall (F1 " + fmt(report.overall.f1, "%.3f") + ")", "Recall", "Precision",
                    report.mean_recall, report.mean_precision);
}

std::vector<EvalTrack> match_tracks(const std::string& sequence, const AnnotationFile& gt,
                                    std::span<const PredictionRecord> predictions) {
    std::map<int, PredictedTrack> by_id;
    for (const auto& r : predictions) {
        if (r.frame < 0 || r.frame >= gt.frame_count) {
            throw std::runtime_error(sequence + ": prediction for frame " + std::to_string(r.frame) +
                                     " outside the annotated range");
        }
        auto& track = by_id[r.object_id];
        track.resize(static_cast<std::size_t>(gt.frame_count));
        track[static_cast<std::size_t>(r.frame)] = ScoredBox{r.box, r.presence, r.reported};
    }
    std::vector<EvalTrack> out;
    for (const auto& t : gt.tracks) {
        if (t.boxes.empty() || !t.boxes.front()) continue;
        auto it = by_id.find(t.object_id);
        if (it == by_id.end()) {
            throw std::runtime_error(sequence + ": no predictions for object " + std::to_string(t.object_id));
        }
        out.push_back({sequence, t.object_id, t.boxes, it->second});
    }
    return out;
}

EvalTrack subsample(const EvalTrack& track, int factor) {
    if (factor < 1) throw std::invalid_argument("subsample: factor must be positive");
    EvalTrack out{track.sequence, track.object_id, {}, {}};
    for (std::size_t i = 0; i < track.gt.size(); i += static_cast<std::size_t>(factor)) {
        out.gt.push_back(track.gt[i]);
        out.pred.push_back(i < track.pred.size() ? track.pred[i] : std::nullopt);
    }
    return out;
}

}  // namespace tamos
