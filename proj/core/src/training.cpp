#include "tamos/training.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cmath>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <string>

namespace tamos {

namespace {

double logistic(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

// 0 * log(0) is taken as 0.
double xlogy(double x, double y) { return x == 0.0 ? 0.0 : x * std::log(y); }

void check_finite(const Matrix& m, const char* what) {
    if (!m.allFinite()) throw std::invalid_argument(std::string(what) + ": non-finite input");
}

void check_targets(std::span<const ObjectTarget> targets, int pool_size) {
    std::vector<bool> seen(static_cast<std::size_t>(pool_size), false);
    for (const auto& t : targets) {
        if (t.channel < 0 || t.channel >= pool_size) throw std::invalid_argument("loss: target channel outside pool");
        if (seen[static_cast<std::size_t>(t.channel)]) throw std::invalid_argument("loss: duplicate target channel");
        seen[static_cast<std::size_t>(t.channel)] = true;
    }
}

}  // namespace

void LossWeights::validate() const {
    if (!(lambda_cls > 0.0) || !(lambda_bbreg > 0.0)) throw std::invalid_argument("loss weights must be positive");
    if (!(gamma >= 0.0)) throw std::invalid_argument("focal gamma must be nonnegative");
}

double focal_loss(const ScoreMap& pred, const ScoreMap& target, double gamma) {
    if (pred.values.rows() != target.values.rows() || pred.values.cols() != target.values.cols()) {
        throw std::invalid_argument("focal_loss: shape mismatch");
    }
    check_finite(pred.values, "focal_loss");
    check_finite(target.values, "focal_loss");
    const Matrix& p = pred.values;
    const Matrix& y = target.values;
    double total = 0.0;
    for (Eigen::Index c = 0; c < p.cols(); ++c) {
        double acc = 0.0;
        for (Eigen::Index r = 0; r < p.rows(); ++r) {
            const double d = std::abs(p(r, c) - y(r, c));
            const double mod = std::pow(d, gamma);
            if (mod == 0.0) continue;
            const double bce = -(xlogy(y(r, c), p(r, c)) + xlogy(1.0 - y(r, c), 1.0 - p(r, c)));
            acc += bce * mod;
        }
        total += acc / static_cast<double>(p.rows());
    }
    return total;
}

ad::Var focal_loss_logits(const ad::Var& logits, const Matrix& targets, double gamma) {
    if (logits.rows() != targets.rows() || logits.cols() != targets.cols()) {
        throw std::invalid_argument("focal_loss_logits: shape mismatch");
    }
    check_finite(logits.value(), "focal_loss_logits");
    const Matrix& x = logits.value();
    const Eigen::Index rows = x.rows();
    ad::add_ops(static_cast<std::uint64_t>(x.size()) * 12);
    Matrix dx(x.rows(), x.cols());
    double total = 0.0;
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < x.cols(); ++c) {
            const double v = x(r, c);
            const double y = targets(r, c);
            const double p = logistic(v);
            const double d = p - y;
            const double mag = std::abs(d);
            const double bce = softplus(v) - y * v;
            const double mod = std::pow(mag, gamma);
            total += bce * mod;
            double g = d * mod;
            if (mag > 0.0 && gamma > 0.0) {
                g += bce * gamma * std::pow(mag, gamma - 1.0) * (d > 0 ? 1.0 : -1.0) * p * (1.0 - p);
            }
            dx(r, c) = g / static_cast<double>(rows);
        }
    }
    Matrix out(1, 1);
    out(0, 0) = total / static_cast<double>(rows);
    return ad::make_op(std::move(out), {logits}, [dx = std::move(dx)](ad::Node& self) {
        self.inputs[0]->accumulate(dx * self.grad(0, 0));
    });
}

ad::Var giou_loss_ltrb(const ad::Var& ltrb, int column, const GridSpec& grid, const Box& gt,
                       std::span<const int> cells) {
    if (column < 0 || column + 4 > ltrb.cols()) throw std::invalid_argument("giou_loss_ltrb: column out of range");
    if (ltrb.rows() != grid.cells()) throw std::invalid_argument("giou_loss_ltrb: map does not match grid");
    if (cells.empty()) throw std::invalid_argument("giou_loss_ltrb: no supervised cells");
    if (!gt.valid()) throw std::invalid_argument("giou_loss_ltrb: ground truth must be present");
    const Matrix& v = ltrb.value();
    const double diag = grid.diagonal();
    const double gx1 = gt.x, gy1 = gt.y, gx2 = gt.right(), gy2 = gt.bottom();
    const double area_g = gt.area();
    const double inv_n = 1.0 / static_cast<double>(cells.size());
    ad::add_ops(static_cast<std::uint64_t>(cells.size()) * 60);

    Matrix d = Matrix::Zero(v.rows(), v.cols());
    double total = 0.0;
    for (int cell : cells) {
        if (cell < 0 || cell >= grid.cells()) throw std::invalid_argument("giou_loss_ltrb: cell out of range");
        const double cx = grid.cell_center_x(cell % grid.width_cells);
        const double cy = grid.cell_center_y(cell / grid.width_cells);
        const double x1 = cx - v(cell, column) * diag;
        const double y1 = cy - v(cell, column + 1) * diag;
        const double x2 = cx + v(cell, column + 2) * diag;
        const double y2 = cy + v(cell, column + 3) * diag;
        const double wp = x2 - x1, hp = y2 - y1;
        const double area_p = wp * hp;
        const double iw_raw = std::min(x2, gx2) - std::max(x1, gx1);
        const double ih_raw = std::min(y2, gy2) - std::max(y1, gy1);
        const double iw = std::max(0.0, iw_raw), ih = std::max(0.0, ih_raw);
        const double inter = iw * ih;
        const double uni = area_p + area_g - inter;
        const double cw = std::max(x2, gx2) - std::min(x1, gx1);
        const double ch = std::max(y2, gy2) - std::min(y1, gy1);
        const double hull = cw * ch;
        if (!(uni > 0.0) || !(hull > 0.0)) throw std::runtime_error("giou_loss_ltrb: degenerate predicted box");
        const double g = inter / uni - (hull - uni) / hull;
        total += 1.0 - g;

        // d giou = dI (1/U + I/U^2 - 1/C) + dA (1/C - I/U^2) - dC U/C^2
        const double k_inter = 1.0 / uni + inter / (uni * uni) - 1.0 / hull;
        const double k_area = 1.0 / hull - inter / (uni * uni);
        const double k_hull = -uni / (hull * hull);
        const bool overlap = iw_raw > 0.0 && ih_raw > 0.0;
        const double dI_dx1 = overlap && x1 > gx1 ? -ih : 0.0;
        const double dI_dx2 = overlap && x2 < gx2 ? ih : 0.0;
        const double dI_dy1 = overlap && y1 > gy1 ? -iw : 0.0;
        const double dI_dy2 = overlap && y2 < gy2 ? iw : 0.0;
        const double dC_dx1 = x1 < gx1 ? -ch : 0.0;
        const double dC_dx2 = x2 > gx2 ? ch : 0.0;
        const double dC_dy1 = y1 < gy1 ? -cw : 0.0;
        const double dC_dy2 = y2 > gy2 ? cw : 0.0;
        const double gx1d = k_inter * dI_dx1 + k_area * -hp + k_hull * dC_dx1;
        const double gx2d = k_inter * dI_dx2 + k_area * hp + k_hull * dC_dx2;
        const double gy1d = k_inter * dI_dy1 + k_area * -wp + k_hull * dC_dy1;
        const double gy2d = k_inter * dI_dy2 + k_area * wp + k_hull * dC_dy2;
        // loss = 1 - giou; x1 = cx - l*diag, x2 = cx + r*diag.
        d(cell, column) += gx1d * diag * inv_n;
        d(cell, column + 1) += gy1d * diag * inv_n;
        d(cell, column + 2) -= gx2d * diag * inv_n;
        d(cell, column + 3) -= gy2d * diag * inv_n;
    }
    Matrix out(1, 1);
    out(0, 0) = total * inv_n;
    return ad::make_op(std::move(out), {ltrb}, [d = std::move(d)](ad::Node& self) {
        self.inputs[0]->accumulate(d * self.grad(0, 0));
    });
}

ScoreMap level_target(const MaybeBox& box, const GridSpec& grid, double sigma_cells) {
    return gaussian_map(box, grid, sigma_cells * 16.0 / grid.stride);
}

ad::Var classification_loss(const ad::Var& logits, std::span<const ObjectTarget> targets, const GridSpec& grid,
                            int pool_size, double sigma_cells, const LossWeights& weights) {
    if (logits.cols() != pool_size) {
        throw std::invalid_argument("classification_loss: expected " + std::to_string(pool_size) +
                                    " score channels, got " + std::to_string(logits.cols()));
    }
    if (logits.rows() != grid.cells()) throw std::invalid_argument("classification_loss: map does not match grid");
    check_targets(targets, pool_size);
    Matrix y = Matrix::Zero(logits.rows(), logits.cols());
    for (const auto& t : targets) y.col(t.channel) = level_target(t.box, grid, sigma_cells).values.col(0);
    if (weights.coupling_term) return focal_loss_logits(logits, y, weights.gamma);

    std::vector<ad::Var> terms;
    for (const auto& t : targets) {
        terms.push_back(focal_loss_logits(ad::slice_cols(logits, t.channel, 1), y.col(t.channel), weights.gamma));
    }
    if (terms.empty()) return ad::Var::constant(Matrix::Zero(1, 1));
    return ad::add_scalars(terms);
}

double classification_loss(const ScoreMap& preds, std::span<const ObjectTarget> targets, double sigma_cells,
                           const LossWeights& weights) {
    const int m = static_cast<int>(preds.values.cols());
    check_targets(targets, m);
    std::vector<const ObjectTarget*> by_channel(static_cast<std::size_t>(m), nullptr);
    for (const auto& t : targets) by_channel[static_cast<std::size_t>(t.channel)] = &t;
    double total = 0.0;
    for (int j = 0; j < m; ++j) {
        const ObjectTarget* t = by_channel[static_cast<std::size_t>(j)];
        if (!t && !weights.coupling_term) continue;
        const ScoreMap pred{preds.grid, preds.values.col(j)};
        const ScoreMap target = t ? level_target(t->box, preds.grid, sigma_cells)
                                  : ScoreMap{preds.grid, Matrix::Zero(preds.values.rows(), 1)};
        total += focal_loss(pred, target, weights.gamma);
    }
    return total;
}

ad::Var regression_loss(const ad::Var& ltrb, std::span<const ObjectTarget> targets, const GridSpec& grid,
                        double sigma_cells, const LossWeights& weights) {
    std::vector<ad::Var> terms;
    for (const auto& t : targets) {
        if (!t.box) continue;
        if (4 * t.channel + 4 > ltrb.cols()) throw std::invalid_argument("regression_loss: no LTRB columns for target");
        const Matrix y = level_target(t.box, grid, sigma_cells).values;
        std::vector<int> cells;
        for (Eigen::Index r = 0; r < y.rows(); ++r) {
            if (y(r, 0) > weights.supervision_threshold) cells.push_back(static_cast<int>(r));
        }
        terms.push_back(giou_loss_ltrb(ltrb, 4 * t.channel, grid, *t.box, cells));
    }
    if (terms.empty()) return ad::Var::constant(Matrix::Zero(1, 1));
    return ad::add_scalars(terms);
}

LossBreakdown total_loss(const HeadOutputs& heads, std::span<const ObjectTarget> targets, int pool_size,
                         double sigma_cells, const LossWeights& weights) {
    std::vector<const LevelOutputs*> levels{&heads.encoder};
    if (heads.low.logits.valid()) levels.push_back(&heads.low);
    if (heads.high.logits.valid()) levels.push_back(&heads.high);
    std::vector<ad::Var> cls_terms;
    std::vector<ad::Var> reg_terms;
    for (const LevelOutputs* level : levels) {
        cls_terms.push_back(classification_loss(level->logits, targets, level->grid, pool_size, sigma_cells, weights));
        reg_terms.push_back(regression_loss(level->ltrb, targets, level->grid, sigma_cells, weights));
    }
    const ad::Var cls = ad::add_scalars(cls_terms);
    const ad::Var reg = ad::add_scalars(reg_terms);
    LossBreakdown out;
    out.cls = cls.scalar();
    out.bbreg = reg.scalar();
    out.total = ad::add(ad::scale(cls, weights.lambda_cls), ad::scale(reg, weights.lambda_bbreg));
    return out;
}

double weighted_total(double cls, double bbreg, const LossWeights& weights) {
    return weights.lambda_cls * cls + weights.lambda_bbreg * bbreg;
}

// ---- data -------------------------------------------------------------------

AugmentedFrame augment_frame(const Image& image, std::span<const MaybeBox> boxes, const AugmentConfig& config,
                             std::mt19937_64& rng) {
    AugmentedFrame out;
    if (!config.enabled) {
        out.image = image;
        out.boxes.assign(boxes.begin(), boxes.end());
        return out;
    }
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    const double W = image.width;
    const double H = image.height;
    const double s = 1.0 + config.scale_range * unit(rng);
    const double cx = 0.5 * W + config.shift_range * W * unit(rng);
    const double cy = 0.5 * H + config.shift_range * H * unit(rng);
    PreparedFrame crop = crop_window(image, cx - 0.5 * W / s, cy - 0.5 * H / s, s, image.height, image.width);
    out.image = std::move(crop.image);
    out.transform = crop.to_working;
    if (coin(rng) < config.flip_probability) {
        out.image = flip_horizontal(out.image);
        out.transform = out.transform.followed_by(BoxTransform::mirror_x(W));
    }
    const double gr = 1.0 + config.color_jitter * unit(rng);
    const double gg = 1.0 + config.color_jitter * unit(rng);
    const double gb = 1.0 + config.color_jitter * unit(rng);
    out.image = color_gain(out.image, gr, gg, gb);

    const Box frame{0.0, 0.0, W, H};
    for (const MaybeBox& b : boxes) {
        MaybeBox mapped = out.transform.apply(b);
        // A box pushed completely out of the frame has nothing left to see.
        if (mapped && iou(*mapped, frame) <= 0.0) mapped.reset();
        out.boxes.push_back(mapped);
    }
    return out;
}

namespace {

std::vector<int> present_tracks(const AnnotationFile& ann, int frame) {
    std::vector<int> out;
    for (std::size_t i = 0; i < ann.tracks.size(); ++i) {
        if (frame < static_cast<int>(ann.tracks[i].boxes.size()) && ann.tracks[i].boxes[static_cast<std::size_t>(frame)]) {
            out.push_back(static_cast<int>(i));
        }
    }
    return out;
}

AugmentedFrame load_frame(const Sequence& seq, int frame, std::span<const int> tracks, const NetworkConfig& net,
                          const AugmentConfig& augment, std::mt19937_64& rng) {
    const PreparedFrame prepared =
        prepare_frame(seq.frames[static_cast<std::size_t>(frame)], net.image_height, net.image_width);
    std::vector<MaybeBox> boxes;
    for (int t : tracks) {
        boxes.push_back(prepared.to_working.apply(
            seq.annotations.tracks[static_cast<std::size_t>(t)].boxes[static_cast<std::size_t>(frame)]));
    }
    return augment_frame(prepared.image, boxes, augment, rng);
}

}  // namespace

TrainingPair sample_training_pair(std::span<const TrainingSource> sources, const NetworkConfig& network,
                                  const PairSamplerConfig& config, std::mt19937_64& rng) {
    if (sources.empty()) throw std::invalid_argument("sample_training_pair: no data sources");
    std::vector<double> weights;
    for (const auto& s : sources) weights.push_back(s.sequences.empty() ? 0.0 : s.weight);
    if (std::accumulate(weights.begin(), weights.end(), 0.0) <= 0.0) {
        throw std::invalid_argument("sample_training_pair: every source is empty");
    }
    std::discrete_distribution<std::size_t> pick_source(weights.begin(), weights.end());
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    const GridSpec grid = network.grid();

    for (int attempt = 0; attempt < 200; ++attempt) {
        const TrainingSource& source = sources[pick_source(rng)];
        const Sequence& seq = source.sequences[std::uniform_int_distribution<std::size_t>(0, source.sequences.size() - 1)(rng)];
        const int frames = static_cast<int>(seq.frames.size());
        if (frames == 0) continue;
        std::vector<int> candidates;
        for (int f = 0; f < frames; ++f) {
            if (!present_tracks(seq.annotations, f).empty()) candidates.push_back(f);
        }
        if (candidates.empty()) continue;
        const int t0 = candidates[std::uniform_int_distribution<std::size_t>(0, candidates.size() - 1)(rng)];
        std::vector<int> tracks = present_tracks(seq.annotations, t0);
        if (static_cast<int>(tracks.size()) > network.pool_size) {
            std::shuffle(tracks.begin(), tracks.end(), rng);
            tracks.resize(static_cast<std::size_t>(network.pool_size));
        }
        const int lo = std::max(0, t0 - config.max_frame_gap);
        const int hi = std::min(frames - 1, t0 + config.max_frame_gap);
        const int t_test = std::uniform_int_distribution<int>(lo, hi)(rng);

        TrainingPair pair;
        pair.n = static_cast<int>(tracks.size());
        pair.used_indices = sample_embedding_indices(pair.n, network.pool_size, rng);

        std::vector<int> train_frames{t0};
        if (coin(rng) < config.dynamic_frame_probability) {
            train_frames.push_back(std::uniform_int_distribution<int>(lo, hi)(rng));
        }
        bool ok = true;
        for (std::size_t k = 0; k < train_frames.size(); ++k) {
            AugmentedFrame f = load_frame(seq, train_frames[k], tracks, network, config.augment, rng);
            TargetAnnotationSet ann;
            ann.grid = grid;
            for (std::size_t i = 0; i < tracks.size(); ++i) {
                if (f.boxes[i]) ann.entries.push_back({pair.used_indices[i], *f.boxes[i]});
            }
            // The first frame must show at least one target; a memory frame may be empty.
            if (k == 0 && ann.entries.empty()) {
                ok = false;
                break;
            }
            pair.train_images.push_back(std::move(f.image));
            pair.train_annotations.push_back(std::move(ann));
        }
        if (!ok) continue;
        AugmentedFrame test = load_frame(seq, t_test, tracks, network, config.augment, rng);
        pair.test_image = std::move(test.image);
        for (std::size_t i = 0; i < tracks.size(); ++i) pair.test_targets.push_back({pair.used_indices[i], test.boxes[i]});
        return pair;
    }
    throw std::runtime_error("sample_training_pair: no frame with a visible object after 200 attempts");
}

LossBreakdown pair_loss(const Network& net, const TrainingPair& pair, const LossWeights& weights) {
    const NetworkConfig& cfg = net.config();
    std::vector<EncodedFeatures> train;
    for (std::size_t k = 0; k < pair.train_images.size(); ++k) {
        const BackboneFeatures f = net.extract_features(pair.train_images[k]);
        train.push_back(net.encode(f.low, pair.train_annotations[k]));
    }
    const BackboneFeatures test = net.extract_features(pair.test_image);
    std::vector<int> all(static_cast<std::size_t>(cfg.pool_size));
    std::iota(all.begin(), all.end(), 0);
    const ModelPrediction pred = net.predict_models(train, test.low, net.queries(all));
    const HeadOutputs heads = net.heads_all_levels(pred, test.high);
    return total_loss(heads, pair.test_targets, cfg.pool_size, cfg.sigma_cells, weights);
}

// ---- optimisation -------------------------------------------------------------

void OptimizerSchedule::validate() const {
    if (!(learning_rate > 0.0) || !(grad_clip > 0.0)) throw std::invalid_argument("schedule: rates must be positive");
    if (!(decay_factor > 0.0)) throw std::invalid_argument("schedule: decay factor must be positive");
    if (epochs <= 0 || steps_per_epoch <= 0 || batch_size <= 0) {
        throw std::invalid_argument("schedule: epochs, steps and batch size must be positive");
    }
}

double OptimizerSchedule::learning_rate_at(int epoch) const {
    double lr = learning_rate;
    for (double f : decay_fractions) {
        if (epoch >= static_cast<int>(std::lround(f * epochs))) lr *= decay_factor;
    }
    return lr;
}

double clip_grad_norm(ParameterStore& params, double max_norm) {
    const double norm = params.grad_norm();
    if (norm > max_norm && norm > 0.0) {
        const double s = max_norm / norm;
        for (const auto& e : params.entries()) {
            ad::Var v = e.var;
            v.mutable_grad() *= s;
        }
    }
    return norm;
}

AdamW::AdamW(const ParameterStore& params, const OptimizerSchedule& schedule) : schedule_(schedule) {
    for (const auto& e : params.entries()) {
        m_.push_back(Matrix::Zero(e.var.rows(), e.var.cols()));
        v_.push_back(Matrix::Zero(e.var.rows(), e.var.cols()));
    }
}

void AdamW::step(ParameterStore& params, double learning_rate) {
    const auto& entries = params.entries();
    if (entries.size() != m_.size()) throw std::logic_error("AdamW: parameter set changed");
    ++t_;
    const double b1 = schedule_.beta1;
    const double b2 = schedule_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t i = 0; i < entries.size(); ++i) {
        ad::Var p = entries[i].var;
        const Matrix& g = p.mutable_grad();
        m_[i] = b1 * m_[i] + (1.0 - b1) * g;
        v_[i] = b2 * v_[i] + (1.0 - b2) * g.cwiseProduct(g);
        Matrix& w = p.mutable_value();
        w *= 1.0 - learning_rate * schedule_.weight_decay;
        w.array() -= learning_rate * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + schedule_.epsilon);
    }
}

std::string trace_line(const StepRecord& r) {
    const nlohmann::json j{{"step", r.step},          {"epoch", r.epoch}, {"loss", r.loss},
                           {"cls", r.cls},            {"bbreg", r.bbreg}, {"lr", r.learning_rate},
                           {"grad_norm", r.grad_norm}};
    return j.dump();
}

StepRecord train_step(Network& net, AdamW& optimizer, std::span<const TrainingPair> batch,
                      const LossWeights& weights, double learning_rate, double grad_clip) {
    if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
    net.params().zero_grad();
    StepRecord rec;
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (const auto& pair : batch) {
        const LossBreakdown loss = pair_loss(net, pair, weights);
        rec.loss += loss.total.scalar() * inv;
        rec.cls += loss.cls * inv;
        rec.bbreg += loss.bbreg * inv;
        if (!std::isfinite(loss.total.scalar())) break;
        ad::backward(ad::scale(loss.total, inv));
    }
    rec.learning_rate = learning_rate;
    if (!std::isfinite(rec.loss)) return rec;
    rec.grad_norm = clip_grad_norm(net.params(), grad_clip);
    optimizer.step(net.params(), learning_rate);
    rec.step = optimizer.steps();
    return rec;
}

namespace {

bool parameters_finite(const ParameterStore& params) {
    for (const auto& e : params.entries()) {
        if (!e.var.value().allFinite()) return false;
    }
    return true;
}

}  // namespace

TrainSummary train(Network& net, std::span<const TrainingSource> sources, const TrainConfig& config,
                   std::ostream* trace) {
    const OptimizerSchedule& sched = config.schedule;
    sched.validate();
    config.loss.validate();
    std::mt19937_64 rng(config.seed);
    AdamW optimizer(net.params(), sched);
    const auto start = std::chrono::steady_clock::now();
    TrainSummary summary;
    const long total = static_cast<long>(sched.epochs) * sched.steps_per_epoch;
    for (long step = 0; step < total; ++step) {
        const int epoch = static_cast<int>(step / sched.steps_per_epoch);
        std::vector<TrainingPair> batch;
        for (int b = 0; b < sched.batch_size; ++b) {
            batch.push_back(sample_training_pair(sources, net.config(), config.sampler, rng));
        }
        const double lr = sched.learning_rate_at(epoch);
        StepRecord rec;
        try {
            rec = train_step(net, optimizer, batch, config.loss, lr, sched.grad_clip);
        } catch (const std::exception& e) {
            // NaN weights make the loss ops throw before a loss value exists.
            if (parameters_finite(net.params())) throw;
            throw std::runtime_error("training diverged at step " + std::to_string(step) +
                                     ": non-finite parameters (" + e.what() + ")");
        }
        rec.step = step;
        rec.epoch = epoch;
        if (!std::isfinite(rec.loss)) {
            char msg[256];
            std::snprintf(msg, sizeof msg, "training diverged at step %ld: loss=%g cls=%g bbreg=%g lr=%g", step,
                          rec.loss, rec.cls, rec.bbreg, lr);
            throw std::runtime_error(msg);
        }
        if (trace) *trace << trace_line(rec) << '\n';
        if (step == 0) summary.first_loss = rec.loss;
        summary.last_loss = rec.loss;
        summary.steps = step + 1;
        if (config.time_budget_seconds > 0.0) {
            const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            if (elapsed > config.time_budget_seconds) {
                summary.stopped_by_budget = true;
                break;
            }
        }
    }
    if (trace) trace->flush();
    return summary;
}

}  // namespace tamos
