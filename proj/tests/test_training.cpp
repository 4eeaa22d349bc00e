#include "support/gradcheck.hpp"
#include "support/oracles.hpp"
#include "tamos/training.hpp"

#include <gtest/gtest.h>
#include <json.hpp>

#include <cmath>
#include <sstream>

using namespace tamos;

namespace {

NetworkConfig small_config() {
    NetworkConfig c;
    c.image_height = 64;
    c.image_width = 96;
    c.backbone_widths = {8, 8, 16, 16};
    c.channels = 16;
    c.heads = 2;
    c.ffn_width = 32;
    c.pool_size = 4;
    c.regression_width = 8;
    c.sigma_cells = 1.0;
    return c;
}

std::vector<TrainingSource> small_sources(int sequences = 2) {
    TrainingSource src;
    for (int i = 0; i < sequences; ++i) {
        SynthConfig sc;
        sc.image_height = 64;
        sc.image_width = 96;
        sc.frames = 6;
        sc.object_count = 2;
        sc.min_size = 12;
        sc.max_size = 24;
        sc.seed = 40 + static_cast<std::uint64_t>(i);
        src.sequences.push_back(generate_sequence(sc).sequence);
    }
    return {src};
}

ScoreMap constant_map(const GridSpec& g, double v, int channels = 1) {
    return {g, Matrix::Constant(g.cells(), channels, v)};
}

// Quality focal term for one cell, written out directly.
double qfl(double p, double y) {
    double bce = 0.0;
    if (y > 0) bce -= y * std::log(p);
    if (y < 1) bce -= (1 - y) * std::log(1 - p);
    return bce * std::pow(std::abs(p - y), 2.0);
}

}  // namespace

// ---- focal loss ---------------------------------------------------------------

TEST(FocalLoss, ZeroWhenBothZero) {
    const GridSpec g = GridSpec::for_image(32, 32, 16);
    EXPECT_EQ(focal_loss(constant_map(g, 0.0), constant_map(g, 0.0)), 0.0);
    EXPECT_EQ(focal_loss(constant_map(g, 1.0), constant_map(g, 1.0)), 0.0);
}

TEST(FocalLoss, HalfAgainstZeroClosedForm) {
    const GridSpec g = GridSpec::for_image(32, 32, 16);  // 2 x 2
    ASSERT_EQ(g.cells(), 4);
    double expected = 0.0;
    for (int i = 0; i < 4; ++i) expected += -std::log(1 - 0.5) * 0.25;
    expected /= 4;
    EXPECT_NEAR(focal_loss(constant_map(g, 0.5), constant_map(g, 0.0)), expected, 1e-15);
}

TEST(FocalLoss, SoftTargetsMatchCellwise) {
    const GridSpec g = GridSpec::for_image(32, 48, 16);
    ScoreMap p{g, Matrix(g.cells(), 2)}, y{g, Matrix(g.cells(), 2)};
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0.01, 0.99);
    for (Eigen::Index i = 0; i < p.values.size(); ++i) {
        p.values.data()[i] = u(rng);
        y.values.data()[i] = u(rng);
    }
    double expected = 0.0;
    for (int c = 0; c < 2; ++c) {
        double s = 0.0;
        for (int r = 0; r < g.cells(); ++r) s += qfl(p.values(r, c), y.values(r, c));
        expected += s / g.cells();
    }
    EXPECT_NEAR(focal_loss(p, y), expected, 1e-13);
}

TEST(FocalLoss, DecreasesTowardsTarget) {
    const GridSpec g = GridSpec::for_image(64, 96, 16);
    const ScoreMap target = gaussian_map(Box{30, 20, 20, 20}, g, 1.0);
    const ScoreMap start = constant_map(g, 0.7);
    double prev = std::numeric_limits<double>::infinity();
    for (int k = 0; k <= 20; ++k) {
        const double a = k / 20.0;
        const ScoreMap p{g, (1 - a) * start.values + a * target.values};
        const double l = focal_loss(p, target);
        EXPECT_LE(l, prev + 1e-15);
        prev = l;
    }
    EXPECT_NEAR(prev, 0.0, 1e-15);
}

TEST(FocalLoss, NanThrows) {
    const GridSpec g = GridSpec::for_image(32, 32, 16);
    ScoreMap p = constant_map(g, 0.5);
    p.values(1, 0) = std::nan("");
    EXPECT_THROW(focal_loss(p, constant_map(g, 0.0)), std::invalid_argument);
    EXPECT_THROW(focal_loss(constant_map(g, 0.5), constant_map(g, 0.0, 2)), std::invalid_argument);
}

TEST(FocalLoss, LogitFormMatchesProbabilityForm) {
    const Matrix logits = gradcheck::random(12, 3, 4, 2.0);
    Matrix y(12, 3);
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0, 1);
    for (Eigen::Index i = 0; i < y.size(); ++i) y.data()[i] = u(rng);
    const GridSpec g = GridSpec::for_image(48, 64, 16);
    const Matrix p = logits.unaryExpr([](double v) { return 1 / (1 + std::exp(-v)); });
    EXPECT_NEAR(focal_loss_logits(ad::Var::constant(logits), y).scalar(), focal_loss({g, p}, {g, y}), 1e-12);
}

TEST(FocalLoss, LogitGradient) {
    Matrix y = Matrix::Zero(10, 2);
    y(3, 0) = 1.0;
    y(4, 0) = 0.4;
    y(7, 1) = 0.9;
    const double err = gradcheck::max_error([&](std::vector<ad::Var>& x) { return focal_loss_logits(x[0], y); },
                                            {gradcheck::random(10, 2, 5, 2.0)});
    EXPECT_LT(err, 1e-6);
}

TEST(FocalLoss, StableForHugeLogits) {
    Matrix logits(1, 2);
    logits << 500.0, -500.0;
    Matrix y(1, 2);
    y << 0.0, 1.0;
    const double v = focal_loss_logits(ad::Var::constant(logits), y).scalar();
    EXPECT_TRUE(std::isfinite(v));
    EXPECT_NEAR(v, 1000.0, 1e-9);
}

// ---- classification loss ------------------------------------------------------

TEST(ClassificationLoss, FullPoolHasNoCouplingTerm) {
    const GridSpec g = GridSpec::for_image(64, 96, 16);
    const Matrix logits = gradcheck::random(g.cells(), 2, 6);
    const std::vector<ObjectTarget> t{{0, Box{10, 10, 20, 20}}, {1, Box{50, 30, 20, 20}}};
    LossWeights with, without;
    without.coupling_term = false;
    EXPECT_NEAR(classification_loss(ad::Var::constant(logits), t, g, 2, 1.0, with).scalar(),
                classification_loss(ad::Var::constant(logits), t, g, 2, 1.0, without).scalar(), 1e-14);
}

TEST(ClassificationLoss, NoTargetsIsAllAgainstZero) {
    const GridSpec g = GridSpec::for_image(64, 96, 16);
    const Matrix logits = gradcheck::random(g.cells(), 3, 7);
    double expected = 0.0;
    for (int c = 0; c < 3; ++c) {
        double s = 0.0;
        for (int r = 0; r < g.cells(); ++r) s += qfl(1 / (1 + std::exp(-logits(r, c))), 0.0);
        expected += s / g.cells();
    }
    EXPECT_NEAR(classification_loss(ad::Var::constant(logits), {}, g, 3, 1.0, LossWeights{}).scalar(), expected, 1e-12);
}

TEST(ClassificationLoss, ComposesFromFocalLosses) {
    const GridSpec g = GridSpec::for_image(32, 32, 16);  // 2 x 2
    ScoreMap preds{g, Matrix(4, 2)};
    preds.values << 0.9, 0.1, 0.2, 0.3, 0.05, 0.6, 0.4, 0.02;
    const Box box{0, 0, 16, 16};  // centred on cell 0
    const std::vector<ObjectTarget> t{{0, box}};
    const double expected = focal_loss({g, preds.values.col(0)}, gaussian_map(box, g, 1.0)) +
                            focal_loss({g, preds.values.col(1)}, {g, Matrix::Zero(4, 1)});
    EXPECT_NEAR(classification_loss(preds, t, 1.0, LossWeights{}), expected, 1e-15);
}

TEST(ClassificationLoss, ChannelCountChecked) {
    const GridSpec g = GridSpec::for_image(32, 32, 16);
    EXPECT_THROW(classification_loss(ad::Var::constant(Matrix::Zero(4, 3)), {}, g, 4, 1.0, LossWeights{}),
                 std::invalid_argument);
    const std::vector<ObjectTarget> bad{{5, Box{0, 0, 4, 4}}};
    EXPECT_THROW(classification_loss(ad::Var::constant(Matrix::Zero(4, 4)), bad, g, 4, 1.0, LossWeights{}),
                 std::invalid_argument);
}

TEST(ClassificationLoss, UnusedChannelGradientNonNegative) {
    const GridSpec g = GridSpec::for_image(64, 96, 16);
    ad::Var logits = ad::Var::parameter(gradcheck::random(g.cells(), 4, 8, 3.0));
    const std::vector<ObjectTarget> t{{1, Box{30, 20, 20, 20}}};
    ad::backward(classification_loss(logits, t, g, 4, 1.0, LossWeights{}));
    for (int c : {0, 2, 3}) EXPECT_GE(logits.grad().col(c).minCoeff(), 0.0);

    LossWeights ablated;
    ablated.coupling_term = false;
    ad::Var logits2 = ad::Var::parameter(logits.value());
    ad::backward(classification_loss(logits2, t, g, 4, 1.0, ablated));
    for (int c : {0, 2, 3}) EXPECT_TRUE(logits2.grad().size() == 0 || logits2.grad().col(c).isZero(0.0));
}

// ---- regression loss ----------------------------------------------------------

TEST(RegressionLoss, ExactPredictionsGiveZero) {
    const GridSpec g = GridSpec::for_image(64, 96, 16);
    const Box box{20, 14, 40, 30};
    Matrix ltrb = Matrix::Constant(g.cells(), 8, 0.1);
    ltrb.middleCols(4, 4) = ltrb_map(box, g).values;
    // Cells outside the box cannot express it through clamped distances,
    // so supervise with a tight Gaussian that stays inside.
    LossWeights w;
    w.supervision_threshold = 0.5;
    const std::vector<ObjectTarget> t{{1, box}};
    EXPECT_NEAR(regression_loss(ad::Var::constant(ltrb), t, g, 0.5, w).scalar(), 0.0, 1e-12);
}

TEST(RegressionLoss, UnusedAndAbsentIgnored) {
    const GridSpec g = GridSpec::for_image(64, 96, 16);
    Matrix ltrb = gradcheck::random(g.cells(), 12, 9).cwiseAbs() * 0.1;
    const std::vector<ObjectTarget> t{{0, Box{10, 10, 30, 30}}, {2, std::nullopt}};
    const double base = regression_loss(ad::Var::constant(ltrb), t, g, 1.0, LossWeights{}).scalar();
    Matrix changed = ltrb;
    changed.middleCols(4, 8).array() += 0.05;  // channels 1 (unused) and 2 (absent)
    EXPECT_EQ(regression_loss(ad::Var::constant(changed), t, g, 1.0, LossWeights{}).scalar(), base);
    EXPECT_EQ(regression_loss(ad::Var::constant(ltrb), std::vector<ObjectTarget>{{2, std::nullopt}}, g, 1.0,
                              LossWeights{}).scalar(),
              0.0);
}

TEST(RegressionLoss, SingleCellIsOneMinusGiou) {
    const GridSpec g = GridSpec::for_image(64, 96, 16);
    const Box gt{32, 16, 16, 16};  // centred on cell (1, 2)
    Matrix ltrb = Matrix::Zero(g.cells(), 4);
    const int cell = 1 * g.width_cells + 2;
    ltrb.row(cell) << 0.05, 0.02, 0.07, 0.04;
    LossWeights w;
    w.supervision_threshold = 0.99;  // only the peak cell
    const Box pred = box_from_ltrb(g.cell_center_x(2), g.cell_center_y(1), 0.05, 0.02, 0.07, 0.04, g.diagonal());
    EXPECT_NEAR(regression_loss(ad::Var::constant(ltrb), std::vector<ObjectTarget>{{0, gt}}, g, 1.0, w).scalar(),
                1.0 - giou(pred, gt), 1e-12);
}

TEST(RegressionLoss, GiouGradientMatchesFiniteDifferences) {
    const GridSpec g = GridSpec::for_image(64, 96, 16);
    const std::vector<int> cells{5, 6, 11, 12, 13};
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        std::mt19937_64 rng(seed);
        const Box gt = oracle::random_box(rng, 60, 8, 40);
        const Matrix ltrb = (gradcheck::random(g.cells(), 4, seed).cwiseAbs().array() * 0.1 + 0.02).matrix();
        const double err = gradcheck::max_error(
            [&](std::vector<ad::Var>& x) { return giou_loss_ltrb(x[0], 0, g, gt, cells); }, {ltrb}, 1e-7);
        EXPECT_LT(err, 1e-5) << "seed " << seed;
    }
}

// ---- total loss ---------------------------------------------------------------

TEST(TotalLoss, WeightedSum) {
    const LossWeights w;
    EXPECT_EQ(weighted_total(0.0, 0.0, w), 0.0);
    EXPECT_NEAR(weighted_total(0.01, 0.5, w), 1.5, 1e-12);
    LossWeights bad;
    bad.lambda_cls = 0;
    EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(TotalLoss, GradientIsWeightedSumOfComponents) {
    const Network net(small_config());
    std::mt19937_64 rng(3);
    PairSamplerConfig pc;
    pc.augment.enabled = false;
    const auto sources = small_sources(1);
    const TrainingPair pair = sample_training_pair(sources, net.config(), pc, rng);

    const auto grads = [&](const LossWeights& w) {
        Network copy = net.clone();
        copy.params().zero_grad();
        ad::backward(pair_loss(copy, pair, w).total);
        std::vector<Matrix> out;
        for (const auto& e : copy.params().entries()) out.push_back(e.var.grad());
        return out;
    };
    LossWeights both, cls_only, reg_only;
    cls_only.lambda_bbreg = 1e-300;
    reg_only.lambda_cls = 1e-300;
    const auto g = grads(both), gc = grads(cls_only), gr = grads(reg_only);
    for (std::size_t i = 0; i < g.size(); ++i) {
        const Matrix combined = gc[i] + gr[i];
        const double scale = std::max(1.0, combined.cwiseAbs().maxCoeff());
        EXPECT_LT((g[i] - combined).cwiseAbs().maxCoeff() / scale, 1e-9) << net.params().entries()[i].name;
    }
}

TEST(TotalLoss, EveryParameterGetsGradient) {
    const Network net_const(small_config());
    Network net = net_const.clone();
    std::mt19937_64 rng(4);
    PairSamplerConfig pc;
    pc.augment.enabled = false;
    pc.dynamic_frame_probability = 0.0;
    const auto sources = small_sources(1);
    const TrainingPair pair = sample_training_pair(sources, net.config(), pc, rng);
    net.params().zero_grad();
    ad::backward(pair_loss(net, pair, LossWeights{}).total);
    for (const auto& e : net.params().entries()) {
        // Key biases cancel in the softmax: their gradient is zero up to rounding.
        if (e.name.find(".k.bias") != std::string::npos) continue;
        EXPECT_GT(e.var.grad().norm(), 0.0) << e.name;
    }
}

// ---- augmentation and sampling ------------------------------------------------

TEST(Augment, DisabledIsIdentity) {
    const Image img(64, 96);
    const std::vector<MaybeBox> boxes{Box{3, 4, 10, 12}, std::nullopt};
    std::mt19937_64 rng(1);
    AugmentConfig cfg;
    cfg.enabled = false;
    const AugmentedFrame out = augment_frame(img, boxes, cfg, rng);
    EXPECT_EQ(out.boxes, boxes);
    EXPECT_TRUE(out.image == img);
}

TEST(Augment, FlipOnlyReflectsBoxes) {
    const Image img(64, 96);
    const std::vector<MaybeBox> boxes{Box{3, 4, 10, 12}, Box{50, 20, 30, 8}};
    std::mt19937_64 rng(1);
    AugmentConfig cfg;
    cfg.scale_range = 0;
    cfg.shift_range = 0;
    cfg.color_jitter = 0;
    cfg.flip_probability = 1.0;
    const AugmentedFrame out = augment_frame(img, boxes, cfg, rng);
    for (std::size_t i = 0; i < boxes.size(); ++i) {
        EXPECT_NEAR(out.boxes[i]->x, 96 - boxes[i]->x - boxes[i]->w, 1e-12);
        EXPECT_NEAR(out.boxes[i]->y, boxes[i]->y, 1e-12);
        EXPECT_NEAR(out.boxes[i]->w, boxes[i]->w, 1e-12);
    }
}

TEST(Augment, ComposedTransformMatchesDirectAffine) {
    Image img(64, 96);
    for (Eigen::Index i = 0; i < img.pixels.rows(); ++i) img.pixels.row(i).setConstant(0.5);
    const std::vector<MaybeBox> boxes{Box{30, 20, 16, 12}};
    AugmentConfig cfg;
    cfg.flip_probability = 0.5;
    for (std::uint64_t seed = 1; seed < 20; ++seed) {
        std::mt19937_64 rng(seed);
        const AugmentedFrame out = augment_frame(img, boxes, cfg, rng);
        // Direct application: x' = sx * x + ox on both corners.
        const BoxTransform& t = out.transform;
        const double x1 = t.scale_x * boxes[0]->x + t.offset_x, x2 = t.scale_x * boxes[0]->right() + t.offset_x;
        const double y1 = t.scale_y * boxes[0]->y + t.offset_y;
        ASSERT_TRUE(out.boxes[0]);
        EXPECT_NEAR(out.boxes[0]->x, std::min(x1, x2), 1e-9);
        EXPECT_NEAR(out.boxes[0]->w, std::abs(x2 - x1), 1e-9);
        EXPECT_NEAR(out.boxes[0]->y, y1, 1e-9);
        EXPECT_NEAR(std::abs(t.scale_x), t.scale_y, 1e-12);
        EXPECT_GE(t.scale_y, 0.9 - 1e-12);
        EXPECT_LE(t.scale_y, 1.1 + 1e-12);
    }
}

TEST(Augment, ImageContentFollowsBoxes) {
    // A bright square on black stays under its transformed box.
    Image img(64, 96);
    const Box box{40, 20, 16, 16};
    for (int y = 20; y < 36; ++y)
        for (int x = 40; x < 56; ++x) img.pixels.row(img.index(y, x)).setConstant(1.0);
    AugmentConfig cfg;
    cfg.color_jitter = 0;
    for (std::uint64_t seed = 1; seed < 10; ++seed) {
        std::mt19937_64 rng(seed);
        const AugmentedFrame out = augment_frame(img, std::vector<MaybeBox>{box}, cfg, rng);
        const Box& b = *out.boxes[0];
        const int cx = static_cast<int>(b.center_x()), cy = static_cast<int>(b.center_y());
        EXPECT_GT(out.image.pixels(out.image.index(cy, cx), 0), 0.9) << "seed " << seed;
    }
}

TEST(Sampler, PairInvariants) {
    const NetworkConfig cfg = small_config();
    const auto sources = small_sources(2);
    std::mt19937_64 rng(9);
    PairSamplerConfig pc;
    for (int i = 0; i < 20; ++i) {
        const TrainingPair p = sample_training_pair(sources, cfg, pc, rng);
        EXPECT_GE(p.n, 1);
        EXPECT_EQ(static_cast<int>(p.used_indices.size()), p.n);
        EXPECT_EQ(static_cast<int>(p.test_targets.size()), p.n);
        EXPECT_FALSE(p.train_annotations.front().entries.empty());
        EXPECT_LE(p.train_images.size(), 2u);
        EXPECT_EQ(p.test_image.height, 64);
        EXPECT_EQ(p.test_image.width, 96);
        std::vector<int> idx = p.used_indices;
        std::sort(idx.begin(), idx.end());
        EXPECT_EQ(std::adjacent_find(idx.begin(), idx.end()), idx.end());
        for (std::size_t k = 0; k < p.test_targets.size(); ++k) EXPECT_EQ(p.test_targets[k].channel, p.used_indices[k]);
    }
}

TEST(Sampler, EmptySourcesRejected) {
    std::mt19937_64 rng(1);
    EXPECT_THROW(sample_training_pair({}, small_config(), {}, rng), std::invalid_argument);
    const std::vector<TrainingSource> empty{TrainingSource{}};
    EXPECT_THROW(sample_training_pair(empty, small_config(), {}, rng), std::invalid_argument);
}

// ---- optimisation -------------------------------------------------------------

TEST(Optimizer, ClipScalesToLimit) {
    ParameterStore store;
    ad::Var a = store.add("a.w", Matrix::Zero(1, 2));
    ad::Var b = store.add("b.w", Matrix::Zero(1, 1));
    a.mutable_grad() << 6.0, 0.0;
    b.mutable_grad() << 8.0;
    EXPECT_DOUBLE_EQ(clip_grad_norm(store, 0.1), 10.0);
    EXPECT_NEAR(store.grad_norm(), 0.1, 1e-15);
    EXPECT_NEAR(a.grad()(0, 0), 0.06, 1e-15);
    // Below the limit nothing changes.
    EXPECT_NEAR(clip_grad_norm(store, 1.0), 0.1, 1e-15);
    EXPECT_NEAR(store.grad_norm(), 0.1, 1e-15);
}

TEST(Optimizer, LearningRateSchedule) {
    OptimizerSchedule s;
    EXPECT_DOUBLE_EQ(s.learning_rate_at(0), 1e-4);
    EXPECT_DOUBLE_EQ(s.learning_rate_at(149), 1e-4);
    EXPECT_NEAR(s.learning_rate_at(150), 2e-5, 1e-18);
    EXPECT_NEAR(s.learning_rate_at(249), 2e-5, 1e-18);
    EXPECT_NEAR(s.learning_rate_at(250), 4e-6, 1e-18);
    EXPECT_NEAR(s.learning_rate_at(299), 4e-6, 1e-18);
    s.epochs = 12;  // 50% and ~83%
    EXPECT_DOUBLE_EQ(s.learning_rate_at(5), 1e-4);
    EXPECT_NEAR(s.learning_rate_at(6), 2e-5, 1e-18);
    EXPECT_NEAR(s.learning_rate_at(10), 4e-6, 1e-18);
}

TEST(Optimizer, ScheduleValidation) {
    OptimizerSchedule s;
    s.grad_clip = 0;
    EXPECT_THROW(s.validate(), std::invalid_argument);
    s = {};
    s.learning_rate = -1;
    EXPECT_THROW(s.validate(), std::invalid_argument);
}

TEST(Optimizer, AdamFirstStepMovesByLearningRate) {
    ParameterStore store;
    ad::Var w = store.add("x.w", Matrix::Constant(1, 3, 1.0));
    w.mutable_grad() << 0.5, -2.0, 0.0;
    OptimizerSchedule s;
    s.weight_decay = 0;
    AdamW opt(store, s);
    opt.step(store, 0.01);
    EXPECT_NEAR(w.value()(0, 0), 0.99, 1e-6);
    EXPECT_NEAR(w.value()(0, 1), 1.01, 1e-6);
    EXPECT_DOUBLE_EQ(w.value()(0, 2), 1.0);
}

TEST(Training, TraceLineFields) {
    StepRecord r;
    r.step = 7;
    r.epoch = 1;
    r.loss = 2.5;
    r.cls = 0.02;
    r.bbreg = 0.5;
    r.learning_rate = 1e-4;
    r.grad_norm = 3.0;
    const auto j = nlohmann::json::parse(trace_line(r));
    EXPECT_EQ(j.at("step"), 7);
    EXPECT_EQ(j.at("epoch"), 1);
    EXPECT_DOUBLE_EQ(j.at("loss").get<double>(), 2.5);
    EXPECT_DOUBLE_EQ(j.at("cls").get<double>(), 0.02);
    EXPECT_DOUBLE_EQ(j.at("bbreg").get<double>(), 0.5);
    EXPECT_DOUBLE_EQ(j.at("lr").get<double>(), 1e-4);
    EXPECT_DOUBLE_EQ(j.at("grad_norm").get<double>(), 3.0);
    EXPECT_EQ(trace_line(r).find('\n'), std::string::npos);
}

TEST(Training, DeterministicGivenSeed) {
    const auto sources = small_sources(1);
    TrainConfig tc;
    tc.schedule.epochs = 1;
    tc.schedule.steps_per_epoch = 3;
    tc.seed = 5;
    Network a(small_config()), b(small_config());
    std::ostringstream ta, tb;
    train(a, sources, tc, &ta);
    train(b, sources, tc, &tb);
    EXPECT_EQ(ta.str(), tb.str());
    for (std::size_t i = 0; i < a.params().entries().size(); ++i) {
        EXPECT_TRUE(a.params().entries()[i].var.value() == b.params().entries()[i].var.value());
    }
    int lines = 0;
    std::istringstream in(ta.str());
    for (std::string line; std::getline(in, line);) {
        const auto j = nlohmann::json::parse(line);
        EXPECT_EQ(j.at("step"), lines);
        EXPECT_GE(j.at("grad_norm").get<double>(), 0.0);
        ++lines;
    }
    EXPECT_EQ(lines, 3);
}

TEST(Training, ParametersChange) {
    const auto sources = small_sources(1);
    TrainConfig tc;
    tc.schedule.epochs = 1;
    tc.schedule.steps_per_epoch = 2;
    Network net(small_config());
    const ParameterStore before = net.params().clone();
    train(net, sources, tc);
    for (std::size_t i = 0; i < before.entries().size(); ++i) {
        const auto& name = before.entries()[i].name;
        if (name.find(".k.bias") != std::string::npos) continue;
        EXPECT_FALSE(before.entries()[i].var.value() == net.params().entries()[i].var.value()) << name;
    }
}

TEST(Training, DivergenceReported) {
    const auto sources = small_sources(1);
    TrainConfig tc;
    tc.schedule.epochs = 1;
    tc.schedule.steps_per_epoch = 2;
    Network net(small_config());
    ad::Var w = net.params().get("heads.cls_filter.weight");
    w.mutable_value()(0, 0) = std::nan("");
    try {
        train(net, sources, tc);
        FAIL() << "expected divergence";
    } catch (const std::runtime_error& e) {
        EXPECT_NE(std::string(e.what()).find("diverged at step 0"), std::string::npos) << e.what();
    }
}

TEST(Training, LossFallsOnOnePair) {
    // A fixed pair must be easy to fit.
    Network net(small_config());
    const auto sources = small_sources(1);
    std::mt19937_64 rng(8);
    PairSamplerConfig pc;
    pc.augment.enabled = false;
    const std::vector<TrainingPair> batch{sample_training_pair(sources, net.config(), pc, rng)};
    OptimizerSchedule s;
    AdamW opt(net.params(), s);
    const double first = train_step(net, opt, batch, LossWeights{}, 3e-3, 0.1).loss;
    double last = first;
    for (int i = 0; i < 60; ++i) last = train_step(net, opt, batch, LossWeights{}, 3e-3, 0.1).loss;
    EXPECT_LT(last, first / 10);
}
