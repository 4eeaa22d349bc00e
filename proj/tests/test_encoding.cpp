#include "support/gradcheck.hpp"
#include "tamos/encoding.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace tamos;

namespace {

struct Fixture {
    ParameterStore store;
    Initializer init{3};
    GridSpec grid = GridSpec::for_image(128, 192, 16);
    int c = 16;
    ObjectEmbeddingPool pool;
    BoxEncoderParams phi;

    explicit Fixture(int m = 6) {
        pool = ObjectEmbeddingPool::create(store, m, c, init);
        phi = BoxEncoderParams::create(store, c, init);
    }

    FeatureMap features(std::uint64_t seed) const { return {ad::Var::constant(gradcheck::random(grid.cells(), c, seed)), grid}; }
    FeatureMap zeros() const { return {ad::Var::constant(Matrix::Zero(grid.cells(), c)), grid}; }
};

}  // namespace

TEST(Encoding, NoObjectsIsIdentity) {
    Fixture fx;
    const FeatureMap f = fx.features(1);
    const EncodedFeatures out = encode_targets(f, {{}, fx.grid}, fx.pool, fx.phi);
    EXPECT_TRUE(out.values.value() == f.values.value());
}

TEST(Encoding, PeakCellAddsEmbeddingWhenPhiIsZero) {
    Fixture fx;
    // Box centred on cell (2, 4).
    const Box b{4.5 * 16 - 8, 2.5 * 16 - 8, 16, 16};
    const FeatureMap f = fx.features(2);
    EncodingOptions opt;
    opt.ltrb_term = false;
    const EncodedFeatures out = encode_targets(f, {{{3, b}}, fx.grid}, fx.pool, fx.phi, opt);
    const Eigen::Index peak = 2 * fx.grid.width_cells + 4;
    const RowVector expected = f.values.value().row(peak) + fx.pool.embeddings.value().row(3);
    EXPECT_TRUE(out.values.value().row(peak) == expected);

    // Same with phi forced to zero through its output layer.
    ad::Var w2 = fx.phi.w2, b2 = fx.phi.b2;
    w2.mutable_value().setZero();
    b2.mutable_value().setZero();
    const EncodedFeatures full = encode_targets(f, {{{3, b}}, fx.grid}, fx.pool, fx.phi);
    EXPECT_TRUE(full.values.value().row(peak) == expected);
}

TEST(Encoding, TwoFarObjectsSumOfSingles) {
    Fixture fx;
    const FeatureMap f = fx.features(3);
    const TargetAnnotation a{0, Box{8, 8, 20, 20}}, b{4, Box{150, 90, 30, 25}};
    const Matrix both = encode_targets(f, {{a, b}, fx.grid}, fx.pool, fx.phi).values.value();
    const Matrix only_a = encode_targets(f, {{a}, fx.grid}, fx.pool, fx.phi).values.value();
    const Matrix only_b = encode_targets(f, {{b}, fx.grid}, fx.pool, fx.phi).values.value();
    EXPECT_LT((both - (only_a + only_b - f.values.value())).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Encoding, AdditivityOverDisjointIndexSets) {
    Fixture fx(10);
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> pos(0, 170), side(8, 60);
    for (int trial = 0; trial < 20; ++trial) {
        const auto idx = sample_embedding_indices(4, 10, rng);
        std::vector<TargetAnnotation> all, left, right;
        for (int i = 0; i < 4; ++i) {
            const TargetAnnotation t{idx[static_cast<std::size_t>(i)], Box{pos(rng), pos(rng) * 0.6, side(rng), side(rng)}};
            all.push_back(t);
            (i < 2 ? left : right).push_back(t);
        }
        const FeatureMap f = fx.features(100 + static_cast<std::uint64_t>(trial));
        const Matrix lhs = encode_targets(f, {all, fx.grid}, fx.pool, fx.phi).values.value();
        const Matrix rhs = encode_targets(f, {left, fx.grid}, fx.pool, fx.phi).values.value() +
                           encode_targets(fx.zeros(), {right, fx.grid}, fx.pool, fx.phi).values.value();
        EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-9);
    }
}

TEST(Encoding, Errors) {
    Fixture fx(4);
    const FeatureMap f = fx.features(4);
    EXPECT_THROW(encode_targets(f, {{{1, Box{0, 0, 5, 5}}, {1, Box{20, 20, 5, 5}}}, fx.grid}, fx.pool, fx.phi),
                 std::invalid_argument);
    EXPECT_THROW(encode_targets(f, {{{4, Box{0, 0, 5, 5}}}, fx.grid}, fx.pool, fx.phi), std::invalid_argument);
    EXPECT_THROW(encode_targets(f, {{{-1, Box{0, 0, 5, 5}}}, fx.grid}, fx.pool, fx.phi), std::invalid_argument);
    EXPECT_THROW(encode_targets(f, {{{0, Box{0, 0, 5, 5}}}, GridSpec::for_image(64, 64, 16)}, fx.pool, fx.phi),
                 std::invalid_argument);
}

TEST(Encoding, GradientOnlyWhereMapsAreNonZero) {
    // A narrow Gaussian underflows to exact zeros away from the target, so
    // with the LTRB term off the embedding only sees cells near the box.
    Fixture fx;
    EncodingOptions opt;
    opt.ltrb_term = false;
    opt.sigma_cells = 0.1;
    const Box box{20, 20, 24, 24};
    const TargetAnnotationSet ann{{{2, box}}, fx.grid};
    const ScoreMap y = gaussian_map(box, fx.grid, opt.sigma_cells);

    int active_cells = 0;
    for (int cell = 0; cell < fx.grid.cells(); ++cell) {
        fx.store.zero_grad();
        const EncodedFeatures out = encode_targets(fx.zeros(), ann, fx.pool, fx.phi, opt);
        ad::backward(ad::sum(ad::slice_rows(out.values, cell, 1)));
        const bool active = y.values(cell, 0) != 0.0;
        active_cells += active;
        const Matrix& g = fx.pool.embeddings.grad();
        EXPECT_EQ(!g.row(2).isZero(0.0), active) << "cell " << cell;
        for (int r : {0, 1, 3, 4, 5}) EXPECT_TRUE(g.row(r).isZero(0.0));
    }
    EXPECT_GT(active_cells, 0);
    EXPECT_LT(active_cells, fx.grid.cells());

    // Both terms on: finite differences on one embedding entry.
    const TargetAnnotationSet wide{{{2, box}}, fx.grid};
    const int cell = 2 * fx.grid.width_cells + 2;
    auto value = [&]() { return encode_targets(fx.zeros(), wide, fx.pool, fx.phi).values.value().row(cell).sum(); };
    fx.store.zero_grad();
    ad::backward(ad::sum(ad::slice_rows(encode_targets(fx.zeros(), wide, fx.pool, fx.phi).values, cell, 1)));
    ad::Var e = fx.pool.embeddings;
    const double analytic = e.grad()(2, 5);
    const double orig = e.value()(2, 5);
    e.mutable_value()(2, 5) = orig + 1e-6;
    const double up = value();
    e.mutable_value()(2, 5) = orig - 1e-6;
    const double down = value();
    e.mutable_value()(2, 5) = orig;
    EXPECT_NEAR(analytic, (up - down) / 2e-6, 1e-6);
}

TEST(SampleIndices, FullPoolIsPermutation) {
    auto idx = sample_embedding_indices(10, 10, std::uint64_t{5});
    std::sort(idx.begin(), idx.end());
    std::vector<int> expect(10);
    std::iota(expect.begin(), expect.end(), 0);
    EXPECT_EQ(idx, expect);
}

TEST(SampleIndices, Deterministic) {
    EXPECT_EQ(sample_embedding_indices(4, 10, std::uint64_t{9}), sample_embedding_indices(4, 10, std::uint64_t{9}));
}

TEST(SampleIndices, Distinct) {
    std::mt19937_64 rng(1);
    for (int i = 0; i < 200; ++i) {
        auto idx = sample_embedding_indices(5, 7, rng);
        std::sort(idx.begin(), idx.end());
        EXPECT_EQ(std::adjacent_find(idx.begin(), idx.end()), idx.end());
        EXPECT_GE(idx.front(), 0);
        EXPECT_LT(idx.back(), 7);
    }
}

TEST(SampleIndices, UniformSingleDraws) {
    std::mt19937_64 rng(2024);
    std::vector<int> count(10, 0);
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) ++count[static_cast<std::size_t>(sample_embedding_indices(1, 10, rng)[0])];
    const double p = 0.1, sd = std::sqrt(draws * p * (1 - p));
    for (int c : count) EXPECT_LT(std::abs(c - draws * p), 5 * sd);
}

TEST(SampleIndices, PoolExhausted) {
    EXPECT_THROW(sample_embedding_indices(11, 10, std::uint64_t{1}), std::invalid_argument);
}

TEST(EmbeddingPool, Shape) {
    ParameterStore store;
    Initializer init(1);
    const auto pool = ObjectEmbeddingPool::create(store, 10, 32, init);
    EXPECT_EQ(pool.size(), 10);
    EXPECT_EQ(pool.channels(), 32);
    EXPECT_TRUE(store.contains("pool.embeddings"));
    EXPECT_THROW(ObjectEmbeddingPool::create(store, 0, 32, init), std::invalid_argument);
}
