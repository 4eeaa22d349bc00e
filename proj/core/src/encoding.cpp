#include "tamos/encoding.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace tamos {

ObjectEmbeddingPool ObjectEmbeddingPool::create(ParameterStore& store, int pool_size, int channels,
                                                Initializer& init) {
    if (pool_size <= 0 || channels <= 0) throw std::invalid_argument("embedding pool must be non-empty");
    // Unit variance per entry, like the backbone features it is added to.
    // With 1/sqrt(c) the identity signal drowns and all queries collapse
    // onto one object.
    return {store.add("pool.embeddings", init.normal(pool_size, channels, 1.0))};
}

BoxEncoderParams BoxEncoderParams::create(ParameterStore& store, int channels, Initializer& init) {
    BoxEncoderParams p;
    p.w1 = store.add("phi.fc1.weight", init.fan_in(4, channels, 4));
    p.b1 = store.add("phi.fc1.bias", Initializer::zeros(1, channels));
    p.w2 = store.add("phi.fc2.weight", init.fan_in(channels, channels, channels));
    p.b2 = store.add("phi.fc2.bias", Initializer::zeros(1, channels));
    return p;
}

ad::Var BoxEncoderParams::apply(const ad::Var& ltrb) const {
    ad::Var hidden = ad::silu(ad::add_row(ad::matmul(ltrb, w1), b1));
    return ad::add_row(ad::matmul(hidden, w2), b2);
}

EncodedFeatures encode_targets(const FeatureMap& f_train, const TargetAnnotationSet& annotations,
                               const ObjectEmbeddingPool& pool, const BoxEncoderParams& phi,
                               const EncodingOptions& options) {
    if (!(f_train.grid == annotations.grid)) throw std::invalid_argument("encode_targets: grid mismatch");
    if (f_train.channels() != pool.channels()) throw std::invalid_argument("encode_targets: channel mismatch");
    if (f_train.values.rows() != f_train.grid.cells()) throw std::invalid_argument("encode_targets: bad feature map");

    const int m = pool.size();
    std::vector<bool> used(static_cast<std::size_t>(m), false);
    std::vector<int> indices;
    for (const auto& a : annotations.entries) {
        if (a.embedding_index < 0 || a.embedding_index >= m) {
            throw std::invalid_argument("encode_targets: embedding index " + std::to_string(a.embedding_index) +
                                        " outside pool of size " + std::to_string(m));
        }
        if (used[static_cast<std::size_t>(a.embedding_index)]) {
            throw std::invalid_argument("encode_targets: duplicate embedding index " +
                                        std::to_string(a.embedding_index));
        }
        if (!a.box.valid()) throw std::invalid_argument("encode_targets: annotation box must be present");
        used[static_cast<std::size_t>(a.embedding_index)] = true;
        indices.push_back(a.embedding_index);
    }
    if (indices.empty()) return f_train;

    const GridSpec& grid = annotations.grid;
    const ad::Var selected = ad::take_rows(pool.embeddings, indices);
    std::vector<ad::Var> terms{f_train.values};

    if (options.gaussian_term) {
        Matrix gauss(grid.cells(), static_cast<Eigen::Index>(indices.size()));
        for (std::size_t i = 0; i < annotations.entries.size(); ++i) {
            gauss.col(static_cast<Eigen::Index>(i)) =
                gaussian_map(annotations.entries[i].box, grid, options.sigma_cells).values.col(0);
        }
        // sum_i y_i e_i as one (cells x n) * (n x c) product.
        terms.push_back(ad::matmul(ad::Var::constant(std::move(gauss)), selected));
    }
    if (options.ltrb_term) {
        for (std::size_t i = 0; i < annotations.entries.size(); ++i) {
            const ad::Var ltrb = ad::Var::constant(ltrb_map(annotations.entries[i].box, grid).values);
            const ad::Var e_i = ad::slice_rows(selected, static_cast<Eigen::Index>(i), 1);
            terms.push_back(ad::mul_row(phi.apply(ltrb), e_i));
        }
    }
    ad::Var acc = terms.front();
    for (std::size_t i = 1; i < terms.size(); ++i) acc = ad::add(acc, terms[i]);
    return {acc, f_train.grid};
}

std::vector<int> sample_embedding_indices(int n, int m, std::mt19937_64& rng) {
    if (n < 0) throw std::invalid_argument("sample_embedding_indices: negative count");
    if (n > m) {
        throw std::invalid_argument("embedding pool exhausted: " + std::to_string(n) + " objects for a pool of " +
                                    std::to_string(m));
    }
    // Partial Fisher-Yates: the first n slots are a uniform n-arrangement.
    std::vector<int> perm(static_cast<std::size_t>(m));
    std::iota(perm.begin(), perm.end(), 0);
    for (int i = 0; i < n; ++i) {
        std::uniform_int_distribution<int> pick(i, m - 1);
        std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(pick(rng))]);
    }
    perm.resize(static_cast<std::size_t>(n));
    return perm;
}

std::vector<int> sample_embedding_indices(int n, int m, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return sample_embedding_indices(n, m, rng);
}

}  // namespace tamos
