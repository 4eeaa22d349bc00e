#pragma once

#include "tamos/autodiff.hpp"
#include "tamos/geometry.hpp"
#include "tamos/params.hpp"

#include <cstdint>
#include <random>
#include <vector>

namespace tamos {

/// Spatial feature map: one row per cell (row-major), one column per channel.
struct FeatureMap {
    ad::Var values;
    GridSpec grid;

    [[nodiscard]] int channels() const { return static_cast<int>(values.cols()); }
};

using EncodedFeatures = FeatureMap;

/// The learned pool E of m object embeddings (m x c).
struct ObjectEmbeddingPool {
    ad::Var embeddings;

    [[nodiscard]] int size() const { return static_cast<int>(embeddings.rows()); }
    [[nodiscard]] int channels() const { return static_cast<int>(embeddings.cols()); }

    static ObjectEmbeddingPool create(ParameterStore& store, int pool_size, int channels, Initializer& init);
};

/// Two-layer per-cell MLP lifting the 4-channel LTRB map to c channels.
struct BoxEncoderParams {
    ad::Var w1, b1, w2, b2;

    static BoxEncoderParams create(ParameterStore& store, int channels, Initializer& init);
    [[nodiscard]] ad::Var apply(const ad::Var& ltrb) const;
};

struct TargetAnnotation {
    int embedding_index = 0;
    Box box;

    bool operator==(const TargetAnnotation&) const = default;
};

struct TargetAnnotationSet {
    std::vector<TargetAnnotation> entries;
    GridSpec grid;
};

struct EncodingOptions {
    double sigma_cells = 1.5;
    bool gaussian_term = true;
    bool ltrb_term = true;
};

/// f_train + sum_i e_i * y_i + sum_i e_i (.) phi(ltrb_i).
/// Throws std::invalid_argument on duplicate or out-of-range indices and
/// on grid mismatch.
EncodedFeatures encode_targets(const FeatureMap& f_train, const TargetAnnotationSet& annotations,
                               const ObjectEmbeddingPool& pool, const BoxEncoderParams& phi,
                               const EncodingOptions& options = {});

/// n distinct indices in [0, m), uniform over arrangements.
/// Throws std::invalid_argument when n > m (pool exhausted).
std::vector<int> sample_embedding_indices(int n, int m, std::mt19937_64& rng);
std::vector<int> sample_embedding_indices(int n, int m, std::uint64_t seed);

}  // namespace tamos
