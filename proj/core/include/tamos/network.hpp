#pragma once

#include "tamos/autodiff.hpp"
#include "tamos/encoding.hpp"
#include "tamos/geometry.hpp"
#include "tamos/image.hpp"
#include "tamos/params.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace tamos {

struct NetworkConfig {
    int image_height = 128;
    int image_width = 192;
    /// Four stride-2 stages; the third ends at stride 8, the fourth at 16.
    std::vector<int> backbone_widths{16, 32, 64, 64};
    int channels = 64;
    int heads = 4;
    int encoder_layers = 1;
    int decoder_layers = 1;
    int ffn_width = 128;
    int pool_size = 10;
    int regression_width = 32;
    bool use_fpn = true;
    /// Gaussian width in stride-16 cells. `sigma_reference` keeps the
    /// published 0.25 next to it: sigma_cells = 0.25 x 6 nominal target cells.
    double sigma_cells = 1.5;
    double sigma_reference = 0.25;
    bool gaussian_encoding = true;
    bool ltrb_encoding = true;
    std::uint64_t seed = 1;

    static NetworkConfig toy();
    /// 384 x 576 input, 256 channels, 8 heads.
    static NetworkConfig full_scale();

    void validate() const;
    [[nodiscard]] GridSpec grid() const { return GridSpec::for_image(image_height, image_width, 16); }
    [[nodiscard]] GridSpec high_grid() const { return grid().doubled(); }
    [[nodiscard]] EncodingOptions encoding_options() const {
        return {sigma_cells, gaussian_encoding, ltrb_encoding};
    }
    bool operator==(const NetworkConfig&) const = default;
};

struct BackboneFeatures {
    FeatureMap high;  // stride 8, backbone_widths[2] channels
    FeatureMap low;   // stride 16, projected to `channels`
};

struct ModelPrediction {
    ad::Var thetas;  // n x c, aligned with the query rows
    std::vector<FeatureMap> h_train;
    FeatureMap h_test;
};

struct FpnOutputs {
    FeatureMap low;   // stride 16
    FeatureMap high;  // stride 8
};

/// Head responses on one feature level for n target models.
struct LevelOutputs {
    GridSpec grid;
    ad::Var logits;  // cells x n, pre-squash correlation response
    ad::Var ltrb;    // cells x 4n, nonnegative, object i in columns [4i, 4i+4)
};

struct HeadOutputs {
    LevelOutputs encoder;  // applied to h_test
    LevelOutputs low;      // FPN stride 16 (absent when the FPN is disabled)
    LevelOutputs high;     // FPN stride 8 (absent when the FPN is disabled)

    /// The level used at inference time.
    [[nodiscard]] const LevelOutputs& final_level() const { return high.logits.valid() ? high : encoder; }
};

class Network {
public:
    explicit Network(const NetworkConfig& config);
    // Layers hold handles into the parameter store, so a member-wise copy
    // would alias the original; use clone().
    Network(const Network&) = delete;
    Network& operator=(const Network&) = delete;
    Network(Network&&) = default;
    Network& operator=(Network&&) = default;

    [[nodiscard]] const NetworkConfig& config() const { return config_; }
    [[nodiscard]] ParameterStore& params() { return params_; }
    [[nodiscard]] const ParameterStore& params() const { return params_; }
    [[nodiscard]] const ObjectEmbeddingPool& pool() const { return pool_; }
    [[nodiscard]] const BoxEncoderParams& phi() const { return phi_; }

    /// Throws std::invalid_argument unless both dimensions are multiples of 16
    /// and match the configured input size.
    [[nodiscard]] BackboneFeatures extract_features(const Image& image) const;

    [[nodiscard]] EncodedFeatures encode(const FeatureMap& f_train, const TargetAnnotationSet& annotations) const;

    /// Rows of the embedding pool used as decoder queries.
    [[nodiscard]] ad::Var queries(std::span<const int> indices) const;

    /// Joint encoder over all train frames plus the test frame, then the
    /// decoder queried with every row of `queries` at once.
    [[nodiscard]] ModelPrediction predict_models(std::span<const EncodedFeatures> train, const FeatureMap& f_test,
                                                 const ad::Var& queries) const;

    [[nodiscard]] FpnOutputs fpn_fuse(const FeatureMap& h_test, const FeatureMap& f_high_test) const;

    [[nodiscard]] LevelOutputs apply_heads(const FeatureMap& features, const ad::Var& thetas) const;

    /// All supervised levels (encoder output, FPN low, FPN high).
    [[nodiscard]] HeadOutputs heads_all_levels(const ModelPrediction& prediction, const FeatureMap& f_high_test) const;
    /// Only the level used for tracking.
    [[nodiscard]] LevelOutputs heads_final_level(const ModelPrediction& prediction,
                                                 const FeatureMap& f_high_test) const;

    [[nodiscard]] Network clone() const;

private:
    struct Linear {
        ad::Var weight, bias;
        [[nodiscard]] ad::Var operator()(const ad::Var& x) const;
    };
    struct Conv {
        ad::Var weight, bias;  // (k*k*cin) x cout; bias may be empty
        int kernel = 3, stride = 1;
        [[nodiscard]] ad::Var operator()(const ad::Var& x, int height, int width) const;
    };
    struct LayerNorm {
        ad::Var gamma, beta;
        [[nodiscard]] ad::Var operator()(const ad::Var& x) const { return ad::layer_norm_rows(x, gamma, beta); }
    };
    struct Attention {
        Linear q, k, v, out;
    };
    struct EncoderLayer {
        Attention attn;
        LayerNorm norm1, norm2;
        Linear ffn1, ffn2;
    };
    struct DecoderLayer {
        Attention self_attn, cross_attn;
        LayerNorm norm1, norm2, norm3;
        Linear ffn1, ffn2;
    };

    Linear make_linear(const std::string& name, int in, int out, bool bias, double bias_init = 0.0);
    Conv make_conv(const std::string& name, int in, int out, int kernel, int stride, bool bias);
    LayerNorm make_norm(const std::string& name, int width);
    Attention make_attention(const std::string& name);

    [[nodiscard]] ad::Var attend(const Attention& a, const ad::Var& query, const ad::Var& key_input,
                                 const ad::Var& value_input) const;

    NetworkConfig config_;
    ParameterStore params_;
    Initializer init_;

    std::vector<Conv> stages_;
    Linear projection_;
    ObjectEmbeddingPool pool_;
    BoxEncoderParams phi_;
    ad::Var segment_;
    Matrix positional_;
    std::vector<EncoderLayer> encoder_;
    std::vector<DecoderLayer> decoder_;
    Linear lateral_;
    Conv smooth_low_, smooth_high_;
    Linear cls_filter_;
    Conv reg_tower_;
    Linear reg_modulation_;
    Linear reg_out_;
};

/// Fixed 2D sinusoidal encoding, one row per cell (y in the first half of
/// the channels, x in the second).
Matrix sinusoidal_positions(const GridSpec& grid, int channels);

/// Versioned JSON manifest: format tag, version, network config and every
/// named parameter with its shape and row-major values.
void save_checkpoint(const Network& net, const std::filesystem::path& path);
Network load_checkpoint(const std::filesystem::path& path);

}  // namespace tamos
