#include "tamos/network.hpp"

#include "json_config.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>

namespace tamos {

namespace {

constexpr int kCheckpointVersion = 1;
constexpr const char* kCheckpointFormat = "tamos-checkpoint";

void require(bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument(what);
}

}  // namespace

NetworkConfig NetworkConfig::toy() { return NetworkConfig{}; }

NetworkConfig NetworkConfig::full_scale() {
    NetworkConfig c;
    c.image_height = 384;
    c.image_width = 576;
    c.backbone_widths = {64, 128, 256, 512};
    c.channels = 256;
    c.heads = 8;
    c.ffn_width = 1024;
    c.regression_width = 256;
    return c;
}

void NetworkConfig::validate() const {
    require(image_height > 0 && image_width > 0, "network: image size must be positive");
    require(image_height % 16 == 0 && image_width % 16 == 0,
            "network: input " + std::to_string(image_height) + "x" + std::to_string(image_width) +
                " is not divisible by 16; pad the frame first");
    require(backbone_widths.size() == 4, "network: backbone_widths needs four stages");
    for (int w : backbone_widths) require(w > 0, "network: backbone widths must be positive");
    require(channels > 0 && channels % 4 == 0, "network: channels must be a positive multiple of 4");
    require(heads > 0 && channels % heads == 0, "network: channels must divide evenly into heads");
    require(encoder_layers >= 0 && decoder_layers >= 1, "network: need at least one decoder layer");
    require(ffn_width > 0 && regression_width > 0, "network: widths must be positive");
    require(pool_size >= 1, "network: embedding pool must be non-empty");
    require(sigma_cells > 0.0, "network: sigma_cells must be positive");
}

Matrix sinusoidal_positions(const GridSpec& grid, int channels) {
    const int half = channels / 2;
    const int pairs = half / 2;
    Matrix pos(grid.cells(), channels);
    pos.setZero();
    for (int r = 0; r < grid.height_cells; ++r) {
        for (int c = 0; c < grid.width_cells; ++c) {
            const Eigen::Index row = static_cast<Eigen::Index>(r) * grid.width_cells + c;
            for (int k = 0; k < pairs; ++k) {
                const double freq = 1.0 / std::pow(10000.0, static_cast<double>(2 * k) / half);
                pos(row, 2 * k) = std::sin(r * freq);
                pos(row, 2 * k + 1) = std::cos(r * freq);
                pos(row, half + 2 * k) = std::sin(c * freq);
                pos(row, half + 2 * k + 1) = std::cos(c * freq);
            }
        }
    }
    return pos;
}

ad::Var Network::Linear::operator()(const ad::Var& x) const {
    ad::Var y = ad::matmul(x, weight);
    return bias.valid() ? ad::add_row(y, bias) : y;
}

ad::Var Network::Conv::operator()(const ad::Var& x, int height, int width) const {
    ad::Var cols = kernel == 1 && stride == 1 ? x : ad::im2col(x, height, width, kernel, stride, kernel / 2);
    ad::Var y = ad::matmul(cols, weight);
    return bias.valid() ? ad::add_row(y, bias) : y;
}

Network::Linear Network::make_linear(const std::string& name, int in, int out, bool bias, double bias_init) {
    Linear l;
    l.weight = params_.add(name + ".weight", init_.fan_in(in, out, in));
    if (bias) l.bias = params_.add(name + ".bias", Matrix::Constant(1, out, bias_init));
    return l;
}

Network::Conv Network::make_conv(const std::string& name, int in, int out, int kernel, int stride, bool bias) {
    Conv c;
    const int fan = kernel * kernel * in;
    c.weight = params_.add(name + ".weight", init_.fan_in(fan, out, fan));
    if (bias) c.bias = params_.add(name + ".bias", Initializer::zeros(1, out));
    c.kernel = kernel;
    c.stride = stride;
    return c;
}

Network::LayerNorm Network::make_norm(const std::string& name, int width) {
    return {params_.add(name + ".gamma", Initializer::ones(1, width)),
            params_.add(name + ".beta", Initializer::zeros(1, width))};
}

Network::Attention Network::make_attention(const std::string& name) {
    const int c = config_.channels;
    return {make_linear(name + ".q", c, c, true), make_linear(name + ".k", c, c, true),
            make_linear(name + ".v", c, c, true), make_linear(name + ".out", c, c, true)};
}

Network::Network(const NetworkConfig& config) : config_(config), init_(config.seed) {
    config_.validate();
    const auto& w = config_.backbone_widths;
    const int c = config_.channels;

    int in = 3;
    for (std::size_t i = 0; i < w.size(); ++i) {
        stages_.push_back(make_conv("backbone.stage" + std::to_string(i + 1), in, w[i], 3, 2, true));
        in = w[i];
    }
    projection_ = make_linear("backbone.projection", w[3], c, true);

    pool_ = ObjectEmbeddingPool::create(params_, config_.pool_size, c, init_);
    phi_ = BoxEncoderParams::create(params_, c, init_);

    segment_ = params_.add("transformer.segment", init_.normal(2, c, 0.02));
    positional_ = sinusoidal_positions(config_.grid(), c);
    for (int i = 0; i < config_.encoder_layers; ++i) {
        const std::string p = "transformer.encoder" + std::to_string(i);
        EncoderLayer layer;
        layer.attn = make_attention(p + ".attn");
        layer.norm1 = make_norm(p + ".norm1", c);
        layer.ffn1 = make_linear(p + ".ffn1", c, config_.ffn_width, true);
        layer.ffn2 = make_linear(p + ".ffn2", config_.ffn_width, c, true);
        layer.norm2 = make_norm(p + ".norm2", c);
        encoder_.push_back(std::move(layer));
    }
    for (int i = 0; i < config_.decoder_layers; ++i) {
        const std::string p = "transformer.decoder" + std::to_string(i);
        DecoderLayer layer;
        layer.self_attn = make_attention(p + ".self_attn");
        layer.norm1 = make_norm(p + ".norm1", c);
        layer.cross_attn = make_attention(p + ".cross_attn");
        layer.norm2 = make_norm(p + ".norm2", c);
        layer.ffn1 = make_linear(p + ".ffn1", c, config_.ffn_width, true);
        layer.ffn2 = make_linear(p + ".ffn2", config_.ffn_width, c, true);
        layer.norm3 = make_norm(p + ".norm3", c);
        decoder_.push_back(std::move(layer));
    }

    if (config_.use_fpn) {
        lateral_ = make_linear("fpn.lateral", w[2], c, false);
        smooth_low_ = make_conv("fpn.smooth_low", c, c, 3, 1, true);
        smooth_high_ = make_conv("fpn.smooth_high", c, c, 3, 1, true);
    }

    const int r = config_.regression_width;
    cls_filter_ = make_linear("heads.cls_filter", c, c, true);
    reg_tower_ = make_conv("heads.reg_tower", c, r, 3, 1, true);
    reg_modulation_ = make_linear("heads.reg_modulation", c, r, true, 1.0);
    // softplus(-2.25) ~ 0.1 of the diagonal: a plausible initial box size.
    reg_out_ = make_linear("heads.reg_out", r, 4, true, -2.25);
}

BackboneFeatures Network::extract_features(const Image& image) const {
    require(image.height % 16 == 0 && image.width % 16 == 0,
            "extract_features: image " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                " is not divisible by 16; pad it to the working resolution");
    require(image.height == config_.image_height && image.width == config_.image_width,
            "extract_features: image does not match the configured input size");
    Matrix normalised = (image.pixels.array() - 0.5) * 4.0;
    ad::Var x = ad::Var::constant(std::move(normalised));
    int h = image.height;
    int w = image.width;
    BackboneFeatures out;
    for (std::size_t i = 0; i < stages_.size(); ++i) {
        x = ad::silu(stages_[i](x, h, w));
        h = (h + 1) / 2;
        w = (w + 1) / 2;
        if (i == 2) out.high = {x, config_.high_grid()};
    }
    out.low = {projection_(x), config_.grid()};
    return out;
}

EncodedFeatures Network::encode(const FeatureMap& f_train, const TargetAnnotationSet& annotations) const {
    return encode_targets(f_train, annotations, pool_, phi_, config_.encoding_options());
}

ad::Var Network::queries(std::span<const int> indices) const { return ad::take_rows(pool_.embeddings, indices); }

ad::Var Network::attend(const Attention& a, const ad::Var& query, const ad::Var& key_input,
                        const ad::Var& value_input) const {
    const ad::Var q = a.q(query);
    const ad::Var k = a.k(key_input);
    const ad::Var v = a.v(value_input);
    const int d = config_.channels / config_.heads;
    const double inv = 1.0 / std::sqrt(static_cast<double>(d));
    std::vector<ad::Var> heads;
    heads.reserve(static_cast<std::size_t>(config_.heads));
    for (int h = 0; h < config_.heads; ++h) {
        const ad::Var qh = ad::slice_cols(q, h * d, d);
        const ad::Var kh = ad::slice_cols(k, h * d, d);
        const ad::Var vh = ad::slice_cols(v, h * d, d);
        const ad::Var weights = ad::softmax_rows(ad::scale(ad::matmul_nt(qh, kh), inv));
        heads.push_back(ad::matmul(weights, vh));
    }
    return a.out(config_.heads == 1 ? heads.front() : ad::concat_cols(heads));
}

ModelPrediction Network::predict_models(std::span<const EncodedFeatures> train, const FeatureMap& f_test,
                                        const ad::Var& queries) const {
    require(!train.empty(), "predict_models: need at least one train frame");
    require(queries.valid() && queries.rows() >= 1, "predict_models: empty query list");
    require(queries.rows() <= config_.pool_size, "predict_models: more queries than pool embeddings");
    require(queries.cols() == config_.channels && f_test.channels() == config_.channels,
            "predict_models: channel width mismatch");
    const GridSpec grid = config_.grid();
    const ad::Var pos = ad::Var::constant(positional_);
    const ad::Var seg_train = ad::slice_rows(segment_, 0, 1);
    const ad::Var seg_test = ad::slice_rows(segment_, 1, 1);

    std::vector<ad::Var> tokens;
    for (const auto& t : train) {
        require(t.grid == grid && t.channels() == config_.channels, "predict_models: train map shape mismatch");
        tokens.push_back(ad::add_row(ad::add(t.values, pos), seg_train));
    }
    require(f_test.grid == grid, "predict_models: test map shape mismatch");
    tokens.push_back(ad::add_row(ad::add(f_test.values, pos), seg_test));
    ad::Var memory = ad::concat_rows(tokens);

    for (const auto& layer : encoder_) {
        memory = layer.norm1(ad::add(memory, attend(layer.attn, memory, memory, memory)));
        const ad::Var ff = layer.ffn2(ad::silu(layer.ffn1(memory)));
        memory = layer.norm2(ad::add(memory, ff));
    }

    ad::Var q = queries;
    for (const auto& layer : decoder_) {
        q = layer.norm1(ad::add(q, attend(layer.self_attn, q, q, q)));
        q = layer.norm2(ad::add(q, attend(layer.cross_attn, q, memory, memory)));
        const ad::Var ff = layer.ffn2(ad::silu(layer.ffn1(q)));
        q = layer.norm3(ad::add(q, ff));
    }

    ModelPrediction out;
    out.thetas = q;
    const Eigen::Index cells = grid.cells();
    for (std::size_t i = 0; i < train.size(); ++i) {
        out.h_train.push_back({ad::slice_rows(memory, static_cast<Eigen::Index>(i) * cells, cells), grid});
    }
    out.h_test = {ad::slice_rows(memory, static_cast<Eigen::Index>(train.size()) * cells, cells), grid};
    return out;
}

FpnOutputs Network::fpn_fuse(const FeatureMap& h_test, const FeatureMap& f_high_test) const {
    require(config_.use_fpn, "fpn_fuse: network was built without an FPN");
    require(f_high_test.grid.height_cells == 2 * h_test.grid.height_cells &&
                f_high_test.grid.width_cells == 2 * h_test.grid.width_cells,
            "fpn_fuse: high-resolution map must be exactly twice the size of h_test");
    require(f_high_test.values.rows() == f_high_test.grid.cells() && h_test.values.rows() == h_test.grid.cells(),
            "fpn_fuse: map rows do not match their grids");
    require(f_high_test.channels() == lateral_.weight.rows(), "fpn_fuse: unexpected high-resolution width");
    const GridSpec& lo = h_test.grid;
    const GridSpec& hi = f_high_test.grid;
    FpnOutputs out;
    out.low = {smooth_low_(h_test.values, lo.height_cells, lo.width_cells), lo};
    const ad::Var up = ad::upsample_nearest2x(h_test.values, lo.height_cells, lo.width_cells);
    const ad::Var merged = ad::add(up, lateral_(f_high_test.values));
    out.high = {smooth_high_(merged, hi.height_cells, hi.width_cells), hi};
    return out;
}

LevelOutputs Network::apply_heads(const FeatureMap& features, const ad::Var& thetas) const {
    require(features.channels() == config_.channels, "apply_heads: feature width mismatch");
    const auto n = thetas.rows();
    const double inv_sqrt_c = 1.0 / std::sqrt(static_cast<double>(config_.channels));

    // Correlation filters from target models; a 1x1 filter per object.
    const ad::Var filters = cls_filter_(thetas);
    const ad::Var logits = ad::scale(ad::matmul_nt(features.values, filters), inv_sqrt_c);

    // Shared tower, then per-object channel modulation folded into the
    // 1x1 output layer: (T . g_i) W = T (diag(g_i) W).
    const GridSpec& g = features.grid;
    const ad::Var tower = ad::silu(reg_tower_(features.values, g.height_cells, g.width_cells));
    const ad::Var modulation = reg_modulation_(thetas);
    std::vector<ad::Var> kernels;
    std::vector<ad::Var> biases;
    for (Eigen::Index i = 0; i < n; ++i) {
        const ad::Var gain = ad::transpose(ad::slice_rows(modulation, i, 1));
        kernels.push_back(ad::mul_col(reg_out_.weight, gain));
        biases.push_back(reg_out_.bias);
    }
    const ad::Var raw = ad::add_row(ad::matmul(tower, ad::concat_cols(kernels)), ad::concat_cols(biases));
    return {g, logits, ad::softplus(raw)};
}

HeadOutputs Network::heads_all_levels(const ModelPrediction& prediction, const FeatureMap& f_high_test) const {
    HeadOutputs out;
    out.encoder = apply_heads(prediction.h_test, prediction.thetas);
    if (config_.use_fpn) {
        const FpnOutputs fpn = fpn_fuse(prediction.h_test, f_high_test);
        out.low = apply_heads(fpn.low, prediction.thetas);
        out.high = apply_heads(fpn.high, prediction.thetas);
    }
    return out;
}

LevelOutputs Network::heads_final_level(const ModelPrediction& prediction, const FeatureMap& f_high_test) const {
    if (!config_.use_fpn) return apply_heads(prediction.h_test, prediction.thetas);
    const FeatureMap high = fpn_fuse(prediction.h_test, f_high_test).high;
    return apply_heads(high, prediction.thetas);
}

Network Network::clone() const {
    Network copy(config_);
    copy.params_.copy_values_from(params_);
    return copy;
}

void save_checkpoint(const Network& net, const std::filesystem::path& path) {
    nlohmann::json doc;
    doc["format"] = kCheckpointFormat;
    doc["version"] = kCheckpointVersion;
    doc["config"] = detail::to_json(net.config());
    auto& arr = doc["parameters"] = nlohmann::json::array();
    for (const auto& e : net.params().entries()) {
        const Matrix& v = e.var.value();
        arr.push_back({{"name", e.name},
                       {"shape", {v.rows(), v.cols()}},
                       {"data", std::vector<double>(v.data(), v.data() + v.size())}});
    }
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
    out << doc.dump() << '\n';
}

Network load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read checkpoint " + path.string());
    const nlohmann::json doc = nlohmann::json::parse(in);
    if (doc.value("format", "") != kCheckpointFormat) throw std::runtime_error(path.string() + ": not a checkpoint");
    if (doc.value("version", 0) != kCheckpointVersion) {
        throw std::runtime_error(path.string() + ": unsupported checkpoint version");
    }
    Network net(detail::network_config_from_json(doc.at("config")));
    ParameterStore loaded;
    for (const auto& p : doc.at("parameters")) {
        const auto rows = p.at("shape").at(0).get<Eigen::Index>();
        const auto cols = p.at("shape").at(1).get<Eigen::Index>();
        const auto data = p.at("data").get<std::vector<double>>();
        if (static_cast<Eigen::Index>(data.size()) != rows * cols) {
            throw std::runtime_error("checkpoint parameter " + p.at("name").get<std::string>() + " has wrong size");
        }
        loaded.add(p.at("name").get<std::string>(), Eigen::Map<const Matrix>(data.data(), rows, cols));
    }
    net.params().copy_values_from(loaded);
    return net;
}

}  // namespace tamos
