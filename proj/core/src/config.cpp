#include "tamos/config.hpp"

#include "json_config.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace tamos {

using nlohmann::json;

NLOHMANN_JSON_SERIALIZE_ENUM(MotionKind, {{MotionKind::Static, "static"},
                                          {MotionKind::Linear, "linear"},
                                          {MotionKind::Sinusoidal, "sinusoidal"}})
NLOHMANN_JSON_SERIALIZE_ENUM(ShapeKind, {{ShapeKind::Rectangle, "rectangle"},
                                         {ShapeKind::Ellipse, "ellipse"},
                                         {ShapeKind::Diamond, "diamond"}})

void to_json(json& j, const SynthObject& o) {
    j = {{"shape", o.shape}, {"color", o.color}, {"width", o.width}, {"height", o.height},
         {"x", o.x},         {"y", o.y},         {"motion", o.motion}, {"vx", o.vx},
         {"vy", o.vy},       {"amplitude_x", o.amplitude_x}, {"amplitude_y", o.amplitude_y},
         {"period_frames", o.period_frames}, {"label", o.label}};
}

void from_json(const json& j, SynthObject& o) {
    o.shape = j.value("shape", o.shape);
    o.color = j.value("color", o.color);
    o.width = j.value("width", o.width);
    o.height = j.value("height", o.height);
    o.x = j.value("x", o.x);
    o.y = j.value("y", o.y);
    o.motion = j.value("motion", o.motion);
    o.vx = j.value("vx", o.vx);
    o.vy = j.value("vy", o.vy);
    o.amplitude_x = j.value("amplitude_x", o.amplitude_x);
    o.amplitude_y = j.value("amplitude_y", o.amplitude_y);
    o.period_frames = j.value("period_frames", o.period_frames);
    o.label = j.value("label", o.label);
}

void to_json(json& j, const OcclusionEvent& e) { j = {{"object", e.object}, {"start", e.start}, {"end", e.end}}; }
void from_json(const json& j, OcclusionEvent& e) {
    e.object = j.at("object").get<int>();
    e.start = j.at("start").get<int>();
    e.end = j.at("end").get<int>();
}
void to_json(json& j, const OutOfViewEvent& e) { j = {{"object", e.object}, {"start", e.start}, {"end", e.end}}; }
void from_json(const json& j, OutOfViewEvent& e) {
    e.object = j.at("object").get<int>();
    e.start = j.at("start").get<int>();
    e.end = j.at("end").get<int>();
}

namespace {

// One visitor drives both directions so the key lists cannot drift apart.
class Reader {
public:
    Reader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j_.is_object()) throw std::runtime_error("config: '" + where_ + "' must be an object");
    }
    template <class T>
    void operator()(const char* key, T& field) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        try {
            field = j_.at(key).get<T>();
        } catch (const json::exception& e) {
            throw std::runtime_error("config: bad value for '" + where_ + "." + key + "': " + e.what());
        }
    }
    template <class F>
    void section(const char* key, F&& visit_sub) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        Reader sub(j_.at(key), where_ + "." + key);
        visit_sub(sub);
        sub.finish();
    }
    void finish() const {
        for (const auto& item : j_.items()) {
            if (!seen_.contains(item.key())) throw std::runtime_error("config: unknown key '" + where_ + "." + item.key() + "'");
        }
    }

private:
    const json& j_;
    std::string where_;
    std::set<std::string> seen_;
};

class Writer {
public:
    template <class T>
    void operator()(const char* key, T& field) {
        out[key] = field;
    }
    template <class F>
    void section(const char* key, F&& visit_sub) {
        Writer sub;
        visit_sub(sub);
        out[key] = sub.out;
    }
    json out = json::object();
};

template <class V>
void visit(NetworkConfig& c, V& v) {
    v("image_height", c.image_height);
    v("image_width", c.image_width);
    v("backbone_widths", c.backbone_widths);
    v("channels", c.channels);
    v("heads", c.heads);
    v("encoder_layers", c.encoder_layers);
    v("decoder_layers", c.decoder_layers);
    v("ffn_width", c.ffn_width);
    v("pool_size", c.pool_size);
    v("regression_width", c.regression_width);
    v("use_fpn", c.use_fpn);
    v("sigma_cells", c.sigma_cells);
    v("sigma_reference", c.sigma_reference);
    v("gaussian_encoding", c.gaussian_encoding);
    v("ltrb_encoding", c.ltrb_encoding);
    v("seed", c.seed);
}

template <class V>
void visit(TrainConfig& c, V& v) {
    v.section("schedule", [&](auto& s) {
        auto& o = c.schedule;
        s("learning_rate", o.learning_rate);
        s("decay_factor", o.decay_factor);
        s("decay_fractions", o.decay_fractions);
        s("grad_clip", o.grad_clip);
        s("weight_decay", o.weight_decay);
        s("beta1", o.beta1);
        s("beta2", o.beta2);
        s("epsilon", o.epsilon);
        s("epochs", o.epochs);
        s("steps_per_epoch", o.steps_per_epoch);
        s("batch_size", o.batch_size);
    });
    v.section("loss", [&](auto& s) {
        auto& o = c.loss;
        s("lambda_cls", o.lambda_cls);
        s("lambda_bbreg", o.lambda_bbreg);
        s("coupling_term", o.coupling_term);
        s("gamma", o.gamma);
        s("supervision_threshold", o.supervision_threshold);
    });
    v.section("sampler", [&](auto& s) {
        auto& o = c.sampler;
        s("max_frame_gap", o.max_frame_gap);
        s("dynamic_frame_probability", o.dynamic_frame_probability);
        s.section("augment", [&](auto& a) {
            auto& g = o.augment;
            a("enabled", g.enabled);
            a("scale_range", g.scale_range);
            a("shift_range", g.shift_range);
            a("flip_probability", g.flip_probability);
            a("color_jitter", g.color_jitter);
        });
    });
    v("seed", c.seed);
    v("time_budget_seconds", c.time_budget_seconds);
}

template <class V>
void visit(SynthConfig& c, V& v) {
    v("image_height", c.image_height);
    v("image_width", c.image_width);
    v("object_count", c.object_count);
    v("frames", c.frames);
    v("fps", c.fps);
    v("seed", c.seed);
    v("min_size", c.min_size);
    v("max_size", c.max_size);
    v("max_speed", c.max_speed);
    v("motion", c.motion);
    v("bounce", c.bounce);
    v("distractors", c.distractors);
    v("background_texture", c.background_texture);
    v("visibility_threshold", c.visibility_threshold);
    v("objects", c.objects);
    v("occlusions", c.occlusions);
    v("out_of_view", c.out_of_view);
}

template <class V>
void visit(TrackerConfig& c, V& v) {
    v("memory_threshold", c.memory_threshold);
    v("memory_update", c.memory_update);
    v("report_threshold", c.report_threshold);
    v("zoom", c.zoom);
    v("zoom_min_size", c.zoom_min_size);
}

template <class T>
json write(const T& c) {
    Writer w;
    visit(const_cast<T&>(c), w);
    return w.out;
}

template <class T>
void read(const json& j, T& c, const std::string& where) {
    Reader r(j, where);
    visit(c, r);
    r.finish();
}

}  // namespace

namespace detail {

json to_json(const NetworkConfig& config) { return write(config); }

NetworkConfig network_config_from_json(const json& j, const NetworkConfig& base) {
    NetworkConfig c = base;
    read(j, c, "network");
    return c;
}

}  // namespace detail

void merge_config(ProjectConfig& config, std::string_view json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw std::runtime_error(std::string("config: ") + e.what());
    }
    if (!j.is_object()) throw std::runtime_error("config: top level must be an object");
    for (const auto& item : j.items()) {
        const std::string& key = item.key();
        if (key == "network") {
            read(item.value(), config.network, key);
        } else if (key == "train") {
            read(item.value(), config.train, key);
        } else if (key == "synth") {
            read(item.value(), config.synth, key);
        } else if (key == "tracker") {
            read(item.value(), config.tracker, key);
        } else if (key == "sequences") {
            config.sequences = item.value().get<int>();
        } else {
            throw std::runtime_error("config: unknown section '" + key + "'");
        }
    }
}

void merge_config_file(ProjectConfig& config, const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read config " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    merge_config(config, buf.str());
}

std::string dump_config(const ProjectConfig& config) {
    json j;
    j["network"] = write(config.network);
    j["train"] = write(config.train);
    j["synth"] = write(config.synth);
    j["tracker"] = write(config.tracker);
    j["sequences"] = config.sequences;
    return j.dump(2);
}

}  // namespace tamos
