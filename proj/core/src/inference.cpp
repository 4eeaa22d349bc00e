#include "tamos/inference.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <limits>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace tamos {

using nlohmann::json;

namespace {

json matrix_to_json(const Matrix& m) {
    return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::vector<double>(m.data(), m.data() + m.size())}};
}

Matrix matrix_from_json(const json& j) {
    const auto rows = j.at("rows").get<Eigen::Index>();
    const auto cols = j.at("cols").get<Eigen::Index>();
    const auto data = j.at("data").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(data.size()) != rows * cols) throw std::runtime_error("state: matrix size mismatch");
    return Eigen::Map<const Matrix>(data.data(), rows, cols);
}

json box_to_json(const Box& b) { return json::array({b.x, b.y, b.w, b.h}); }
Box box_from_json(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>(), j.at(3).get<double>()}; }

json memory_to_json(const MemoryFrame& f) {
    json ann = json::array();
    for (const auto& a : f.annotations) ann.push_back({{"index", a.embedding_index}, {"box", box_to_json(a.box)}});
    return {{"values", matrix_to_json(f.values)}, {"annotations", ann}};
}

MemoryFrame memory_from_json(const json& j) {
    MemoryFrame f;
    f.values = matrix_from_json(j.at("values"));
    for (const auto& a : j.at("annotations")) f.annotations.push_back({a.at("index").get<int>(), box_from_json(a.at("box"))});
    return f;
}

std::string fmt17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

std::string serialize_state(const TrackerState& s) {
    json j;
    j["format"] = "tamos-tracker-state";
    j["version"] = 1;
    j["object_ids"] = s.object_ids;
    j["embedding_indices"] = s.embedding_indices;
    j["initial"] = memory_to_json(s.initial);
    j["dynamic"] = s.dynamic ? memory_to_json(*s.dynamic) : json(nullptr);
    json boxes = json::array();
    for (const auto& b : s.last_boxes) boxes.push_back(box_to_json(b));
    j["last_boxes"] = boxes;
    j["last_scores"] = s.last_scores;
    j["frame_index"] = s.frame_index;
    j["memory_updates"] = s.memory_updates;
    return j.dump();
}

TrackerState parse_state(std::string_view text) {
    const json j = json::parse(text);
    if (j.value("format", "") != "tamos-tracker-state") throw std::runtime_error("not a tracker state");
    TrackerState s;
    s.object_ids = j.at("object_ids").get<std::vector<int>>();
    s.embedding_indices = j.at("embedding_indices").get<std::vector<int>>();
    s.initial = memory_from_json(j.at("initial"));
    if (!j.at("dynamic").is_null()) s.dynamic = memory_from_json(j.at("dynamic"));
    for (const auto& b : j.at("last_boxes")) s.last_boxes.push_back(box_from_json(b));
    s.last_scores = j.at("last_scores").get<std::vector<double>>();
    s.frame_index = j.at("frame_index").get<int>();
    s.memory_updates = j.at("memory_updates").get<int>();
    return s;
}

ZoomWindow zoom_crop(int frame_height, int frame_width, const Box& last_box, double min_size, int out_height,
                     int out_width) {
    if (frame_height <= 0 || frame_width <= 0 || out_height <= 0 || out_width <= 0) {
        throw std::invalid_argument("zoom_crop: empty frame");
    }
    const double base = std::min(static_cast<double>(out_height) / frame_height,
                                 static_cast<double>(out_width) / frame_width);
    ZoomWindow z;
    const double side = std::max(std::min(last_box.w, last_box.h), 1.0);
    if (side * base >= min_size) {
        z.scale = base;
        z.to_crop = BoxTransform::scaling(base);
        return z;
    }
    z.identity = false;
    z.scale = min_size / side;
    const double ww = out_width / z.scale;
    const double wh = out_height / z.scale;
    z.x0 = last_box.center_x() - 0.5 * ww;
    z.y0 = last_box.center_y() - 0.5 * wh;
    // Stay inside the frame when the window fits.
    if (ww <= frame_width) z.x0 = std::clamp(z.x0, 0.0, frame_width - ww);
    if (wh <= frame_height) z.y0 = std::clamp(z.y0, 0.0, frame_height - wh);
    z.to_crop = BoxTransform::translation(-z.x0, -z.y0).followed_by(BoxTransform::scaling(z.scale));
    return z;
}

bool should_update_memory(std::span<const double> presences, double tau) {
    if (presences.empty()) return false;
    return std::all_of(presences.begin(), presences.end(), [tau](double p) { return p > tau; });
}

Tracker::Tracker(const Network& net, TrackerConfig config) : net_(net), config_(config) {
    if (!(config_.memory_threshold >= 0.0 && config_.memory_threshold <= 1.0)) {
        throw std::invalid_argument("tracker: memory threshold must lie in [0, 1]");
    }
    if (!(config_.zoom_min_size > 0.0)) throw std::invalid_argument("tracker: zoom size must be positive");
}

MemoryFrame Tracker::encode_frame(const Image& working_frame, std::span<const int> indices,
                                  std::span<const Box> working_boxes) const {
    const ad::NoGradGuard no_grad;
    const BackboneFeatures f = net_.extract_features(working_frame);
    TargetAnnotationSet ann;
    ann.grid = net_.config().grid();
    for (std::size_t i = 0; i < indices.size(); ++i) ann.entries.push_back({indices[i], working_boxes[i]});
    MemoryFrame out;
    out.values = net_.encode(f.low, ann).values.value();
    out.annotations = ann.entries;
    return out;
}

TrackerState Tracker::init(const Image& first_frame, std::span<const Box> boxes, std::span<const int> object_ids) const {
    const int n = static_cast<int>(boxes.size());
    const int m = net_.config().pool_size;
    if (n == 0) throw std::invalid_argument("tracker init: no target boxes");
    if (n > m) {
        throw std::invalid_argument(std::to_string(n) + " targets exceeds embedding pool capacity " + std::to_string(m));
    }
    if (!object_ids.empty() && static_cast<int>(object_ids.size()) != n) {
        throw std::invalid_argument("tracker init: object id count does not match boxes");
    }
    TrackerState s;
    s.embedding_indices.resize(static_cast<std::size_t>(n));
    std::iota(s.embedding_indices.begin(), s.embedding_indices.end(), 0);
    if (object_ids.empty()) {
        s.object_ids = s.embedding_indices;
    } else {
        s.object_ids.assign(object_ids.begin(), object_ids.end());
    }
    const NetworkConfig& cfg = net_.config();
    const PreparedFrame prepared = prepare_frame(first_frame, cfg.image_height, cfg.image_width);
    std::vector<Box> working;
    for (const Box& b : boxes) {
        if (!b.valid()) throw std::invalid_argument("tracker init: boxes must have positive size");
        working.push_back(prepared.to_working.apply(b));
    }
    s.initial = encode_frame(prepared.image, s.embedding_indices, working);
    s.last_boxes.assign(boxes.begin(), boxes.end());
    s.last_scores.assign(static_cast<std::size_t>(n), 1.0);
    return s;
}

TrackerState Tracker::maybe_update_memory(const TrackerState& state, const Image& working_frame,
                                          std::span<const Box> working_boxes,
                                          std::span<const double> presences) const {
    if (!should_update_memory(presences, config_.memory_threshold)) return state;
    TrackerState next = state;
    next.dynamic = encode_frame(working_frame, state.embedding_indices, working_boxes);
    ++next.memory_updates;
    return next;
}

std::pair<FramePrediction, TrackerState> Tracker::track_frame(const TrackerState& state, const Image& frame) const {
    const ad::NoGradGuard no_grad;
    const NetworkConfig& cfg = net_.config();
    const int n = state.objects();
    if (n == 0) throw std::invalid_argument("track_frame: tracker state is not initialised");

    FramePrediction out;
    out.frame_index = state.frame_index + 1;
    PreparedFrame prepared;
    if (config_.zoom && n == 1) {
        const ZoomWindow z = zoom_crop(frame.height, frame.width, state.last_boxes[0], config_.zoom_min_size,
                                       cfg.image_height, cfg.image_width);
        if (!z.identity) {
            prepared = crop_window(frame, z.x0, z.y0, z.scale, cfg.image_height, cfg.image_width);
            out.zoomed = true;
        }
    }
    if (!out.zoomed) prepared = prepare_frame(frame, cfg.image_height, cfg.image_width);

    const BackboneFeatures f = net_.extract_features(prepared.image);
    std::vector<EncodedFeatures> train{{ad::Var::constant(state.initial.values), cfg.grid()}};
    if (state.dynamic) train.push_back({ad::Var::constant(state.dynamic->values), cfg.grid()});
    const ModelPrediction pred = net_.predict_models(train, f.low, net_.queries(state.embedding_indices));
    const LevelOutputs level = net_.heads_final_level(pred, f.high);
    const Matrix probs = ad::sigmoid(level.logits).value();

    const BoxTransform back = prepared.to_working.inverse();
    std::vector<Box> working_boxes;
    std::vector<double> presences;
    TrackerState next = state;
    for (int i = 0; i < n; ++i) {
        const DecodedBox d = decode_box(level.grid, probs, level.ltrb.value(), i, 4 * i);
        ObjectPrediction p;
        p.object_id = state.object_ids[static_cast<std::size_t>(i)];
        p.box = back.apply(d.box);
        p.presence = d.presence;
        p.reported = d.presence >= config_.report_threshold;
        out.objects.push_back(p);
        working_boxes.push_back(d.box);
        presences.push_back(d.presence);
        next.last_boxes[static_cast<std::size_t>(i)] = p.box;
        next.last_scores[static_cast<std::size_t>(i)] = p.presence;
    }
    next.frame_index = out.frame_index;
    if (config_.memory_update) {
        const int before = next.memory_updates;
        next = maybe_update_memory(next, prepared.image, working_boxes, presences);
        out.memory_updated = next.memory_updates != before;
    }
    return {std::move(out), std::move(next)};
}

std::vector<PredictionRecord> run_sequence(const Tracker& tracker, const Sequence& sequence) {
    std::vector<PredictionRecord> out;
    if (sequence.frames.empty()) return out;
    std::vector<Box> boxes;
    std::vector<int> ids;
    for (const auto& t : sequence.annotations.tracks) {
        if (!t.boxes.empty() && t.boxes.front()) {
            boxes.push_back(*t.boxes.front());
            ids.push_back(t.object_id);
        }
    }
    if (boxes.empty()) throw std::runtime_error("sequence " + sequence.name + ": no object present in the first frame");
    TrackerState state = tracker.init(sequence.frames.front(), boxes, ids);
    for (std::size_t i = 0; i < boxes.size(); ++i) out.push_back({0, ids[i], boxes[i], 1.0, true});
    for (std::size_t f = 1; f < sequence.frames.size(); ++f) {
        auto [pred, next] = tracker.track_frame(state, sequence.frames[f]);
        for (const auto& o : pred.objects) out.push_back({pred.frame_index, o.object_id, o.box, o.presence, o.reported});
        state = std::move(next);
    }
    return out;
}

FrameCost measure_frame_cost(const Tracker& tracker, const Image& init_frame, const Image& frame,
                             std::span<const Box> boxes, bool independent, int repeats) {
    std::vector<TrackerState> states;
    if (independent) {
        for (const Box& b : boxes) states.push_back(tracker.init(init_frame, std::span<const Box>(&b, 1)));
    } else {
        states.push_back(tracker.init(init_frame, boxes));
    }
    FrameCost cost;
    cost.seconds = std::numeric_limits<double>::infinity();
    for (int r = 0; r < std::max(1, repeats); ++r) {
        const ad::OpCountScope ops;
        const auto start = std::chrono::steady_clock::now();
        for (const auto& s : states) {
            const auto result = tracker.track_frame(s, frame);
            (void)result;
        }
        const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        cost.seconds = std::min(cost.seconds, elapsed);
        cost.ops = ops.elapsed();
    }
    return cost;
}

std::string serialize_predictions(std::span<const PredictionRecord> records) {
    std::ostringstream out;
    out << "# tamos-predictions v1\n";
    for (const auto& r : records) {
        out << r.frame << ',' << r.object_id << ',' << fmt17(r.box.x) << ',' << fmt17(r.box.y) << ','
            << fmt17(r.box.w) << ',' << fmt17(r.box.h) << ',' << fmt17(r.presence);
        if (!r.reported) out << ",hidden";
        out << '\n';
    }
    return out.str();
}

std::vector<PredictionRecord> parse_predictions(std::string_view text) {
    std::vector<PredictionRecord> out;
    std::istringstream in{std::string(text)};
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line.front() == '#') continue;
        std::vector<std::string> fields;
        std::stringstream ls(line);
        std::string field;
        while (std::getline(ls, field, ',')) fields.push_back(field);
        if (fields.size() != 7 && fields.size() != 8) {
            throw std::runtime_error("predictions line " + std::to_string(line_no) + ": expected 7 fields");
        }
        try {
            PredictionRecord r;
            r.frame = std::stoi(fields[0]);
            r.object_id = std::stoi(fields[1]);
            r.box = {std::stod(fields[2]), std::stod(fields[3]), std::stod(fields[4]), std::stod(fields[5])};
            r.presence = std::stod(fields[6]);
            if (fields.size() == 8) {
                if (fields[7] != "hidden") throw std::invalid_argument("unknown flag");
                r.reported = false;
            }
            out.push_back(r);
        } catch (const std::logic_error&) {
            throw std::runtime_error("predictions line " + std::to_string(line_no) + ": malformed record");
        }
    }
    return out;
}

void write_predictions(std::span<const PredictionRecord> records, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << serialize_predictions(records);
}

std::vector<PredictionRecord> read_predictions(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_predictions(buf.str());
}

}  // namespace tamos
