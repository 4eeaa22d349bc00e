#include "tamos/datakit.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>

namespace tamos {

int TrackAnnotation::present_frames() const {
    return static_cast<int>(std::count_if(boxes.begin(), boxes.end(), [](const MaybeBox& b) { return b.has_value(); }));
}

std::optional<std::pair<int, int>> TrackAnnotation::present_span() const {
    int first = -1;
    int last = -1;
    for (std::size_t i = 0; i < boxes.size(); ++i) {
        if (!boxes[i]) continue;
        if (first < 0) first = static_cast<int>(i);
        last = static_cast<int>(i);
    }
    if (first < 0) return std::nullopt;
    return std::make_pair(first, last);
}

// ---- annotation text format --------------------------------------------------

namespace {

std::string fmt17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = s.find(sep, start);
        out.push_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

int parse_int(std::string_view s, int line) {
    s = trim(s);
    int v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) {
        throw std::runtime_error("annotations line " + std::to_string(line) + ": bad integer '" + std::string(s) + "'");
    }
    return v;
}

double parse_double(std::string_view s, int line) {
    const std::string tmp(trim(s));
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(tmp, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != tmp.size() || tmp.empty()) {
        throw std::runtime_error("annotations line " + std::to_string(line) + ": bad number '" + tmp + "'");
    }
    return v;
}

std::string sanitize_label(std::string label) {
    std::replace_if(label.begin(), label.end(), [](char c) { return c == ',' || c == '\n' || c == '\r'; }, '_');
    return label;
}

}  // namespace

std::string serialize_annotations(const AnnotationFile& file) {
    std::ostringstream out;
    out << "# tamos-annotations v1\n";
    out << "# fps=" << fmt17(file.fps) << '\n';
    out << "# frames=" << file.frame_count << '\n';
    for (const auto& t : file.tracks) out << "# object=" << t.object_id << ',' << sanitize_label(t.label) << '\n';
    for (int f = 0; f < file.frame_count; ++f) {
        for (const auto& t : file.tracks) {
            out << f << ',' << t.object_id << ',';
            const MaybeBox& b = f < static_cast<int>(t.boxes.size()) ? t.boxes[static_cast<std::size_t>(f)] : std::nullopt;
            if (b) {
                out << fmt17(b->x) << ',' << fmt17(b->y) << ',' << fmt17(b->w) << ',' << fmt17(b->h) << '\n';
            } else {
                out << "absent\n";
            }
        }
    }
    return out.str();
}

AnnotationFile parse_annotations(std::string_view text) {
    AnnotationFile file;
    std::map<int, std::size_t> by_id;
    bool frames_known = false;
    int line_no = 0;
    for (std::string_view raw : split(text, '\n')) {
        ++line_no;
        const std::string_view line = trim(raw);
        if (line.empty()) continue;
        if (line.front() == '#') {
            const std::string_view body = trim(line.substr(1));
            const auto eq = body.find('=');
            if (eq == std::string_view::npos) continue;
            const std::string_view key = trim(body.substr(0, eq));
            const std::string_view value = trim(body.substr(eq + 1));
            if (key == "fps") {
                file.fps = parse_double(value, line_no);
            } else if (key == "frames") {
                file.frame_count = parse_int(value, line_no);
                frames_known = true;
                for (auto& t : file.tracks) t.boxes.assign(static_cast<std::size_t>(file.frame_count), std::nullopt);
            } else if (key == "object") {
                const auto comma = value.find(',');
                TrackAnnotation t;
                t.object_id = parse_int(value.substr(0, comma), line_no);
                if (comma != std::string_view::npos) t.label = std::string(trim(value.substr(comma + 1)));
                if (by_id.contains(t.object_id)) {
                    throw std::runtime_error("annotations line " + std::to_string(line_no) + ": duplicate object id");
                }
                t.boxes.assign(static_cast<std::size_t>(file.frame_count), std::nullopt);
                by_id[t.object_id] = file.tracks.size();
                file.tracks.push_back(std::move(t));
            }
            continue;
        }
        if (!frames_known) throw std::runtime_error("annotations: box records before the frames header");
        const auto fields = split(line, ',');
        if (fields.size() != 3 && fields.size() != 6) {
            throw std::runtime_error("annotations line " + std::to_string(line_no) + ": expected 3 or 6 fields");
        }
        const int frame = parse_int(fields[0], line_no);
        const int id = parse_int(fields[1], line_no);
        if (frame < 0 || frame >= file.frame_count) {
            throw std::runtime_error("annotations line " + std::to_string(line_no) + ": frame out of range");
        }
        auto it = by_id.find(id);
        if (it == by_id.end()) {
            throw std::runtime_error("annotations line " + std::to_string(line_no) + ": undeclared object " +
                                     std::to_string(id));
        }
        MaybeBox& slot = file.tracks[it->second].boxes[static_cast<std::size_t>(frame)];
        if (fields.size() == 3) {
            if (trim(fields[2]) != "absent") {
                throw std::runtime_error("annotations line " + std::to_string(line_no) + ": expected 'absent'");
            }
            slot = std::nullopt;
        } else {
            slot = Box{parse_double(fields[2], line_no), parse_double(fields[3], line_no),
                       parse_double(fields[4], line_no), parse_double(fields[5], line_no)};
            if (!slot->valid()) {
                throw std::runtime_error("annotations line " + std::to_string(line_no) +
                                         ": box must have positive size (use 'absent')");
            }
        }
    }
    return file;
}

void write_annotations(const AnnotationFile& file, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << serialize_annotations(file);
}

AnnotationFile read_annotations(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_annotations(buf.str());
}

// ---- synthetic sequences ----------------------------------------------------

namespace {

struct NamedColor {
    const char* name;
    std::array<double, 3> rgb;
};

constexpr std::array<NamedColor, 10> kPalette{{
    {"red", {0.9, 0.1, 0.1}},
    {"green", {0.1, 0.8, 0.2}},
    {"blue", {0.15, 0.25, 0.95}},
    {"yellow", {0.95, 0.9, 0.1}},
    {"magenta", {0.9, 0.1, 0.85}},
    {"cyan", {0.1, 0.9, 0.9}},
    {"orange", {1.0, 0.55, 0.05}},
    {"white", {1.0, 1.0, 1.0}},
    {"purple", {0.5, 0.1, 0.6}},
    {"black", {0.0, 0.0, 0.0}},
}};

const char* shape_name(ShapeKind s) {
    switch (s) {
        case ShapeKind::Rectangle: return "rectangle";
        case ShapeKind::Ellipse: return "ellipse";
        case ShapeKind::Diamond: return "diamond";
    }
    return "shape";
}

bool shape_contains(const SynthObject& o, const Box& b, double u, double v) {
    switch (o.shape) {
        case ShapeKind::Rectangle: return u >= b.x && u < b.right() && v >= b.y && v < b.bottom();
        case ShapeKind::Ellipse: {
            const double dx = (u - b.center_x()) / (0.5 * b.w);
            const double dy = (v - b.center_y()) / (0.5 * b.h);
            return dx * dx + dy * dy <= 1.0;
        }
        case ShapeKind::Diamond:
            return std::abs(u - b.center_x()) / (0.5 * b.w) + std::abs(v - b.center_y()) / (0.5 * b.h) <= 1.0;
    }
    return false;
}

/// Reflects a coordinate into [0, span] (triangle wave).
double reflect(double p, double span) {
    if (span <= 0.0) return 0.0;
    const double period = 2.0 * span;
    double m = std::fmod(p, period);
    if (m < 0) m += period;
    return m <= span ? m : period - m;
}

Box object_box(const SynthObject& o, int frame, const SynthConfig& cfg) {
    double x = o.x;
    double y = o.y;
    switch (o.motion) {
        case MotionKind::Static: break;
        case MotionKind::Linear:
            x = o.x + o.vx * frame;
            y = o.y + o.vy * frame;
            if (cfg.bounce) {
                x = reflect(x, cfg.image_width - o.width);
                y = reflect(y, cfg.image_height - o.height);
            }
            break;
        case MotionKind::Sinusoidal: {
            const double phase = 2.0 * std::numbers::pi * frame / o.period_frames;
            x = o.x + o.amplitude_x * std::sin(phase);
            y = o.y + o.amplitude_y * std::sin(phase);
            break;
        }
    }
    return Box{x, y, o.width, o.height};
}

bool in_event(int object, int frame, int ev_object, int start, int end) {
    return object == ev_object && frame >= start && frame < end;
}

}  // namespace

std::vector<SynthObject> random_objects(const SynthConfig& cfg) {
    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<int> colors(kPalette.size());
    for (std::size_t i = 0; i < colors.size(); ++i) colors[i] = static_cast<int>(i);
    std::shuffle(colors.begin(), colors.end(), rng);

    std::vector<SynthObject> objects;
    std::vector<Box> placed;
    for (int i = 0; i < cfg.object_count; ++i) {
        SynthObject o;
        const int color = cfg.distractors ? colors[0] : colors[static_cast<std::size_t>(i) % colors.size()];
        o.shape = cfg.distractors ? ShapeKind::Rectangle : static_cast<ShapeKind>(rng() % 3);
        o.color = kPalette[static_cast<std::size_t>(color)].rgb;
        o.label = std::string(kPalette[static_cast<std::size_t>(color)].name) + "-" + shape_name(o.shape);
        o.width = cfg.min_size + unit(rng) * (cfg.max_size - cfg.min_size);
        o.height = cfg.distractors ? o.width : cfg.min_size + unit(rng) * (cfg.max_size - cfg.min_size);
        for (int attempt = 0; attempt < 64; ++attempt) {
            o.x = unit(rng) * std::max(0.0, cfg.image_width - o.width);
            o.y = unit(rng) * std::max(0.0, cfg.image_height - o.height);
            const Box b{o.x, o.y, o.width, o.height};
            const bool clear = std::none_of(placed.begin(), placed.end(), [&](const Box& p) { return iou(p, b) > 0.0; });
            if (clear) break;
        }
        placed.push_back({o.x, o.y, o.width, o.height});
        o.motion = cfg.motion;
        const double angle = unit(rng) * 2.0 * std::numbers::pi;
        const double speed = unit(rng) * cfg.max_speed;
        o.vx = speed * std::cos(angle);
        o.vy = speed * std::sin(angle);
        o.amplitude_x = unit(rng) * 20.0;
        o.amplitude_y = unit(rng) * 20.0;
        o.period_frames = 20.0 + unit(rng) * 20.0;
        objects.push_back(std::move(o));
    }
    return objects;
}

GeneratedSequence generate_sequence(const SynthConfig& cfg, std::string name) {
    if (cfg.image_height <= 0 || cfg.image_width <= 0 || cfg.frames < 0) {
        throw std::invalid_argument("generate_sequence: bad image size or frame count");
    }
    const std::vector<SynthObject> objects = cfg.objects.empty() ? random_objects(cfg) : cfg.objects;
    const int H = cfg.image_height;
    const int W = cfg.image_width;

    // Static textured background.
    std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Image background(H, W);
    const double fx = 0.05 + 0.1 * unit(rng);
    const double fy = 0.05 + 0.1 * unit(rng);
    const double p1 = unit(rng) * 6.28;
    const double p2 = unit(rng) * 6.28;
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            const double base = 0.5 + cfg.background_texture * std::sin(fx * x + p1) * std::cos(fy * y + p2);
            for (int c = 0; c < 3; ++c) {
                const double noise = (unit(rng) - 0.5) * 0.5 * cfg.background_texture;
                background.pixels(background.index(y, x), c) = std::clamp(base + noise + 0.03 * (c - 1), 0.0, 1.0);
            }
        }
    }

    GeneratedSequence out;
    Sequence& seq = out.sequence;
    seq.name = std::move(name);
    seq.annotations.fps = cfg.fps;
    seq.annotations.frame_count = cfg.frames;
    for (std::size_t i = 0; i < objects.size(); ++i) {
        seq.annotations.tracks.push_back({static_cast<int>(i), objects[i].label, {}});
        out.bookkeeping.labels.insert(objects[i].label);
    }
    out.bookkeeping.tracks = static_cast<int>(objects.size());

    std::vector<int> owner(static_cast<std::size_t>(H) * W);
    constexpr int kBackground = -1;
    constexpr int kOccluder = -2;
    for (int f = 0; f < cfg.frames; ++f) {
        Image frame = background;
        std::fill(owner.begin(), owner.end(), kBackground);
        std::vector<Box> boxes;
        std::vector<bool> hidden(objects.size(), false);
        for (std::size_t i = 0; i < objects.size(); ++i) {
            boxes.push_back(object_box(objects[i], f, cfg));
            for (const auto& ev : cfg.out_of_view) {
                if (in_event(static_cast<int>(i), f, ev.object, ev.start, ev.end)) hidden[i] = true;
            }
        }
        // Painter's order: later objects on top, then occluders.
        for (std::size_t i = 0; i < objects.size(); ++i) {
            if (hidden[i]) continue;
            const Box& b = boxes[i];
            const int y0 = std::max(0, static_cast<int>(std::floor(b.y)));
            const int y1 = std::min(H, static_cast<int>(std::ceil(b.bottom())));
            const int x0 = std::max(0, static_cast<int>(std::floor(b.x)));
            const int x1 = std::min(W, static_cast<int>(std::ceil(b.right())));
            for (int y = y0; y < y1; ++y) {
                for (int x = x0; x < x1; ++x) {
                    if (!shape_contains(objects[i], b, x + 0.5, y + 0.5)) continue;
                    owner[static_cast<std::size_t>(y) * W + x] = static_cast<int>(i);
                    for (int c = 0; c < 3; ++c) frame.pixels(frame.index(y, x), c) = objects[i].color[static_cast<std::size_t>(c)];
                }
            }
        }
        for (const auto& ev : cfg.occlusions) {
            if (f < ev.start || f >= ev.end || ev.object < 0 || ev.object >= static_cast<int>(objects.size())) continue;
            const Box& b = boxes[static_cast<std::size_t>(ev.object)];
            const int y0 = std::max(0, static_cast<int>(std::floor(b.y)) - 2);
            const int y1 = std::min(H, static_cast<int>(std::ceil(b.bottom())) + 2);
            const int x0 = std::max(0, static_cast<int>(std::floor(b.x)) - 2);
            const int x1 = std::min(W, static_cast<int>(std::ceil(b.right())) + 2);
            for (int y = y0; y < y1; ++y) {
                for (int x = x0; x < x1; ++x) {
                    owner[static_cast<std::size_t>(y) * W + x] = kOccluder;
                    frame.pixels.row(frame.index(y, x)) << 0.3, 0.28, 0.25;
                }
            }
        }
        // Visibility: visible owned pixels over all shape pixels, including
        // the part of the shape outside the image.
        for (std::size_t i = 0; i < objects.size(); ++i) {
            bool present = false;
            if (!hidden[i]) {
                const Box& b = boxes[i];
                long total = 0;
                long visible = 0;
                const int y0 = static_cast<int>(std::floor(b.y));
                const int y1 = static_cast<int>(std::ceil(b.bottom()));
                const int x0 = static_cast<int>(std::floor(b.x));
                const int x1 = static_cast<int>(std::ceil(b.right()));
                for (int y = y0; y < y1; ++y) {
                    for (int x = x0; x < x1; ++x) {
                        if (!shape_contains(objects[i], b, x + 0.5, y + 0.5)) continue;
                        ++total;
                        if (x >= 0 && y >= 0 && x < W && y < H &&
                            owner[static_cast<std::size_t>(y) * W + x] == static_cast<int>(i)) {
                            ++visible;
                        }
                    }
                }
                present = total > 0 && static_cast<double>(visible) / static_cast<double>(total) >= cfg.visibility_threshold;
            }
            seq.annotations.tracks[i].boxes.push_back(present ? MaybeBox{boxes[i]} : std::nullopt);
            if (present) ++out.bookkeeping.present_boxes;
        }
        seq.frames.push_back(std::move(frame));
        ++out.bookkeeping.frames;
    }
    return out;
}

// ---- benchmark construction utilities ---------------------------------------

AnnotationFile filter_short_tracks(const AnnotationFile& file, double min_seconds) {
    if (!(file.fps > 0.0)) throw std::invalid_argument("filter_short_tracks: fps must be positive");
    AnnotationFile out = file;
    out.tracks.clear();
    for (const auto& t : file.tracks) {
        const auto span = t.present_span();
        if (!span) continue;
        const double seconds = static_cast<double>(span->second - span->first + 1) / file.fps;
        // Small slack so that e.g. 40 frames at 10 fps counts as 4 s.
        if (seconds + 1e-9 >= min_seconds) out.tracks.push_back(t);
    }
    return out;
}

DatasetStats dataset_stats(std::span<const AnnotationFile> files) {
    DatasetStats s;
    s.videos = static_cast<int>(files.size());
    if (files.empty()) return s;
    std::set<std::string> labels;
    std::set<double> fps;
    long long total_tracks = 0;
    long long total_frames = 0;
    double track_seconds = 0.0;
    for (const auto& f : files) {
        s.avg_video_frames += f.frame_count;
        s.avg_video_seconds += f.fps > 0.0 ? f.frame_count / f.fps : 0.0;
        s.avg_tracks_per_video += static_cast<double>(f.tracks.size());
        total_frames += f.frame_count;
        fps.insert(f.fps);
        long long file_boxes = 0;
        for (const auto& t : f.tracks) {
            labels.insert(t.label);
            file_boxes += t.present_frames();
            ++total_tracks;
        }
        s.total_annotations += file_boxes;
        track_seconds += f.fps > 0.0 ? static_cast<double>(file_boxes) / f.fps : 0.0;
    }
    const double videos = static_cast<double>(files.size());
    s.classes = static_cast<int>(labels.size());
    s.avg_video_frames /= videos;
    s.avg_video_seconds /= videos;
    s.avg_tracks_per_video /= videos;
    if (total_tracks > 0) {
        s.avg_track_boxes = static_cast<double>(s.total_annotations) / static_cast<double>(total_tracks);
        s.avg_track_seconds = track_seconds / static_cast<double>(total_tracks);
    }
    if (total_frames > 0) s.avg_instances_per_frame = static_cast<double>(s.total_annotations) / static_cast<double>(total_frames);
    s.annotation_fps.assign(fps.begin(), fps.end());
    return s;
}

std::string format_stats_table(const DatasetStats& s) {
    std::ostringstream out;
    out << "classes\tvideos\tavg_video_frames\tavg_video_seconds\tavg_tracks_per_video\tavg_track_boxes\t"
           "avg_track_seconds\tavg_instances_per_frame\tannotations\tannotation_fps\n";
    char buf[512];
    std::string fps;
    for (double f : s.annotation_fps) fps += (fps.empty() ? "" : "/") + fmt17(f);
    std::snprintf(buf, sizeof buf, "%d\t%d\t%.2f\t%.2f\t%.2f\t%.2f\t%.2f\t%.2f\t%lld\t%s\n", s.classes, s.videos,
                  s.avg_video_frames, s.avg_video_seconds, s.avg_tracks_per_video, s.avg_track_boxes,
                  s.avg_track_seconds, s.avg_instances_per_frame, s.total_annotations, fps.c_str());
    out << buf;
    return out.str();
}

// ---- corpus on disk -----------------------------------------------------------

void write_sequence(const Sequence& sequence, const std::filesystem::path& root) {
    const auto dir = root / sequence.name;
    std::filesystem::create_directories(dir / "frames");
    for (std::size_t i = 0; i < sequence.frames.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "%06zu.ppm", i);
        write_ppm(sequence.frames[i], dir / "frames" / name);
    }
    write_annotations(sequence.annotations, dir / "annotations.txt");
}

Sequence read_sequence(const std::filesystem::path& directory) {
    Sequence seq;
    seq.name = directory.filename().string();
    seq.annotations = read_annotations(directory / "annotations.txt");
    for (int i = 0; i < seq.annotations.frame_count; ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "%06d.ppm", i);
        const auto path = directory / "frames" / name;
        if (!std::filesystem::exists(path)) break;
        seq.frames.push_back(read_ppm(path));
    }
    return seq;
}

std::vector<std::filesystem::path> list_sequences(const std::filesystem::path& root) {
    std::vector<std::filesystem::path> out;
    if (!std::filesystem::is_directory(root)) throw std::runtime_error("not a directory: " + root.string());
    for (const auto& entry : std::filesystem::directory_iterator(root)) {
        if (entry.is_directory() && std::filesystem::exists(entry.path() / "annotations.txt")) out.push_back(entry.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<Sequence> read_corpus(const std::filesystem::path& root) {
    std::vector<Sequence> out;
    for (const auto& dir : list_sequences(root)) out.push_back(read_sequence(dir));
    return out;
}

}  // namespace tamos
