#pragma once

#include "tamos/geometry.hpp"
#include "tamos/image.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace tamos {

struct TrackAnnotation {
    int object_id = 0;
    std::string label;
    std::vector<MaybeBox> boxes;  // one entry per frame

    [[nodiscard]] int present_frames() const;
    /// First and last present frame, if any.
    [[nodiscard]] std::optional<std::pair<int, int>> present_span() const;

    bool operator==(const TrackAnnotation&) const = default;
};

/// Per-sequence annotation: every track has exactly `frame_count` entries.
struct AnnotationFile {
    double fps = 10.0;
    int frame_count = 0;
    std::vector<TrackAnnotation> tracks;

    bool operator==(const AnnotationFile&) const = default;
};

/// Text format, one record per line:
///   # tamos-annotations v1
///   # fps=<real>
///   # frames=<count>
///   # object=<id>,<label>
///   <frame>,<object_id>,<x>,<y>,<w>,<h>
///   <frame>,<object_id>,absent
/// Coordinates are written with 17 significant digits so parsing restores
/// the exact doubles.
std::string serialize_annotations(const AnnotationFile& file);
AnnotationFile parse_annotations(std::string_view text);
void write_annotations(const AnnotationFile& file, const std::filesystem::path& path);
AnnotationFile read_annotations(const std::filesystem::path& path);

struct Sequence {
    std::string name;
    std::vector<Image> frames;
    AnnotationFile annotations;
};

enum class ShapeKind { Rectangle, Ellipse, Diamond };
enum class MotionKind { Static, Linear, Sinusoidal };

struct SynthObject {
    ShapeKind shape = ShapeKind::Rectangle;
    std::array<double, 3> color{1.0, 0.0, 0.0};
    double width = 24.0;
    double height = 24.0;
    double x = 0.0;  // top-left at frame 0
    double y = 0.0;
    MotionKind motion = MotionKind::Linear;
    double vx = 0.0;  // px / frame
    double vy = 0.0;
    double amplitude_x = 0.0;  // sinusoidal motion
    double amplitude_y = 0.0;
    double period_frames = 30.0;
    std::string label;
};

/// A covering occluder drawn over `object` for frames [start, end).
struct OcclusionEvent {
    int object = 0;
    int start = 0;
    int end = 0;
};

/// The object leaves the view for frames [start, end).
struct OutOfViewEvent {
    int object = 0;
    int start = 0;
    int end = 0;
};

struct SynthConfig {
    int image_height = 128;
    int image_width = 192;
    int object_count = 2;
    int frames = 30;
    double fps = 10.0;
    std::uint64_t seed = 1;
    double min_size = 20.0;
    double max_size = 40.0;
    double max_speed = 3.0;
    /// Random objects get this motion; explicit `objects` keep their own.
    MotionKind motion = MotionKind::Linear;
    bool bounce = true;
    /// All objects share one shape and colour.
    bool distractors = false;
    double background_texture = 0.15;
    double visibility_threshold = 0.25;
    std::vector<SynthObject> objects;  // when empty, drawn from the seed
    std::vector<OcclusionEvent> occlusions;
    std::vector<OutOfViewEvent> out_of_view;
};

/// Counters kept by the generator while rendering.
struct GeneratorBookkeeping {
    int frames = 0;
    int tracks = 0;
    int present_boxes = 0;
    std::set<std::string> labels;
};

struct GeneratedSequence {
    Sequence sequence;
    GeneratorBookkeeping bookkeeping;
};

/// Renders moving shapes with exact boxes. A target whose visible pixel
/// fraction drops below `visibility_threshold` is annotated absent.
GeneratedSequence generate_sequence(const SynthConfig& config, std::string name = "seq");

/// Object layout the generator would draw for a config without explicit objects.
std::vector<SynthObject> random_objects(const SynthConfig& config);

/// Drops tracks whose present span (first to last present frame) lasts
/// less than `min_seconds` at the file's fps.
AnnotationFile filter_short_tracks(const AnnotationFile& file, double min_seconds = 4.0);

struct DatasetStats {
    int videos = 0;
    int classes = 0;
    double avg_video_frames = 0.0;
    double avg_video_seconds = 0.0;
    double avg_tracks_per_video = 0.0;
    double avg_track_boxes = 0.0;
    double avg_track_seconds = 0.0;
    double avg_instances_per_frame = 0.0;
    long long total_annotations = 0;
    std::vector<double> annotation_fps;  // distinct values, ascending
};

/// Corpus statistics in the layout of a benchmark comparison table.
/// Per-video means for video length and tracks per video; track lengths
/// average over all tracks; instances per frame pool all frames.
DatasetStats dataset_stats(std::span<const AnnotationFile> files);
std::string format_stats_table(const DatasetStats& stats);

/// Corpus layout: <root>/<sequence>/frames/NNNNNN.ppm and
/// <root>/<sequence>/annotations.txt.
void write_sequence(const Sequence& sequence, const std::filesystem::path& root);
Sequence read_sequence(const std::filesystem::path& directory);
std::vector<std::filesystem::path> list_sequences(const std::filesystem::path& root);
std::vector<Sequence> read_corpus(const std::filesystem::path& root);

}  // namespace tamos
