#pragma once

#include "tamos/datakit.hpp"
#include "tamos/geometry.hpp"
#include "tamos/image.hpp"
#include "tamos/network.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace tamos {

struct TrackerConfig {
    double memory_threshold = 0.85;
    bool memory_update = true;
    /// Predictions below this presence are written with reported = false.
    double report_threshold = 0.0;
    /// Single-object zoom for targets smaller than zoom_min_size.
    bool zoom = false;
    double zoom_min_size = 30.0;

    bool operator==(const TrackerConfig&) const = default;
};

/// A training frame after encoding: the encoded map plus the annotation
/// that produced it (working coordinates).
struct MemoryFrame {
    Matrix values;  // cells x c
    std::vector<TargetAnnotation> annotations;

    bool operator==(const MemoryFrame&) const = default;
};

struct TrackerState {
    std::vector<int> object_ids;
    std::vector<int> embedding_indices;  // aligned with object_ids, fixed after init
    MemoryFrame initial;
    std::optional<MemoryFrame> dynamic;
    std::vector<Box> last_boxes;    // original frame coordinates
    std::vector<double> last_scores;
    int frame_index = 0;
    int memory_updates = 0;

    [[nodiscard]] int objects() const { return static_cast<int>(object_ids.size()); }
    bool operator==(const TrackerState&) const = default;
};

/// Lossless JSON form (doubles are written in shortest round-trip form).
std::string serialize_state(const TrackerState& state);
TrackerState parse_state(std::string_view text);

struct ObjectPrediction {
    int object_id = 0;
    Box box;
    double presence = 0.0;
    bool reported = true;
};

struct FramePrediction {
    int frame_index = 0;
    std::vector<ObjectPrediction> objects;
    bool memory_updated = false;
    bool zoomed = false;
};

/// Crop that brings a small target up to a minimum size at working
/// resolution. `to_crop` maps original coordinates into the crop.
struct ZoomWindow {
    bool identity = true;
    double x0 = 0.0;
    double y0 = 0.0;
    double scale = 1.0;  // working pixels per original pixel
    BoxTransform to_crop;

    [[nodiscard]] Box to_original(const Box& b) const { return to_crop.inverse().apply(b); }
};

/// Identity (plain fit-to-resolution) unless the target would measure less
/// than min_size in either dimension at working resolution; then the window
/// is centred on the target with scale min_size / min(w, h).
ZoomWindow zoom_crop(int frame_height, int frame_width, const Box& last_box, double min_size, int out_height,
                     int out_width);

/// All-objects rule: every presence strictly above tau. Empty input never updates.
bool should_update_memory(std::span<const double> presences, double tau);

class Tracker {
public:
    Tracker(const Network& net, TrackerConfig config);

    [[nodiscard]] const TrackerConfig& config() const { return config_; }

    /// Embedding slots 0..n-1 in input order. Throws when n exceeds the pool
    /// ("exceeds embedding pool capacity") or when n is zero.
    [[nodiscard]] TrackerState init(const Image& first_frame, std::span<const Box> boxes,
                                    std::span<const int> object_ids = {}) const;

    [[nodiscard]] std::pair<FramePrediction, TrackerState> track_frame(const TrackerState& state,
                                                                        const Image& frame) const;

    /// Replaces the dynamic frame with `working_frame` encoded at the
    /// predicted boxes when the all-objects rule holds.
    [[nodiscard]] TrackerState maybe_update_memory(const TrackerState& state, const Image& working_frame,
                                                   std::span<const Box> working_boxes,
                                                   std::span<const double> presences) const;

private:
    [[nodiscard]] MemoryFrame encode_frame(const Image& working_frame, std::span<const int> indices,
                                           std::span<const Box> working_boxes) const;

    const Network& net_;
    TrackerConfig config_;
};

struct FrameCost {
    std::uint64_t ops = 0;
    double seconds = 0.0;
};

/// Cost of tracking `frame` after initialising on `init_frame`: one joint
/// call for all boxes, or (independent) one single-object tracker per box.
/// Seconds are the minimum over `repeats`; initialisation is not counted.
FrameCost measure_frame_cost(const Tracker& tracker, const Image& init_frame, const Image& frame,
                             std::span<const Box> boxes, bool independent, int repeats = 1);

/// Prediction file, one line per frame per object:
///   <frame>,<object_id>,<x>,<y>,<w>,<h>,<presence>
/// after a "# tamos-predictions v1" header. Coordinates and presence carry
/// 17 significant digits. Unreported predictions carry a trailing ",hidden".
struct PredictionRecord {
    int frame = 0;
    int object_id = 0;
    Box box;
    double presence = 0.0;
    bool reported = true;

    bool operator==(const PredictionRecord&) const = default;
};

/// Tracks one sequence from the objects present in its first frame. Frame 0
/// carries the initial boxes with presence 1.
std::vector<PredictionRecord> run_sequence(const Tracker& tracker, const Sequence& sequence);

std::string serialize_predictions(std::span<const PredictionRecord> records);
std::vector<PredictionRecord> parse_predictions(std::string_view text);
void write_predictions(std::span<const PredictionRecord> records, const std::filesystem::path& path);
std::vector<PredictionRecord> read_predictions(const std::filesystem::path& path);

}  // namespace tamos
