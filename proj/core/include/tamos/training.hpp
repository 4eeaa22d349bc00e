#pragma once

#include "tamos/autodiff.hpp"
#include "tamos/datakit.hpp"
#include "tamos/encoding.hpp"
#include "tamos/geometry.hpp"
#include "tamos/image.hpp"
#include "tamos/network.hpp"

#include <cstdint>
#include <iosfwd>
#include <random>
#include <span>
#include <vector>

namespace tamos {

struct LossWeights {
    double lambda_cls = 100.0;
    double lambda_bbreg = 1.0;
    /// Focal loss of every unused embedding channel against an empty map.
    bool coupling_term = true;
    double gamma = 2.0;
    /// Cells whose Gaussian target exceeds this carry the box loss.
    double supervision_threshold = 0.05;

    void validate() const;
};

/// Quality focal loss on probabilities: BCE(p, y) * |p - y|^gamma, averaged
/// over cells and summed over channels. Throws on NaN.
double focal_loss(const ScoreMap& pred, const ScoreMap& target, double gamma = 2.0);

/// Same loss evaluated from logits as one graph node (stable for large
/// magnitudes). `targets` has the shape of `logits`.
ad::Var focal_loss_logits(const ad::Var& logits, const Matrix& targets, double gamma = 2.0);

/// Mean over `cells` of 1 - giou between the box decoded from the four LTRB
/// columns starting at `column` and `gt`.
ad::Var giou_loss_ltrb(const ad::Var& ltrb, int column, const GridSpec& grid, const Box& gt,
                       std::span<const int> cells);

/// One encoded object on the test frame. `channel` is its embedding index,
/// which is also its query row during training.
struct ObjectTarget {
    int channel = 0;
    MaybeBox box;
};

/// Gaussian target for one level; sigma is given in stride-16 cells and
/// keeps its pixel width on finer grids.
ScoreMap level_target(const MaybeBox& box, const GridSpec& grid, double sigma_cells);

/// Used channels against their Gaussian, unused channels against zero.
/// Throws when the channel count differs from `pool_size`.
ad::Var classification_loss(const ad::Var& logits, std::span<const ObjectTarget> targets, const GridSpec& grid,
                            int pool_size, double sigma_cells, const LossWeights& weights);

/// Probability-space version over explicit maps (one channel per pool entry).
double classification_loss(const ScoreMap& preds, std::span<const ObjectTarget> targets, double sigma_cells,
                           const LossWeights& weights);

/// GIoU loss over the supervision region of each present target, summed
/// over targets. Targets absent on the test frame are skipped.
ad::Var regression_loss(const ad::Var& ltrb, std::span<const ObjectTarget> targets, const GridSpec& grid,
                        double sigma_cells, const LossWeights& weights);

struct LossBreakdown {
    ad::Var total;
    double cls = 0.0;
    double bbreg = 0.0;
};

/// lambda_cls * L_cls + lambda_bbreg * L_bbreg, both summed over the encoder
/// output and the two FPN levels.
LossBreakdown total_loss(const HeadOutputs& heads, std::span<const ObjectTarget> targets, int pool_size,
                         double sigma_cells, const LossWeights& weights);

double weighted_total(double cls, double bbreg, const LossWeights& weights);

// ---- data -------------------------------------------------------------------

struct AugmentConfig {
    bool enabled = true;
    double scale_range = 0.1;      // s in [1 - r, 1 + r]
    double shift_range = 0.05;     // fraction of the frame size
    double flip_probability = 0.5;
    double color_jitter = 0.1;     // per-channel gain in [1 - j, 1 + j]
};

struct AugmentedFrame {
    Image image;
    std::vector<MaybeBox> boxes;
    BoxTransform transform;
};

/// Random scale and crop, horizontal flip and colour gain, applied to the
/// image and its boxes through one transform. The output keeps the input size.
AugmentedFrame augment_frame(const Image& image, std::span<const MaybeBox> boxes, const AugmentConfig& config,
                             std::mt19937_64& rng);

struct TrainingPair {
    /// First entry is the training frame; an optional second one plays the
    /// dynamic memory frame.
    std::vector<Image> train_images;
    std::vector<TargetAnnotationSet> train_annotations;
    Image test_image;
    std::vector<ObjectTarget> test_targets;
    std::vector<int> used_indices;
    int n = 0;
};

struct TrainingSource {
    std::vector<Sequence> sequences;
    double weight = 1.0;
};

struct PairSamplerConfig {
    AugmentConfig augment;
    int max_frame_gap = 30;
    double dynamic_frame_probability = 0.5;
};

/// Draws a source by weight, a sequence, a train frame with at least one
/// present object and a test frame within `max_frame_gap`. Frames are brought
/// to the network resolution and augmented; identities get random pool slots.
TrainingPair sample_training_pair(std::span<const TrainingSource> sources, const NetworkConfig& network,
                                  const PairSamplerConfig& config, std::mt19937_64& rng);

/// Builds the graph for one pair, querying the whole pool.
LossBreakdown pair_loss(const Network& net, const TrainingPair& pair, const LossWeights& weights);

// ---- optimisation -------------------------------------------------------------

struct OptimizerSchedule {
    double learning_rate = 1e-4;
    double decay_factor = 0.2;
    std::vector<double> decay_fractions{150.0 / 300.0, 250.0 / 300.0};
    double grad_clip = 0.1;
    double weight_decay = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    int epochs = 300;
    int steps_per_epoch = 10;
    int batch_size = 1;

    void validate() const;
    [[nodiscard]] double learning_rate_at(int epoch) const;
};

/// Scales all gradients so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
double clip_grad_norm(ParameterStore& params, double max_norm);

class AdamW {
public:
    AdamW(const ParameterStore& params, const OptimizerSchedule& schedule);
    void step(ParameterStore& params, double learning_rate);
    [[nodiscard]] long steps() const { return t_; }

private:
    OptimizerSchedule schedule_;
    std::vector<Matrix> m_, v_;
    long t_ = 0;
};

struct TrainConfig {
    OptimizerSchedule schedule;
    LossWeights loss;
    PairSamplerConfig sampler;
    std::uint64_t seed = 1;
    /// Stop early once this much wall time has passed (0 disables).
    double time_budget_seconds = 0.0;
};

struct StepRecord {
    long step = 0;
    int epoch = 0;
    double loss = 0.0;
    double cls = 0.0;
    double bbreg = 0.0;
    double learning_rate = 0.0;
    double grad_norm = 0.0;
};

/// One JSON object per line.
std::string trace_line(const StepRecord& record);

/// Forward, backward, clip and update on a fixed batch.
StepRecord train_step(Network& net, AdamW& optimizer, std::span<const TrainingPair> batch,
                      const LossWeights& weights, double learning_rate, double grad_clip);

struct TrainSummary {
    long steps = 0;
    double first_loss = 0.0;
    double last_loss = 0.0;
    bool stopped_by_budget = false;
};

/// Throws std::runtime_error with the step and components if the loss
/// becomes non-finite.
TrainSummary train(Network& net, std::span<const TrainingSource> sources, const TrainConfig& config,
                   std::ostream* trace = nullptr);

}  // namespace tamos
