#pragma once

#include "tamos/datakit.hpp"
#include "tamos/inference.hpp"
#include "tamos/network.hpp"
#include "tamos/training.hpp"

#include <filesystem>
#include <string>
#include <string_view>

namespace tamos {

/// Everything a run can be configured with. The file form is a JSON object
/// with optional sections "network", "train", "synth", "tracker"; missing
/// keys keep their defaults and unknown keys are rejected.
struct ProjectConfig {
    NetworkConfig network;
    TrainConfig train;
    SynthConfig synth;
    TrackerConfig tracker;
    /// Sequences written by `generate`.
    int sequences = 8;
};

/// Applies the JSON text on top of `config`.
void merge_config(ProjectConfig& config, std::string_view json_text);
void merge_config_file(ProjectConfig& config, const std::filesystem::path& path);
std::string dump_config(const ProjectConfig& config);

}  // namespace tamos
