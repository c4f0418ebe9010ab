#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tofdetect/detection.hpp"
#include "tofdetect/evaluation.hpp"
#include "tofdetect/model.hpp"
#include "tofdetect/phantom.hpp"
#include "tofdetect/training.hpp"

namespace tofd {

/// Everything a train / detect / evaluate run depends on.
struct ExperimentConfig {
    NetworkConfig network;
    TrainConfig train;
    VoiParams voi;
    DetectionParams detection;  // detection.voi is overwritten by `voi` when used
    int label_sphere_radius = 30;
    bool augment = true;
    AugmentParams augment_params;
    std::uint64_t model_seed = 0;

    DetectionParams detection_params() const {
        DetectionParams d = detection;
        d.voi = voi;
        return d;
    }
};

/// Settings scaled for 32^3 phantoms on one CPU core: a 3-level, 4-channel
/// network, label balls of radius 3 and 8-voxel boxes (limit radius 4).
ExperimentConfig desk_scale_config();

/// A case as stored on disk: raw volume plus annotation.
struct DataCase {
    std::string case_id;
    Volume volume;
    GroundTruth truth;
};

DataCase data_case_from_phantom(const Phantom& ph);
LabeledCase labeled_case(const DataCase& c, const VoiParams& voi);

struct TrainedModel {
    Model<float> model;
    TrainResult result;
};

/// Holds out config.train.validation_fraction of the cases for early
/// stopping, augments the rest when enabled, and trains a fresh model.
TrainedModel train_model(const std::vector<DataCase>& cases, const ExperimentConfig& config,
                         const EpochCallback& on_epoch = {});

EvalReport evaluate_model(const Model<float>& model, const std::vector<DataCase>& cases,
                          const DetectionParams& params);

struct FoldResult {
    int fold = 0;
    std::vector<std::string> test_ids;
    int epochs = 0;
    int best_epoch = 0;
    EvalReport report;
};

struct CrossvalResult {
    int k = 0;
    std::uint64_t seed = 0;
    std::vector<FoldResult> folds;
    std::optional<CrossvalSummary> summary;  // over folds with positives
    double mean_fp_per_case = 0.0;
};

CrossvalResult crossval(const std::vector<DataCase>& cases, int k, const ExperimentConfig& config,
                        std::uint64_t seed, const std::function<void(const FoldResult&)>& on_fold = {});

struct AblationCell {
    AttentionPosition position = AttentionPosition::Middle;
    int ratio = 16;
    std::optional<CrossvalResult> result;
    std::string error;  // set when the configuration is invalid
};

/// One cross-validation per (ratio, position) pair, rows ordered by ratio.
std::vector<AblationCell> ablate_attention(const std::vector<DataCase>& cases,
                                           const std::vector<AttentionPosition>& positions,
                                           const std::vector<int>& ratios, int k, const ExperimentConfig& config,
                                           std::uint64_t seed);

// Human-readable tables.
std::string format_report_table(const EvalReport& r);
std::string format_crossval_table(const CrossvalResult& r);
std::string format_ablation_table(const std::vector<AblationCell>& cells);

}  // namespace tofd
