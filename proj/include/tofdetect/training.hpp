#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "tofdetect/model.hpp"
#include "tofdetect/phantom.hpp"
#include "tofdetect/voi.hpp"
#include "tofdetect/volume.hpp"

namespace tofd {

struct LabeledCase {
    std::string case_id;
    Volume volume;
    BinaryMask aneurysm_mask;
    BinaryMask vessel_mask;
    std::vector<double> diameters_mm;
    bool positive = false;
};

/// Builds a training case from a phantom; the vessel mask comes from extract_voi.
LabeledCase labeled_case_from_phantom(const Phantom& ph, const VoiParams& voi = {});

enum LabelClass : std::uint8_t { kBackground = 0, kAneurysm = 1, kVessel = 2 };

struct LabelVolume {
    Index3 dims;
    std::vector<std::uint8_t> labels;

    std::size_t count(std::uint8_t cls) const;
};

/// Class 1 = (ball around each rounded annotation centroid) U annotation,
/// class 2 = vessel mask minus class 1, class 0 elsewhere. The ball is clipped to the volume.
LabelVolume prepare_label(const LabeledCase& c, int sphere_radius);

// ---------------------------------------------------------------- augmentation

enum AugmentFlag : unsigned { kAugNoise = 1u, kAugFlip = 2u, kAugHisteq = 4u };

struct AugmentParams {
    double noise_variance = 4.0;
    int max_kernel_width = 32;
    int histeq_bins = 256;
};

/// All 8 subsets of {noise, flip, histeq}, identity first.
std::vector<unsigned> augmentation_variants();
std::string variant_name(unsigned variant);

/// Applies the variant's filters in the order noise -> flip -> histeq.
/// Masks follow the flip only.
LabeledCase augment_case(const LabeledCase& c, unsigned variant, const AugmentParams& params = {});

std::vector<LabeledCase> augment_dataset(const std::vector<LabeledCase>& cases, const AugmentParams& params = {});

// ---------------------------------------------------------------- losses

enum class LossKind { SoftDice, CrossEntropy, DicePlusCe };

std::string_view loss_name(LossKind k);
LossKind parse_loss(std::string_view name);

template <class T>
struct LossValue {
    double value = 0.0;
    Tensor<T> grad;  // d loss / d probabilities
};

inline constexpr double kDiceEpsilon = 1e-5;

/// 1 - mean over foreground classes (channel >= 1) of (2 sum p t + eps) / (sum p + sum t + eps).
template <class T>
LossValue<T> soft_dice_loss(const Tensor<T>& probs, const Tensor<T>& target, double eps = kDiceEpsilon);

/// Mean over voxels of -log p[true class]; probabilities are floored at 1e-12.
template <class T>
LossValue<T> cross_entropy_loss(const Tensor<T>& probs, const Tensor<T>& target);

template <class T>
LossValue<T> compute_loss(LossKind kind, const Tensor<T>& probs, const Tensor<T>& target);

template <class T>
Tensor<T> one_hot(const LabelVolume& labels, int classes);

// ---------------------------------------------------------------- samples

/// Network-ready pair: input (1,1,s,s,s) and one-hot target (1,C,s,s,s).
struct Sample {
    std::string case_id;
    Tensor<float> input;
    Tensor<float> target;
};

/// Normalized, VOI-masked intensities scaled to [0, 1], resized to side^3.
Tensor<float> network_input(const Volume& masked_normalized, int side, GeometricTransform* transform = nullptr);

Sample make_sample(const LabeledCase& c, int side, int sphere_radius, int classes = 3);

// ---------------------------------------------------------------- training loop

struct TrainConfig {
    int batch_size = 1;
    double lr = 5e-4;
    int max_epochs = 300;
    int early_stop_patience = 20;
    std::uint64_t seed = 0;
    LossKind loss = LossKind::SoftDice;
    double validation_fraction = 0.1;
    /// Stop as soon as the epoch's mean training loss drops below this (0 = off).
    double stop_below = 0.0;

    bool operator==(const TrainConfig&) const = default;
};

void validate(const TrainConfig& config);

struct EpochRecord {
    int epoch = 0;  // 1-based
    double train_loss = 0.0;
    std::optional<double> val_loss;
    bool improved = false;
};

struct Checkpoint {
    int epoch = 0;
    double metric = 0.0;
    std::vector<std::pair<std::string, Tensor<float>>> parameters;
};

struct TrainResult {
    Checkpoint best;
    std::vector<EpochRecord> history;
    bool early_stopped = false;
};

/// Tracks the monitored metric; should_stop() once `patience` epochs pass without improvement.
class EarlyStopper {
public:
    explicit EarlyStopper(int patience) : patience_(patience) {}

    /// Returns true when this epoch improved on the best metric so far.
    bool observe(int epoch, double metric);
    bool should_stop() const noexcept { return best_epoch_ > 0 && since_best_ >= patience_; }
    int best_epoch() const noexcept { return best_epoch_; }
    double best_metric() const noexcept { return best_metric_; }

private:
    int patience_;
    int best_epoch_ = 0;
    double best_metric_ = 0.0;
    int since_best_ = 0;
};

Checkpoint snapshot(const Model<float>& model, int epoch, double metric);
void restore(Model<float>& model, const Checkpoint& checkpoint);

/// Mean loss over samples in inference mode.
double evaluate_loss(const Model<float>& model, const std::vector<Sample>& samples, LossKind kind);

/// Called after every epoch; returning false ends training after that epoch.
using EpochCallback = std::function<bool(const EpochRecord&)>;

/// Adam over shuffled samples, validation each epoch, early stopping on the
/// validation loss (training loss when `val` is empty). The model ends up
/// holding the best checkpoint's parameters.
TrainResult train(Model<float>& model, const std::vector<Sample>& train_set, const std::vector<Sample>& val,
                  const TrainConfig& config, const EpochCallback& on_epoch = {});

// ---------------------------------------------------------------- splitting

struct Fold {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
};

/// Seeded shuffle of 0..n-1, then contiguous chunks; the first n % k folds get one extra case.
std::vector<Fold> kfold_split(std::size_t n_cases, int k, std::uint64_t seed);

/// Holds out round(fraction * n) items (at least one when fraction > 0 and n >= 2).
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> holdout_split(const std::vector<std::size_t>& items,
                                                                            double fraction, std::uint64_t seed);

}  // namespace tofd
