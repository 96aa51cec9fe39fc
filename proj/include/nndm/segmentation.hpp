#pragma once

#include "nndm/nn.hpp"
#include "nndm/rng.hpp"
#include "nndm/tensor.hpp"

#include <span>
#include <vector>

namespace nndm {

/// Multi-channel image [C_in, H, W], each channel normalized to zero mean and unit variance.
class InputVolume {
public:
    InputVolume() = default;
    /// Takes an already-normalized tensor; rejects non-finite entries.
    explicit InputVolume(Tensor channels);
    /// Normalizes each channel of `raw` (constant channels are only centered).
    static InputVolume normalized(Tensor raw);

    const Tensor& tensor() const noexcept { return channels_; }
    bool operator==(const InputVolume&) const = default;

private:
    Tensor channels_;
};

/// Binary labels [C_mask, H, W] with entries exactly 0 or 1.
class GroundTruthMask {
public:
    GroundTruthMask() = default;
    explicit GroundTruthMask(Tensor labels);

    const Tensor& tensor() const noexcept { return labels_; }
    std::size_t foreground() const;
    bool operator==(const GroundTruthMask&) const = default;

private:
    Tensor labels_;
};

/// Soft mask [C_mask, H, W] with entries in [0, 1].
class PredictedMask {
public:
    PredictedMask() = default;
    explicit PredictedMask(Tensor probabilities);

    const Tensor& tensor() const noexcept { return probabilities_; }
    bool operator==(const PredictedMask&) const = default;

private:
    Tensor probabilities_;
};

struct SegmentationConfig {
    int in_channels = 2;
    int mask_channels = 1;
    int depth = 3;
    int base_width = 16;
    int input_hw = 64;

    bool operator==(const SegmentationConfig&) const = default;
};

/// Baseline mapping x -> y_hat: U-Net followed by a sigmoid.
class SegmentationModel {
public:
    SegmentationModel(const SegmentationConfig& config, nn::UNet network);

    const SegmentationConfig& config() const noexcept { return config_; }
    const nn::UNet& network() const noexcept { return network_; }
    nn::UNet& network() noexcept { return network_; }

    bool operator==(const SegmentationModel&) const = default;

private:
    SegmentationConfig config_;
    nn::UNet network_;
};

SegmentationModel build_model(const SegmentationConfig& config, std::uint64_t seed);

PredictedMask predict(const SegmentationModel& model, const InputVolume& x);

inline constexpr double kProbabilityClamp = 1e-7;
inline constexpr double kDiceSmoothing = 1e-6;

/// Hybrid soft Dice + binary cross entropy over flattened channels:
///   1 - (2 sum p g + s) / (sum p^2 + sum g^2 + s) - mean[g log p + (1-g) log(1-p)]
/// with p clamped to [1e-7, 1 - 1e-7] inside the logs only. Channels are averaged.
/// When `grad` is nonempty it receives d loss / d p (same layout as p).
double dice_ce_loss(std::span<const double> p, std::span<const double> g, std::size_t channels,
                    std::span<double> grad = {});

double dice_ce_loss(const PredictedMask& p, const GroundTruthMask& g);

/// l_seg + lambda_weight * l_diff; lambda_weight must be >= 0.
double total_loss(double l_seg, double l_diff, double lambda_weight);

struct LabeledCase {
    InputVolume image;
    GroundTruthMask mask;
};

struct TrainOptions {
    double lr = 1e-4;
    int batch_size = 8;
};

/// One pass over `dataset` in seeded shuffled mini-batches; returns the mean per-case loss.
/// `optimizer` must have been created for the model parameters.
double train_epoch(SegmentationModel& model, std::span<const LabeledCase> dataset,
                   nn::Adam& optimizer, const TrainOptions& options, Rng& rng);

/// Forward + backward for one case: adds d(loss * weight)/d(params) to grads, returns loss and
/// the sigmoid output used.
double accumulate_case_gradient(const SegmentationModel& model, const LabeledCase& sample,
                                double weight, nn::Gradients& grads, PredictedMask* output = nullptr);

}  // namespace nndm
