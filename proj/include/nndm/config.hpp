#pragma once

#include "nndm/data.hpp"
#include "nndm/diffusion.hpp"
#include "nndm/segmentation.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace nndm {

inline constexpr int kConfigVersion = 1;

struct DataConfig {
    int n = 250;
    int hw = 64;
    double noise_sigma = 0.25;
    SplitFractions fractions;

    bool operator==(const DataConfig& o) const {
        return n == o.n && hw == o.hw && noise_sigma == o.noise_sigma &&
               fractions.train == o.fractions.train && fractions.val == o.fractions.val &&
               fractions.test == o.fractions.test;
    }
};

struct SegmentationStage {
    int depth = 3;
    int base_width = 16;
    int epochs = 30;
    double lr = 1e-4;
    int batch_size = 8;

    bool operator==(const SegmentationStage&) const = default;
};

/// Where the diffusion stage takes y_hat_0 from.
enum class InitialMaskSource {
    model,   // the trained segmentation network
    stress,  // stress_degrade of the ground truth
};

InitialMaskSource parse_initial_mask_source(std::string_view name);
std::string_view to_string(InitialMaskSource source);

struct DiffusionStage {
    int T = 100;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    int depth = 3;
    int base_width = 16;
    int time_embed_dim = 32;
    bool condition_on_mask = true;
    int epochs = 20;
    double lr = 1e-3;
    int batch_size = 8;
    int inference_steps = 50;
    ReverseMean reverse_mean = ReverseMean::standard;
    StrideCoefficients stride_coefficients = StrideCoefficients::respaced;
    InitialMaskSource initial_mask = InitialMaskSource::model;

    bool operator==(const DiffusionStage&) const = default;
};

struct AblationStage {
    /// Arm families: full, no-diffusion, no-residual-conditioning, steps, train-T.
    std::vector<std::string> arms{"full", "no-diffusion", "no-residual-conditioning", "steps"};
    std::vector<int> steps{25, 50, 100};
    std::vector<int> train_T;

    bool operator==(const AblationStage&) const = default;
};

struct ExperimentConfig {
    int version = kConfigVersion;
    std::uint64_t seed = 2025;
    std::string dataset_dir = "data";
    std::string output_dir = "run";
    DataConfig data;
    SegmentationStage segmentation;
    DiffusionStage diffusion;
    double lambda_weight = 0.5;
    int finetune_epochs = 5;
    AblationStage ablation;

    bool operator==(const ExperimentConfig&) const = default;

    SegmentationConfig segmentation_config() const;
    PredictorConfig predictor_config() const;
    NoiseSchedule schedule() const;
    RefineOptions refine_options() const;
};

/// Throws ConfigError naming the first violated constraint.
void validate(const ExperimentConfig& config);

/// Missing keys take defaults; unknown keys and a missing or unsupported version are errors.
ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::filesystem::path& path);
std::string config_to_json(const ExperimentConfig& config);

}  // namespace nndm
