#pragma once

#include "nndm/config.hpp"
#include "nndm/diffusion.hpp"
#include "nndm/nn.hpp"
#include "nndm/segmentation.hpp"

#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace nndm {

/// One logged epoch. Losses a stage does not compute are NaN.
struct HistoryRow {
    std::string stage;  // seg, diff, finetune
    int epoch = 0;
    double l_seg = std::numeric_limits<double>::quiet_NaN();
    double l_diff = std::numeric_limits<double>::quiet_NaN();
    double l_total = std::numeric_limits<double>::quiet_NaN();
};

bool same_history(const std::vector<HistoryRow>& a, const std::vector<HistoryRow>& b);

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
    int version = kCheckpointVersion;
    std::string stage;
    ExperimentConfig config;
    std::optional<SegmentationModel> segmentation;
    std::optional<nn::Adam> segmentation_optimizer;
    std::optional<NetworkNoisePredictor> predictor;
    std::optional<nn::Adam> predictor_optimizer;
    std::vector<HistoryRow> history;
    /// Evaluation results recorded at save time, keyed by name.
    std::map<std::string, double> metrics;
};

// Container layout:
//   magic "NNDMCKPT", u32 version, u64 header length, UTF-8 JSON header,
//   then the tensors listed in header["tensors"], each in the tensor encoding.
// Parameter values and Adam moments are stored as tensors named theta/<param>,
// theta.m/<param>, theta.v/<param> and likewise with phi for the predictor.
std::string encode_checkpoint(const Checkpoint& checkpoint);
Checkpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace nndm
