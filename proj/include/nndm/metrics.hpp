#pragma once

#include "nndm/segmentation.hpp"
#include "nndm/tensor.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace nndm {

/// Binary [H, W] mask with per-axis physical spacing (row, column).
class BinaryMask {
public:
    BinaryMask(std::size_t height, std::size_t width, std::vector<std::uint8_t> values,
               std::array<double, 2> spacing = {1.0, 1.0});

    /// Channel `channel` of a soft mask, foreground where p >= 0.5.
    static BinaryMask from_probabilities(const Tensor& probabilities, std::size_t channel = 0,
                                         std::array<double, 2> spacing = {1.0, 1.0});

    std::size_t height() const noexcept { return height_; }
    std::size_t width() const noexcept { return width_; }
    const std::array<double, 2>& spacing() const noexcept { return spacing_; }
    bool at(std::size_t y, std::size_t x) const noexcept { return values_[y * width_ + x] != 0; }
    const std::vector<std::uint8_t>& values() const noexcept { return values_; }
    std::size_t count() const noexcept;

    /// Foreground pixels with at least one background 4-neighbour; the border is background.
    std::vector<std::array<std::size_t, 2>> boundary() const;

    BinaryMask with_spacing(std::array<double, 2> spacing) const;

private:
    std::size_t height_;
    std::size_t width_;
    std::vector<std::uint8_t> values_;
    std::array<double, 2> spacing_;
};

inline constexpr double kBinarizeThreshold = 0.5;

struct CaseMetrics {
    double dsc = 0.0;
    std::optional<double> hd95;  // empty when either mask is empty
    double vs = 0.0;
};

/// 2|A n B| / (|A| + |B|); 1 when both are empty.
double dice(const BinaryMask& a, const BinaryMask& b);

/// Nearest-rank 95th percentile of the pooled directed boundary-to-boundary distances.
std::optional<double> hd95(const BinaryMask& a, const BinaryMask& b);

/// 1 - ||A| - |B|| / (|A| + |B|); 1 when both are empty.
double volumetric_similarity(const BinaryMask& a, const BinaryMask& b);

CaseMetrics evaluate_case(const BinaryMask& pred, const BinaryMask& truth);

struct MetricSummary {
    double mean = 0.0;
    double stddev = 0.0;  // population standard deviation
    std::size_t count = 0;
};

struct CaseRow {
    std::string case_id;
    CaseMetrics metrics;
};

struct MetricsReport {
    std::vector<CaseRow> cases;
    MetricSummary dsc;
    MetricSummary hd95;  // over cases with a defined hd95
    MetricSummary vs;
    std::size_t hd95_undefined = 0;
};

/// Per-case metrics plus aggregates; cases with undefined hd95 are excluded from its aggregate
/// and a warning is logged for each.
MetricsReport evaluate_cases(const std::vector<BinaryMask>& predictions,
                             const std::vector<BinaryMask>& truths,
                             const std::vector<std::string>& case_ids = {});

/// %.9g, or NA for NaN.
std::string format_metric(double v);

/// `case_id,dsc,hd95,vs` rows followed by `mean` and `std` rows; undefined hd95 prints as NA.
std::string metrics_csv(const MetricsReport& report);
void write_metrics_csv(const MetricsReport& report, const std::filesystem::path& path);

}  // namespace nndm
