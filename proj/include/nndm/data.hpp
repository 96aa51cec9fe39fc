#pragma once

#include "nndm/segmentation.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace nndm {

/// Rotated ellipse in pixel coordinates; pixel (x, y) is inside when its centre satisfies
/// ((dx cos r + dy sin r) / a)^2 + ((-dx sin r + dy cos r) / b)^2 <= 1.
struct Ellipse {
    double cx = 0.0;
    double cy = 0.0;
    double semi_a = 1.0;
    double semi_b = 1.0;
    double rotation = 0.0;

    bool contains(double x, double y) const;
    bool operator==(const Ellipse&) const = default;
};

/// Everything needed to re-render a phantom case.
struct PhantomProvenance {
    std::uint64_t seed = 0;
    std::vector<Ellipse> lesions;
    std::vector<Ellipse> cores;
    std::vector<double> background;  // per channel
    std::vector<double> lesion_gain;
    std::vector<double> core_gain;
    double noise_sigma = 0.0;

    bool operator==(const PhantomProvenance&) const = default;
};

struct PhantomCase {
    std::string id;
    InputVolume volume;
    GroundTruthMask mask;
    std::optional<PhantomProvenance> provenance;  // empty for imported cases

    bool operator==(const PhantomCase&) const = default;
};

inline constexpr int kPhantomChannels = 2;

/// Union of the ellipses rasterized to a [1, hw, hw] binary mask.
Tensor rasterize(const std::vector<Ellipse>& ellipses, int hw);

/// n cases of 1-3 elliptic lesions with brighter cores. Channel 0 brightens the whole lesion,
/// channel 1 mostly the core. Case i depends only on (seed, i).
std::vector<PhantomCase> generate_phantoms(int n, int hw, std::uint64_t seed, double noise_sigma);

/// Wraps an externally sourced volume (e.g. one converted from a BraTS slice) as a case:
/// channels are normalized, labels > 0 become foreground.
PhantomCase import_external_case(std::string id, Tensor raw_image, const Tensor& labels);

enum class DegradeMode { erode, boundary_noise, blur_threshold };

DegradeMode parse_degrade_mode(std::string_view name);

/// 4-neighbourhood erosion repeated `iterations` times; the image border counts as background.
Tensor erode4(const Tensor& mask, int iterations);
/// 4-neighbourhood dilation repeated `iterations` times.
Tensor dilate4(const Tensor& mask, int iterations);

/// Imperfect soft version of `mask` whose 0.5-threshold always differs from it.
///   erode:          `magnitude` erosion passes
///   boundary_noise: pixels within `magnitude` of the boundary replaced by U(0,1)
///   blur_threshold: box blur of radius `magnitude`, kept where the blur reaches 0.75
PredictedMask degrade_mask(const GroundTruthMask& mask, DegradeMode mode, int magnitude,
                           std::uint64_t seed);

/// Erosion by 2 followed by boundary noise of width 1: the refinement stress baseline.
PredictedMask stress_degrade(const GroundTruthMask& mask, std::uint64_t seed);

enum class Split { train, val, test };

std::string_view to_string(Split split);
Split parse_split(std::string_view name);

struct ManifestEntry {
    std::string id;
    Split split = Split::train;
    std::string image_path;  // relative to the dataset directory
    std::string mask_path;
    std::vector<std::size_t> image_shape;
    std::vector<std::size_t> mask_shape;
    std::size_t foreground = 0;
    std::optional<PhantomProvenance> provenance;

    bool operator==(const ManifestEntry&) const = default;
};

struct SplitFractions {
    double train = 0.8;
    double val = 0.1;
    double test = 0.1;
};

inline constexpr int kManifestVersion = 1;

struct DatasetManifest {
    int version = kManifestVersion;
    std::uint64_t seed = 0;
    SplitFractions fractions;
    std::vector<ManifestEntry> cases;  // generation order

    std::vector<std::size_t> indices(Split split) const;
    bool operator==(const DatasetManifest& other) const {
        return version == other.version && seed == other.seed && cases == other.cases;
    }
};

/// Shuffles by seed, then assigns round(f n) cases to train and val and the rest to test.
DatasetManifest split_dataset(const std::vector<PhantomCase>& cases, const SplitFractions& fractions,
                              std::uint64_t seed);

/// Layout: dir/manifest.json, dir/tensors/<id>.img, dir/tensors/<id>.msk.
void write_dataset(const DatasetManifest& manifest, const std::vector<PhantomCase>& cases,
                   const std::filesystem::path& dir);

struct Dataset {
    DatasetManifest manifest;
    std::vector<PhantomCase> cases;  // manifest order
};

Dataset read_dataset(const std::filesystem::path& dir);

}  // namespace nndm
