#include "nndm/data.hpp"
#include "nndm/diffusion.hpp"
#include "nndm/errors.hpp"
#include "nndm/metrics.hpp"
#include "nndm/tensor_io.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

using namespace nndm;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("nndm_test_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

GroundTruthMask square_mask(std::size_t hw, std::size_t lo, std::size_t hi) {
    Tensor m({1, hw, hw});
    for (std::size_t y = lo; y < hi; ++y)
        for (std::size_t x = lo; x < hi; ++x) m.at(0, y, x) = 1.0f;
    return GroundTruthMask(m);
}

}  // namespace

TEST(GeneratePhantoms, DeterministicAndSeedSensitive) {
    EXPECT_EQ(generate_phantoms(5, 32, 11, 0.2), generate_phantoms(5, 32, 11, 0.2));
    EXPECT_NE(generate_phantoms(5, 32, 11, 0.2), generate_phantoms(5, 32, 12, 0.2));
    // case i depends only on (seed, i)
    EXPECT_EQ(generate_phantoms(3, 32, 11, 0.2)[2], generate_phantoms(5, 32, 11, 0.2)[2]);
}

TEST(GeneratePhantoms, MaskIsRasterizedProvenance) {
    for (const auto& c : generate_phantoms(20, 48, 3, 0.25)) {
        ASSERT_TRUE(c.provenance);
        EXPECT_GE(c.provenance->lesions.size(), 1u);
        EXPECT_LE(c.provenance->lesions.size(), 3u);
        EXPECT_EQ(rasterize(c.provenance->lesions, 48), c.mask.tensor());
        EXPECT_EQ(c.volume.tensor().shape(), (std::vector<std::size_t>{2, 48, 48}));
        EXPECT_EQ(c.mask.tensor().shape(), (std::vector<std::size_t>{1, 48, 48}));
    }
}

TEST(GeneratePhantoms, ChannelsAreNormalized) {
    for (const auto& c : generate_phantoms(10, 64, 5, 0.25)) {
        for (std::size_t ch = 0; ch < 2; ++ch) {
            double mean = 0.0;
            double sq = 0.0;
            for (float v : c.volume.tensor().channel(ch)) {
                mean += v;
                sq += v * v;
            }
            mean /= 4096.0;
            const double sd = std::sqrt(sq / 4096.0 - mean * mean);
            EXPECT_NEAR(mean, 0.0, 0.1);
            EXPECT_NEAR(sd, 1.0, 0.1);
        }
    }
}

TEST(GeneratePhantoms, NoiselessChannelsArePiecewiseConstant) {
    for (const auto& c : generate_phantoms(5, 32, 8, 0.0)) {
        const Tensor core = rasterize(c.provenance->cores, 32);
        for (std::size_t ch = 0; ch < 2; ++ch) {
            std::set<float> levels(c.volume.tensor().channel(ch).begin(), c.volume.tensor().channel(ch).end());
            EXPECT_LE(levels.size(), 3u);
            // equal (lesion, core) labels give equal intensity
            for (std::size_t i = 1; i < core.size(); ++i) {
                if (core[i] == core[0] && c.mask.tensor()[i] == c.mask.tensor()[0]) {
                    EXPECT_EQ(c.volume.tensor().channel(ch)[i], c.volume.tensor().channel(ch)[0]);
                }
            }
        }
    }
}

TEST(GeneratePhantoms, ForegroundFractionCalibration) {
    for (const auto& c : generate_phantoms(200, 64, 2025, 0.25)) {
        const double fraction = static_cast<double>(c.mask.foreground()) / 4096.0;
        EXPECT_GE(fraction, 0.01) << c.id;
        EXPECT_LE(fraction, 0.35) << c.id;
    }
}

TEST(GeneratePhantoms, RejectsDegenerateSizes) {
    EXPECT_THROW(generate_phantoms(0, 32, 1, 0.1), ConfigError);
    EXPECT_THROW(generate_phantoms(1, 15, 1, 0.1), ConfigError);
    EXPECT_THROW(generate_phantoms(1, 32, 1, -0.1), ConfigError);
}

TEST(DegradeMask, ErodeSquare) {
    const GroundTruthMask m = square_mask(16, 3, 13);  // 10x10
    const PredictedMask d = degrade_mask(m, DegradeMode::erode, 1, 0);
    EXPECT_EQ(GroundTruthMask(d.tensor()), square_mask(16, 4, 12));  // 8x8
}

TEST(DegradeMask, EveryModeChangesTheMaskDeterministically) {
    for (const auto& c : generate_phantoms(10, 32, 19, 0.2)) {
        for (auto mode : {DegradeMode::erode, DegradeMode::boundary_noise, DegradeMode::blur_threshold}) {
            for (int magnitude : {1, 2}) {
                const PredictedMask d = degrade_mask(c.mask, mode, magnitude, 5);
                EXPECT_EQ(d, degrade_mask(c.mask, mode, magnitude, 5));
                const auto truth = BinaryMask::from_probabilities(c.mask.tensor());
                EXPECT_LT(dice(BinaryMask::from_probabilities(d.tensor()), truth), 1.0);
                const ResidualMap e = compute_residual(c.mask, d);
                EXPECT_TRUE(std::any_of(e.tensor().values().begin(), e.tensor().values().end(),
                                        [](float v) { return v != 0.0f; }));
            }
        }
    }
}

TEST(DegradeMask, Errors) {
    const GroundTruthMask m = square_mask(16, 3, 13);
    EXPECT_THROW(degrade_mask(m, DegradeMode::erode, 0, 0), ConfigError);
    EXPECT_THROW(parse_degrade_mode("sharpen"), ConfigError);
    EXPECT_THROW(degrade_mask(GroundTruthMask(Tensor({1, 8, 8})), DegradeMode::erode, 1, 0), DataError);
    EXPECT_EQ(parse_degrade_mode("blur_threshold"), DegradeMode::blur_threshold);
}

TEST(DegradeMask, StressProtocolIsSoftAndShrunk) {
    const auto cases = generate_phantoms(10, 64, 4, 0.25);
    for (const auto& c : cases) {
        const PredictedMask d = stress_degrade(c.mask, 9);
        EXPECT_LT(dice(BinaryMask::from_probabilities(d.tensor()), BinaryMask::from_probabilities(c.mask.tensor())), 0.95);
    }
}

TEST(SplitDataset, ExactCountsAndPartition) {
    const auto cases = generate_phantoms(10, 16, 1, 0.1);
    const DatasetManifest m = split_dataset(cases, {0.8, 0.1, 0.1}, 3);
    EXPECT_EQ(m.indices(Split::train).size(), 8u);
    EXPECT_EQ(m.indices(Split::val).size(), 1u);
    EXPECT_EQ(m.indices(Split::test).size(), 1u);
    std::set<std::string> ids;
    for (Split s : {Split::train, Split::val, Split::test})
        for (std::size_t i : m.indices(s)) EXPECT_TRUE(ids.insert(m.cases[i].id).second);
    std::set<std::string> all;
    for (const auto& c : cases) all.insert(c.id);
    EXPECT_EQ(ids, all);
    EXPECT_EQ(m, split_dataset(cases, {0.8, 0.1, 0.1}, 3));
}

TEST(SplitDataset, DeskProfileCounts) {
    const auto cases = generate_phantoms(250, 16, 1, 0.1);
    const DatasetManifest m = split_dataset(cases, {0.8, 0.1, 0.1}, 3);
    EXPECT_EQ(m.indices(Split::train).size(), 200u);
    EXPECT_EQ(m.indices(Split::val).size(), 25u);
    EXPECT_EQ(m.indices(Split::test).size(), 25u);
}

TEST(SplitDataset, Errors) {
    const auto cases = generate_phantoms(3, 16, 1, 0.1);
    EXPECT_THROW(split_dataset(cases, {0.8, 0.1, 0.1}, 1), DataError);
    const auto more = generate_phantoms(20, 16, 1, 0.1);
    EXPECT_THROW(split_dataset(more, {0.8, 0.2, 0.0}, 1), ConfigError);
    EXPECT_THROW(split_dataset(more, {0.8, 0.1, 0.2}, 1), ConfigError);
}

TEST(TensorIo, HeaderLayout) {
    const Tensor t({2, 3, 4}, 1.5f);
    const std::string bytes = encode_tensor(t);
    ASSERT_EQ(bytes.size(), kTensorHeaderBytes + 4 * 24);
    EXPECT_EQ(bytes.substr(0, 6), std::string("NNDMT\0", 6));
    EXPECT_EQ(static_cast<unsigned char>(bytes[6]), 1);
    EXPECT_EQ(static_cast<unsigned char>(bytes[8]), 3);
    EXPECT_EQ(static_cast<unsigned char>(bytes[12]), 2);
    EXPECT_EQ(static_cast<unsigned char>(bytes[16]), 3);
    EXPECT_EQ(static_cast<unsigned char>(bytes[20]), 4);
    // 1.5f = 0x3FC00000 little-endian
    EXPECT_EQ(static_cast<unsigned char>(bytes[24 + 2]), 0xC0);
    EXPECT_EQ(static_cast<unsigned char>(bytes[24 + 3]), 0x3F);
}

TEST(TensorIo, RoundTripPreservesBitsProperty) {
    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<std::size_t> shape;
        const int rank = rng.uniform_int(1, 3);
        for (int r = 0; r < rank; ++r) shape.push_back(static_cast<std::size_t>(rng.uniform_int(1, 6)));
        Tensor t(shape);
        for (float& v : t.values()) v = static_cast<float>(rng.normal() * 1e3);
        std::size_t offset = 0;
        const std::string bytes = encode_tensor(t);
        EXPECT_EQ(decode_tensor(bytes, offset), t);
        EXPECT_EQ(offset, bytes.size());
    }
}

TEST(Dataset, RoundTripIsByteExact) {
    const fs::path a = temp_dir("ds_a");
    const fs::path b = temp_dir("ds_b");
    const auto cases = generate_phantoms(12, 32, 6, 0.25);
    const DatasetManifest m = split_dataset(cases, {0.5, 0.25, 0.25}, 2);
    write_dataset(m, cases, a);
    const Dataset loaded = read_dataset(a);
    EXPECT_EQ(loaded.manifest, m);
    EXPECT_EQ(loaded.cases, cases);
    write_dataset(loaded.manifest, loaded.cases, b);
    for (const auto& entry : fs::recursive_directory_iterator(a)) {
        if (!entry.is_regular_file()) continue;
        const fs::path rel = fs::relative(entry.path(), a);
        EXPECT_EQ(read_file_bytes(entry.path()), read_file_bytes(b / rel)) << rel;
    }
}

TEST(Dataset, TruncatedTensorNamesCase) {
    const fs::path dir = temp_dir("ds_trunc");
    const auto cases = generate_phantoms(8, 16, 6, 0.25);
    write_dataset(split_dataset(cases, {0.5, 0.25, 0.25}, 2), cases, dir);
    const fs::path victim = dir / "tensors" / "case_0003.img";
    fs::resize_file(victim, fs::file_size(victim) - 10);
    try {
        read_dataset(dir);
        FAIL() << "expected DataError";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("case_0003"), std::string::npos) << e.what();
    }
}

TEST(Dataset, UnsupportedVersionRejected) {
    const fs::path dir = temp_dir("ds_version");
    const auto cases = generate_phantoms(8, 16, 6, 0.25);
    DatasetManifest m = split_dataset(cases, {0.5, 0.25, 0.25}, 2);
    m.version = kManifestVersion + 1;
    write_dataset(m, cases, dir);
    try {
        read_dataset(dir);
        FAIL() << "expected DataError";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
    }
}

TEST(Dataset, MissingDirectory) {
    EXPECT_THROW(read_dataset(fs::temp_directory_path() / "nndm_no_such_dataset"), DataError);
}

TEST(ImportExternalCase, NormalizesAndBinarizes) {
    Tensor image({4, 8, 8});
    Tensor labels({1, 8, 8});
    for (std::size_t i = 0; i < image.size(); ++i) image[i] = static_cast<float>(i % 7) * 100.0f;
    labels[10] = 2.0f;
    labels[11] = 4.0f;
    const PhantomCase c = import_external_case("brats_like", image, labels);
    EXPECT_FALSE(c.provenance);
    EXPECT_EQ(c.mask.foreground(), 2u);
    double mean = 0.0;
    for (float v : c.volume.tensor().channel(0)) mean += v;
    EXPECT_NEAR(mean / 64.0, 0.0, 1e-5);
    EXPECT_THROW(import_external_case("bad", Tensor({1, 8, 8}), Tensor({1, 4, 4})), DataError);
}
