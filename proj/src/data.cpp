#include "nndm/data.hpp"

#include "nndm/errors.hpp"
#include "nndm/rng.hpp"
#include "nndm/tensor_io.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>

namespace nndm {

using nlohmann::json;

bool Ellipse::contains(double x, double y) const {
    const double dx = x - cx;
    const double dy = y - cy;
    const double c = std::cos(rotation);
    const double s = std::sin(rotation);
    const double u = (dx * c + dy * s) / semi_a;
    const double v = (-dx * s + dy * c) / semi_b;
    return u * u + v * v <= 1.0;
}

Tensor rasterize(const std::vector<Ellipse>& ellipses, int hw) {
    const auto n = static_cast<std::size_t>(hw);
    Tensor mask({1, n, n});
    for (std::size_t y = 0; y < n; ++y) {
        for (std::size_t x = 0; x < n; ++x) {
            for (const Ellipse& e : ellipses) {
                if (e.contains(static_cast<double>(x), static_cast<double>(y))) {
                    mask.at(0, y, x) = 1.0f;
                    break;
                }
            }
        }
    }
    return mask;
}

namespace {

PhantomCase make_phantom(std::string id, int hw, std::uint64_t seed, double noise_sigma) {
    Rng rng(seed);
    auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * rng.uniform(); };
    PhantomProvenance prov;
    prov.seed = seed;
    prov.noise_sigma = noise_sigma;
    const int count = rng.uniform_int(1, 3);
    for (int k = 0; k < count; ++k) {
        Ellipse lesion;
        lesion.semi_a = uniform(0.07, 0.18) * hw;
        lesion.semi_b = uniform(0.07, 0.18) * hw;
        lesion.rotation = uniform(0.0, std::numbers::pi);
        const double margin = std::max(lesion.semi_a, lesion.semi_b) + 1.0;
        lesion.cx = uniform(margin, hw - 1.0 - margin);
        lesion.cy = uniform(margin, hw - 1.0 - margin);
        Ellipse core = lesion;
        const double scale = uniform(0.4, 0.6);
        core.semi_a *= scale;
        core.semi_b *= scale;
        prov.lesions.push_back(lesion);
        prov.cores.push_back(core);
    }
    prov.background = {uniform(-0.2, 0.2), uniform(-0.2, 0.2)};
    prov.lesion_gain = {uniform(0.8, 1.2), uniform(0.2, 0.4)};
    prov.core_gain = {uniform(0.3, 0.5), uniform(0.8, 1.2)};

    Tensor mask = rasterize(prov.lesions, hw);
    const Tensor core = rasterize(prov.cores, hw);
    const auto n = static_cast<std::size_t>(hw);
    Tensor raw({kPhantomChannels, n, n});
    for (std::size_t c = 0; c < kPhantomChannels; ++c) {
        auto plane = raw.channel(c);
        for (std::size_t i = 0; i < plane.size(); ++i) {
            double v = prov.background[c] + prov.lesion_gain[c] * mask[i] + prov.core_gain[c] * core[i];
            if (noise_sigma > 0.0) {
                v += noise_sigma * rng.normal();
            }
            plane[i] = static_cast<float>(v);
        }
    }
    return PhantomCase{std::move(id), InputVolume::normalized(std::move(raw)),
                       GroundTruthMask(std::move(mask)), std::move(prov)};
}

std::string case_id(int index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "case_%04d", index);
    return buf;
}

}  // namespace

std::vector<PhantomCase> generate_phantoms(int n, int hw, std::uint64_t seed, double noise_sigma) {
    if (n < 1) {
        throw ConfigError("generate_phantoms: n must be >= 1");
    }
    if (hw < 16) {
        throw ConfigError("generate_phantoms: hw must be >= 16");
    }
    if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) {
        throw ConfigError("generate_phantoms: noise sigma must be finite and >= 0");
    }
    std::vector<PhantomCase> cases;
    cases.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        cases.push_back(make_phantom(case_id(i), hw, derive_seed(seed, "phantom", static_cast<std::uint64_t>(i)),
                                     noise_sigma));
    }
    return cases;
}

PhantomCase import_external_case(std::string id, Tensor raw_image, const Tensor& labels) {
    if (raw_image.rank() != 3 || labels.rank() != 3 || raw_image.height() != labels.height() ||
        raw_image.width() != labels.width()) {
        throw DataError("imported case " + id + ": image and labels must be [C,H,W] of equal extent");
    }
    Tensor mask(labels.shape());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        mask[i] = labels[i] > 0.0f ? 1.0f : 0.0f;
    }
    return PhantomCase{std::move(id), InputVolume::normalized(std::move(raw_image)),
                       GroundTruthMask(std::move(mask)), std::nullopt};
}

DegradeMode parse_degrade_mode(std::string_view name) {
    if (name == "erode") return DegradeMode::erode;
    if (name == "boundary_noise") return DegradeMode::boundary_noise;
    if (name == "blur_threshold") return DegradeMode::blur_threshold;
    throw ConfigError("unknown degradation mode '" + std::string(name) + "'");
}

namespace {

// One morphology pass; `erode` keeps pixels whose 4-neighbourhood is all foreground.
Tensor morph4(const Tensor& mask, bool erode) {
    Tensor out(mask.shape());
    const auto h = static_cast<long>(mask.height());
    const auto w = static_cast<long>(mask.width());
    for (std::size_t c = 0; c < mask.channels(); ++c) {
        auto at = [&](long y, long x) {
            return y >= 0 && y < h && x >= 0 && x < w && mask.at(c, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) > 0.5f;
        };
        for (long y = 0; y < h; ++y) {
            for (long x = 0; x < w; ++x) {
                const bool centre = at(y, x);
                const bool n4[4] = {at(y - 1, x), at(y + 1, x), at(y, x - 1), at(y, x + 1)};
                bool v;
                if (erode) {
                    v = centre && n4[0] && n4[1] && n4[2] && n4[3];
                } else {
                    v = centre || n4[0] || n4[1] || n4[2] || n4[3];
                }
                out.at(c, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = v ? 1.0f : 0.0f;
            }
        }
    }
    return out;
}

bool same_after_threshold(const Tensor& soft, const Tensor& mask) {
    for (std::size_t i = 0; i < soft.size(); ++i) {
        if ((soft[i] > 0.5f) != (mask[i] > 0.5f)) {
            return false;
        }
    }
    return true;
}

}  // namespace

Tensor erode4(const Tensor& mask, int iterations) {
    Tensor out = mask;
    for (int i = 0; i < iterations; ++i) {
        out = morph4(out, true);
    }
    return out;
}

Tensor dilate4(const Tensor& mask, int iterations) {
    Tensor out = mask;
    for (int i = 0; i < iterations; ++i) {
        out = morph4(out, false);
    }
    return out;
}

PredictedMask degrade_mask(const GroundTruthMask& mask, DegradeMode mode, int magnitude,
                           std::uint64_t seed) {
    if (magnitude < 1) {
        throw ConfigError("degrade_mask: magnitude must be >= 1");
    }
    const Tensor& m = mask.tensor();
    if (mask.foreground() == 0) {
        throw DataError("degrade_mask: cannot degrade an empty mask");
    }
    Rng rng(seed);
    Tensor out;
    switch (mode) {
        case DegradeMode::erode:
            out = erode4(m, magnitude);
            break;
        case DegradeMode::boundary_noise: {
            const Tensor outer = dilate4(m, magnitude);
            const Tensor inner = erode4(m, magnitude);
            out = m;
            for (std::size_t i = 0; i < out.size(); ++i) {
                if (outer[i] > 0.5f && inner[i] < 0.5f) {
                    out[i] = static_cast<float>(rng.uniform());
                }
            }
            break;
        }
        case DegradeMode::blur_threshold: {
            out = Tensor(m.shape());
            const auto h = static_cast<long>(m.height());
            const auto w = static_cast<long>(m.width());
            const double area = std::pow(2.0 * magnitude + 1.0, 2.0);
            for (std::size_t c = 0; c < m.channels(); ++c) {
                for (long y = 0; y < h; ++y) {
                    for (long x = 0; x < w; ++x) {
                        double sum = 0.0;
                        for (long dy = -magnitude; dy <= magnitude; ++dy) {
                            for (long dx = -magnitude; dx <= magnitude; ++dx) {
                                const long sy = y + dy;
                                const long sx = x + dx;
                                if (sy >= 0 && sy < h && sx >= 0 && sx < w) {
                                    sum += m.at(c, static_cast<std::size_t>(sy), static_cast<std::size_t>(sx));
                                }
                            }
                        }
                        out.at(c, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) =
                            sum / area >= 0.75 ? 1.0f : 0.0f;
                    }
                }
            }
            break;
        }
    }
    if (same_after_threshold(out, m)) {
        // Remove the first boundary pixel so the degradation is never an identity.
        const Tensor inner = erode4(m, 1);
        for (std::size_t i = 0; i < out.size(); ++i) {
            if (m[i] > 0.5f && inner[i] < 0.5f) {
                out[i] = 0.0f;
                break;
            }
        }
    }
    return PredictedMask(std::move(out));
}

PredictedMask stress_degrade(const GroundTruthMask& mask, std::uint64_t seed) {
    const PredictedMask eroded = degrade_mask(mask, DegradeMode::erode, 2, seed);
    Tensor binary = eroded.tensor();
    if (std::none_of(binary.values().begin(), binary.values().end(), [](float v) { return v > 0.5f; })) {
        return eroded;
    }
    return degrade_mask(GroundTruthMask(std::move(binary)), DegradeMode::boundary_noise, 1,
                        derive_seed(seed, "boundary"));
}

std::string_view to_string(Split split) {
    switch (split) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "train";
}

Split parse_split(std::string_view name) {
    if (name == "train") return Split::train;
    if (name == "val") return Split::val;
    if (name == "test") return Split::test;
    throw ConfigError("unknown split '" + std::string(name) + "'");
}

std::vector<std::size_t> DatasetManifest::indices(Split split) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < cases.size(); ++i) {
        if (cases[i].split == split) {
            out.push_back(i);
        }
    }
    return out;
}

DatasetManifest split_dataset(const std::vector<PhantomCase>& cases, const SplitFractions& fractions,
                              std::uint64_t seed) {
    if (!(fractions.train > 0.0 && fractions.val > 0.0 && fractions.test > 0.0) ||
        std::abs(fractions.train + fractions.val + fractions.test - 1.0) > 1e-9) {
        throw ConfigError("split fractions must be positive and sum to 1");
    }
    const std::size_t n = cases.size();
    const auto n_train = static_cast<std::size_t>(std::llround(fractions.train * static_cast<double>(n)));
    const auto n_val = static_cast<std::size_t>(std::llround(fractions.val * static_cast<double>(n)));
    if (n_train == 0 || n_val == 0 || n_train + n_val >= n) {
        throw DataError("split_dataset: " + std::to_string(n) + " cases are too few for nonempty splits");
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(seed, "split"));
    std::shuffle(order.begin(), order.end(), rng.engine());

    DatasetManifest manifest;
    manifest.seed = seed;
    manifest.fractions = fractions;
    manifest.cases.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const PhantomCase& c = cases[i];
        ManifestEntry& e = manifest.cases[i];
        e.id = c.id;
        e.image_path = "tensors/" + c.id + ".img";
        e.mask_path = "tensors/" + c.id + ".msk";
        e.image_shape = c.volume.tensor().shape();
        e.mask_shape = c.mask.tensor().shape();
        e.foreground = c.mask.foreground();
        e.provenance = c.provenance;
    }
    for (std::size_t k = 0; k < n; ++k) {
        manifest.cases[order[k]].split = k < n_train ? Split::train
                                         : k < n_train + n_val ? Split::val
                                                               : Split::test;
    }
    return manifest;
}

namespace {

json ellipse_to_json(const Ellipse& e) {
    return json{{"cx", e.cx}, {"cy", e.cy}, {"semi_a", e.semi_a}, {"semi_b", e.semi_b}, {"rotation", e.rotation}};
}

Ellipse ellipse_from_json(const json& j) {
    return Ellipse{j.at("cx").get<double>(), j.at("cy").get<double>(), j.at("semi_a").get<double>(),
                   j.at("semi_b").get<double>(), j.at("rotation").get<double>()};
}

json provenance_to_json(const PhantomProvenance& p) {
    json lesions = json::array();
    json cores = json::array();
    for (const auto& e : p.lesions) lesions.push_back(ellipse_to_json(e));
    for (const auto& e : p.cores) cores.push_back(ellipse_to_json(e));
    return json{{"seed", p.seed},          {"lesions", lesions},          {"cores", cores},
                {"background", p.background}, {"lesion_gain", p.lesion_gain}, {"core_gain", p.core_gain},
                {"noise_sigma", p.noise_sigma}};
}

PhantomProvenance provenance_from_json(const json& j) {
    PhantomProvenance p;
    p.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& e : j.at("lesions")) p.lesions.push_back(ellipse_from_json(e));
    for (const auto& e : j.at("cores")) p.cores.push_back(ellipse_from_json(e));
    p.background = j.at("background").get<std::vector<double>>();
    p.lesion_gain = j.at("lesion_gain").get<std::vector<double>>();
    p.core_gain = j.at("core_gain").get<std::vector<double>>();
    p.noise_sigma = j.at("noise_sigma").get<double>();
    return p;
}

json manifest_to_json(const DatasetManifest& m) {
    json entries = json::array();
    for (const ManifestEntry& e : m.cases) {
        json j{{"id", e.id},
               {"split", std::string(to_string(e.split))},
               {"image", e.image_path},
               {"mask", e.mask_path},
               {"image_shape", e.image_shape},
               {"mask_shape", e.mask_shape},
               {"foreground", e.foreground}};
        if (e.provenance) {
            j["provenance"] = provenance_to_json(*e.provenance);
        }
        entries.push_back(std::move(j));
    }
    return json{{"version", m.version},
                {"seed", m.seed},
                {"fractions", {{"train", m.fractions.train}, {"val", m.fractions.val}, {"test", m.fractions.test}}},
                {"cases", entries}};
}

DatasetManifest manifest_from_json(const json& j) {
    DatasetManifest m;
    m.version = j.at("version").get<int>();
    if (m.version > kManifestVersion || m.version < 1) {
        throw DataError("manifest version " + std::to_string(m.version) + " is not supported (max " +
                        std::to_string(kManifestVersion) + ")");
    }
    m.seed = j.at("seed").get<std::uint64_t>();
    const json& f = j.at("fractions");
    m.fractions = SplitFractions{f.at("train").get<double>(), f.at("val").get<double>(), f.at("test").get<double>()};
    for (const json& e : j.at("cases")) {
        ManifestEntry entry;
        entry.id = e.at("id").get<std::string>();
        entry.split = parse_split(e.at("split").get<std::string>());
        entry.image_path = e.at("image").get<std::string>();
        entry.mask_path = e.at("mask").get<std::string>();
        entry.image_shape = e.at("image_shape").get<std::vector<std::size_t>>();
        entry.mask_shape = e.at("mask_shape").get<std::vector<std::size_t>>();
        entry.foreground = e.at("foreground").get<std::size_t>();
        if (e.contains("provenance")) {
            entry.provenance = provenance_from_json(e.at("provenance"));
        }
        m.cases.push_back(std::move(entry));
    }
    return m;
}

}  // namespace

void write_dataset(const DatasetManifest& manifest, const std::vector<PhantomCase>& cases,
                   const std::filesystem::path& dir) {
    if (manifest.cases.size() != cases.size()) {
        throw DataError("write_dataset: manifest and case list differ in length");
    }
    std::error_code ec;
    std::filesystem::create_directories(dir / "tensors", ec);
    if (ec) {
        throw DataError("cannot create dataset directory " + dir.string() + ": " + ec.message());
    }
    for (std::size_t i = 0; i < cases.size(); ++i) {
        const ManifestEntry& e = manifest.cases[i];
        if (e.id != cases[i].id) {
            throw DataError("write_dataset: manifest entry " + e.id + " does not match case " + cases[i].id);
        }
        write_tensor_file(dir / e.image_path, cases[i].volume.tensor());
        write_tensor_file(dir / e.mask_path, cases[i].mask.tensor());
    }
    write_file_bytes(dir / "manifest.json", manifest_to_json(manifest).dump(2) + "\n");
}

Dataset read_dataset(const std::filesystem::path& dir) {
    const std::filesystem::path manifest_path = dir / "manifest.json";
    if (!std::filesystem::exists(manifest_path)) {
        throw DataError("no dataset manifest at " + manifest_path.string());
    }
    Dataset out;
    try {
        out.manifest = manifest_from_json(json::parse(read_file_bytes(manifest_path)));
    } catch (const json::exception& e) {
        throw DataError("malformed manifest " + manifest_path.string() + ": " + e.what());
    }
    for (const ManifestEntry& e : out.manifest.cases) {
        PhantomCase c;
        try {
            Tensor image = read_tensor_file(dir / e.image_path);
            Tensor mask = read_tensor_file(dir / e.mask_path);
            if (image.shape() != e.image_shape || mask.shape() != e.mask_shape) {
                throw DataError("tensor shape does not match the manifest");
            }
            c = PhantomCase{e.id, InputVolume(std::move(image)), GroundTruthMask(std::move(mask)), e.provenance};
        } catch (const std::exception& err) {
            throw DataError("case " + e.id + ": " + err.what());
        }
        if (c.mask.foreground() != e.foreground) {
            throw DataError("case " + e.id + ": foreground count does not match the manifest");
        }
        out.cases.push_back(std::move(c));
    }
    return out;
}

}  // namespace nndm
