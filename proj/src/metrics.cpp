#include "nndm/metrics.hpp"

#include "nndm/errors.hpp"
#include "nndm/log.hpp"
#include "nndm/tensor_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace nndm {

BinaryMask::BinaryMask(std::size_t height, std::size_t width, std::vector<std::uint8_t> values,
                       std::array<double, 2> spacing)
    : height_(height), width_(width), values_(std::move(values)), spacing_(spacing) {
    if (values_.size() != height_ * width_) {
        throw ConfigError("binary mask data does not match its extent");
    }
    if (!(spacing_[0] > 0.0 && spacing_[1] > 0.0)) {
        throw ConfigError("binary mask spacing must be positive");
    }
    for (std::uint8_t v : values_) {
        if (v > 1) {
            throw ConfigError("binary mask entries must be 0 or 1");
        }
    }
}

BinaryMask BinaryMask::from_probabilities(const Tensor& probabilities, std::size_t channel,
                                          std::array<double, 2> spacing) {
    if (probabilities.rank() != 3 || channel >= probabilities.channels()) {
        throw ConfigError("from_probabilities expects a [C,H,W] tensor and a valid channel");
    }
    const auto plane = probabilities.channel(channel);
    std::vector<std::uint8_t> values(plane.size());
    for (std::size_t i = 0; i < plane.size(); ++i) {
        values[i] = plane[i] >= kBinarizeThreshold ? 1 : 0;
    }
    return BinaryMask(probabilities.height(), probabilities.width(), std::move(values), spacing);
}

std::size_t BinaryMask::count() const noexcept {
    return static_cast<std::size_t>(std::count(values_.begin(), values_.end(), std::uint8_t{1}));
}

std::vector<std::array<std::size_t, 2>> BinaryMask::boundary() const {
    std::vector<std::array<std::size_t, 2>> out;
    for (std::size_t y = 0; y < height_; ++y) {
        for (std::size_t x = 0; x < width_; ++x) {
            if (!at(y, x)) {
                continue;
            }
            const bool edge = y == 0 || x == 0 || y + 1 == height_ || x + 1 == width_ || !at(y - 1, x) ||
                              !at(y + 1, x) || !at(y, x - 1) || !at(y, x + 1);
            if (edge) {
                out.push_back({y, x});
            }
        }
    }
    return out;
}

BinaryMask BinaryMask::with_spacing(std::array<double, 2> spacing) const {
    return BinaryMask(height_, width_, values_, spacing);
}

namespace {

void require_match(const BinaryMask& a, const BinaryMask& b, const char* what) {
    if (a.height() != b.height() || a.width() != b.width()) {
        throw ConfigError(std::string(what) + ": mask extents differ");
    }
}

std::size_t intersection(const BinaryMask& a, const BinaryMask& b) {
    std::size_t n = 0;
    for (std::size_t i = 0; i < a.values().size(); ++i) {
        n += a.values()[i] & b.values()[i];
    }
    return n;
}

constexpr double kInf = std::numeric_limits<double>::infinity();

// 1D squared distance transform of f under weight w: out[q] = min_v w (q - v)^2 + f[v]
// (lower envelope of parabolas).
void distance_transform_1d(const std::vector<double>& f, double w, std::vector<double>& out) {
    const std::size_t n = f.size();
    out.assign(n, kInf);
    std::vector<std::size_t> v(n);
    std::vector<double> z(n + 1);
    std::size_t k = 0;
    bool any = false;
    for (std::size_t q = 0; q < n; ++q) {
        if (f[q] == kInf) {
            continue;
        }
        if (!any) {
            v[0] = q;
            z[0] = -kInf;
            z[1] = kInf;
            any = true;
            continue;
        }
        while (true) {
            const auto vq = static_cast<double>(q);
            const auto vk = static_cast<double>(v[k]);
            const double s = ((f[q] + w * vq * vq) - (f[v[k]] + w * vk * vk)) / (2.0 * w * (vq - vk));
            if (s <= z[k]) {
                if (k == 0) {
                    v[0] = q;
                    z[0] = -kInf;
                    z[1] = kInf;
                    break;
                }
                --k;
                continue;
            }
            ++k;
            v[k] = q;
            z[k] = s;
            z[k + 1] = kInf;
            break;
        }
    }
    if (!any) {
        return;
    }
    k = 0;
    for (std::size_t q = 0; q < n; ++q) {
        while (z[k + 1] < static_cast<double>(q)) {
            ++k;
        }
        const double d = static_cast<double>(q) - static_cast<double>(v[k]);
        out[q] = w * d * d + f[v[k]];
    }
}

// Squared spacing-scaled Euclidean distance from every pixel to the nearest site.
std::vector<double> squared_distance_map(const BinaryMask& mask,
                                         const std::vector<std::array<std::size_t, 2>>& sites) {
    const std::size_t h = mask.height();
    const std::size_t w = mask.width();
    std::vector<double> grid(h * w, kInf);
    for (const auto& s : sites) {
        grid[s[0] * w + s[1]] = 0.0;
    }
    const double wy = mask.spacing()[0] * mask.spacing()[0];
    const double wx = mask.spacing()[1] * mask.spacing()[1];
    std::vector<double> line;
    std::vector<double> result;
    for (std::size_t x = 0; x < w; ++x) {
        line.resize(h);
        for (std::size_t y = 0; y < h; ++y) line[y] = grid[y * w + x];
        distance_transform_1d(line, wy, result);
        for (std::size_t y = 0; y < h; ++y) grid[y * w + x] = result[y];
    }
    for (std::size_t y = 0; y < h; ++y) {
        line.assign(grid.begin() + static_cast<std::ptrdiff_t>(y * w),
                    grid.begin() + static_cast<std::ptrdiff_t>((y + 1) * w));
        distance_transform_1d(line, wx, result);
        std::copy(result.begin(), result.end(), grid.begin() + static_cast<std::ptrdiff_t>(y * w));
    }
    return grid;
}

MetricSummary summarize(const std::vector<double>& values) {
    MetricSummary s;
    s.count = values.size();
    if (values.empty()) {
        s.mean = std::numeric_limits<double>::quiet_NaN();
        s.stddev = std::numeric_limits<double>::quiet_NaN();
        return s;
    }
    double sum = 0.0;
    for (double v : values) sum += v;
    s.mean = sum / static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) var += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(var / static_cast<double>(values.size()));
    return s;
}


}  // namespace

double dice(const BinaryMask& a, const BinaryMask& b) {
    require_match(a, b, "dice");
    const std::size_t total = a.count() + b.count();
    if (total == 0) {
        return 1.0;
    }
    return 2.0 * static_cast<double>(intersection(a, b)) / static_cast<double>(total);
}

std::optional<double> hd95(const BinaryMask& a, const BinaryMask& b) {
    require_match(a, b, "hd95");
    if (a.spacing() != b.spacing()) {
        throw ConfigError("hd95: masks have different spacing");
    }
    const auto boundary_a = a.boundary();
    const auto boundary_b = b.boundary();
    if (boundary_a.empty() || boundary_b.empty()) {
        return std::nullopt;
    }
    const std::vector<double> to_b = squared_distance_map(a, boundary_b);
    const std::vector<double> to_a = squared_distance_map(a, boundary_a);
    std::vector<double> pooled;
    pooled.reserve(boundary_a.size() + boundary_b.size());
    for (const auto& p : boundary_a) pooled.push_back(std::sqrt(to_b[p[0] * a.width() + p[1]]));
    for (const auto& p : boundary_b) pooled.push_back(std::sqrt(to_a[p[0] * a.width() + p[1]]));
    std::sort(pooled.begin(), pooled.end());
    const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(pooled.size())));
    return pooled[std::max<std::size_t>(rank, 1) - 1];
}

double volumetric_similarity(const BinaryMask& a, const BinaryMask& b) {
    require_match(a, b, "volumetric_similarity");
    const double na = static_cast<double>(a.count());
    const double nb = static_cast<double>(b.count());
    if (na + nb == 0.0) {
        return 1.0;
    }
    return 1.0 - std::abs(na - nb) / (na + nb);
}

CaseMetrics evaluate_case(const BinaryMask& pred, const BinaryMask& truth) {
    return CaseMetrics{dice(pred, truth), hd95(pred, truth), volumetric_similarity(pred, truth)};
}

MetricsReport evaluate_cases(const std::vector<BinaryMask>& predictions,
                             const std::vector<BinaryMask>& truths,
                             const std::vector<std::string>& case_ids) {
    if (predictions.size() != truths.size()) {
        throw ConfigError("evaluate_cases: prediction and ground-truth lists differ in length");
    }
    if (!case_ids.empty() && case_ids.size() != predictions.size()) {
        throw ConfigError("evaluate_cases: case id list differs in length");
    }
    MetricsReport report;
    std::vector<double> dscs;
    std::vector<double> hds;
    std::vector<double> vss;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        CaseRow row;
        row.case_id = case_ids.empty() ? std::to_string(i) : case_ids[i];
        row.metrics = evaluate_case(predictions[i], truths[i]);
        dscs.push_back(row.metrics.dsc);
        vss.push_back(row.metrics.vs);
        if (row.metrics.hd95) {
            hds.push_back(*row.metrics.hd95);
        } else {
            ++report.hd95_undefined;
            log::warning("case " + row.case_id + ": hd95 undefined (empty mask), excluded from aggregate");
        }
        report.cases.push_back(std::move(row));
    }
    report.dsc = summarize(dscs);
    report.hd95 = summarize(hds);
    report.vs = summarize(vss);
    return report;
}

std::string format_metric(double v) {
    if (std::isnan(v)) {
        return "NA";
    }
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

std::string metrics_csv(const MetricsReport& report) {
    std::ostringstream out;
    out << "case_id,dsc,hd95,vs\n";
    for (const CaseRow& row : report.cases) {
        out << row.case_id << ',' << format_metric(row.metrics.dsc) << ','
            << format_metric(row.metrics.hd95.value_or(std::numeric_limits<double>::quiet_NaN())) << ','
            << format_metric(row.metrics.vs) << '\n';
    }
    out << "mean," << format_metric(report.dsc.mean) << ',' << format_metric(report.hd95.mean) << ','
        << format_metric(report.vs.mean) << '\n';
    out << "std," << format_metric(report.dsc.stddev) << ',' << format_metric(report.hd95.stddev) << ','
        << format_metric(report.vs.stddev) << '\n';
    return out.str();
}

void write_metrics_csv(const MetricsReport& report, const std::filesystem::path& path) {
    write_file_bytes(path, metrics_csv(report));
}

}  // namespace nndm
