#include "nndm/segmentation.hpp"

#include "nndm/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace nndm {

namespace {

void require_cwh(const Tensor& t, const char* what) {
    if (t.rank() != 3) {
        throw ConfigError(std::string(what) + " must be a [C,H,W] tensor, got " + t.shape_string());
    }
}

float sigmoid(float z) { return 1.0f / (1.0f + std::exp(-z)); }

}  // namespace

InputVolume::InputVolume(Tensor channels) : channels_(std::move(channels)) {
    require_cwh(channels_, "input volume");
    for (float v : channels_.values()) {
        if (!std::isfinite(v)) {
            throw DataError("input volume contains non-finite values");
        }
    }
}

InputVolume InputVolume::normalized(Tensor raw) {
    require_cwh(raw, "input volume");
    for (std::size_t c = 0; c < raw.channels(); ++c) {
        auto plane = raw.channel(c);
        double mean = 0.0;
        for (float v : plane) {
            mean += v;
        }
        mean /= static_cast<double>(plane.size());
        double var = 0.0;
        for (float v : plane) {
            var += (v - mean) * (v - mean);
        }
        var /= static_cast<double>(plane.size());
        const double scale = var > 1e-12 ? 1.0 / std::sqrt(var) : 1.0;
        for (float& v : plane) {
            v = static_cast<float>((v - mean) * scale);
        }
    }
    return InputVolume(std::move(raw));
}

GroundTruthMask::GroundTruthMask(Tensor labels) : labels_(std::move(labels)) {
    require_cwh(labels_, "ground-truth mask");
    for (float v : labels_.values()) {
        if (v != 0.0f && v != 1.0f) {
            throw DataError("ground-truth mask entries must be exactly 0 or 1");
        }
    }
}

std::size_t GroundTruthMask::foreground() const {
    return static_cast<std::size_t>(
        std::count(labels_.values().begin(), labels_.values().end(), 1.0f));
}

PredictedMask::PredictedMask(Tensor probabilities) : probabilities_(std::move(probabilities)) {
    require_cwh(probabilities_, "predicted mask");
    for (float v : probabilities_.values()) {
        if (!(v >= 0.0f && v <= 1.0f)) {
            throw DataError("predicted mask entries must lie in [0, 1]");
        }
    }
}

SegmentationModel::SegmentationModel(const SegmentationConfig& config, nn::UNet network)
    : config_(config), network_(std::move(network)) {
    const auto& nc = network_.config();
    if (nc.in_channels != config_.in_channels || nc.out_channels != config_.mask_channels ||
        nc.input_hw != config_.input_hw) {
        throw ConfigError("segmentation network does not match its configuration");
    }
}

SegmentationModel build_model(const SegmentationConfig& config, std::uint64_t seed) {
    nn::UNetConfig net;
    net.in_channels = config.in_channels;
    net.out_channels = config.mask_channels;
    net.depth = config.depth;
    net.base_width = config.base_width;
    net.input_hw = config.input_hw;
    net.time_embed_dim = 0;
    return SegmentationModel(config, nn::UNet(net, seed));
}

PredictedMask predict(const SegmentationModel& model, const InputVolume& x) {
    Tensor logits = model.network().forward(x.tensor());
    for (float& v : logits.values()) {
        v = sigmoid(v);
    }
    return PredictedMask(std::move(logits));
}

double dice_ce_loss(std::span<const double> p, std::span<const double> g, std::size_t channels,
                    std::span<double> grad) {
    if (p.size() != g.size()) {
        throw ConfigError("dice_ce_loss: size mismatch");
    }
    if (channels == 0 || p.size() % channels != 0 || p.empty()) {
        throw ConfigError("dice_ce_loss: channel count does not divide the element count");
    }
    if (!grad.empty() && grad.size() != p.size()) {
        throw ConfigError("dice_ce_loss: gradient buffer size mismatch");
    }
    for (double v : g) {
        if (v != 0.0 && v != 1.0) {
            throw DataError("dice_ce_loss: ground truth must be binary");
        }
    }
    const std::size_t n = p.size() / channels;
    double total = 0.0;
    for (std::size_t c = 0; c < channels; ++c) {
        const auto pc = p.subspan(c * n, n);
        const auto gc = g.subspan(c * n, n);
        double overlap = 0.0;
        double denom = kDiceSmoothing;
        double log_sum = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            overlap += pc[i] * gc[i];
            denom += pc[i] * pc[i] + gc[i] * gc[i];
            const double q = std::clamp(pc[i], kProbabilityClamp, 1.0 - kProbabilityClamp);
            log_sum += gc[i] * std::log(q) + (1.0 - gc[i]) * std::log(1.0 - q);
        }
        const double numer = 2.0 * overlap + kDiceSmoothing;
        total += 1.0 - numer / denom - log_sum / static_cast<double>(n);
        if (!grad.empty()) {
            const double inv_channels = 1.0 / static_cast<double>(channels);
            for (std::size_t i = 0; i < n; ++i) {
                double d = -(2.0 * gc[i] * denom - numer * 2.0 * pc[i]) / (denom * denom);
                if (pc[i] > kProbabilityClamp && pc[i] < 1.0 - kProbabilityClamp) {
                    d -= (gc[i] / pc[i] - (1.0 - gc[i]) / (1.0 - pc[i])) / static_cast<double>(n);
                }
                grad[c * n + i] = d * inv_channels;
            }
        }
    }
    return total / static_cast<double>(channels);
}

double dice_ce_loss(const PredictedMask& p, const GroundTruthMask& g) {
    require_same_shape(p.tensor(), g.tensor(), "dice_ce_loss");
    std::vector<double> pd(p.tensor().values().begin(), p.tensor().values().end());
    std::vector<double> gd(g.tensor().values().begin(), g.tensor().values().end());
    return dice_ce_loss(pd, gd, p.tensor().channels());
}

double total_loss(double l_seg, double l_diff, double lambda_weight) {
    if (!(lambda_weight >= 0.0)) {
        throw ConfigError("lambda_weight must be >= 0");
    }
    return l_seg + lambda_weight * l_diff;
}

double accumulate_case_gradient(const SegmentationModel& model, const LabeledCase& sample,
                                double weight, nn::Gradients& grads, PredictedMask* output) {
    require_same_shape(sample.mask.tensor(),
                       Tensor({static_cast<std::size_t>(model.config().mask_channels),
                               sample.image.tensor().height(), sample.image.tensor().width()}),
                       "segmentation case mask");
    nn::UNet::Trace trace;
    Tensor probs = model.network().forward(sample.image.tensor(), 0, trace);
    for (float& v : probs.values()) {
        v = sigmoid(v);
    }
    std::vector<double> pd(probs.values().begin(), probs.values().end());
    std::vector<double> gd(sample.mask.tensor().values().begin(), sample.mask.tensor().values().end());
    std::vector<double> dp(pd.size());
    const double loss = dice_ce_loss(pd, gd, probs.channels(), dp);
    if (!std::isfinite(loss)) {
        throw NumericalError("segmentation loss is not finite");
    }
    Tensor d_logits(probs.shape());
    for (std::size_t i = 0; i < pd.size(); ++i) {
        d_logits[i] = static_cast<float>(weight * dp[i] * pd[i] * (1.0 - pd[i]));
    }
    model.network().backward(trace, d_logits, grads);
    if (output) {
        *output = PredictedMask(std::move(probs));
    }
    return loss;
}

double train_epoch(SegmentationModel& model, std::span<const LabeledCase> dataset,
                   nn::Adam& optimizer, const TrainOptions& options, Rng& rng) {
    if (dataset.empty()) {
        throw DataError("train_epoch: empty dataset");
    }
    if (options.batch_size < 1 || !(options.lr >= 0.0)) {
        throw ConfigError("train_epoch: batch size must be >= 1 and lr >= 0");
    }
    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng.engine());

    nn::Gradients grads(model.network().params());
    nn::AdamOptions adam;
    adam.lr = options.lr;
    double loss_sum = 0.0;
    const auto batch = static_cast<std::size_t>(options.batch_size);
    for (std::size_t start = 0; start < order.size(); start += batch) {
        const std::size_t end = std::min(order.size(), start + batch);
        grads.zero();
        const double weight = 1.0 / static_cast<double>(end - start);
        for (std::size_t k = start; k < end; ++k) {
            loss_sum += accumulate_case_gradient(model, dataset[order[k]], weight, grads);
        }
        optimizer.step(model.network().params(), grads, adam);
    }
    return loss_sum / static_cast<double>(dataset.size());
}

}  // namespace nndm
