#include "nndm/diffusion.hpp"

#include "nndm/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace nndm {

namespace {

struct StepCoefficients {
    int t = 0;  // timestep passed to the predictor
    double alpha = 1.0;
    double beta = 0.0;
    double alpha_bar = 1.0;
    double posterior_variance = 0.0;
    bool add_noise = false;
};

StepCoefficients schedule_coefficients(const NoiseSchedule& schedule, int t) {
    StepCoefficients c;
    c.t = t;
    c.beta = schedule.beta(t);
    c.alpha = 1.0 - c.beta;
    c.alpha_bar = alpha_bar_at(schedule, t);
    c.posterior_variance = posterior_variance_at(schedule, t);
    c.add_noise = t > 1;
    return c;
}

Tensor checked_prediction(const NoisePredictor& predictor, const Tensor& e_t, int t,
                          const ConditioningBundle& cond) {
    Tensor eps = predictor.predict_noise(e_t, t, cond);
    if (!eps.same_shape(e_t)) {
        throw ConfigError("noise predictor returned " + eps.shape_string() + " for input " +
                          e_t.shape_string());
    }
    return eps;
}

Tensor reverse_step(const Tensor& e_t, const StepCoefficients& c, const NoisePredictor& predictor,
                    const ConditioningBundle& cond, ReverseMean mode, Rng& rng) {
    Tensor eps = checked_prediction(predictor, e_t, c.t, cond);
    const double scale = 1.0 / std::sqrt(c.alpha);
    const double eps_coef = mode == ReverseMean::standard ? c.beta / std::sqrt(1.0 - c.alpha_bar)
                                                          : c.beta;
    const double sigma = c.add_noise ? std::sqrt(c.posterior_variance) : 0.0;
    Tensor out(e_t.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        double v = scale * (e_t[i] - eps_coef * eps[i]);
        if (c.add_noise) {
            v += sigma * rng.normal();
        }
        out[i] = static_cast<float>(v);
    }
    return out;
}

void require_conditioning_shape(const Tensor& e, const ConditioningBundle& cond) {
    require_same_shape(e, cond.initial_mask().tensor(), "residual vs conditioning mask");
}

}  // namespace

ResidualMap::ResidualMap(Tensor values) : values_(std::move(values)) {
    if (values_.rank() != 3) {
        throw ConfigError("residual map must be a [C,H,W] tensor");
    }
    for (float v : values_.values()) {
        if (!(v >= -1.0f && v <= 1.0f)) {
            throw DataError("residual entries must lie in [-1, 1]");
        }
    }
}

ConditioningBundle::ConditioningBundle(InputVolume image, PredictedMask initial_mask)
    : image_(std::move(image)), initial_mask_(std::move(initial_mask)) {
    const Tensor& x = image_.tensor();
    const Tensor& m = initial_mask_.tensor();
    if (x.height() != m.height() || x.width() != m.width()) {
        throw ConfigError("conditioning image " + x.shape_string() + " and mask " + m.shape_string() +
                          " differ spatially");
    }
}

NetworkNoisePredictor::NetworkNoisePredictor(const PredictorConfig& config, std::uint64_t seed)
    : NetworkNoisePredictor(config, nn::UNet(
                                        [&] {
                                            nn::UNetConfig net;
                                            net.in_channels = config.mask_channels + config.image_channels +
                                                              (config.condition_on_mask ? config.mask_channels : 0);
                                            net.out_channels = config.mask_channels;
                                            net.depth = config.depth;
                                            net.base_width = config.base_width;
                                            net.input_hw = config.input_hw;
                                            net.time_embed_dim = config.time_embed_dim;
                                            return net;
                                        }(),
                                        seed)) {}

NetworkNoisePredictor::NetworkNoisePredictor(const PredictorConfig& config, nn::UNet network)
    : config_(config), network_(std::move(network)) {
    const auto& nc = network_.config();
    const int expected_in = config_.mask_channels + config_.image_channels +
                            (config_.condition_on_mask ? config_.mask_channels : 0);
    if (config_.time_embed_dim < 2) {
        throw ConfigError("noise predictor needs a timestep embedding of dimension >= 2");
    }
    if (nc.in_channels != expected_in || nc.out_channels != config_.mask_channels ||
        nc.input_hw != config_.input_hw || nc.time_embed_dim != config_.time_embed_dim) {
        throw ConfigError("noise predictor network does not match its configuration");
    }
}

Tensor NetworkNoisePredictor::network_input(const Tensor& e_t, const ConditioningBundle& cond) const {
    require_conditioning_shape(e_t, cond);
    if (config_.condition_on_mask) {
        return concat_channels({&e_t, &cond.image().tensor(), &cond.initial_mask().tensor()});
    }
    return concat_channels({&e_t, &cond.image().tensor()});
}

Tensor NetworkNoisePredictor::predict_noise(const Tensor& e_t, int t, const ConditioningBundle& cond) const {
    return network_.forward(network_input(e_t, cond), t);
}

ReverseMean parse_reverse_mean(std::string_view name) {
    if (name == "standard") {
        return ReverseMean::standard;
    }
    if (name == "literal") {
        return ReverseMean::literal;
    }
    throw ConfigError("reverse_mean must be \"standard\" or \"literal\"");
}

std::string_view to_string(ReverseMean mode) {
    return mode == ReverseMean::standard ? "standard" : "literal";
}

StrideCoefficients parse_stride_coefficients(std::string_view name) {
    if (name == "unmodified") {
        return StrideCoefficients::unmodified;
    }
    if (name == "respaced") {
        return StrideCoefficients::respaced;
    }
    throw ConfigError("stride_coefficients must be \"unmodified\" or \"respaced\"");
}

std::string_view to_string(StrideCoefficients mode) {
    return mode == StrideCoefficients::unmodified ? "unmodified" : "respaced";
}

ResidualMap compute_residual(const GroundTruthMask& y, const PredictedMask& y_hat) {
    require_same_shape(y.tensor(), y_hat.tensor(), "compute_residual");
    Tensor e(y.tensor().shape());
    for (std::size_t i = 0; i < e.size(); ++i) {
        e[i] = y.tensor()[i] - y_hat.tensor()[i];
    }
    return ResidualMap(std::move(e));
}

Tensor forward_diffuse(const ResidualMap& e0, int t, const Tensor& noise, const NoiseSchedule& schedule) {
    require_same_shape(e0.tensor(), noise, "forward_diffuse");
    const double alpha_bar = alpha_bar_at(schedule, t);
    const double signal = std::sqrt(alpha_bar);
    const double spread = std::sqrt(1.0 - alpha_bar);
    Tensor out(noise.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = static_cast<float>(signal * e0.tensor()[i] + spread * noise[i]);
    }
    return out;
}

Tensor forward_step(const Tensor& e_prev, int t, const Tensor& noise, const NoiseSchedule& schedule) {
    require_same_shape(e_prev, noise, "forward_step");
    const double beta = schedule.beta(t);
    const double keep = std::sqrt(1.0 - beta);
    const double spread = std::sqrt(beta);
    Tensor out(noise.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = static_cast<float>(keep * e_prev[i] + spread * noise[i]);
    }
    return out;
}

NoiseDraw draw_training_noise(const std::vector<std::size_t>& shape, const NoiseSchedule& schedule,
                              Rng& rng) {
    NoiseDraw draw;
    draw.t = rng.uniform_int(1, schedule.T());
    draw.noise = Tensor(shape);
    for (float& v : draw.noise.values()) {
        v = static_cast<float>(rng.normal());
    }
    return draw;
}

double noise_prediction_error(const NoisePredictor& predictor, const ResidualMap& e0,
                              const ConditioningBundle& cond, const NoiseSchedule& schedule,
                              const NoiseDraw& draw) {
    require_conditioning_shape(e0.tensor(), cond);
    const Tensor e_t = forward_diffuse(e0, draw.t, draw.noise, schedule);
    const Tensor eps = checked_prediction(predictor, e_t, draw.t, cond);
    double sum = 0.0;
    for (std::size_t i = 0; i < eps.size(); ++i) {
        const double d = static_cast<double>(draw.noise[i]) - eps[i];
        sum += d * d;
    }
    return sum / static_cast<double>(eps.size());
}

double diffusion_loss(const NoisePredictor& predictor, const ResidualMap& e0,
                      const ConditioningBundle& cond, const NoiseSchedule& schedule, Rng& rng) {
    const NoiseDraw draw = draw_training_noise(e0.tensor().shape(), schedule, rng);
    return noise_prediction_error(predictor, e0, cond, schedule, draw);
}

Tensor denoise_step(const Tensor& e_t, int t, const NoisePredictor& predictor,
                    const ConditioningBundle& cond, const NoiseSchedule& schedule, Rng& rng,
                    ReverseMean mode) {
    return reverse_step(e_t, schedule_coefficients(schedule, t), predictor, cond, mode, rng);
}

std::vector<int> strided_timesteps(int T, int steps) {
    if (steps < 1 || steps > T) {
        throw ConfigError("inference steps must lie in 1..T (T = " + std::to_string(T) + ")");
    }
    std::vector<int> ts;
    ts.reserve(static_cast<std::size_t>(steps));
    for (int i = steps; i >= 1; --i) {
        ts.push_back(static_cast<int>(static_cast<long long>(i) * T / steps));
    }
    return ts;
}

Tensor sample_residual(const ConditioningBundle& cond, const NoisePredictor& predictor,
                       const NoiseSchedule& schedule, int steps, Rng& rng,
                       const RefineOptions& options) {
    const std::vector<int> ts = strided_timesteps(schedule.T(), steps);
    Tensor e(cond.initial_mask().tensor().shape());
    for (float& v : e.values()) {
        v = static_cast<float>(rng.normal());
    }
    for (std::size_t k = 0; k < ts.size(); ++k) {
        const bool last = k + 1 == ts.size();
        StepCoefficients c;
        if (options.stride == StrideCoefficients::unmodified) {
            c = schedule_coefficients(schedule, ts[k]);
        } else {
            c.t = ts[k];
            c.alpha_bar = alpha_bar_at(schedule, ts[k]);
            const double prev_bar = last ? 1.0 : alpha_bar_at(schedule, ts[k + 1]);
            c.alpha = c.alpha_bar / prev_bar;
            c.beta = 1.0 - c.alpha;
            c.posterior_variance = (1.0 - prev_bar) / (1.0 - c.alpha_bar) * c.beta;
        }
        c.add_noise = !last;
        e = reverse_step(e, c, predictor, cond, options.reverse_mean, rng);
    }
    return e;
}

PredictedMask refine(const PredictedMask& y_hat0, const InputVolume& x, const NoisePredictor& predictor,
                     const NoiseSchedule& schedule, int steps, Rng& rng, const RefineOptions& options) {
    if (steps == 0) {
        return y_hat0;
    }
    if (steps < 0 || steps > schedule.T()) {
        throw ConfigError("refine: steps must lie in 0..T");
    }
    const ConditioningBundle cond(x, y_hat0);
    const Tensor residual = sample_residual(cond, predictor, schedule, steps, rng, options);
    Tensor out = y_hat0.tensor();
    for (std::size_t i = 0; i < out.size(); ++i) {
        const float v = out[i] + residual[i];
        out[i] = std::isnan(v) ? out[i] : std::clamp(v, 0.0f, 1.0f);
    }
    return PredictedMask(std::move(out));
}

double accumulate_diffusion_gradient(const NetworkNoisePredictor& predictor, const ResidualCase& sample,
                                     const NoiseSchedule& schedule, double weight,
                                     nn::Gradients& grads, Rng& rng) {
    const ConditioningBundle cond(sample.image, sample.initial_mask);
    const NoiseDraw draw = draw_training_noise(sample.residual.tensor().shape(), schedule, rng);
    const Tensor e_t = forward_diffuse(sample.residual, draw.t, draw.noise, schedule);
    nn::UNet::Trace trace;
    const Tensor eps = predictor.network().forward(predictor.network_input(e_t, cond), draw.t, trace);
    Tensor d_eps(eps.shape());
    double sum = 0.0;
    const double n = static_cast<double>(eps.size());
    for (std::size_t i = 0; i < eps.size(); ++i) {
        const double d = static_cast<double>(eps[i]) - draw.noise[i];
        sum += d * d;
        d_eps[i] = static_cast<float>(weight * 2.0 * d / n);
    }
    const double loss = sum / n;
    if (!std::isfinite(loss)) {
        throw NumericalError("diffusion loss is not finite");
    }
    predictor.network().backward(trace, d_eps, grads);
    return loss;
}

double train_predictor_epoch(NetworkNoisePredictor& predictor, std::span<const ResidualCase> dataset,
                             const NoiseSchedule& schedule, nn::Adam& optimizer,
                             const TrainOptions& options, Rng& rng) {
    if (dataset.empty()) {
        throw DataError("train_predictor_epoch: empty dataset");
    }
    if (options.batch_size < 1 || !(options.lr >= 0.0)) {
        throw ConfigError("train_predictor_epoch: batch size must be >= 1 and lr >= 0");
    }
    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng.engine());
    nn::Gradients grads(predictor.network().params());
    nn::AdamOptions adam;
    adam.lr = options.lr;
    double loss_sum = 0.0;
    const auto batch = static_cast<std::size_t>(options.batch_size);
    for (std::size_t start = 0; start < order.size(); start += batch) {
        const std::size_t end = std::min(order.size(), start + batch);
        grads.zero();
        const double weight = 1.0 / static_cast<double>(end - start);
        for (std::size_t k = start; k < end; ++k) {
            loss_sum += accumulate_diffusion_gradient(predictor, dataset[order[k]], schedule, weight,
                                                      grads, rng);
        }
        optimizer.step(predictor.network().params(), grads, adam);
    }
    return loss_sum / static_cast<double>(dataset.size());
}

}  // namespace nndm
