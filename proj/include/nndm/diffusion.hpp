#pragma once

#include "nndm/nn.hpp"
#include "nndm/rng.hpp"
#include "nndm/schedule.hpp"
#include "nndm/segmentation.hpp"
#include "nndm/tensor.hpp"

#include <functional>
#include <span>
#include <string_view>

namespace nndm {

/// e = y - y_hat, one channel per mask channel; entries in [-1, 1].
class ResidualMap {
public:
    ResidualMap() = default;
    explicit ResidualMap(Tensor values);

    const Tensor& tensor() const noexcept { return values_; }
    bool operator==(const ResidualMap&) const = default;

private:
    Tensor values_;
};

/// The pair (x, y_hat_0) the noise predictor is conditioned on.
class ConditioningBundle {
public:
    ConditioningBundle(InputVolume image, PredictedMask initial_mask);

    const InputVolume& image() const noexcept { return image_; }
    const PredictedMask& initial_mask() const noexcept { return initial_mask_; }

private:
    InputVolume image_;
    PredictedMask initial_mask_;
};

/// eps_phi(e_t, t, cond). Implementations must be deterministic and return e_t's shape.
class NoisePredictor {
public:
    virtual ~NoisePredictor() = default;
    virtual Tensor predict_noise(const Tensor& e_t, int t, const ConditioningBundle& cond) const = 0;
};

/// Adapts a callable; used for analytic predictors and test doubles.
class FunctionNoisePredictor final : public NoisePredictor {
public:
    using Function = std::function<Tensor(const Tensor&, int, const ConditioningBundle&)>;
    explicit FunctionNoisePredictor(Function fn) : fn_(std::move(fn)) {}
    Tensor predict_noise(const Tensor& e_t, int t, const ConditioningBundle& cond) const override {
        return fn_(e_t, t, cond);
    }

private:
    Function fn_;
};

struct PredictorConfig {
    int image_channels = 2;
    int mask_channels = 1;
    int depth = 3;
    int base_width = 16;
    int input_hw = 64;
    int time_embed_dim = 32;
    /// Feed y_hat_0 to the network next to x. false = the no-residual-conditioning ablation.
    bool condition_on_mask = true;

    bool operator==(const PredictorConfig&) const = default;
};

/// U-Net noise predictor over the channel stack [e_t, x, y_hat_0].
class NetworkNoisePredictor final : public NoisePredictor {
public:
    NetworkNoisePredictor(const PredictorConfig& config, std::uint64_t seed);
    NetworkNoisePredictor(const PredictorConfig& config, nn::UNet network);

    Tensor predict_noise(const Tensor& e_t, int t, const ConditioningBundle& cond) const override;

    /// Network input for (e_t, cond).
    Tensor network_input(const Tensor& e_t, const ConditioningBundle& cond) const;

    const PredictorConfig& config() const noexcept { return config_; }
    const nn::UNet& network() const noexcept { return network_; }
    nn::UNet& network() noexcept { return network_; }

private:
    PredictorConfig config_;
    nn::UNet network_;
};

enum class ReverseMean {
    standard,  // (1/sqrt(alpha_t)) (e_t - beta_t / sqrt(1 - alpha_bar_t) eps)
    literal,   // (1/sqrt(1 - beta_t)) (e_t - beta_t eps)
};

enum class StrideCoefficients {
    unmodified,  // per-step coefficients of the strided t values, as if no steps were skipped
    respaced,    // betas recomputed from alpha_bar over the strided subsequence
};

ReverseMean parse_reverse_mean(std::string_view name);
std::string_view to_string(ReverseMean mode);
StrideCoefficients parse_stride_coefficients(std::string_view name);
std::string_view to_string(StrideCoefficients mode);

ResidualMap compute_residual(const GroundTruthMask& y, const PredictedMask& y_hat);

/// Closed-form marginal sqrt(alpha_bar_t) e0 + sqrt(1 - alpha_bar_t) noise, 0 <= t <= T.
Tensor forward_diffuse(const ResidualMap& e0, int t, const Tensor& noise, const NoiseSchedule& schedule);

/// One step of q: sqrt(1 - beta_t) e_prev + sqrt(beta_t) noise, 1 <= t <= T.
Tensor forward_step(const Tensor& e_prev, int t, const Tensor& noise, const NoiseSchedule& schedule);

struct NoiseDraw {
    int t = 0;
    Tensor noise;
};

/// t uniform on {1..T}, then standard normal noise of the given shape.
NoiseDraw draw_training_noise(const std::vector<std::size_t>& shape, const NoiseSchedule& schedule,
                              Rng& rng);

/// Mean squared error between draw.noise and eps_phi(e_t, draw.t, cond).
double noise_prediction_error(const NoisePredictor& predictor, const ResidualMap& e0,
                              const ConditioningBundle& cond, const NoiseSchedule& schedule,
                              const NoiseDraw& draw);

/// One (t, eps) draw of the noise-prediction objective.
double diffusion_loss(const NoisePredictor& predictor, const ResidualMap& e0,
                      const ConditioningBundle& cond, const NoiseSchedule& schedule, Rng& rng);

/// Ancestral step e_t -> e_{t-1}. Noise is suppressed at t = 1.
Tensor denoise_step(const Tensor& e_t, int t, const NoisePredictor& predictor,
                    const ConditioningBundle& cond, const NoiseSchedule& schedule, Rng& rng,
                    ReverseMean mode = ReverseMean::standard);

/// Timesteps visited by a `steps`-long chain, descending: floor(i T / steps) for i = steps..1.
std::vector<int> strided_timesteps(int T, int steps);

struct RefineOptions {
    ReverseMean reverse_mean = ReverseMean::standard;
    StrideCoefficients stride = StrideCoefficients::respaced;
};

/// Reverse chain from e ~ N(0, I) over strided_timesteps(T, steps); returns the estimate of e0.
/// The final step of the chain is noise free.
Tensor sample_residual(const ConditioningBundle& cond, const NoisePredictor& predictor,
                       const NoiseSchedule& schedule, int steps, Rng& rng,
                       const RefineOptions& options = {});

/// clip(y_hat0 + sampled residual, 0, 1). steps = 0 returns y_hat0 unchanged.
PredictedMask refine(const PredictedMask& y_hat0, const InputVolume& x, const NoisePredictor& predictor,
                     const NoiseSchedule& schedule, int steps, Rng& rng,
                     const RefineOptions& options = {});

struct ResidualCase {
    InputVolume image;
    PredictedMask initial_mask;
    ResidualMap residual;
};

/// Draws (t, eps), backpropagates weight * MSE into grads and returns the unweighted MSE.
double accumulate_diffusion_gradient(const NetworkNoisePredictor& predictor, const ResidualCase& sample,
                                     const NoiseSchedule& schedule, double weight,
                                     nn::Gradients& grads, Rng& rng);

/// One seeded shuffled pass of noise-prediction training; returns the mean per-case loss.
double train_predictor_epoch(NetworkNoisePredictor& predictor, std::span<const ResidualCase> dataset,
                             const NoiseSchedule& schedule, nn::Adam& optimizer,
                             const TrainOptions& options, Rng& rng);

}  // namespace nndm
