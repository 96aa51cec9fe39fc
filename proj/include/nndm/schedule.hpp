#pragma once

#include <vector>

namespace nndm {

/// Diffusion variance schedule over timesteps t = 1..T.
///
/// Vectors are stored 0-based (index t-1 holds step t). The clean signal sits at
/// t = 0 with alpha_bar = 1; use the accessors below for 1-based lookups.
/// Immutable after construction.
class NoiseSchedule {
public:
    NoiseSchedule(double beta_start, double beta_end, std::vector<double> betas);

    int T() const noexcept { return static_cast<int>(betas_.size()); }
    double beta_start() const noexcept { return beta_start_; }
    double beta_end() const noexcept { return beta_end_; }

    const std::vector<double>& betas() const noexcept { return betas_; }
    const std::vector<double>& alphas() const noexcept { return alphas_; }
    const std::vector<double>& alpha_bars() const noexcept { return alpha_bars_; }
    const std::vector<double>& posterior_variances() const noexcept { return posterior_variances_; }

    // 1-based accessors; throw ConfigError when t is outside 1..T.
    double beta(int t) const;
    double alpha(int t) const;

    bool operator==(const NoiseSchedule&) const = default;

private:
    double beta_start_;
    double beta_end_;
    std::vector<double> betas_;
    std::vector<double> alphas_;
    std::vector<double> alpha_bars_;
    std::vector<double> posterior_variances_;
};

/// Equally spaced betas from beta_start to beta_end inclusive. T = 1 gives {beta_start}.
NoiseSchedule linear_schedule(int T, double beta_start, double beta_end);

/// Cumulative product of alphas up to t; 1 at t = 0. Valid for 0 <= t <= T.
double alpha_bar_at(const NoiseSchedule& schedule, int t);

/// ((1 - alpha_bar[t-1]) / (1 - alpha_bar[t])) * beta[t]; 0 at t = 1. Valid for 1 <= t <= T.
double posterior_variance_at(const NoiseSchedule& schedule, int t);

}  // namespace nndm
