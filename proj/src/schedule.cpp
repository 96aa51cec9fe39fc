#include "nndm/schedule.hpp"

#include "nndm/errors.hpp"

#include <string>

namespace nndm {

NoiseSchedule::NoiseSchedule(double beta_start, double beta_end, std::vector<double> betas)
    : beta_start_(beta_start), beta_end_(beta_end), betas_(std::move(betas)) {
    if (betas_.empty()) {
        throw ConfigError("noise schedule needs at least one step");
    }
    alphas_.reserve(betas_.size());
    alpha_bars_.reserve(betas_.size());
    posterior_variances_.reserve(betas_.size());
    double running = 1.0;
    for (double beta : betas_) {
        if (!(beta > 0.0 && beta < 1.0)) {
            throw ConfigError("betas must lie in (0, 1)");
        }
        const double previous = running;
        alphas_.push_back(1.0 - beta);
        running *= 1.0 - beta;
        alpha_bars_.push_back(running);
        posterior_variances_.push_back((1.0 - previous) / (1.0 - running) * beta);
    }
}

double NoiseSchedule::beta(int t) const {
    if (t < 1 || t > T()) {
        throw ConfigError("timestep " + std::to_string(t) + " outside 1.." + std::to_string(T()));
    }
    return betas_[static_cast<std::size_t>(t - 1)];
}

double NoiseSchedule::alpha(int t) const { return 1.0 - beta(t); }

NoiseSchedule linear_schedule(int T, double beta_start, double beta_end) {
    if (T < 1) {
        throw ConfigError("schedule length T must be >= 1");
    }
    if (!(beta_start > 0.0) || !(beta_end < 1.0) || beta_start > beta_end) {
        throw ConfigError("linear schedule needs 0 < beta_start <= beta_end < 1");
    }
    std::vector<double> betas(static_cast<std::size_t>(T));
    if (T == 1) {
        betas[0] = beta_start;
    } else {
        const double step = (beta_end - beta_start) / static_cast<double>(T - 1);
        for (int i = 0; i < T; ++i) {
            betas[static_cast<std::size_t>(i)] = beta_start + step * i;
        }
        betas.back() = beta_end;
    }
    return NoiseSchedule(beta_start, beta_end, std::move(betas));
}

double alpha_bar_at(const NoiseSchedule& schedule, int t) {
    if (t < 0 || t > schedule.T()) {
        throw ConfigError("alpha_bar_at: timestep " + std::to_string(t) + " outside 0.." +
                          std::to_string(schedule.T()));
    }
    return t == 0 ? 1.0 : schedule.alpha_bars()[static_cast<std::size_t>(t - 1)];
}

double posterior_variance_at(const NoiseSchedule& schedule, int t) {
    if (t < 1 || t > schedule.T()) {
        throw ConfigError("posterior_variance_at: timestep " + std::to_string(t) + " outside 1.." +
                          std::to_string(schedule.T()));
    }
    return schedule.posterior_variances()[static_cast<std::size_t>(t - 1)];
}

}  // namespace nndm
