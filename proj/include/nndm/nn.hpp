#pragma once

#include "nndm/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

// Minimal CPU conv-net engine: a 2D U-Net with explicit backward pass and Adam.
// Shared by the segmentation network and the noise predictor.
namespace nndm::nn {

struct Param {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<float> value;

    bool operator==(const Param&) const = default;
};

/// Gradient buffers parallel to a parameter list.
struct Gradients {
    std::vector<std::vector<float>> values;

    explicit Gradients(const std::vector<Param>& params);
    void zero();
    void scale(float factor);
};

struct UNetConfig {
    int in_channels = 1;
    int out_channels = 1;
    int depth = 3;        // encoder stages, including the bottleneck
    int base_width = 16;  // channels of the first stage; doubles per stage
    int input_hw = 64;    // square spatial size the network accepts
    int time_embed_dim = 0;  // 0 disables timestep conditioning

    bool operator==(const UNetConfig&) const = default;
};

/// Throws ConfigError when the configuration cannot be built.
void validate(const UNetConfig& config);

/// Encoder-decoder with skip connections: per stage two 3x3 conv + ReLU, 2x2 max pool
/// down, nearest-neighbour up, 1x1 head. With time_embed_dim > 0, a sinusoidal timestep
/// embedding passes an MLP and is added per channel after the first conv of each stage.
class UNet {
public:
    struct Trace;

    UNet(const UNetConfig& config, std::uint64_t seed);

    const UNetConfig& config() const noexcept { return config_; }
    const std::vector<Param>& params() const noexcept { return params_; }
    std::vector<Param>& params() noexcept { return params_; }

    /// Inference pass. Output is raw (pre-activation) [out_channels, H, W].
    Tensor forward(const Tensor& x, int timestep = 0) const;
    /// Training pass; fills `trace` for backward().
    Tensor forward(const Tensor& x, int timestep, Trace& trace) const;
    /// Accumulates parameter gradients of a scalar loss given d loss / d output.
    void backward(const Trace& trace, const Tensor& d_output, Gradients& grads) const;

    bool operator==(const UNet& other) const {
        return config_ == other.config_ && params_ == other.params_;
    }

private:
    struct Conv {
        int cin = 0;
        int cout = 0;
        int k = 3;
        std::size_t weight = 0;
        std::size_t bias = 0;
    };
    struct Dense {
        int in = 0;
        int out = 0;
        std::size_t weight = 0;
        std::size_t bias = 0;
    };
    struct Stage {
        Conv a;
        Conv b;
        Dense time;  // unused when time embedding is disabled
    };

    Conv make_conv(const std::string& name, int cin, int cout, int k, float init_std,
                   std::uint64_t seed);
    Dense make_dense(const std::string& name, int in, int out, float init_std, std::uint64_t seed);
    Tensor run(const Tensor& x, int timestep, Trace* trace) const;

    UNetConfig config_;
    std::vector<Param> params_;
    std::vector<Stage> encoder_;
    std::vector<Stage> decoder_;  // decoder_[j] produces the resolution of encoder stage j
    Conv head_;
    Dense time_hidden_;
};

/// Sinusoidal embedding of an integer timestep: [sin(t f_i)..., cos(t f_i)...].
std::vector<float> timestep_embedding(int timestep, int dim);

struct AdamOptions {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adam with bias correction. State is serializable through its public members.
class Adam {
public:
    Adam() = default;
    explicit Adam(const std::vector<Param>& params);

    void step(std::vector<Param>& params, const Gradients& grads, const AdamOptions& options);

    std::int64_t steps = 0;
    std::vector<std::vector<float>> first_moment;
    std::vector<std::vector<float>> second_moment;

    bool operator==(const Adam&) const = default;
};

}  // namespace nndm::nn

namespace nndm::nn {

/// Activations retained by a training forward pass.
struct UNet::Trace {
    struct StageTrace {
        std::vector<float> col_a;  // im2col of the stage input
        Tensor act_a;              // ReLU output of the first conv
        std::vector<float> col_b;  // im2col of act_a
        Tensor out;                // ReLU output of the second conv
    };
    std::vector<StageTrace> encoder;
    std::vector<StageTrace> decoder;
    std::vector<std::vector<std::uint32_t>> pool_argmax;
    std::vector<float> embedding;
    std::vector<float> embedding_hidden;  // ReLU output of the embedding MLP
    int input_channels = 0;
};

}  // namespace nndm::nn
