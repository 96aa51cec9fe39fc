#include "nndm/nn.hpp"

#include "nndm/errors.hpp"
#include "nndm/rng.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace nndm::nn {

namespace {

using Matrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<Matrix>;
using ConstMatrixMap = Eigen::Map<const Matrix>;
using VectorMap = Eigen::Map<Eigen::VectorXf>;
using ConstVectorMap = Eigen::Map<const Eigen::VectorXf>;

void im2col3(const float* x, int channels, int h, int w, float* col) {
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int c = 0; c < channels; ++c) {
        const float* src = x + c * plane;
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                float* dst = col + (static_cast<std::size_t>(c) * 9 + ky * 3 + kx) * plane;
                for (int y = 0; y < h; ++y) {
                    const int sy = y + ky - 1;
                    float* row = dst + static_cast<std::size_t>(y) * w;
                    if (sy < 0 || sy >= h) {
                        std::fill(row, row + w, 0.0f);
                        continue;
                    }
                    const float* srow = src + static_cast<std::size_t>(sy) * w;
                    for (int x0 = 0; x0 < w; ++x0) {
                        const int sx = x0 + kx - 1;
                        row[x0] = (sx >= 0 && sx < w) ? srow[sx] : 0.0f;
                    }
                }
            }
        }
    }
}

void col2im3(const float* col, int channels, int h, int w, float* x) {
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    std::fill(x, x + channels * plane, 0.0f);
    for (int c = 0; c < channels; ++c) {
        float* dst = x + c * plane;
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                const float* src = col + (static_cast<std::size_t>(c) * 9 + ky * 3 + kx) * plane;
                for (int y = 0; y < h; ++y) {
                    const int sy = y + ky - 1;
                    if (sy < 0 || sy >= h) {
                        continue;
                    }
                    const float* row = src + static_cast<std::size_t>(y) * w;
                    float* drow = dst + static_cast<std::size_t>(sy) * w;
                    const int x_lo = kx == 0 ? 1 : 0;
                    const int x_hi = kx == 2 ? w - 1 : w;
                    for (int x0 = x_lo; x0 < x_hi; ++x0) {
                        drow[x0 + kx - 1] += row[x0];
                    }
                }
            }
        }
    }
}

void relu_inplace(Tensor& t) {
    for (float& v : t.values()) {
        v = v > 0.0f ? v : 0.0f;
    }
}

void relu_backward_inplace(Tensor& grad, const Tensor& activation) {
    for (std::size_t i = 0; i < grad.size(); ++i) {
        if (activation[i] <= 0.0f) {
            grad[i] = 0.0f;
        }
    }
}

Tensor max_pool2(const Tensor& x, std::vector<std::uint32_t>* argmax) {
    const std::size_t c = x.channels();
    const std::size_t h = x.height() / 2;
    const std::size_t w = x.width() / 2;
    Tensor out({c, h, w});
    if (argmax) {
        argmax->assign(out.size(), 0);
    }
    for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x0 = 0; x0 < w; ++x0) {
                float best = -std::numeric_limits<float>::infinity();
                std::uint32_t best_index = 0;
                for (std::size_t dy = 0; dy < 2; ++dy) {
                    for (std::size_t dx = 0; dx < 2; ++dx) {
                        const std::size_t sy = 2 * y + dy;
                        const std::size_t sx = 2 * x0 + dx;
                        const float v = x.at(ch, sy, sx);
                        if (v > best) {
                            best = v;
                            best_index = static_cast<std::uint32_t>((ch * x.height() + sy) * x.width() + sx);
                        }
                    }
                }
                const std::size_t o = (ch * h + y) * w + x0;
                out[o] = best;
                if (argmax) {
                    (*argmax)[o] = best_index;
                }
            }
        }
    }
    return out;
}

Tensor upsample2(const Tensor& x) {
    const std::size_t c = x.channels();
    const std::size_t h = x.height();
    const std::size_t w = x.width();
    Tensor out({c, 2 * h, 2 * w});
    for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t y = 0; y < 2 * h; ++y) {
            for (std::size_t x0 = 0; x0 < 2 * w; ++x0) {
                out.at(ch, y, x0) = x.at(ch, y / 2, x0 / 2);
            }
        }
    }
    return out;
}

// Gradient of nearest upsampling restricted to the first `channels` channels of `grad`.
Tensor upsample2_backward(const Tensor& grad, std::size_t channels) {
    const std::size_t h = grad.height() / 2;
    const std::size_t w = grad.width() / 2;
    Tensor out({channels, h, w});
    for (std::size_t ch = 0; ch < channels; ++ch) {
        for (std::size_t y = 0; y < grad.height(); ++y) {
            for (std::size_t x0 = 0; x0 < grad.width(); ++x0) {
                out.at(ch, y / 2, x0 / 2) += grad.at(ch, y, x0);
            }
        }
    }
    return out;
}

// Matrix-vector products and row sums in a fixed order. Eigen's vectorized reductions
// peel at alignment boundaries, which makes rounding depend on buffer addresses.
void matvec(const float* w, int rows, int cols, const float* x, const float* bias, float* y) {
    for (int r = 0; r < rows; ++r) {
        const float* row = w + static_cast<std::size_t>(r) * cols;
        double acc = bias ? bias[r] : 0.0;
        for (int c = 0; c < cols; ++c) {
            acc += static_cast<double>(row[c]) * x[c];
        }
        y[r] = static_cast<float>(acc);
    }
}

void matvec_transposed_add(const float* w, int rows, int cols, const float* x, float* y) {
    for (int c = 0; c < cols; ++c) {
        double acc = 0.0;
        for (int r = 0; r < rows; ++r) {
            acc += static_cast<double>(w[static_cast<std::size_t>(r) * cols + c]) * x[r];
        }
        y[c] += static_cast<float>(acc);
    }
}

void row_sums_add(const float* m, int rows, std::size_t cols, float* out) {
    for (int r = 0; r < rows; ++r) {
        const float* row = m + static_cast<std::size_t>(r) * cols;
        double acc = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
            acc += row[c];
        }
        out[r] += static_cast<float>(acc);
    }
}

void fill_normal(std::vector<float>& values, float stddev, std::uint64_t seed) {
    Rng rng(seed);
    for (float& v : values) {
        v = static_cast<float>(rng.normal() * stddev);
    }
}

}  // namespace

Gradients::Gradients(const std::vector<Param>& params) {
    values.reserve(params.size());
    for (const Param& p : params) {
        values.emplace_back(p.value.size(), 0.0f);
    }
}

void Gradients::zero() {
    for (auto& g : values) {
        std::fill(g.begin(), g.end(), 0.0f);
    }
}

void Gradients::scale(float factor) {
    for (auto& g : values) {
        for (float& v : g) {
            v *= factor;
        }
    }
}

void validate(const UNetConfig& config) {
    if (config.in_channels < 1 || config.out_channels < 1) {
        throw ConfigError("network channel counts must be >= 1");
    }
    if (config.depth < 1) {
        throw ConfigError("network depth must be >= 1");
    }
    if (config.base_width < 1) {
        throw ConfigError("network width must be >= 1");
    }
    if (config.input_hw < 1) {
        throw ConfigError("network input size must be >= 1");
    }
    if (config.time_embed_dim < 0 || config.time_embed_dim % 2 != 0) {
        throw ConfigError("time embedding dimension must be a nonnegative even number");
    }
    // depth stages need depth-1 halvings that leave an even extent at every pooled stage
    const int halvings = config.depth - 1;
    if (std::log2(static_cast<double>(config.input_hw)) < config.depth ||
        config.input_hw % (1 << halvings) != 0) {
        throw ConfigError("network depth " + std::to_string(config.depth) +
                          " exhausts spatial extent " + std::to_string(config.input_hw));
    }
}

UNet::Conv UNet::make_conv(const std::string& name, int cin, int cout, int k, float init_std,
                           std::uint64_t seed) {
    Conv conv{cin, cout, k, params_.size(), params_.size() + 1};
    Param weight{name + ".weight",
                 {static_cast<std::size_t>(cout), static_cast<std::size_t>(cin * k * k)},
                 std::vector<float>(static_cast<std::size_t>(cout) * cin * k * k)};
    fill_normal(weight.value, init_std, derive_seed(seed, weight.name));
    params_.push_back(std::move(weight));
    params_.push_back(Param{name + ".bias", {static_cast<std::size_t>(cout)},
                            std::vector<float>(static_cast<std::size_t>(cout), 0.0f)});
    return conv;
}

UNet::Dense UNet::make_dense(const std::string& name, int in, int out, float init_std,
                             std::uint64_t seed) {
    Dense dense{in, out, params_.size(), params_.size() + 1};
    Param weight{name + ".weight",
                 {static_cast<std::size_t>(out), static_cast<std::size_t>(in)},
                 std::vector<float>(static_cast<std::size_t>(out) * in)};
    fill_normal(weight.value, init_std, derive_seed(seed, weight.name));
    params_.push_back(std::move(weight));
    params_.push_back(Param{name + ".bias", {static_cast<std::size_t>(out)},
                            std::vector<float>(static_cast<std::size_t>(out), 0.0f)});
    return dense;
}

UNet::UNet(const UNetConfig& config, std::uint64_t seed) : config_(config) {
    validate(config_);
    const auto he = [](int fan_in) { return static_cast<float>(std::sqrt(2.0 / fan_in)); };
    const int embed = config_.time_embed_dim;
    if (embed > 0) {
        time_hidden_ = make_dense("time.hidden", embed, embed, he(embed), seed);
    }
    auto width = [&](int stage) { return config_.base_width << stage; };
    for (int i = 0; i < config_.depth; ++i) {
        const int cin = i == 0 ? config_.in_channels : width(i - 1);
        const std::string name = "enc" + std::to_string(i);
        Stage stage;
        stage.a = make_conv(name + ".a", cin, width(i), 3, he(cin * 9), seed);
        stage.b = make_conv(name + ".b", width(i), width(i), 3, he(width(i) * 9), seed);
        if (embed > 0) {
            stage.time = make_dense(name + ".time", embed, width(i), he(embed) * 0.5f, seed);
        }
        encoder_.push_back(stage);
    }
    decoder_.resize(static_cast<std::size_t>(std::max(config_.depth - 1, 0)));
    for (int j = config_.depth - 2; j >= 0; --j) {
        const int cin = width(j + 1) + width(j);
        const std::string name = "dec" + std::to_string(j);
        Stage stage;
        stage.a = make_conv(name + ".a", cin, width(j), 3, he(cin * 9), seed);
        stage.b = make_conv(name + ".b", width(j), width(j), 3, he(width(j) * 9), seed);
        if (embed > 0) {
            stage.time = make_dense(name + ".time", embed, width(j), he(embed) * 0.5f, seed);
        }
        decoder_[static_cast<std::size_t>(j)] = stage;
    }
    head_ = make_conv("head", width(0), config_.out_channels, 1,
                      static_cast<float>(std::sqrt(1.0 / width(0))), seed);
}

std::vector<float> timestep_embedding(int timestep, int dim) {
    std::vector<float> out(static_cast<std::size_t>(dim));
    const int half = dim / 2;
    for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * i / std::max(half, 1));
        out[static_cast<std::size_t>(i)] = static_cast<float>(std::sin(timestep * freq));
        out[static_cast<std::size_t>(i + half)] = static_cast<float>(std::cos(timestep * freq));
    }
    return out;
}

namespace {

struct ConvView {
    int cin;
    int cout;
    int k;
    const float* weight;
    const float* bias;
};

// y = W * col + b, where col is im2col(x) for k = 3 or x itself for k = 1.
Tensor conv_apply(const ConvView& conv, const float* col, std::size_t h, std::size_t w) {
    const auto plane = static_cast<Eigen::Index>(h * w);
    Tensor out({static_cast<std::size_t>(conv.cout), h, w});
    ConstMatrixMap weight(conv.weight, conv.cout, conv.cin * conv.k * conv.k);
    ConstMatrixMap columns(col, conv.cin * conv.k * conv.k, plane);
    MatrixMap result(out.data(), conv.cout, plane);
    result.noalias() = weight * columns;
    result.colwise() += ConstVectorMap(conv.bias, conv.cout);
    return out;
}

}  // namespace

Tensor UNet::run(const Tensor& x, int timestep, Trace* trace) const {
    if (x.rank() != 3 || static_cast<int>(x.channels()) != config_.in_channels ||
        static_cast<int>(x.height()) != config_.input_hw ||
        static_cast<int>(x.width()) != config_.input_hw) {
        throw ConfigError("network input " + x.shape_string() + " does not match configured [" +
                          std::to_string(config_.in_channels) + "," +
                          std::to_string(config_.input_hw) + "," +
                          std::to_string(config_.input_hw) + "]");
    }
    auto view = [&](const Conv& c) {
        return ConvView{c.cin, c.cout, c.k, params_[c.weight].value.data(),
                        params_[c.bias].value.data()};
    };

    std::vector<float> embedding;
    std::vector<float> hidden;
    if (config_.time_embed_dim > 0) {
        embedding = timestep_embedding(timestep, config_.time_embed_dim);
        hidden.resize(embedding.size());
        matvec(params_[time_hidden_.weight].value.data(), time_hidden_.out, time_hidden_.in,
               embedding.data(), params_[time_hidden_.bias].value.data(), hidden.data());
        for (float& v : hidden) {
            v = std::max(v, 0.0f);
        }
    }

    std::vector<float> scratch_a;
    std::vector<float> scratch_b;
    auto run_stage = [&](const Stage& stage, const Tensor& input, Trace::StageTrace* st) {
        const std::size_t h = input.height();
        const std::size_t w = input.width();
        std::vector<float>& col_a = st ? st->col_a : scratch_a;
        col_a.resize(input.channels() * 9 * h * w);
        im2col3(input.data(), static_cast<int>(input.channels()), static_cast<int>(h),
                static_cast<int>(w), col_a.data());
        Tensor a = conv_apply(view(stage.a), col_a.data(), h, w);
        if (config_.time_embed_dim > 0) {
            std::vector<float> shift(static_cast<std::size_t>(stage.time.out));
            matvec(params_[stage.time.weight].value.data(), stage.time.out, stage.time.in,
                   hidden.data(), params_[stage.time.bias].value.data(), shift.data());
            for (std::size_t c = 0; c < a.channels(); ++c) {
                for (float& v : a.channel(c)) {
                    v += shift[c];
                }
            }
        }
        relu_inplace(a);
        std::vector<float>& col_b = st ? st->col_b : scratch_b;
        col_b.resize(a.channels() * 9 * h * w);
        im2col3(a.data(), static_cast<int>(a.channels()), static_cast<int>(h), static_cast<int>(w),
                col_b.data());
        Tensor b = conv_apply(view(stage.b), col_b.data(), h, w);
        relu_inplace(b);
        if (st) {
            st->act_a = std::move(a);
            st->out = b;
        }
        return b;
    };

    const auto depth = static_cast<std::size_t>(config_.depth);
    if (trace) {
        trace->encoder.assign(depth, {});
        trace->decoder.assign(decoder_.size(), {});
        trace->pool_argmax.assign(depth > 0 ? depth - 1 : 0, {});
        trace->embedding = embedding;
        trace->embedding_hidden = hidden;
        trace->input_channels = config_.in_channels;
    }
    std::vector<Tensor> skips;
    Tensor current = x;
    for (std::size_t i = 0; i < depth; ++i) {
        Tensor out = run_stage(encoder_[i], current, trace ? &trace->encoder[i] : nullptr);
        if (i + 1 < depth) {
            current = max_pool2(out, trace ? &trace->pool_argmax[i] : nullptr);
            skips.push_back(std::move(out));
        } else {
            current = std::move(out);
        }
    }
    for (std::size_t jj = decoder_.size(); jj-- > 0;) {
        Tensor up = upsample2(current);
        Tensor cat = concat_channels({&up, &skips[jj]});
        current = run_stage(decoder_[jj], cat, trace ? &trace->decoder[jj] : nullptr);
    }
    return conv_apply(view(head_), current.data(), current.height(), current.width());
}

Tensor UNet::forward(const Tensor& x, int timestep) const { return run(x, timestep, nullptr); }

Tensor UNet::forward(const Tensor& x, int timestep, Trace& trace) const {
    return run(x, timestep, &trace);
}

void UNet::backward(const Trace& trace, const Tensor& d_output, Gradients& grads) const {
    const std::size_t hw = static_cast<std::size_t>(config_.input_hw);
    if (d_output.rank() != 3 || static_cast<int>(d_output.channels()) != config_.out_channels ||
        d_output.height() != hw || d_output.width() != hw) {
        throw ConfigError("backward: output gradient shape " + d_output.shape_string());
    }
    const bool timed = config_.time_embed_dim > 0;
    std::vector<float> d_hidden(timed ? static_cast<std::size_t>(config_.time_embed_dim) : 0, 0.0f);

    // Gradient of a conv layer from gradient at its output; returns d columns when requested.
    auto conv_backward = [&](const Conv& conv, const float* col, const Tensor& d_out,
                             bool need_input) {
        const auto plane = static_cast<Eigen::Index>(d_out.height() * d_out.width());
        const int kk = conv.cin * conv.k * conv.k;
        ConstMatrixMap dy(d_out.data(), conv.cout, plane);
        ConstMatrixMap columns(col, kk, plane);
        MatrixMap dw(grads.values[conv.weight].data(), conv.cout, kk);
        dw.noalias() += dy * columns.transpose();
        row_sums_add(d_out.data(), conv.cout, static_cast<std::size_t>(plane),
                     grads.values[conv.bias].data());
        std::vector<float> d_col;
        if (need_input) {
            d_col.resize(static_cast<std::size_t>(kk) * plane);
            ConstMatrixMap weight(params_[conv.weight].value.data(), conv.cout, kk);
            MatrixMap dc(d_col.data(), kk, plane);
            dc.noalias() = weight.transpose() * dy;
        }
        return d_col;
    };

    auto stage_backward = [&](const Stage& stage, const Trace::StageTrace& st, Tensor d_out,
                              bool need_input) {
        const std::size_t h = d_out.height();
        const std::size_t w = d_out.width();
        relu_backward_inplace(d_out, st.out);
        std::vector<float> d_col_b = conv_backward(stage.b, st.col_b.data(), d_out, true);
        Tensor d_a({st.act_a.channels(), h, w});
        col2im3(d_col_b.data(), static_cast<int>(d_a.channels()), static_cast<int>(h),
                static_cast<int>(w), d_a.data());
        relu_backward_inplace(d_a, st.act_a);
        if (timed) {
            std::vector<float> d_shift(d_a.channels(), 0.0f);
            for (std::size_t c = 0; c < d_a.channels(); ++c) {
                for (float v : d_a.channel(c)) {
                    d_shift[c] += v;
                }
            }
            ConstVectorMap ds(d_shift.data(), stage.time.out);
            MatrixMap dw(grads.values[stage.time.weight].data(), stage.time.out, stage.time.in);
            dw.noalias() += ds * ConstVectorMap(trace.embedding_hidden.data(), stage.time.in).transpose();
            VectorMap(grads.values[stage.time.bias].data(), stage.time.out) += ds;
            matvec_transposed_add(params_[stage.time.weight].value.data(), stage.time.out,
                                  stage.time.in, d_shift.data(), d_hidden.data());
        }
        std::vector<float> d_col_a = conv_backward(stage.a, st.col_a.data(), d_a, need_input);
        Tensor d_in;
        if (need_input) {
            d_in = Tensor({static_cast<std::size_t>(stage.a.cin), h, w});
            col2im3(d_col_a.data(), stage.a.cin, static_cast<int>(h), static_cast<int>(w),
                    d_in.data());
        }
        return d_in;
    };

    const auto depth = static_cast<std::size_t>(config_.depth);
    const Tensor& head_input = decoder_.empty() ? trace.encoder.back().out : trace.decoder[0].out;
    std::vector<float> d_head_col = conv_backward(head_, head_input.data(), d_output, true);
    Tensor d_current(head_input.shape(), std::move(d_head_col));

    std::vector<Tensor> d_skips(depth);
    for (std::size_t j = 0; j < decoder_.size(); ++j) {
        Tensor d_cat = stage_backward(decoder_[j], trace.decoder[j], std::move(d_current), true);
        const std::size_t up_channels = static_cast<std::size_t>(config_.base_width) << (j + 1);
        d_current = upsample2_backward(d_cat, up_channels);
        const std::size_t skip_channels = d_cat.channels() - up_channels;
        Tensor d_skip({skip_channels, d_cat.height(), d_cat.width()});
        std::copy(d_cat.values().begin() + static_cast<std::ptrdiff_t>(up_channels * d_cat.height() * d_cat.width()),
                  d_cat.values().end(), d_skip.values().begin());
        d_skips[j] = std::move(d_skip);
    }
    for (std::size_t i = depth; i-- > 0;) {
        if (i + 1 < depth) {
            for (std::size_t k = 0; k < d_current.size(); ++k) {
                d_skips[i][k] += d_current[k];
            }
            d_current = std::move(d_skips[i]);
        }
        Tensor d_in = stage_backward(encoder_[i], trace.encoder[i], std::move(d_current), i > 0);
        if (i > 0) {
            const Tensor& pooled_from = trace.encoder[i - 1].out;
            Tensor d_pool(pooled_from.shape());
            const auto& argmax = trace.pool_argmax[i - 1];
            for (std::size_t k = 0; k < d_in.size(); ++k) {
                d_pool[argmax[k]] += d_in[k];
            }
            d_current = std::move(d_pool);
        }
    }

    if (timed) {
        for (std::size_t k = 0; k < d_hidden.size(); ++k) {
            if (trace.embedding_hidden[k] <= 0.0f) {
                d_hidden[k] = 0.0f;
            }
        }
        ConstVectorMap dh(d_hidden.data(), time_hidden_.out);
        MatrixMap dw(grads.values[time_hidden_.weight].data(), time_hidden_.out, time_hidden_.in);
        dw.noalias() += dh * ConstVectorMap(trace.embedding.data(), time_hidden_.in).transpose();
        VectorMap(grads.values[time_hidden_.bias].data(), time_hidden_.out) += dh;
    }
}

Adam::Adam(const std::vector<Param>& params) {
    for (const Param& p : params) {
        first_moment.emplace_back(p.value.size(), 0.0f);
        second_moment.emplace_back(p.value.size(), 0.0f);
    }
}

void Adam::step(std::vector<Param>& params, const Gradients& grads, const AdamOptions& options) {
    if (first_moment.size() != params.size()) {
        throw ConfigError("optimizer state does not match parameter list");
    }
    ++steps;
    const double correction1 = 1.0 - std::pow(options.beta1, static_cast<double>(steps));
    const double correction2 = 1.0 - std::pow(options.beta2, static_cast<double>(steps));
    const auto b1 = static_cast<float>(options.beta1);
    const auto b2 = static_cast<float>(options.beta2);
    for (std::size_t p = 0; p < params.size(); ++p) {
        auto& value = params[p].value;
        const auto& g = grads.values[p];
        auto& m = first_moment[p];
        auto& v = second_moment[p];
        for (std::size_t i = 0; i < value.size(); ++i) {
            m[i] = b1 * m[i] + (1.0f - b1) * g[i];
            v[i] = b2 * v[i] + (1.0f - b2) * g[i] * g[i];
            const double m_hat = m[i] / correction1;
            const double v_hat = v[i] / correction2;
            value[i] -= static_cast<float>(options.lr * m_hat / (std::sqrt(v_hat) + options.eps));
        }
    }
}

}  // namespace nndm::nn
