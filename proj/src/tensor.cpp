#include "nndm/tensor.hpp"

#include "nndm/errors.hpp"

#include <functional>
#include <numeric>
#include <sstream>

namespace nndm {

namespace {

std::size_t element_count(const std::vector<std::size_t>& shape) {
    if (shape.empty() || shape.size() > 3) {
        throw ConfigError("tensor rank must be 1..3");
    }
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, float fill)
    : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != element_count(shape_)) {
        throw ConfigError("tensor data size does not match shape " + shape_string());
    }
}

std::size_t Tensor::dim(std::size_t i) const {
    if (i >= shape_.size()) {
        throw ConfigError("tensor axis out of range for shape " + shape_string());
    }
    return shape_[i];
}

std::span<const float> Tensor::channel(std::size_t c) const {
    const std::size_t plane = height() * width();
    return std::span<const float>(data_).subspan(c * plane, plane);
}

std::span<float> Tensor::channel(std::size_t c) {
    const std::size_t plane = height() * width();
    return std::span<float>(data_).subspan(c * plane, plane);
}

std::string Tensor::shape_string() const {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape_.size(); ++i) {
        out << (i ? "," : "") << shape_[i];
    }
    out << ']';
    return out.str();
}

Tensor concat_channels(std::initializer_list<const Tensor*> parts) {
    std::size_t channels = 0;
    std::size_t h = 0;
    std::size_t w = 0;
    for (const Tensor* p : parts) {
        if (p->rank() != 3) {
            throw ConfigError("concat_channels expects [C,H,W] tensors");
        }
        if (channels == 0) {
            h = p->height();
            w = p->width();
        } else if (p->height() != h || p->width() != w) {
            throw ConfigError("concat_channels spatial mismatch");
        }
        channels += p->channels();
    }
    Tensor out({channels, h, w});
    std::size_t offset = 0;
    for (const Tensor* p : parts) {
        std::copy(p->values().begin(), p->values().end(), out.values().begin() + offset);
        offset += p->size();
    }
    return out;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (!a.same_shape(b)) {
        throw ConfigError(std::string(what) + ": shape mismatch " + a.shape_string() + " vs " +
                          b.shape_string());
    }
}

}  // namespace nndm
