#pragma once

#include <cstddef>
#include <memory>
#include <numeric>
#include <sstream>
#include <vector>

#include "everadapt/errors.hpp"

namespace everadapt {

// Dense n-dimensional array of doubles with an optional gradient slot.
// Shapes follow the [batch, channel, length] convention for signals and
// [batch, features] for flat data. The gradient buffer is allocated lazily
// by the backward pass; size() == data.size() is an invariant, and
// grad.size() is either 0 or data.size().
class Tensor {
public:
    std::vector<std::size_t> shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;

    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> s, double fill = 0.0)
        : shape(std::move(s)), data(count(shape), fill) {}

    Tensor(std::vector<std::size_t> s, std::vector<double> d)
        : shape(std::move(s)), data(std::move(d)) {
        if (count(shape) != data.size())
            throw dimension_error("tensor data length does not match shape");
    }

    static std::size_t count(const std::vector<std::size_t>& s) {
        std::size_t n = 1;
        for (std::size_t d : s) n *= d;
        return n;
    }

    std::size_t size() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }

    std::size_t dim(std::size_t i) const {
        if (i >= shape.size()) throw dimension_error("tensor axis out of range");
        return shape[i];
    }

    bool is_scalar() const { return data.size() == 1; }

    // 2-D and 3-D element access used by the op kernels.
    double& at2(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
    double at2(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }
    double& at3(std::size_t b, std::size_t c, std::size_t l) {
        return data[(b * shape[1] + c) * shape[2] + l];
    }
    double at3(std::size_t b, std::size_t c, std::size_t l) const {
        return data[(b * shape[1] + c) * shape[2] + l];
    }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }

    void zero_grad() {
        if (!grad.empty()) grad.assign(grad.size(), 0.0);
    }

    std::string shape_str() const {
        std::ostringstream os;
        os << '[';
        for (std::size_t i = 0; i < shape.size(); ++i)
            os << (i ? "," : "") << shape[i];
        os << ']';
        return os.str();
    }
};

using TensorPtr = std::shared_ptr<Tensor>;

inline TensorPtr make_tensor(std::vector<std::size_t> shape, double fill = 0.0) {
    return std::make_shared<Tensor>(std::move(shape), fill);
}

inline TensorPtr make_tensor(std::vector<std::size_t> shape, std::vector<double> data) {
    return std::make_shared<Tensor>(std::move(shape), std::move(data));
}

// Leaf parameter: participates in gradient accumulation.
inline TensorPtr make_param(std::vector<std::size_t> shape, std::vector<double> data) {
    auto t = make_tensor(std::move(shape), std::move(data));
    t->requires_grad = true;
    return t;
}

inline TensorPtr scalar_tensor(double v) {
    return make_tensor({std::size_t{1}}, std::vector<double>{v});
}

} // namespace everadapt
