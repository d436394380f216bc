#include "tog/tensor.hpp"

#include <cmath>
#include <sstream>
#include <utility>

#include "tog/errors.hpp"

namespace tog {

std::size_t numel_of(const Shape& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw DimensionError("non-positive dimension in shape " + shape_str(shape));
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    Tensor t;
    const std::size_t n = numel_of(shape);
    t.shape = std::move(shape);
    t.data = std::make_shared<std::vector<float>>(n, 0.0f);
    t.requires_grad = requires_grad;
    if (requires_grad) t.ensure_grad();
    return t;
}

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.data->begin(), t.data->end(), value);
    return t;
}

Tensor Tensor::from(Shape shape, std::vector<float> values, bool requires_grad) {
    const std::size_t n = numel_of(shape);
    if (values.size() != n) {
        throw DimensionError("value count " + std::to_string(values.size()) +
                             " does not fill shape " + shape_str(shape));
    }
    Tensor t;
    t.shape = std::move(shape);
    t.data = std::make_shared<std::vector<float>>(std::move(values));
    t.requires_grad = requires_grad;
    if (requires_grad) t.ensure_grad();
    return t;
}

Tensor Tensor::scalar(float value, bool requires_grad) {
    return from({1}, {value}, requires_grad);
}

float Tensor::value() const {
    if (!is_scalar()) throw DimensionError("value() on non-scalar tensor " + shape_str(shape));
    return (*data)[0];
}

void Tensor::ensure_grad() {
    if (!grad) grad = std::make_shared<std::vector<float>>(numel(), 0.0f);
}

void Tensor::zero_grad() {
    if (grad) std::fill(grad->begin(), grad->end(), 0.0f);
}

bool Tensor::all_finite() const {
    for (float v : *data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

Tensor Tensor::reshaped(Shape new_shape) const {
    if (numel_of(new_shape) != numel()) {
        throw DimensionError("reshape " + shape_str(shape) + " -> " + shape_str(new_shape) +
                             " changes element count");
    }
    Tensor t = *this;
    t.shape = std::move(new_shape);
    return t;
}

Tensor Tensor::clone_detached() const {
    Tensor t;
    t.shape = shape;
    t.data = std::make_shared<std::vector<float>>(*data);
    t.requires_grad = false;
    return t;
}

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape::Tape() : previous_(g_active_tape) { g_active_tape = this; }

Tape::~Tape() { g_active_tape = previous_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::record(std::function<void()> backward_step) {
    steps_.push_back(std::move(backward_step));
}

void Tape::backward(Tensor& loss) {
    if (!loss.is_scalar()) {
        throw DimensionError("backward requires a scalar loss, got " + shape_str(loss.shape));
    }
    loss.ensure_grad();
    (*loss.grad)[0] = 1.0f;
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
}

}  // namespace tog
