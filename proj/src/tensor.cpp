#include "readi/tensor.hpp"

#include "readi/common.hpp"

#include <fmt/format.h>

#include <algorithm>

namespace readi {

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    return n;
}

std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

Tensor make_tensor_unchecked(Shape shape, std::vector<float> values) {
    for (int d : shape) {
        if (d <= 0) throw ShapeError(fmt::format("tensor dimension must be positive, got {}", shape_str(shape)));
    }
    if (shape_numel(shape) != values.size()) {
        throw ShapeError(fmt::format("tensor shape {} does not match data length {}", shape_str(shape), values.size()));
    }
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(values);
    return Tensor(std::move(impl));
}

Tensor make_tensor(Shape shape, std::vector<float> values) {
    for (float v : values) {
        if (!is_finite(v)) throw ContractError("tensor construction: non-finite value");
    }
    return make_tensor_unchecked(std::move(shape), std::move(values));
}

Tensor Tensor::zeros(Shape shape) {
    const std::size_t n = shape_numel(shape);
    return make_tensor_unchecked(std::move(shape), std::vector<float>(n, 0.0f));
}

Tensor Tensor::full(Shape shape, float value) {
    const std::size_t n = shape_numel(shape);
    return make_tensor(std::move(shape), std::vector<float>(n, value));
}

Tensor Tensor::from(Shape shape, std::vector<float> values) {
    return make_tensor(std::move(shape), std::move(values));
}

Tensor Tensor::scalar(float value) {
    return make_tensor({1}, {value});
}

const Shape& Tensor::shape() const { return impl_->shape; }

int Tensor::dim(int i) const { return impl_->shape.at(static_cast<std::size_t>(i)); }

int Tensor::ndim() const { return static_cast<int>(impl_->shape.size()); }

std::size_t Tensor::size() const { return impl_->data.size(); }

bool Tensor::is_scalar() const { return impl_ && impl_->data.size() == 1; }

float* Tensor::data() { return impl_->data.data(); }
const float* Tensor::data() const { return impl_->data.data(); }

float Tensor::item() const {
    if (!is_scalar()) throw ContractError("Tensor::item: tensor is not scalar");
    return impl_->data[0];
}

double Tensor::item_hi() const {
    if (!is_scalar()) throw ContractError("Tensor::item_hi: tensor is not scalar");
    if (impl_->hi_data) return (*impl_->hi_data)[0];
    return impl_->hi ? *impl_->hi : static_cast<double>(impl_->data[0]);
}

void Tensor::set_hi(double v) {
    if (!is_scalar()) throw ContractError("Tensor::set_hi: tensor is not scalar");
    impl_->hi = v;
}

float Tensor::at(std::size_t i) const { return impl_->data.at(i); }

float Tensor::at2(int r, int c) const {
    return impl_->data.at(static_cast<std::size_t>(r) * dim(1) + c);
}

float Tensor::at3(int c, int y, int x) const {
    return impl_->data.at((static_cast<std::size_t>(c) * dim(1) + y) * dim(2) + x);
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool v) {
    impl_->requires_grad = v;
    return *this;
}

bool Tensor::has_grad() const { return impl_ && impl_->grad.has_value(); }

const std::vector<float>& Tensor::grad() const {
    if (!has_grad()) throw ContractError("Tensor::grad: no gradient stored");
    return *impl_->grad;
}

std::vector<float>& Tensor::mutable_grad() {
    if (!impl_->grad) impl_->grad.emplace(impl_->data.size(), 0.0f);
    return *impl_->grad;
}

void Tensor::zero_grad() {
    impl_->grad.reset();
}

Tensor Tensor::clone() const {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = impl_->shape;
    impl->data = impl_->data;
    impl->requires_grad = impl_->requires_grad;
    return Tensor(std::move(impl));
}

void Tensor::check_finite(const char* what) const {
#ifdef READI_CHECK_FINITE
    for (float v : impl_->data) {
        if (!is_finite(v)) throw ContractError(fmt::format("{}: non-finite value", what));
    }
#else
    (void)what;
#endif
}

} // namespace readi
