#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace readi {

using Shape = std::vector<int>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorImpl {
    Shape shape;
    std::vector<float> data;
    bool requires_grad = false;
    std::optional<std::vector<float>> grad;
    // id of the tape node that produced this tensor (0 = leaf)
    std::uint64_t tape_mark = 0;
    // shadow double carried by scalar reduction results; data[0] stays the
    // canonical f32 value, hi only sharpens finite-difference probes
    std::optional<double> hi;
    // full-precision shadow of data, filled by ops only while a ShadowGuard
    // is active; never feeds back into the f32 path
    std::shared_ptr<std::vector<double>> hi_data;
};

// Dense row-major f32 tensor. Value-semantics handle: copies share storage,
// which is what lets parameter sets hold many views of the same weights.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, float value);
    static Tensor from(Shape shape, std::vector<float> values);
    static Tensor scalar(float value);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const;
    int dim(int i) const;
    int ndim() const;
    std::size_t size() const;
    bool is_scalar() const;

    float* data();
    const float* data() const;
    float item() const;     // scalar tensors only
    double item_hi() const; // shadow double when present, else item()
    void set_hi(double v);  // scalar tensors only

    float at(std::size_t i) const;
    float at2(int r, int c) const;   // 2-d
    float at3(int c, int y, int x) const; // 3-d

    bool requires_grad() const;
    Tensor& set_requires_grad(bool v);

    bool has_grad() const;
    const std::vector<float>& grad() const;
    std::vector<float>& mutable_grad(); // allocates zeros if absent
    void zero_grad();                   // drops grad storage

    // identity of the underlying storage
    TensorImpl* impl() const { return impl_.get(); }
    const std::shared_ptr<TensorImpl>& handle() const { return impl_; }

    // deep copy (fresh storage, grad not copied)
    Tensor clone() const;

    void check_finite(const char* what) const;

private:
    explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
    std::shared_ptr<TensorImpl> impl_;

    friend Tensor make_tensor(Shape, std::vector<float>);
    friend Tensor make_tensor_unchecked(Shape, std::vector<float>);
};

// validates shape/data agreement and rejects non-finite values
Tensor make_tensor(Shape shape, std::vector<float> values);
// shape/data agreement only; used by op kernels whose outputs are
// finite-checked separately when READI_CHECK_FINITE is defined
Tensor make_tensor_unchecked(Shape shape, std::vector<float> values);

} // namespace readi
