// Dense row-major tensor and the numeric kernels the rest of the library builds on.
#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace sadreg {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape &shape);
std::size_t shape_numel(const Shape &shape);

struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Contiguous row-major array of doubles. Every dimension is >= 1.
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
    static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0); }
    static Tensor scalar(double v) { return Tensor(Shape{1}, v); }
    static Tensor zeros_like(const Tensor &t) { return Tensor(t.shape(), 0.0); }
    static Tensor ones_like(const Tensor &t) { return Tensor(t.shape(), 1.0); }

    const Shape &shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }
    std::vector<double> &storage() { return data_; }
    const std::vector<double> &storage() const { return data_; }

    double &operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    // Rank-4 NCHW accessors.
    double &at(std::size_t n, std::size_t c, std::size_t h, std::size_t w);
    double at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const;

    // Value of a single-element tensor.
    double item() const;

    Tensor reshaped(Shape shape) const;
    bool all_finite() const;

    friend bool operator==(const Tensor &a, const Tensor &b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

  private:
    Shape shape_;
    std::vector<double> data_;
};

enum class ElementwiseOp { add, sub, mul };
enum class ReduceOp { sum, mean, var };
enum class Padding { same, valid };

namespace ops {

// Broadcasting: b is right-aligned against a (missing leading axes count as 1);
// each of b's axes must equal a's axis or be 1. The result always has a's shape.
Tensor elementwise(ElementwiseOp op, const Tensor &a, const Tensor &b);
Tensor add(const Tensor &a, const Tensor &b);
Tensor sub(const Tensor &a, const Tensor &b);
Tensor mul(const Tensor &a, const Tensor &b);
Tensor scale(const Tensor &a, double s);
Tensor add_scalar(const Tensor &a, double s);

// Sums a tensor of shape `from` down to the broadcast shape `to` (adjoint of broadcasting).
Tensor sum_to_shape(const Tensor &from, const Shape &to);
bool broadcastable(const Shape &to, const Shape &from);

// Cross-correlation (no kernel flip), stride 1.
// Padding::same replicates border pixels, so an affine intensity change a*x+b of the
// input is an exact per-channel affine change of the output. Requires an odd kernel.
Tensor conv2d(const Tensor &input, const Tensor &kernel, const Tensor &bias, Padding padding);
Tensor conv2d_grad_input(const Tensor &grad_out, const Tensor &kernel, const Shape &input_shape,
                         Padding padding);
Tensor conv2d_grad_kernel(const Tensor &grad_out, const Tensor &input, const Shape &kernel_shape,
                          Padding padding);

// Reductions accumulate in double in a fixed order. var uses the biased 1/N normalizer.
Tensor reduce(ReduceOp op, const Tensor &x, const std::vector<std::size_t> &axes, bool keepdims);
double sum(const Tensor &x);
double mean(const Tensor &x);

Tensor resize_nearest_x2(const Tensor &x);
// 2x2 mean pooling; the exact left inverse of resize_nearest_x2.
Tensor avg_pool2(const Tensor &x);

Tensor relu(const Tensor &x);
Tensor concat_channels(const Tensor &a, const Tensor &b);
Tensor slice_channels(const Tensor &x, std::size_t begin, std::size_t end);

// Stacks [1,...] tensors along axis 0.
Tensor stack(std::span<const Tensor> items);
Tensor take_sample(const Tensor &x, std::size_t n);

} // namespace ops
} // namespace sadreg
