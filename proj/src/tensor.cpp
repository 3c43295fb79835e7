#include "sadreg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <Eigen/Core>

namespace sadreg {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

void check_shape(const Shape &shape) {
    if (shape.empty()) {
        throw ShapeError("tensor shape must have rank >= 1");
    }
    for (auto d : shape) {
        if (d == 0) {
            throw ShapeError("tensor dimensions must be >= 1, got " + shape_to_string(shape));
        }
    }
}

void require_rank4(const Tensor &t, const char *what) {
    if (t.rank() != 4) {
        throw ShapeError(std::string(what) + ": expected rank-4 NCHW tensor, got " +
                         shape_to_string(t.shape()));
    }
}

std::vector<std::size_t> strides_of(const Shape &shape) {
    std::vector<std::size_t> strides(shape.size(), 1);
    for (std::size_t i = shape.size(); i-- > 1;) {
        strides[i - 1] = strides[i] * shape[i];
    }
    return strides;
}

struct ConvGeometry {
    std::size_t channels_in, height, width;
    std::size_t channels_out, kh, kw;
    std::size_t out_h, out_w;
    std::ptrdiff_t pad_h, pad_w;
    bool replicate;
};

ConvGeometry conv_geometry(const Shape &input, const Shape &kernel, Padding padding) {
    if (input.size() != 4 || kernel.size() != 4) {
        throw ShapeError("conv2d: expected input [N,C,H,W] and kernel [Cout,Cin,k,k], got " +
                         shape_to_string(input) + " and " + shape_to_string(kernel));
    }
    ConvGeometry g{};
    g.channels_in = input[1];
    g.height = input[2];
    g.width = input[3];
    g.channels_out = kernel[0];
    g.kh = kernel[2];
    g.kw = kernel[3];
    if (kernel[1] != g.channels_in) {
        throw ShapeError("conv2d: channel mismatch, input " + shape_to_string(input) + " kernel " +
                         shape_to_string(kernel));
    }
    if (padding == Padding::same) {
        if (g.kh % 2 == 0 || g.kw % 2 == 0) {
            throw ShapeError("conv2d: same padding requires an odd kernel, got " +
                             shape_to_string(kernel));
        }
        g.pad_h = static_cast<std::ptrdiff_t>(g.kh / 2);
        g.pad_w = static_cast<std::ptrdiff_t>(g.kw / 2);
        g.out_h = g.height;
        g.out_w = g.width;
        g.replicate = true;
    } else {
        if (g.kh > g.height || g.kw > g.width) {
            throw ShapeError("conv2d: kernel " + shape_to_string(kernel) +
                             " larger than input " + shape_to_string(input));
        }
        g.pad_h = g.pad_w = 0;
        g.out_h = g.height - g.kh + 1;
        g.out_w = g.width - g.kw + 1;
        g.replicate = false;
    }
    return g;
}

// Visits every (channel, tap, output row) of the column matrix with the clamped source
// row and the output column range whose source column needs no clamping.
template <typename Fn>
void for_each_col_row(const ConvGeometry &g, Fn &&fn) {
    const auto H = static_cast<std::ptrdiff_t>(g.height);
    const auto W = static_cast<std::ptrdiff_t>(g.width);
    const auto OW = static_cast<std::ptrdiff_t>(g.out_w);
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
        for (std::size_t kx = 0; kx < g.kw; ++kx) {
            const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(kx) - g.pad_w;
            const std::ptrdiff_t lo = std::clamp<std::ptrdiff_t>(-shift, 0, OW);
            const std::ptrdiff_t hi = std::clamp<std::ptrdiff_t>(W - shift, lo, OW);
            for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                const auto sy = std::clamp<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(oy + ky) - g.pad_h, 0, H - 1);
                fn(ky * g.kw + kx, oy, static_cast<std::size_t>(sy), shift, lo, hi);
            }
        }
    }
}

void im2col(const double *image, const ConvGeometry &g, std::vector<double> &cols) {
    const std::size_t taps = g.kh * g.kw;
    const std::size_t pixels = g.out_h * g.out_w;
    const std::size_t plane = g.height * g.width;
    const auto W = static_cast<std::ptrdiff_t>(g.width);
    const auto OW = static_cast<std::ptrdiff_t>(g.out_w);
    cols.resize(g.channels_in * taps * pixels);
    for (std::size_t c = 0; c < g.channels_in; ++c) {
        const double *src = image + c * plane;
        double *base = cols.data() + c * taps * pixels;
        for_each_col_row(g, [&](std::size_t tap, std::size_t oy, std::size_t sy, std::ptrdiff_t shift,
                                std::ptrdiff_t lo, std::ptrdiff_t hi) {
            const double *srow = src + sy * g.width;
            double *dst = base + tap * pixels + oy * g.out_w;
            for (std::ptrdiff_t ox = 0; ox < lo; ++ox) {
                dst[ox] = srow[0];
            }
            std::copy(srow + lo + shift, srow + hi + shift, dst + lo);
            for (std::ptrdiff_t ox = hi; ox < OW; ++ox) {
                dst[ox] = srow[W - 1];
            }
        });
    }
}

void col2im_add(const std::vector<double> &cols, const ConvGeometry &g, double *image) {
    const std::size_t taps = g.kh * g.kw;
    const std::size_t pixels = g.out_h * g.out_w;
    const std::size_t plane = g.height * g.width;
    const auto W = static_cast<std::ptrdiff_t>(g.width);
    const auto OW = static_cast<std::ptrdiff_t>(g.out_w);
    for (std::size_t c = 0; c < g.channels_in; ++c) {
        double *dst = image + c * plane;
        const double *base = cols.data() + c * taps * pixels;
        for_each_col_row(g, [&](std::size_t tap, std::size_t oy, std::size_t sy, std::ptrdiff_t shift,
                                std::ptrdiff_t lo, std::ptrdiff_t hi) {
            double *drow = dst + sy * g.width;
            const double *src = base + tap * pixels + oy * g.out_w;
            for (std::ptrdiff_t ox = 0; ox < lo; ++ox) {
                drow[0] += src[ox];
            }
            for (std::ptrdiff_t ox = lo; ox < hi; ++ox) {
                drow[ox + shift] += src[ox];
            }
            for (std::ptrdiff_t ox = hi; ox < OW; ++ox) {
                drow[W - 1] += src[ox];
            }
        });
    }
}

} // namespace

std::string shape_to_string(const Shape &shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "," : "") << shape[i];
    }
    os << ')';
    return os.str();
}

std::size_t shape_numel(const Shape &shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
    check_shape(shape_);
    data_.assign(shape_numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape(shape_);
    if (data_.size() != shape_numel(shape_)) {
        throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_to_string(shape_));
    }
}

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= shape_.size()) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_to_string(shape_));
    }
    return shape_[axis];
}

double &Tensor::at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
}

double Tensor::at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
}

double Tensor::item() const {
    if (data_.size() != 1) {
        throw ShapeError("item() on non-scalar tensor of shape " + shape_to_string(shape_));
    }
    return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
    if (shape_numel(shape) != data_.size()) {
        throw ShapeError("cannot reshape " + shape_to_string(shape_) + " to " +
                         shape_to_string(shape));
    }
    return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

namespace ops {

bool broadcastable(const Shape &to, const Shape &from) {
    if (from.size() > to.size()) {
        return false;
    }
    const std::size_t offset = to.size() - from.size();
    for (std::size_t i = 0; i < from.size(); ++i) {
        if (from[i] != 1 && from[i] != to[offset + i]) {
            return false;
        }
    }
    return true;
}

namespace {

// Index into b for every element of a under the broadcast rule.
template <typename Fn>
void for_each_broadcast(const Shape &a_shape, const Shape &b_shape, Fn &&fn) {
    const std::size_t n = shape_numel(a_shape);
    if (a_shape == b_shape) {
        for (std::size_t i = 0; i < n; ++i) {
            fn(i, i);
        }
        return;
    }
    const std::size_t rank = a_shape.size();
    const std::size_t offset = rank - b_shape.size();
    Shape b_full(rank, 1);
    std::copy(b_shape.begin(), b_shape.end(), b_full.begin() + static_cast<std::ptrdiff_t>(offset));
    // Fast path: b matches a on a leading block of axes and is 1 on the rest.
    std::size_t lead = 0;
    while (lead < rank && b_full[lead] == a_shape[lead]) {
        ++lead;
    }
    if (std::all_of(b_full.begin() + static_cast<std::ptrdiff_t>(lead), b_full.end(),
                    [](std::size_t d) { return d == 1; })) {
        std::size_t inner = 1;
        for (std::size_t ax = lead; ax < rank; ++ax) {
            inner *= a_shape[ax];
        }
        for (std::size_t i = 0, j = 0; i < n; i += inner, ++j) {
            for (std::size_t k = 0; k < inner; ++k) {
                fn(i + k, j);
            }
        }
        return;
    }
    const auto b_strides = strides_of(b_full);
    std::vector<std::size_t> idx(rank, 0);
    std::size_t bi = 0;
    for (std::size_t i = 0; i < n; ++i) {
        fn(i, bi);
        for (std::size_t ax = rank; ax-- > 0;) {
            if (++idx[ax] < a_shape[ax]) {
                if (b_full[ax] != 1) {
                    bi += b_strides[ax];
                }
                break;
            }
            if (b_full[ax] != 1) {
                bi -= b_strides[ax] * (a_shape[ax] - 1);
            }
            idx[ax] = 0;
        }
    }
}

} // namespace

Tensor elementwise(ElementwiseOp op, const Tensor &a, const Tensor &b) {
    if (!broadcastable(a.shape(), b.shape())) {
        throw ShapeError("elementwise: shape mismatch between " + shape_to_string(a.shape()) +
                         " and " + shape_to_string(b.shape()));
    }
    Tensor out(a.shape());
    auto o = out.data();
    auto x = a.data();
    auto y = b.data();
    switch (op) {
    case ElementwiseOp::add:
        for_each_broadcast(a.shape(), b.shape(), [&](std::size_t i, std::size_t j) { o[i] = x[i] + y[j]; });
        break;
    case ElementwiseOp::sub:
        for_each_broadcast(a.shape(), b.shape(), [&](std::size_t i, std::size_t j) { o[i] = x[i] - y[j]; });
        break;
    case ElementwiseOp::mul:
        for_each_broadcast(a.shape(), b.shape(), [&](std::size_t i, std::size_t j) { o[i] = x[i] * y[j]; });
        break;
    }
    return out;
}

Tensor add(const Tensor &a, const Tensor &b) { return elementwise(ElementwiseOp::add, a, b); }
Tensor sub(const Tensor &a, const Tensor &b) { return elementwise(ElementwiseOp::sub, a, b); }
Tensor mul(const Tensor &a, const Tensor &b) { return elementwise(ElementwiseOp::mul, a, b); }

Tensor scale(const Tensor &a, double s) {
    Tensor out = a;
    for (auto &v : out.data()) {
        v *= s;
    }
    return out;
}

Tensor add_scalar(const Tensor &a, double s) {
    Tensor out = a;
    for (auto &v : out.data()) {
        v += s;
    }
    return out;
}

Tensor sum_to_shape(const Tensor &from, const Shape &to) {
    if (from.shape() == to) {
        return from;
    }
    if (!broadcastable(from.shape(), to)) {
        throw ShapeError("sum_to_shape: " + shape_to_string(from.shape()) +
                         " does not broadcast from " + shape_to_string(to));
    }
    Tensor out(to, 0.0);
    auto o = out.data();
    auto x = from.data();
    for_each_broadcast(from.shape(), to, [&](std::size_t i, std::size_t j) { o[j] += x[i]; });
    return out;
}

Tensor conv2d(const Tensor &input, const Tensor &kernel, const Tensor &bias, Padding padding) {
    const auto g = conv_geometry(input.shape(), kernel.shape(), padding);
    if (bias.size() != g.channels_out) {
        throw ShapeError("conv2d: bias " + shape_to_string(bias.shape()) + " does not match " +
                         std::to_string(g.channels_out) + " output channels");
    }
    const std::size_t batch = input.dim(0);
    const std::size_t patch = g.channels_in * g.kh * g.kw;
    const std::size_t pixels = g.out_h * g.out_w;
    Tensor out({batch, g.channels_out, g.out_h, g.out_w});
    std::vector<double> cols;
    ConstMapMat weights(kernel.data().data(), static_cast<Eigen::Index>(g.channels_out),
                        static_cast<Eigen::Index>(patch));
    for (std::size_t n = 0; n < batch; ++n) {
        im2col(input.data().data() + n * g.channels_in * g.height * g.width, g, cols);
        ConstMapMat col_mat(cols.data(), static_cast<Eigen::Index>(patch),
                            static_cast<Eigen::Index>(pixels));
        MapMat result(out.data().data() + n * g.channels_out * pixels,
                      static_cast<Eigen::Index>(g.channels_out), static_cast<Eigen::Index>(pixels));
        result.noalias() = weights * col_mat;
        for (std::size_t co = 0; co < g.channels_out; ++co) {
            result.row(static_cast<Eigen::Index>(co)).array() += bias[co];
        }
    }
    return out;
}

Tensor conv2d_grad_input(const Tensor &grad_out, const Tensor &kernel, const Shape &input_shape,
                         Padding padding) {
    const auto g = conv_geometry(input_shape, kernel.shape(), padding);
    const std::size_t batch = input_shape[0];
    const std::size_t patch = g.channels_in * g.kh * g.kw;
    const std::size_t pixels = g.out_h * g.out_w;
    Tensor grad_in(input_shape, 0.0);
    std::vector<double> cols(patch * pixels);
    ConstMapMat weights(kernel.data().data(), static_cast<Eigen::Index>(g.channels_out),
                        static_cast<Eigen::Index>(patch));
    for (std::size_t n = 0; n < batch; ++n) {
        ConstMapMat go(grad_out.data().data() + n * g.channels_out * pixels,
                       static_cast<Eigen::Index>(g.channels_out), static_cast<Eigen::Index>(pixels));
        MapMat col_mat(cols.data(), static_cast<Eigen::Index>(patch),
                       static_cast<Eigen::Index>(pixels));
        col_mat.noalias() = weights.transpose() * go;
        col2im_add(cols, g, grad_in.data().data() + n * g.channels_in * g.height * g.width);
    }
    return grad_in;
}

Tensor conv2d_grad_kernel(const Tensor &grad_out, const Tensor &input, const Shape &kernel_shape,
                          Padding padding) {
    const auto g = conv_geometry(input.shape(), kernel_shape, padding);
    const std::size_t batch = input.dim(0);
    const std::size_t patch = g.channels_in * g.kh * g.kw;
    const std::size_t pixels = g.out_h * g.out_w;
    Tensor grad_k(kernel_shape, 0.0);
    std::vector<double> cols;
    MapMat gk(grad_k.data().data(), static_cast<Eigen::Index>(g.channels_out),
              static_cast<Eigen::Index>(patch));
    for (std::size_t n = 0; n < batch; ++n) {
        im2col(input.data().data() + n * g.channels_in * g.height * g.width, g, cols);
        ConstMapMat col_mat(cols.data(), static_cast<Eigen::Index>(patch),
                            static_cast<Eigen::Index>(pixels));
        ConstMapMat go(grad_out.data().data() + n * g.channels_out * pixels,
                       static_cast<Eigen::Index>(g.channels_out), static_cast<Eigen::Index>(pixels));
        gk.noalias() += go * col_mat.transpose();
    }
    return grad_k;
}

Tensor reduce(ReduceOp op, const Tensor &x, const std::vector<std::size_t> &axes, bool keepdims) {
    const std::size_t rank = x.rank();
    std::vector<bool> reduced(rank, false);
    for (auto ax : axes) {
        if (ax >= rank) {
            throw ShapeError("reduce: axis " + std::to_string(ax) + " invalid for shape " +
                             shape_to_string(x.shape()));
        }
        reduced[ax] = true;
    }
    Shape kept(rank);
    std::size_t count = 1;
    for (std::size_t i = 0; i < rank; ++i) {
        kept[i] = reduced[i] ? 1 : x.shape()[i];
        count *= reduced[i] ? x.shape()[i] : 1;
    }
    Tensor sums(kept, 0.0);
    auto s = sums.data();
    auto v = x.data();
    for_each_broadcast(x.shape(), kept, [&](std::size_t i, std::size_t j) { s[j] += v[i]; });
    const double inv = 1.0 / static_cast<double>(count);
    if (op == ReduceOp::mean || op == ReduceOp::var) {
        for (auto &e : s) {
            e *= inv;
        }
    }
    if (op == ReduceOp::var) {
        Tensor sq(kept, 0.0);
        auto q = sq.data();
        for_each_broadcast(x.shape(), kept, [&](std::size_t i, std::size_t j) {
            const double d = v[i] - s[j];
            q[j] += d * d;
        });
        for (auto &e : q) {
            e *= inv;
        }
        sums = std::move(sq);
    }
    if (keepdims) {
        return sums;
    }
    Shape out_shape;
    for (std::size_t i = 0; i < rank; ++i) {
        if (!reduced[i]) {
            out_shape.push_back(x.shape()[i]);
        }
    }
    if (out_shape.empty()) {
        out_shape.push_back(1);
    }
    return sums.reshaped(out_shape);
}

double sum(const Tensor &x) {
    double acc = 0.0;
    for (double v : x.data()) {
        acc += v;
    }
    return acc;
}

double mean(const Tensor &x) { return sum(x) / static_cast<double>(x.size()); }

Tensor resize_nearest_x2(const Tensor &x) {
    require_rank4(x, "resize_nearest_x2");
    const auto &s = x.shape();
    Tensor out({s[0], s[1], 2 * s[2], 2 * s[3]});
    const std::size_t planes = s[0] * s[1];
    const std::size_t H = s[2], W = s[3];
    for (std::size_t p = 0; p < planes; ++p) {
        const double *src = x.data().data() + p * H * W;
        double *dst = out.data().data() + p * 4 * H * W;
        for (std::size_t y = 0; y < 2 * H; ++y) {
            for (std::size_t xx = 0; xx < 2 * W; ++xx) {
                dst[y * 2 * W + xx] = src[(y / 2) * W + xx / 2];
            }
        }
    }
    return out;
}

Tensor avg_pool2(const Tensor &x) {
    require_rank4(x, "avg_pool2");
    const auto &s = x.shape();
    if (s[2] % 2 != 0 || s[3] % 2 != 0) {
        throw ShapeError("avg_pool2: spatial dims must be even, got " + shape_to_string(s));
    }
    const std::size_t H = s[2] / 2, W = s[3] / 2;
    Tensor out({s[0], s[1], H, W});
    const std::size_t planes = s[0] * s[1];
    for (std::size_t p = 0; p < planes; ++p) {
        const double *src = x.data().data() + p * 4 * H * W;
        double *dst = out.data().data() + p * H * W;
        for (std::size_t y = 0; y < H; ++y) {
            for (std::size_t xx = 0; xx < W; ++xx) {
                const double *r0 = src + (2 * y) * 2 * W + 2 * xx;
                const double *r1 = r0 + 2 * W;
                dst[y * W + xx] = 0.25 * (r0[0] + r0[1] + r1[0] + r1[1]);
            }
        }
    }
    return out;
}

Tensor relu(const Tensor &x) {
    Tensor out = x;
    for (auto &v : out.data()) {
        v = v > 0.0 ? v : 0.0;
    }
    return out;
}

Tensor concat_channels(const Tensor &a, const Tensor &b) {
    require_rank4(a, "concat_channels");
    require_rank4(b, "concat_channels");
    const auto &sa = a.shape();
    const auto &sb = b.shape();
    if (sa[0] != sb[0] || sa[2] != sb[2] || sa[3] != sb[3]) {
        throw ShapeError("concat_channels: incompatible shapes " + shape_to_string(sa) + " and " +
                         shape_to_string(sb));
    }
    Tensor out({sa[0], sa[1] + sb[1], sa[2], sa[3]});
    const std::size_t plane = sa[2] * sa[3];
    const std::size_t na = sa[1] * plane, nb = sb[1] * plane;
    for (std::size_t n = 0; n < sa[0]; ++n) {
        double *dst = out.data().data() + n * (na + nb);
        std::copy_n(a.data().data() + n * na, na, dst);
        std::copy_n(b.data().data() + n * nb, nb, dst + na);
    }
    return out;
}

Tensor slice_channels(const Tensor &x, std::size_t begin, std::size_t end) {
    if (x.rank() < 2 || begin >= end || end > x.dim(1)) {
        throw ShapeError("slice_channels: invalid range [" + std::to_string(begin) + "," +
                         std::to_string(end) + ") for shape " + shape_to_string(x.shape()));
    }
    Shape out_shape = x.shape();
    out_shape[1] = end - begin;
    Tensor out(out_shape);
    std::size_t inner = 1;
    for (std::size_t i = 2; i < x.rank(); ++i) {
        inner *= x.shape()[i];
    }
    const std::size_t C = x.dim(1);
    for (std::size_t n = 0; n < x.dim(0); ++n) {
        std::copy_n(x.data().data() + (n * C + begin) * inner, (end - begin) * inner,
                    out.data().data() + n * (end - begin) * inner);
    }
    return out;
}

Tensor stack(std::span<const Tensor> items) {
    if (items.empty()) {
        throw ShapeError("stack: empty input");
    }
    const Shape &first = items.front().shape();
    if (first[0] != 1) {
        throw ShapeError("stack: items must have leading dimension 1, got " + shape_to_string(first));
    }
    Shape out_shape = first;
    out_shape[0] = items.size();
    std::vector<double> data;
    data.reserve(shape_numel(out_shape));
    for (const auto &t : items) {
        if (t.shape() != first) {
            throw ShapeError("stack: mismatched shapes " + shape_to_string(first) + " and " +
                             shape_to_string(t.shape()));
        }
        data.insert(data.end(), t.data().begin(), t.data().end());
    }
    return Tensor(std::move(out_shape), std::move(data));
}

Tensor take_sample(const Tensor &x, std::size_t n) {
    if (n >= x.dim(0)) {
        throw ShapeError("take_sample: index " + std::to_string(n) + " out of range for " +
                         shape_to_string(x.shape()));
    }
    Shape out_shape = x.shape();
    out_shape[0] = 1;
    const std::size_t len = shape_numel(out_shape);
    std::vector<double> data(x.data().begin() + static_cast<std::ptrdiff_t>(n * len),
                             x.data().begin() + static_cast<std::ptrdiff_t>((n + 1) * len));
    return Tensor(std::move(out_shape), std::move(data));
}

} // namespace ops
} // namespace sadreg
