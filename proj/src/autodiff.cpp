#include "sadreg/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Core>

namespace sadreg::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

Tape &same_tape(const Var &a, const Var &b) {
    if (!a.attached() || a.tape() != b.tape()) {
        throw AutodiffError("operands belong to different tapes or are detached");
    }
    return *a.tape();
}

Tape &tape_of(const Var &a) {
    if (!a.attached()) {
        throw AutodiffError("operation on a detached variable");
    }
    return *a.tape();
}

void accumulate(Tensor &into, Tensor &&g) {
    if (into.empty()) {
        into = std::move(g);
        return;
    }
    auto dst = into.data();
    auto src = g.data();
    for (std::size_t i = 0; i < dst.size(); ++i) {
        dst[i] += src[i];
    }
}

} // namespace

const Tensor &Var::value() const {
    if (!tape_) {
        throw AutodiffError("value() on a detached variable");
    }
    return tape_->value(id_);
}

bool Var::requires_grad() const { return tape_ && tape_->requires_grad(id_); }

const Tensor &Gradients::of(const Var &v) const {
    auto it = grads_.find(v.id());
    if (it == grads_.end()) {
        throw AutodiffError("no gradient recorded for node " + std::to_string(v.id()));
    }
    return it->second;
}

Var Tape::leaf(Tensor value, bool requires_grad) {
    Node node;
    node.value = std::move(value);
    node.requires_grad = requires_grad;
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::vector<Var> inputs, BackwardFn backward) {
    Node node;
    node.value = std::move(value);
    node.is_leaf = false;
    for (const auto &in : inputs) {
        if (in.tape() != this) {
            throw AutodiffError("input variable belongs to another tape");
        }
        node.inputs.push_back(in.id());
        node.requires_grad = node.requires_grad || nodes_[in.id()].requires_grad;
    }
    if (node.requires_grad) {
        node.backward = std::move(backward);
    }
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
}

Gradients Tape::backward(const Var &loss) {
    if (loss.tape() != this) {
        throw AutodiffError("backward on a detached node or a node from another tape");
    }
    if (nodes_[loss.id()].value.size() != 1) {
        throw AutodiffError("backward requires a scalar loss, got shape " +
                            shape_to_string(nodes_[loss.id()].value.shape()));
    }
    std::vector<Tensor> grads(nodes_.size());
    grads[loss.id()] = Tensor::ones_like(nodes_[loss.id()].value);
    for (NodeId id = loss.id() + 1; id-- > 0;) {
        Node &node = nodes_[id];
        if (node.is_leaf || !node.requires_grad || grads[id].empty()) {
            continue;
        }
        std::vector<bool> needs(node.inputs.size());
        for (std::size_t i = 0; i < node.inputs.size(); ++i) {
            needs[i] = nodes_[node.inputs[i]].requires_grad;
        }
        auto input_grads = node.backward(grads[id], needs);
        for (std::size_t i = 0; i < node.inputs.size(); ++i) {
            if (needs[i] && !input_grads[i].empty()) {
                accumulate(grads[node.inputs[i]], std::move(input_grads[i]));
            }
        }
        grads[id] = Tensor();
    }
    Gradients out;
    for (NodeId id = 0; id < nodes_.size(); ++id) {
        const Node &node = nodes_[id];
        if (node.is_leaf && node.requires_grad) {
            out.grads_.emplace(id, grads[id].empty() ? Tensor::zeros_like(node.value) : std::move(grads[id]));
        }
    }
    return out;
}

Var add(const Var &a, const Var &b) {
    Tape &t = same_tape(a, b);
    const Shape b_shape = b.shape();
    return t.record(ops::add(a.value(), b.value()), {a, b},
                    [b_shape](const Tensor &g, const std::vector<bool> &needs) {
                        std::vector<Tensor> r(2);
                        if (needs[0]) r[0] = g;
                        if (needs[1]) r[1] = ops::sum_to_shape(g, b_shape);
                        return r;
                    });
}

Var sub(const Var &a, const Var &b) {
    Tape &t = same_tape(a, b);
    const Shape b_shape = b.shape();
    return t.record(ops::sub(a.value(), b.value()), {a, b},
                    [b_shape](const Tensor &g, const std::vector<bool> &needs) {
                        std::vector<Tensor> r(2);
                        if (needs[0]) r[0] = g;
                        if (needs[1]) r[1] = ops::scale(ops::sum_to_shape(g, b_shape), -1.0);
                        return r;
                    });
}

Var mul(const Var &a, const Var &b) {
    Tape &t = same_tape(a, b);
    Tensor av = a.value();
    Tensor bv = b.value();
    Tensor out = ops::mul(av, bv);
    return t.record(std::move(out), {a, b},
                    [av = std::move(av), bv = std::move(bv)](const Tensor &g, const std::vector<bool> &needs) {
                        std::vector<Tensor> r(2);
                        if (needs[0]) r[0] = ops::mul(g, bv);
                        if (needs[1]) r[1] = ops::sum_to_shape(ops::mul(g, av), bv.shape());
                        return r;
                    });
}

Var scale(const Var &x, double s) {
    return tape_of(x).record(ops::scale(x.value(), s), {x},
                             [s](const Tensor &g, const std::vector<bool> &) {
                                 return std::vector<Tensor>{ops::scale(g, s)};
                             });
}

Var add_scalar(const Var &x, double s) {
    return tape_of(x).record(ops::add_scalar(x.value(), s), {x},
                             [](const Tensor &g, const std::vector<bool> &) {
                                 return std::vector<Tensor>{g};
                             });
}

Var square(const Var &x) {
    Tensor xv = x.value();
    Tensor out = ops::mul(xv, xv);
    return tape_of(x).record(std::move(out), {x},
                             [xv = std::move(xv)](const Tensor &g, const std::vector<bool> &) {
                                 return std::vector<Tensor>{ops::scale(ops::mul(g, xv), 2.0)};
                             });
}

Var sum(const Var &x) {
    const Shape shape = x.shape();
    return tape_of(x).record(Tensor::scalar(ops::sum(x.value())), {x},
                             [shape](const Tensor &g, const std::vector<bool> &) {
                                 return std::vector<Tensor>{Tensor(shape, g.item())};
                             });
}

Var mean(const Var &x) {
    const Shape shape = x.shape();
    const double inv = 1.0 / static_cast<double>(x.value().size());
    return tape_of(x).record(Tensor::scalar(ops::mean(x.value())), {x},
                             [shape, inv](const Tensor &g, const std::vector<bool> &) {
                                 return std::vector<Tensor>{Tensor(shape, g.item() * inv)};
                             });
}

Var reduce_mean(const Var &x, const std::vector<std::size_t> &axes, bool keepdims) {
    const Shape shape = x.shape();
    Tensor kept = ops::reduce(ReduceOp::mean, x.value(), axes, true);
    const Shape kept_shape = kept.shape();
    const double inv = static_cast<double>(kept.size()) / static_cast<double>(x.value().size());
    Tensor out = keepdims ? std::move(kept) : ops::reduce(ReduceOp::mean, x.value(), axes, false);
    return tape_of(x).record(std::move(out), {x},
                             [shape, kept_shape, inv](const Tensor &g, const std::vector<bool> &) {
                                 Tensor gk = g.reshaped(kept_shape);
                                 Tensor r = ops::add(Tensor(shape, 0.0), gk);
                                 return std::vector<Tensor>{ops::scale(r, inv)};
                             });
}

Var relu(const Var &x) {
    Tensor out = ops::relu(x.value());
    Tensor mask = out;
    for (auto &v : mask.data()) {
        v = v > 0.0 ? 1.0 : 0.0;
    }
    return tape_of(x).record(std::move(out), {x},
                             [mask = std::move(mask)](const Tensor &g, const std::vector<bool> &) {
                                 return std::vector<Tensor>{ops::mul(g, mask)};
                             });
}

Var conv2d(const Var &input, const Var &kernel, const Var &bias, Padding padding) {
    Tape &t = same_tape(input, kernel);
    same_tape(input, bias);
    Tensor out = ops::conv2d(input.value(), kernel.value(), bias.value(), padding);
    const bool keep_input = kernel.requires_grad();
    const bool keep_kernel = input.requires_grad();
    Tensor in_v = keep_input ? input.value() : Tensor();
    Tensor k_v = keep_kernel ? kernel.value() : Tensor();
    return t.record(
        std::move(out), {input, kernel, bias},
        [in_v = std::move(in_v), k_v = std::move(k_v), in_shape = input.shape(),
         k_shape = kernel.shape(), padding](const Tensor &g, const std::vector<bool> &needs) {
            std::vector<Tensor> r(3);
            if (needs[0]) r[0] = ops::conv2d_grad_input(g, k_v, in_shape, padding);
            if (needs[1]) r[1] = ops::conv2d_grad_kernel(g, in_v, k_shape, padding);
            if (needs[2]) r[2] = ops::reduce(ReduceOp::sum, g, {0, 2, 3}, false);
            return r;
        });
}

Var avg_pool2(const Var &x) {
    return tape_of(x).record(ops::avg_pool2(x.value()), {x},
                             [](const Tensor &g, const std::vector<bool> &) {
                                 return std::vector<Tensor>{ops::scale(ops::resize_nearest_x2(g), 0.25)};
                             });
}

Var upsample_x2(const Var &x) {
    return tape_of(x).record(ops::resize_nearest_x2(x.value()), {x},
                             [](const Tensor &g, const std::vector<bool> &) {
                                 return std::vector<Tensor>{ops::scale(ops::avg_pool2(g), 4.0)};
                             });
}

Var concat_channels(const Var &a, const Var &b) {
    Tape &t = same_tape(a, b);
    const std::size_t ca = a.shape()[1];
    const std::size_t cb = b.shape()[1];
    return t.record(ops::concat_channels(a.value(), b.value()), {a, b},
                    [ca, cb](const Tensor &g, const std::vector<bool> &needs) {
                        std::vector<Tensor> r(2);
                        if (needs[0]) r[0] = ops::slice_channels(g, 0, ca);
                        if (needs[1]) r[1] = ops::slice_channels(g, ca, ca + cb);
                        return r;
                    });
}

Var slice_channels(const Var &x, std::size_t begin, std::size_t end) {
    const Shape shape = x.shape();
    return tape_of(x).record(
        ops::slice_channels(x.value(), begin, end), {x},
        [shape, begin, end](const Tensor &g, const std::vector<bool> &) {
            Tensor r(shape, 0.0);
            std::size_t inner = 1;
            for (std::size_t i = 2; i < shape.size(); ++i) {
                inner *= shape[i];
            }
            const std::size_t C = shape[1];
            const std::size_t len = (end - begin) * inner;
            for (std::size_t n = 0; n < shape[0]; ++n) {
                std::copy_n(g.data().data() + n * len, len, r.data().data() + (n * C + begin) * inner);
            }
            return std::vector<Tensor>{std::move(r)};
        });
}

Var reshape(const Var &x, Shape shape) {
    const Shape original = x.shape();
    return tape_of(x).record(x.value().reshaped(std::move(shape)), {x},
                             [original](const Tensor &g, const std::vector<bool> &) {
                                 return std::vector<Tensor>{g.reshaped(original)};
                             });
}

Var dense(const Var &x, const Var &weight, const Var &bias) {
    Tape &t = same_tape(x, weight);
    same_tape(x, bias);
    const Tensor &xv = x.value();
    const Tensor &wv = weight.value();
    if (xv.rank() != 2 || wv.rank() != 2 || wv.dim(1) != xv.dim(1) || bias.value().size() != wv.dim(0)) {
        throw ShapeError("dense: incompatible shapes x " + shape_to_string(xv.shape()) + " weight " +
                         shape_to_string(wv.shape()) + " bias " + shape_to_string(bias.shape()));
    }
    const auto N = static_cast<Eigen::Index>(xv.dim(0));
    const auto in = static_cast<Eigen::Index>(xv.dim(1));
    const auto outd = static_cast<Eigen::Index>(wv.dim(0));
    Tensor out({xv.dim(0), wv.dim(0)});
    MapMat o(out.data().data(), N, outd);
    o.noalias() = ConstMapMat(xv.data().data(), N, in) * ConstMapMat(wv.data().data(), outd, in).transpose();
    for (Eigen::Index n = 0; n < N; ++n) {
        for (Eigen::Index j = 0; j < outd; ++j) {
            o(n, j) += bias.value()[static_cast<std::size_t>(j)];
        }
    }
    return t.record(std::move(out), {x, weight, bias},
                    [xv, wv, N, in, outd](const Tensor &g, const std::vector<bool> &needs) {
                        std::vector<Tensor> r(3);
                        ConstMapMat gm(g.data().data(), N, outd);
                        if (needs[0]) {
                            r[0] = Tensor(xv.shape());
                            MapMat(r[0].data().data(), N, in).noalias() =
                                gm * ConstMapMat(wv.data().data(), outd, in);
                        }
                        if (needs[1]) {
                            r[1] = Tensor(wv.shape());
                            MapMat(r[1].data().data(), outd, in).noalias() =
                                gm.transpose() * ConstMapMat(xv.data().data(), N, in);
                        }
                        if (needs[2]) {
                            r[2] = ops::reduce(ReduceOp::sum, g, {0}, false);
                        }
                        return r;
                    });
}

Var mse(const Var &a, const Var &b) {
    Tape &t = same_tape(a, b);
    if (a.shape() != b.shape()) {
        throw ShapeError("mse: shape mismatch between " + shape_to_string(a.shape()) + " and " +
                         shape_to_string(b.shape()));
    }
    Tensor diff = ops::sub(a.value(), b.value());
    double acc = 0.0;
    for (double d : diff.data()) {
        acc += d * d;
    }
    const double inv = 1.0 / static_cast<double>(diff.size());
    return t.record(Tensor::scalar(acc * inv), {a, b},
                    [diff = std::move(diff), inv](const Tensor &g, const std::vector<bool> &needs) {
                        std::vector<Tensor> r(2);
                        Tensor d = ops::scale(diff, 2.0 * inv * g.item());
                        if (needs[1]) r[1] = ops::scale(d, -1.0);
                        if (needs[0]) r[0] = std::move(d);
                        return r;
                    });
}

Var spatial_diff(const Var &x, std::size_t axis) {
    const Tensor &xv = x.value();
    if (xv.rank() != 4 || (axis != 2 && axis != 3) || xv.dim(axis) < 2) {
        throw ShapeError("spatial_diff: need NCHW input with extent >= 2 along axis " +
                         std::to_string(axis) + ", got " + shape_to_string(xv.shape()));
    }
    const Shape in_shape = xv.shape();
    Shape out_shape = in_shape;
    out_shape[axis] -= 1;
    Tensor out(out_shape);
    const std::size_t planes = in_shape[0] * in_shape[1];
    const std::size_t H = in_shape[2], W = in_shape[3];
    const std::size_t oh = out_shape[2], ow = out_shape[3];
    const std::size_t step = axis == 2 ? W : 1;
    for (std::size_t p = 0; p < planes; ++p) {
        for (std::size_t y = 0; y < oh; ++y) {
            for (std::size_t c = 0; c < ow; ++c) {
                const std::size_t src = p * H * W + y * W + c;
                out[p * oh * ow + y * ow + c] = xv[src + step] - xv[src];
            }
        }
    }
    return tape_of(x).record(std::move(out), {x},
                             [in_shape, planes, H, W, oh, ow, step](const Tensor &g, const std::vector<bool> &) {
                                 Tensor r(in_shape, 0.0);
                                 for (std::size_t p = 0; p < planes; ++p) {
                                     for (std::size_t y = 0; y < oh; ++y) {
                                         for (std::size_t c = 0; c < ow; ++c) {
                                             const double gv = g[p * oh * ow + y * ow + c];
                                             const std::size_t src = p * H * W + y * W + c;
                                             r[src + step] += gv;
                                             r[src] -= gv;
                                         }
                                     }
                                 }
                                 return std::vector<Tensor>{std::move(r)};
                             });
}

GradcheckReport gradcheck(const ScalarFn &f, const std::vector<Tensor> &inputs,
                          const GradcheckOptions &options) {
    std::vector<Tensor> analytic;
    {
        Tape tape;
        std::vector<Var> vars;
        for (const auto &in : inputs) {
            vars.push_back(tape.leaf(in, true));
        }
        Var out = f(tape, vars);
        if (out.value().size() != 1) {
            throw AutodiffError("gradcheck: function must return a scalar, got shape " +
                                shape_to_string(out.shape()));
        }
        auto grads = tape.backward(out);
        for (const auto &v : vars) {
            analytic.push_back(grads.of(v));
        }
    }

    auto evaluate = [&](const std::vector<Tensor> &point) {
        Tape tape;
        std::vector<Var> vars;
        for (const auto &in : point) {
            vars.push_back(tape.constant(in));
        }
        return f(tape, vars).value().item();
    };

    GradcheckReport report;
    std::vector<Tensor> point = inputs;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        const std::size_t n = inputs[k].size();
        std::size_t stride = 1;
        if (options.max_checks_per_input != 0 && n > options.max_checks_per_input) {
            stride = (n + options.max_checks_per_input - 1) / options.max_checks_per_input;
        }
        double worst = 0.0;
        for (std::size_t i = 0; i < n; i += stride) {
            const double x0 = inputs[k][i];
            const double h = options.step * (1.0 + std::abs(x0));
            point[k][i] = x0 + h;
            const double fp = evaluate(point);
            point[k][i] = x0 - h;
            const double fm = evaluate(point);
            point[k][i] = x0;
            const double numeric = (fp - fm) / (2.0 * h);
            const double a = analytic[k][i];
            const double rel = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
            worst = std::max(worst, std::isfinite(rel) ? rel : INFINITY);
        }
        report.max_rel_err.push_back(worst);
        report.worst = std::max(report.worst, worst);
    }
    report.pass = report.worst <= options.tol;
    return report;
}

GradcheckReport gradcheck(const ScalarFn &f, const std::vector<Tensor> &inputs, double tol) {
    GradcheckOptions options;
    options.tol = tol;
    return gradcheck(f, inputs, options);
}

} // namespace sadreg::ad
