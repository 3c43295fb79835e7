#include "sadreg/layers.hpp"

#include <cmath>

namespace sadreg::nn {

void ParameterSet::add(const std::string &name, Tensor value) {
    if (!value.all_finite()) {
        throw NumericError("parameter " + name + " is not finite");
    }
    if (!tensors_.emplace(name, std::move(value)).second) {
        throw std::invalid_argument("duplicate parameter name: " + name);
    }
}

const Tensor &ParameterSet::at(const std::string &name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) {
        throw std::out_of_range("unknown parameter: " + name);
    }
    return it->second;
}

Tensor &ParameterSet::at(const std::string &name) {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) {
        throw std::out_of_range("unknown parameter: " + name);
    }
    return it->second;
}

std::vector<std::string> ParameterSet::names() const {
    std::vector<std::string> out;
    for (const auto &[name, _] : tensors_) {
        out.push_back(name);
    }
    return out;
}

std::size_t ParameterSet::scalar_count() const {
    std::size_t n = 0;
    for (const auto &[_, t] : tensors_) {
        n += t.size();
    }
    return n;
}

BoundParameters::BoundParameters(ad::Tape &tape, const ParameterSet &params, bool requires_grad)
    : tape_(&tape) {
    for (const auto &[name, value] : params) {
        vars_.emplace(name, tape.leaf(value, requires_grad));
    }
}

BoundParameters::BoundParameters(ad::Tape &tape, std::map<std::string, ad::Var> vars)
    : tape_(&tape), vars_(std::move(vars)) {
    for (const auto &[name, v] : vars_) {
        if (v.tape() != &tape) {
            throw ad::AutodiffError("parameter " + name + " is not on this tape");
        }
    }
}

const ad::Var &BoundParameters::operator[](const std::string &name) const {
    auto it = vars_.find(name);
    if (it == vars_.end()) {
        throw std::out_of_range("unknown parameter: " + name);
    }
    return it->second;
}

Tensor kaiming_uniform(Shape shape, std::size_t fan_in, Rng &rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor t(std::move(shape));
    for (auto &v : t.data()) {
        v = dist(rng);
    }
    return t;
}

void add_conv(ParameterSet &params, const std::string &prefix, std::size_t in_channels,
              std::size_t out_channels, std::size_t kernel, Rng &rng) {
    params.add(prefix + ".weight", kaiming_uniform({out_channels, in_channels, kernel, kernel},
                                                   in_channels * kernel * kernel, rng));
    params.add(prefix + ".bias", Tensor::zeros({out_channels}));
}

void add_dense(ParameterSet &params, const std::string &prefix, std::size_t in_features,
               std::size_t out_features, Rng &rng) {
    params.add(prefix + ".weight", kaiming_uniform({out_features, in_features}, in_features, rng));
    params.add(prefix + ".bias", Tensor::zeros({out_features}));
}

void add_modulation(ParameterSet &params, const std::string &prefix, std::size_t appearance_dim,
                    std::size_t channels) {
    params.add(prefix + ".weight", Tensor::zeros({2 * channels, appearance_dim}));
    Tensor bias({2 * channels}, 0.0);
    for (std::size_t c = 0; c < channels; ++c) {
        bias[c] = 1.0;
    }
    params.add(prefix + ".bias", std::move(bias));
}

namespace {

void require_nchw(const Tensor &x, const char *what) {
    if (x.rank() != 4) {
        throw ShapeError(std::string(what) + ": expected [N,C,H,W], got " + shape_to_string(x.shape()));
    }
}

// Normalized values and per-plane inverse std.
std::pair<Tensor, std::vector<double>> normalize_planes(const Tensor &x, double eps) {
    require_nchw(x, "instance_norm");
    const std::size_t planes = x.dim(0) * x.dim(1);
    const std::size_t M = x.dim(2) * x.dim(3);
    Tensor out(x.shape());
    std::vector<double> inv_std(planes);
    for (std::size_t p = 0; p < planes; ++p) {
        const double *src = x.data().data() + p * M;
        double *dst = out.data().data() + p * M;
        double mu = 0.0;
        for (std::size_t i = 0; i < M; ++i) {
            mu += src[i];
        }
        mu /= static_cast<double>(M);
        double var = 0.0;
        for (std::size_t i = 0; i < M; ++i) {
            const double d = src[i] - mu;
            var += d * d;
        }
        var /= static_cast<double>(M);
        const double inv = 1.0 / std::sqrt(var + eps);
        inv_std[p] = inv;
        for (std::size_t i = 0; i < M; ++i) {
            dst[i] = (src[i] - mu) * inv;
        }
    }
    return {std::move(out), std::move(inv_std)};
}

} // namespace

Tensor instance_norm(const Tensor &x, double eps) { return normalize_planes(x, eps).first; }

ad::Var instance_norm(const ad::Var &x, double eps) {
    auto [normed, inv_std] = normalize_planes(x.value(), eps);
    Tensor xhat = normed;
    const std::size_t M = x.value().dim(2) * x.value().dim(3);
    return x.tape()->record(
        std::move(normed), {x},
        [xhat = std::move(xhat), inv_std = std::move(inv_std), M](const Tensor &g, const std::vector<bool> &) {
            Tensor r(g.shape());
            const double invM = 1.0 / static_cast<double>(M);
            for (std::size_t p = 0; p < inv_std.size(); ++p) {
                const double *gp = g.data().data() + p * M;
                const double *xp = xhat.data().data() + p * M;
                double *rp = r.data().data() + p * M;
                double g_mean = 0.0, gx_mean = 0.0;
                for (std::size_t i = 0; i < M; ++i) {
                    g_mean += gp[i];
                    gx_mean += gp[i] * xp[i];
                }
                g_mean *= invM;
                gx_mean *= invM;
                for (std::size_t i = 0; i < M; ++i) {
                    rp[i] = inv_std[p] * (gp[i] - g_mean - xp[i] * gx_mean);
                }
            }
            return std::vector<Tensor>{std::move(r)};
        });
}

Tensor global_avg_pool(const Tensor &x) {
    require_nchw(x, "global_avg_pool");
    return ops::reduce(ReduceOp::mean, x, {2, 3}, false).reshaped({x.dim(0), x.dim(1)});
}

ad::Var global_avg_pool(const ad::Var &x) {
    require_nchw(x.value(), "global_avg_pool");
    return ad::reshape(ad::reduce_mean(x, {2, 3}, true), {x.shape()[0], x.shape()[1]});
}

ad::Var conv(const ad::Var &x, const BoundParameters &p, const std::string &prefix) {
    return ad::conv2d(x, p[prefix + ".weight"], p[prefix + ".bias"], Padding::same);
}

ad::Var dense(const ad::Var &x, const BoundParameters &p, const std::string &prefix) {
    return ad::dense(x, p[prefix + ".weight"], p[prefix + ".bias"]);
}

ad::Var modulate(const ad::Var &scene, const ad::Var &appearance, const BoundParameters &p,
                 const std::string &prefix, double eps) {
    const Shape &s = scene.shape();
    const ad::Var &w = p[prefix + ".weight"];
    if (s.size() != 4 || appearance.shape().size() != 2 || appearance.shape()[0] != s[0] ||
        w.shape()[1] != appearance.shape()[1] || w.shape()[0] != 2 * s[1]) {
        throw ShapeError("modulate: appearance " + shape_to_string(appearance.shape()) +
                         " incompatible with scene " + shape_to_string(s) + " and modulation weight " +
                         shape_to_string(w.shape()));
    }
    const std::size_t N = s[0], C = s[1];
    ad::Var affine = dense(appearance, p, prefix);
    ad::Var params4 = ad::reshape(affine, {N, 2 * C, 1, 1});
    ad::Var gamma = ad::slice_channels(params4, 0, C);
    ad::Var beta = ad::slice_channels(params4, C, 2 * C);
    return ad::add(ad::mul(instance_norm(scene, eps), gamma), beta);
}

ad::Var conv_block(const ad::Var &x, const BoundParameters &p, const std::string &prefix,
                   bool with_norm, double eps) {
    ad::Var y = conv(x, p, prefix);
    if (with_norm) {
        y = instance_norm(y, eps);
    }
    return ad::relu(y);
}

} // namespace sadreg::nn
