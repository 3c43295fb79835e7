#include "sadreg/losses.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace sadreg::loss {

namespace {

struct SampleView {
    std::size_t count;
    std::size_t length;
};

SampleView samples_of(const Tensor &x, const Tensor &y, const char *what) {
    if (x.shape() != y.shape()) {
        throw ShapeError(std::string(what) + ": shape mismatch " + shape_to_string(x.shape()) + " vs " +
                         shape_to_string(y.shape()));
    }
    return {x.dim(0), x.size() / x.dim(0)};
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

} // namespace

void LossWeights::validate() const {
    for (double v : {scene, cycle, align, cos, ncc}) {
        if (!(v >= 0.0) || !std::isfinite(v)) {
            throw std::invalid_argument("loss weights must be finite and non-negative");
        }
    }
}

std::string LossReport::csv_header() {
    return "step,epoch,scene,cycle,align,total,scene_mse,scene_cos,cycle_a,cycle_b,align_mse,align_ncc";
}

std::string LossReport::csv_row(std::size_t step, std::size_t epoch) const {
    std::string row = std::to_string(step) + "," + std::to_string(epoch);
    for (double v : {scene, cycle, align, total, scene_mse, scene_cos, cycle_a, cycle_b, align_mse, align_ncc}) {
        row += "," + fmt(v);
    }
    return row;
}

ad::Var ncc_per_sample(const ad::Var &x, const ad::Var &y) {
    const Tensor &xv = x.value();
    const Tensor &yv = y.value();
    const auto [N, M] = samples_of(xv, yv, "ncc");
    Tensor r({N});
    // Centered copies and per-sample statistics for the backward pass.
    Tensor dx(xv.shape()), dy(yv.shape());
    std::vector<double> var_x(N), denom(N);
    for (std::size_t n = 0; n < N; ++n) {
        const double *xp = xv.data().data() + n * M;
        const double *yp = yv.data().data() + n * M;
        double mx = 0.0, my = 0.0;
        for (std::size_t i = 0; i < M; ++i) {
            mx += xp[i];
            my += yp[i];
        }
        mx /= static_cast<double>(M);
        my /= static_cast<double>(M);
        double cov = 0.0, vx = 0.0, vy = 0.0;
        double *dxp = dx.data().data() + n * M;
        double *dyp = dy.data().data() + n * M;
        for (std::size_t i = 0; i < M; ++i) {
            dxp[i] = xp[i] - mx;
            dyp[i] = yp[i] - my;
            cov += dxp[i] * dyp[i];
            vx += dxp[i] * dxp[i];
            vy += dyp[i] * dyp[i];
        }
        cov /= static_cast<double>(M);
        vx /= static_cast<double>(M);
        vy /= static_cast<double>(M);
        var_x[n] = vx;
        denom[n] = std::sqrt(vx) * std::sqrt(vy);
        r[n] = denom[n] > 0.0 ? std::clamp(cov / denom[n], -1.0, 1.0) : 0.0;
    }
    Tensor rv = r;
    std::vector<double> var_y(N);
    for (std::size_t n = 0; n < N; ++n) {
        var_y[n] = denom[n] > 0.0 ? denom[n] * denom[n] / var_x[n] : 0.0;
    }
    return x.tape()->record(
        std::move(r), {x, y},
        [dx = std::move(dx), dy = std::move(dy), var_x = std::move(var_x), var_y = std::move(var_y),
         denom = std::move(denom), rv = std::move(rv), N = N, M = M](const Tensor &g, const std::vector<bool> &needs) {
            std::vector<Tensor> out(2);
            if (needs[0]) out[0] = Tensor(dx.shape(), 0.0);
            if (needs[1]) out[1] = Tensor(dy.shape(), 0.0);
            const double invM = 1.0 / static_cast<double>(M);
            for (std::size_t n = 0; n < N; ++n) {
                if (!(denom[n] > 0.0)) {
                    continue;
                }
                const double *dxp = dx.data().data() + n * M;
                const double *dyp = dy.data().data() + n * M;
                const double gn = g[n] * invM;
                if (needs[0]) {
                    double *o = out[0].data().data() + n * M;
                    for (std::size_t i = 0; i < M; ++i) {
                        o[i] = gn * (dyp[i] / denom[n] - rv[n] * dxp[i] / var_x[n]);
                    }
                }
                if (needs[1]) {
                    double *o = out[1].data().data() + n * M;
                    for (std::size_t i = 0; i < M; ++i) {
                        o[i] = gn * (dxp[i] / denom[n] - rv[n] * dyp[i] / var_y[n]);
                    }
                }
            }
            return out;
        });
}

ad::Var ncc(const ad::Var &x, const ad::Var &y) { return ad::mean(ncc_per_sample(x, y)); }

double ncc(const Tensor &x, const Tensor &y) {
    ad::Tape tape;
    return ncc(tape.constant(x), tape.constant(y)).value().item();
}

ad::Var cosine_per_sample(const ad::Var &a, const ad::Var &b) {
    const Tensor &av = a.value();
    const Tensor &bv = b.value();
    const auto [N, M] = samples_of(av, bv, "cosine");
    Tensor c({N});
    std::vector<double> na(N), nb(N);
    for (std::size_t n = 0; n < N; ++n) {
        const double *ap = av.data().data() + n * M;
        const double *bp = bv.data().data() + n * M;
        double dot = 0.0, aa = 0.0, bb = 0.0;
        for (std::size_t i = 0; i < M; ++i) {
            dot += ap[i] * bp[i];
            aa += ap[i] * ap[i];
            bb += bp[i] * bp[i];
        }
        na[n] = std::sqrt(aa);
        nb[n] = std::sqrt(bb);
        c[n] = (na[n] > 0.0 && nb[n] > 0.0) ? std::clamp(dot / (na[n] * nb[n]), -1.0, 1.0) : 0.0;
    }
    Tensor cv = c;
    return a.tape()->record(
        std::move(c), {a, b},
        [av, bv, na = std::move(na), nb = std::move(nb), cv = std::move(cv), N = N,
         M = M](const Tensor &g, const std::vector<bool> &needs) {
            std::vector<Tensor> out(2);
            if (needs[0]) out[0] = Tensor(av.shape(), 0.0);
            if (needs[1]) out[1] = Tensor(bv.shape(), 0.0);
            for (std::size_t n = 0; n < N; ++n) {
                if (!(na[n] > 0.0 && nb[n] > 0.0)) {
                    continue;
                }
                const double *ap = av.data().data() + n * M;
                const double *bp = bv.data().data() + n * M;
                const double inv = 1.0 / (na[n] * nb[n]);
                if (needs[0]) {
                    double *o = out[0].data().data() + n * M;
                    const double k = cv[n] / (na[n] * na[n]);
                    for (std::size_t i = 0; i < M; ++i) {
                        o[i] = g[n] * (bp[i] * inv - k * ap[i]);
                    }
                }
                if (needs[1]) {
                    double *o = out[1].data().data() + n * M;
                    const double k = cv[n] / (nb[n] * nb[n]);
                    for (std::size_t i = 0; i < M; ++i) {
                        o[i] = g[n] * (ap[i] * inv - k * bp[i]);
                    }
                }
            }
            return out;
        });
}

SceneTerms scene_consistency(const ad::Var &scene_a, const ad::Var &scene_b, const LossWeights &w) {
    SceneTerms t;
    t.mse = ad::mse(scene_a, scene_b);
    t.cosine = ad::mean(cosine_per_sample(scene_a, scene_b));
    // (1 - cos) * lambda_cos
    ad::Var cos_term = ad::scale(ad::add_scalar(ad::scale(t.cosine, -1.0), 1.0), w.cos);
    t.value = ad::add(t.mse, cos_term);
    return t;
}

CycleTerms cycle_loss(const ad::Var &recon_a, const ad::Var &image_a, const ad::Var &recon_b,
                      const ad::Var &image_b) {
    CycleTerms t;
    t.a = ad::mse(recon_a, image_a);
    t.b = ad::mse(recon_b, image_b);
    t.value = ad::add(t.a, t.b);
    return t;
}

AlignTerms align_loss(const ad::Var &b_to_a, const ad::Var &image_a, const LossWeights &w) {
    AlignTerms t;
    t.mse = ad::mse(b_to_a, image_a);
    t.ncc = ncc(b_to_a, image_a);
    ad::Var ncc_term = ad::scale(ad::add_scalar(ad::scale(t.ncc, -1.0), 1.0), w.ncc);
    t.value = ad::add(t.mse, ncc_term);
    return t;
}

ad::Var total_loss(const ad::Var &scene, const ad::Var &cycle, const ad::Var &align, const LossWeights &w) {
    return ad::add(ad::add(ad::scale(scene, w.scene), ad::scale(cycle, w.cycle)), ad::scale(align, w.align));
}

double total_loss(double scene, double cycle, double align, const LossWeights &w) {
    return w.scene * scene + w.cycle * cycle + w.align * align;
}

Objective objective(const model::PairOutputs &out, const ad::Var &image_a, const ad::Var &image_b,
                    const LossWeights &w) {
    auto scene = scene_consistency(out.scene_a, out.scene_b, w);
    auto cycle = cycle_loss(out.recon_a, image_a, out.recon_b, image_b);
    auto align = align_loss(out.b_to_a, image_a, w);
    ad::Var align_value = align.value;
    if (w.symmetric_align) {
        if (!out.a_to_b.attached()) {
            throw std::invalid_argument("symmetric alignment needs the reverse rendering");
        }
        align_value = ad::add(align_value, align_loss(out.a_to_b, image_b, w).value);
    }
    Objective obj;
    obj.total = total_loss(scene.value, cycle.value, align_value, w);
    auto &r = obj.report;
    r.scene = scene.value.value().item();
    r.cycle = cycle.value.value().item();
    r.align = align_value.value().item();
    r.total = obj.total.value().item();
    r.scene_mse = scene.mse.value().item();
    r.scene_cos = scene.cosine.value().item();
    r.cycle_a = cycle.a.value().item();
    r.cycle_b = cycle.b.value().item();
    r.align_mse = align.mse.value().item();
    r.align_ncc = align.ncc.value().item();
    return obj;
}

} // namespace sadreg::loss
