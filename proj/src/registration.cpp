#include "sadreg/registration.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "sadreg/losses.hpp"

namespace sadreg::reg {

namespace {

struct Tap {
    std::size_t x0, x1, y0, y1;
    double wx, wy;
    bool inside_x, inside_y; // derivative wrt the coordinate is nonzero
};

Tap make_tap(std::size_t height, std::size_t width, double x, double y) {
    Tap t{};
    const double xmax = static_cast<double>(width - 1);
    const double ymax = static_cast<double>(height - 1);
    t.inside_x = x >= 0.0 && x <= xmax && width > 1;
    t.inside_y = y >= 0.0 && y <= ymax && height > 1;
    const double cx = std::clamp(x, 0.0, xmax);
    const double cy = std::clamp(y, 0.0, ymax);
    const double fx = std::floor(cx);
    const double fy = std::floor(cy);
    t.x0 = static_cast<std::size_t>(fx);
    t.y0 = static_cast<std::size_t>(fy);
    t.x1 = std::min(t.x0 + 1, width - 1);
    t.y1 = std::min(t.y0 + 1, height - 1);
    t.wx = cx - fx;
    t.wy = cy - fy;
    return t;
}

double interpolate(const double *plane, std::size_t width, const Tap &t) {
    const double v00 = plane[t.y0 * width + t.x0];
    const double v01 = plane[t.y0 * width + t.x1];
    const double v10 = plane[t.y1 * width + t.x0];
    const double v11 = plane[t.y1 * width + t.x1];
    return (1.0 - t.wy) * ((1.0 - t.wx) * v00 + t.wx * v01) + t.wy * ((1.0 - t.wx) * v10 + t.wx * v11);
}

void check_warp_shapes(const Tensor &image, const Tensor &field) {
    if (image.rank() != 4 || field.rank() != 4 || field.dim(1) != 2 || field.dim(2) != image.dim(2) ||
        field.dim(3) != image.dim(3) || (field.dim(0) != 1 && field.dim(0) != image.dim(0))) {
        throw ShapeError("bilinear_warp: image " + shape_to_string(image.shape()) +
                         " incompatible with field " + shape_to_string(field.shape()));
    }
}

DisplacementField clamp_magnitude(DisplacementField f, double cap) {
    const std::size_t M = f.height() * f.width();
    auto d = f.data.data();
    for (std::size_t i = 0; i < M; ++i) {
        const double m = std::hypot(d[i], d[M + i]);
        if (m > cap) {
            d[i] *= cap / m;
            d[M + i] *= cap / m;
        }
    }
    return f;
}

Tensor downsample(const Tensor &image, std::size_t times) {
    Tensor out = image;
    for (std::size_t i = 0; i < times; ++i) {
        out = ops::avg_pool2(out);
    }
    return out;
}

} // namespace

DisplacementField DisplacementField::zeros(std::size_t height, std::size_t width) {
    return {Tensor::zeros({1, 2, height, width})};
}

DisplacementField DisplacementField::constant(std::size_t height, std::size_t width, double dx, double dy) {
    DisplacementField f = zeros(height, width);
    const std::size_t M = height * width;
    for (std::size_t i = 0; i < M; ++i) {
        f.data[i] = dx;
        f.data[M + i] = dy;
    }
    return f;
}

double DisplacementField::max_magnitude() const {
    const std::size_t M = height() * width();
    double best = 0.0;
    for (std::size_t i = 0; i < M; ++i) {
        best = std::max(best, std::hypot(data[i], data[M + i]));
    }
    return best;
}

Point DisplacementField::sample(Point p) const {
    const std::size_t H = height(), W = width();
    const Tap t = make_tap(H, W, p.x, p.y);
    return {interpolate(data.data().data(), W, t), interpolate(data.data().data() + H * W, W, t)};
}

Tensor DisplacementField::magnitude() const {
    const std::size_t M = height() * width();
    Tensor out({1, 1, height(), width()});
    for (std::size_t i = 0; i < M; ++i) {
        out[i] = std::hypot(data[i], data[M + i]);
    }
    return out;
}

double sample_plane(const double *plane, std::size_t height, std::size_t width, double x, double y) {
    return interpolate(plane, width, make_tap(height, width, x, y));
}

Tensor bilinear_warp(const Tensor &image, const Tensor &field) {
    ad::Tape tape;
    return bilinear_warp(tape.constant(image), tape.constant(field)).value();
}

ad::Var bilinear_warp(const ad::Var &image, const ad::Var &field) {
    const Tensor &img = image.value();
    const Tensor &fld = field.value();
    check_warp_shapes(img, fld);
    const std::size_t N = img.dim(0), C = img.dim(1), H = img.dim(2), W = img.dim(3);
    const std::size_t M = H * W;
    const bool shared_field = fld.dim(0) == 1;
    std::vector<Tap> taps(N * M);
    Tensor out(img.shape());
    for (std::size_t n = 0; n < N; ++n) {
        const double *u = fld.data().data() + (shared_field ? 0 : n) * 2 * M;
        for (std::size_t y = 0; y < H; ++y) {
            for (std::size_t x = 0; x < W; ++x) {
                const std::size_t i = y * W + x;
                taps[n * M + i] = make_tap(H, W, static_cast<double>(x) + u[i], static_cast<double>(y) + u[M + i]);
            }
        }
        for (std::size_t c = 0; c < C; ++c) {
            const double *plane = img.data().data() + (n * C + c) * M;
            double *dst = out.data().data() + (n * C + c) * M;
            for (std::size_t i = 0; i < M; ++i) {
                dst[i] = interpolate(plane, W, taps[n * M + i]);
            }
        }
    }
    Tensor img_copy = field.requires_grad() ? img : Tensor();
    return image.tape()->record(
        std::move(out), {image, field},
        [taps = std::move(taps), img = std::move(img_copy), img_shape = img.shape(), field_shape = fld.shape(),
         N, C, H, W, M, shared_field](const Tensor &g, const std::vector<bool> &needs) {
            std::vector<Tensor> r(2);
            if (needs[0]) {
                r[0] = Tensor(img_shape, 0.0);
                for (std::size_t n = 0; n < N; ++n) {
                    for (std::size_t c = 0; c < C; ++c) {
                        const double *gp = g.data().data() + (n * C + c) * M;
                        double *dst = r[0].data().data() + (n * C + c) * M;
                        for (std::size_t i = 0; i < M; ++i) {
                            const Tap &t = taps[n * M + i];
                            const double gv = gp[i];
                            dst[t.y0 * W + t.x0] += gv * (1.0 - t.wy) * (1.0 - t.wx);
                            dst[t.y0 * W + t.x1] += gv * (1.0 - t.wy) * t.wx;
                            dst[t.y1 * W + t.x0] += gv * t.wy * (1.0 - t.wx);
                            dst[t.y1 * W + t.x1] += gv * t.wy * t.wx;
                        }
                    }
                }
            }
            if (needs[1]) {
                r[1] = Tensor(field_shape, 0.0);
                for (std::size_t n = 0; n < N; ++n) {
                    double *du = r[1].data().data() + (shared_field ? 0 : n) * 2 * M;
                    for (std::size_t c = 0; c < C; ++c) {
                        const double *gp = g.data().data() + (n * C + c) * M;
                        const double *plane = img.data().data() + (n * C + c) * M;
                        for (std::size_t i = 0; i < M; ++i) {
                            const Tap &t = taps[n * M + i];
                            const double v00 = plane[t.y0 * W + t.x0];
                            const double v01 = plane[t.y0 * W + t.x1];
                            const double v10 = plane[t.y1 * W + t.x0];
                            const double v11 = plane[t.y1 * W + t.x1];
                            if (t.inside_x) {
                                du[i] += gp[i] * ((1.0 - t.wy) * (v01 - v00) + t.wy * (v11 - v10));
                            }
                            if (t.inside_y) {
                                du[M + i] += gp[i] * ((1.0 - t.wx) * (v10 - v00) + t.wx * (v11 - v01));
                            }
                        }
                    }
                }
            }
            return r;
        });
}

void FieldConfig::validate() const {
    if (levels < 1 || iterations < 1) {
        throw std::invalid_argument("field estimation needs levels >= 1 and iterations >= 1");
    }
    if (!(learning_rate > 0.0) || !(lambda_reg >= 0.0) || !(max_displacement > 0.0)) {
        throw std::invalid_argument("field estimation: learning_rate and max_displacement must be > 0, "
                                    "lambda_reg >= 0");
    }
}

ad::Var field_objective(const ad::Var &fixed, const ad::Var &moving, const ad::Var &field, double lambda_reg) {
    ad::Var warped = bilinear_warp(moving, field);
    ad::Var data = ad::add(ad::mse(warped, fixed), ad::add_scalar(ad::scale(loss::ncc(warped, fixed), -1.0), 1.0));
    const std::size_t H = field.shape()[2], W = field.shape()[3];
    if (lambda_reg == 0.0 || (H < 2 && W < 2)) {
        return data;
    }
    ad::Var smooth;
    if (W >= 2) {
        smooth = ad::mean(ad::square(ad::spatial_diff(field, 3)));
    }
    if (H >= 2) {
        ad::Var dy = ad::mean(ad::square(ad::spatial_diff(field, 2)));
        smooth = smooth.attached() ? ad::add(smooth, dy) : dy;
    }
    // Means run over both vector components, so 2 * (mean_x + mean_y) = mean ||grad u||_F^2.
    return ad::add(data, ad::scale(smooth, 2.0 * lambda_reg));
}

double field_objective(const Tensor &fixed, const Tensor &moving, const Tensor &field, double lambda_reg) {
    ad::Tape tape;
    return field_objective(tape.constant(fixed), tape.constant(moving), tape.constant(field), lambda_reg)
        .value()
        .item();
}

DisplacementField upsample_field(const DisplacementField &field) {
    const std::size_t H = field.height(), W = field.width();
    DisplacementField out = DisplacementField::zeros(2 * H, 2 * W);
    const std::size_t M = 4 * H * W;
    for (std::size_t y = 0; y < 2 * H; ++y) {
        for (std::size_t x = 0; x < 2 * W; ++x) {
            const Point p{(static_cast<double>(x) + 0.5) / 2.0 - 0.5, (static_cast<double>(y) + 0.5) / 2.0 - 0.5};
            const Point v = field.sample(p);
            out.data[y * 2 * W + x] = 2.0 * v.x;
            out.data[M + y * 2 * W + x] = 2.0 * v.y;
        }
    }
    return out;
}

FieldResult estimate_field(const Tensor &fixed, const Tensor &moving, const FieldConfig &cfg) {
    cfg.validate();
    if (fixed.shape() != moving.shape() || fixed.rank() != 4 || fixed.dim(0) != 1 || fixed.dim(1) != 1) {
        throw ShapeError("estimate_field: expected two [1,1,H,W] images, got " + shape_to_string(fixed.shape()) +
                         " and " + shape_to_string(moving.shape()));
    }
    const std::size_t H = fixed.dim(2), W = fixed.dim(3);
    std::size_t levels = 1;
    while (levels < cfg.levels && (H % (std::size_t{1} << levels)) == 0 && (W % (std::size_t{1} << levels)) == 0 &&
           (H >> levels) >= 4 && (W >> levels) >= 4) {
        ++levels;
    }

    FieldResult result;
    DisplacementField accepted = DisplacementField::zeros(H, W);
    result.initial_objective = field_objective(fixed, moving, accepted.data, cfg.lambda_reg);
    double accepted_objective = result.initial_objective;

    // Working field at the current level, initialized from the coarser level's result.
    DisplacementField current = DisplacementField::zeros(H >> (levels - 1), W >> (levels - 1));
    for (std::size_t level = levels; level-- > 0;) {
        const Tensor fixed_l = downsample(fixed, level);
        const Tensor moving_l = downsample(moving, level);
        const double scale = static_cast<double>(std::size_t{1} << level);
        const double lr = cfg.learning_rate / static_cast<double>(std::size_t{1} << (levels - 1 - level));
        const double cap = cfg.max_displacement / scale;

        Tensor m = Tensor::zeros_like(current.data);
        Tensor v = Tensor::zeros_like(current.data);
        double b1t = 1.0, b2t = 1.0;
        for (std::size_t it = 0; it < cfg.iterations; ++it) {
            ad::Tape tape;
            ad::Var u = tape.leaf(current.data, true);
            ad::Var obj = field_objective(tape.constant(fixed_l), tape.constant(moving_l), u, cfg.lambda_reg);
            const Tensor g = tape.backward(obj).of(u);
            b1t *= cfg.beta1;
            b2t *= cfg.beta2;
            for (std::size_t i = 0; i < g.size(); ++i) {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                const double mhat = m[i] / (1.0 - b1t);
                const double vhat = v[i] / (1.0 - b2t);
                current.data[i] -= lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
            }
            current = clamp_magnitude(std::move(current), cap);
        }

        DisplacementField candidate = current;
        for (std::size_t k = 0; k < level; ++k) {
            candidate = upsample_field(candidate);
        }
        const double candidate_objective = field_objective(fixed, moving, candidate.data, cfg.lambda_reg);
        if (candidate_objective <= accepted_objective) {
            accepted = clamp_magnitude(std::move(candidate), cfg.max_displacement);
            accepted_objective = field_objective(fixed, moving, accepted.data, cfg.lambda_reg);
        } else {
            // Restart the next level from the accepted field.
            current = accepted;
            for (std::size_t k = 0; k < level; ++k) {
                Tensor pooled = ops::scale(ops::avg_pool2(current.data), 0.5);
                current.data = std::move(pooled);
            }
        }
        result.level_objective.push_back(accepted_objective);
        if (level > 0) {
            current = upsample_field(current);
        }
    }
    result.field = std::move(accepted);
    result.converged = std::isfinite(accepted_objective) && accepted_objective <= cfg.objective_threshold;
    return result;
}

TransformedPoints transform_landmarks(const DisplacementField &field, const std::vector<Point> &points) {
    TransformedPoints out;
    const double xmax = static_cast<double>(field.width() - 1);
    const double ymax = static_cast<double>(field.height() - 1);
    for (const auto &p : points) {
        const Point u = field.sample(p);
        out.points.push_back({p.x + u.x, p.y + u.y});
        out.clamped.push_back(!(p.x >= 0.0 && p.x <= xmax && p.y >= 0.0 && p.y <= ymax));
    }
    return out;
}

} // namespace sadreg::reg
