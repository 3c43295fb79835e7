// Dense displacement fields: resampling, estimation and landmark transfer.
//
// Coordinates are (x, y) = (column, row) in pixel units with pixel centers on the
// integer grid. A field u warps an image by output(p) = image(p + u(p)); samples
// outside the image are clamped to the border.
#pragma once

#include <cstddef>
#include <vector>

#include "sadreg/autodiff.hpp"
#include "sadreg/tensor.hpp"

namespace sadreg::reg {

struct Point {
    double x = 0.0;
    double y = 0.0;
    friend bool operator==(const Point &, const Point &) = default;
};

// Tensor [1,2,H,W]; channel 0 holds dx, channel 1 holds dy.
struct DisplacementField {
    Tensor data;

    static DisplacementField zeros(std::size_t height, std::size_t width);
    static DisplacementField constant(std::size_t height, std::size_t width, double dx, double dy);
    std::size_t height() const { return data.dim(2); }
    std::size_t width() const { return data.dim(3); }
    double max_magnitude() const;
    Point sample(Point p) const; // bilinear, border-clamped
    Tensor magnitude() const;    // [1,1,H,W]
};

// Bilinear sample of one image plane at (x, y), border-clamped.
double sample_plane(const double *plane, std::size_t height, std::size_t width, double x, double y);

// image [N,C,H,W], field [N or 1,2,H,W].
Tensor bilinear_warp(const Tensor &image, const Tensor &field);
ad::Var bilinear_warp(const ad::Var &image, const ad::Var &field);

struct FieldConfig {
    std::size_t levels = 3;
    std::size_t iterations = 200;    // per pyramid level
    double learning_rate = 0.5;      // at the coarsest level, halved per finer level
    double lambda_reg = 0.1;         // weight of mean ||grad u||^2
    double max_displacement = 16.0;  // magnitude cap in full-resolution pixels
    double objective_threshold = 0.5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;

    void validate() const;
};

struct FieldResult {
    DisplacementField field;
    bool converged = false;
    double initial_objective = 0.0;
    // Full-resolution objective of the accepted field after each pyramid level, coarse to fine.
    std::vector<double> level_objective;
    double final_objective() const { return level_objective.empty() ? initial_objective : level_objective.back(); }
};

// mse(fixed, warp(moving, u)) + (1 - ncc) + lambda_reg * mean ||grad u||^2
ad::Var field_objective(const ad::Var &fixed, const ad::Var &moving, const ad::Var &field, double lambda_reg);
double field_objective(const Tensor &fixed, const Tensor &moving, const Tensor &field, double lambda_reg);

// Finds u such that warp(moving, u) matches fixed. Images are [1,1,H,W].
// Multi-resolution Adam; a level's result is kept only if it does not raise the
// full-resolution objective. Non-convergence is reported through the result flag.
FieldResult estimate_field(const Tensor &fixed, const Tensor &moving, const FieldConfig &config);

struct TransformedPoints {
    std::vector<Point> points;
    std::vector<bool> clamped; // input point was outside the field's domain
};

// p' = p + u(p)
TransformedPoints transform_landmarks(const DisplacementField &field, const std::vector<Point> &points);

// Bilinear x2 upsampling of a field with vectors rescaled to the finer grid.
DisplacementField upsample_field(const DisplacementField &field);

} // namespace sadreg::reg
