// Training objectives.
//
//   L_scene = mse(S_A, S_B) + lambda_cos * (1 - cos(S_A, S_B))
//   L_cycle = mse(recon_A, I_A) + mse(recon_B, I_B)
//   L_align = mse(I_BtoA, I_A) + lambda_ncc * (1 - ncc(I_BtoA, I_A))
//   L_total = lambda_scene * L_scene + lambda_cycle * L_cycle + lambda_align * L_align
//
// mse is a mean over all elements. cos is taken over each sample's flattened code
// and averaged over the batch. ncc is global (whole image) per sample, batch-averaged.
#pragma once

#include <string>
#include <vector>

#include "sadreg/autodiff.hpp"
#include "sadreg/model.hpp"

namespace sadreg::loss {

struct LossWeights {
    double scene = 1.0;
    double cycle = 0.5;
    double align = 2.0;
    double cos = 0.1;
    double ncc = 1.0;
    // Also penalize render(S_A, A_B) against I_B.
    bool symmetric_align = false;

    void validate() const;
};

struct LossReport {
    double scene = 0.0;
    double cycle = 0.0;
    double align = 0.0;
    double total = 0.0;
    double scene_mse = 0.0;
    double scene_cos = 0.0; // batch-mean cosine similarity
    double cycle_a = 0.0;
    double cycle_b = 0.0;
    double align_mse = 0.0;
    double align_ncc = 0.0; // batch-mean ncc

    static std::string csv_header();
    std::string csv_row(std::size_t step, std::size_t epoch) const;
};

// Zero-mean normalized cross-correlation of each sample, in [-1, 1].
// A sample with zero variance in either argument scores 0.
ad::Var ncc_per_sample(const ad::Var &x, const ad::Var &y);
ad::Var ncc(const ad::Var &x, const ad::Var &y);
double ncc(const Tensor &x, const Tensor &y);

// Cosine similarity of each sample's flattened values; 0 if either has zero norm.
ad::Var cosine_per_sample(const ad::Var &a, const ad::Var &b);

struct SceneTerms {
    ad::Var value, mse, cosine;
};
struct CycleTerms {
    ad::Var value, a, b;
};
struct AlignTerms {
    ad::Var value, mse, ncc;
};

SceneTerms scene_consistency(const ad::Var &scene_a, const ad::Var &scene_b, const LossWeights &w);
CycleTerms cycle_loss(const ad::Var &recon_a, const ad::Var &image_a, const ad::Var &recon_b,
                      const ad::Var &image_b);
AlignTerms align_loss(const ad::Var &b_to_a, const ad::Var &image_a, const LossWeights &w);

ad::Var total_loss(const ad::Var &scene, const ad::Var &cycle, const ad::Var &align, const LossWeights &w);
double total_loss(double scene, double cycle, double align, const LossWeights &w);

struct Objective {
    ad::Var total;
    LossReport report;
};

Objective objective(const model::PairOutputs &out, const ad::Var &image_a, const ad::Var &image_b,
                    const LossWeights &w);

} // namespace sadreg::loss
