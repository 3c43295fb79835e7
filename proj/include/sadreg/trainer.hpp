// Minibatch Adam training of the pair model on unpaired-appearance image pairs.
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "sadreg/losses.hpp"
#include "sadreg/model.hpp"

namespace sadreg::train {

struct TrainConfig {
    model::ModelConfig model;
    loss::LossWeights weights;
    double learning_rate = 1e-4;
    std::size_t batch_size = 4;
    std::size_t epochs = 30;
    std::uint64_t seed = 0; // drives the per-epoch shuffle
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::size_t max_steps = 0; // 0 means no cap

    void validate() const;
};

struct AdamState {
    std::map<std::string, Tensor> m, v;
    std::size_t t = 0;
};

using GradientMap = std::map<std::string, Tensor>;

// One Adam update with bias correction. Every gradient is checked before any
// parameter changes; a non-finite entry raises NumericError naming the parameter.
void adam_step(nn::ParameterSet &params, const GradientMap &grads, AdamState &state, const TrainConfig &config);

struct StepGradients {
    loss::LossReport report;
    GradientMap grads;
};

// Loss and parameter gradients for a batch [N,C,H,W] of (I_A, I_B).
StepGradients compute_gradients(const model::Model &model, const Tensor &batch_a, const Tensor &batch_b,
                                const loss::LossWeights &weights);

// Permutation of 0..n-1 for one epoch; a pure function of (seed, epoch).
std::vector<std::size_t> epoch_order(std::uint64_t seed, std::size_t epoch, std::size_t n);

struct TrainHooks {
    std::function<void(std::size_t step, std::size_t epoch, const loss::LossReport &)> on_step;
    // Called after every completed epoch (1-based count).
    std::function<void(std::size_t epochs_done, const model::Model &, const std::vector<loss::LossReport> &)>
        on_epoch_end;
};

struct TrainResult {
    model::Model model;
    std::vector<loss::LossReport> history; // one entry per step
    std::size_t steps = 0;
    std::size_t epochs_completed = 0;
};

// Raised when a step produces a non-finite loss or gradient. Holds the state from
// before the failing step.
struct TrainingAborted : NumericError {
    TrainingAborted(const std::string &what, TrainResult last_good)
        : NumericError(what), last_good(std::move(last_good)) {}
    TrainResult last_good;
};

// images_a[i], images_b[i] are [1,C,H,W]. Steps per epoch = ceil(N / batch_size).
TrainResult train(const TrainConfig &config, const std::vector<Tensor> &images_a,
                  const std::vector<Tensor> &images_b, const TrainHooks &hooks = {});

} // namespace sadreg::train
