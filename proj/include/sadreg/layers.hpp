// Network building blocks: instance normalization, conv blocks, pooling, dense
// layers and appearance-conditioned feature modulation.
#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "sadreg/autodiff.hpp"
#include "sadreg/tensor.hpp"

namespace sadreg::nn {

inline constexpr double kNormEps = 1e-5;

// Named parameter tensors, iterated in name order.
class ParameterSet {
  public:
    void add(const std::string &name, Tensor value);
    const Tensor &at(const std::string &name) const;
    Tensor &at(const std::string &name);
    bool contains(const std::string &name) const { return tensors_.count(name) != 0; }
    std::vector<std::string> names() const;
    std::size_t tensor_count() const { return tensors_.size(); }
    std::size_t scalar_count() const;

    auto begin() const { return tensors_.begin(); }
    auto end() const { return tensors_.end(); }
    auto begin() { return tensors_.begin(); }
    auto end() { return tensors_.end(); }

    friend bool operator==(const ParameterSet &a, const ParameterSet &b) { return a.tensors_ == b.tensors_; }

  private:
    std::map<std::string, Tensor> tensors_;
};

// Parameters placed on a tape for one forward/backward cycle.
class BoundParameters {
  public:
    BoundParameters(ad::Tape &tape, const ParameterSet &params, bool requires_grad);
    // Wraps Vars already on `tape`.
    BoundParameters(ad::Tape &tape, std::map<std::string, ad::Var> vars);
    const ad::Var &operator[](const std::string &name) const;
    const std::map<std::string, ad::Var> &vars() const { return vars_; }
    ad::Tape &tape() const { return *tape_; }

  private:
    ad::Tape *tape_;
    std::map<std::string, ad::Var> vars_;
};

using Rng = std::mt19937_64;

// Kaiming-uniform: U(-b, b) with b = sqrt(6 / fan_in).
Tensor kaiming_uniform(Shape shape, std::size_t fan_in, Rng &rng);

void add_conv(ParameterSet &params, const std::string &prefix, std::size_t in_channels,
              std::size_t out_channels, std::size_t kernel, Rng &rng);
void add_dense(ParameterSet &params, const std::string &prefix, std::size_t in_features,
               std::size_t out_features, Rng &rng);
// Dense map A -> (gamma, beta) initialized to the identity modulation gamma = 1, beta = 0.
void add_modulation(ParameterSet &params, const std::string &prefix, std::size_t appearance_dim,
                    std::size_t channels);

// Per-sample, per-channel (x - mean) / sqrt(var + eps) with biased variance.
ad::Var instance_norm(const ad::Var &x, double eps = kNormEps);
Tensor instance_norm(const Tensor &x, double eps = kNormEps);

// [N,C,H,W] -> [N,C]
ad::Var global_avg_pool(const ad::Var &x);
Tensor global_avg_pool(const Tensor &x);

ad::Var conv(const ad::Var &x, const BoundParameters &p, const std::string &prefix);
ad::Var dense(const ad::Var &x, const BoundParameters &p, const std::string &prefix);

// gamma(A) * instance_norm(S) + beta(A), where (gamma, beta) = dense(A) split in halves.
ad::Var modulate(const ad::Var &scene, const ad::Var &appearance, const BoundParameters &p,
                 const std::string &prefix, double eps = kNormEps);

// conv2d (same padding) -> optional instance_norm -> ReLU
ad::Var conv_block(const ad::Var &x, const BoundParameters &p, const std::string &prefix,
                   bool with_norm, double eps = kNormEps);

} // namespace sadreg::nn
