// Tape-based reverse-mode differentiation.
//
// A Tape records every primitive in execution order, so node ids are a valid
// topological order by construction. backward() walks the tape once from the
// loss towards the leaves, summing gradients at fan-out nodes.
#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "sadreg/tensor.hpp"

namespace sadreg::ad {

using NodeId = std::size_t;

class Tape;

// Lightweight handle to a node on a tape. A default-constructed Var is detached.
class Var {
  public:
    Var() = default;

    bool attached() const { return tape_ != nullptr; }
    NodeId id() const { return id_; }
    Tape *tape() const { return tape_; }
    const Tensor &value() const;
    const Shape &shape() const { return value().shape(); }
    bool requires_grad() const;

  private:
    friend class Tape;
    Var(Tape *tape, NodeId id) : tape_(tape), id_(id) {}
    Tape *tape_ = nullptr;
    NodeId id_ = 0;
};

// Returns one gradient per input; entries whose `needs` flag is false may be left empty.
using BackwardFn =
    std::function<std::vector<Tensor>(const Tensor &grad_out, const std::vector<bool> &needs)>;

struct AutodiffError : std::logic_error {
    using std::logic_error::logic_error;
};

class Gradients {
  public:
    bool contains(const Var &v) const { return grads_.count(v.id()) != 0; }
    const Tensor &of(const Var &v) const;
    std::size_t size() const { return grads_.size(); }

  private:
    friend class Tape;
    std::unordered_map<NodeId, Tensor> grads_;
};

class Tape {
  public:
    Tape() = default;
    Tape(const Tape &) = delete;
    Tape &operator=(const Tape &) = delete;

    Var leaf(Tensor value, bool requires_grad = true);
    Var constant(Tensor value) { return leaf(std::move(value), false); }

    // Records a primitive. The node requires grad iff any input does; otherwise
    // the backward rule is dropped.
    Var record(Tensor value, std::vector<Var> inputs, BackwardFn backward);

    // Gradient of a scalar loss for every leaf created with requires_grad.
    Gradients backward(const Var &loss);

    std::size_t size() const { return nodes_.size(); }
    const Tensor &value(NodeId id) const { return nodes_.at(id).value; }
    bool requires_grad(NodeId id) const { return nodes_.at(id).requires_grad; }

  private:
    struct Node {
        Tensor value;
        bool requires_grad = false;
        bool is_leaf = true;
        std::vector<NodeId> inputs;
        BackwardFn backward;
    };
    // deque keeps references from Var::value() valid while the tape grows.
    std::deque<Node> nodes_;
};

// Primitives. Binary ops broadcast b against a (see ops::elementwise).
Var add(const Var &a, const Var &b);
Var sub(const Var &a, const Var &b);
Var mul(const Var &a, const Var &b);
Var scale(const Var &x, double s);
Var add_scalar(const Var &x, double s);
Var square(const Var &x);
Var sum(const Var &x);
Var mean(const Var &x);
Var reduce_mean(const Var &x, const std::vector<std::size_t> &axes, bool keepdims);
Var relu(const Var &x);
Var conv2d(const Var &input, const Var &kernel, const Var &bias, Padding padding);
Var avg_pool2(const Var &x);
Var upsample_x2(const Var &x);
Var concat_channels(const Var &a, const Var &b);
Var slice_channels(const Var &x, std::size_t begin, std::size_t end);
Var reshape(const Var &x, Shape shape);
// x [N,in], weight [out,in], bias [out] -> [N,out]
Var dense(const Var &x, const Var &weight, const Var &bias);
// mean((a-b)^2) over all elements.
Var mse(const Var &a, const Var &b);
// Forward differences along a spatial axis of an NCHW tensor (2 = rows, 3 = columns).
Var spatial_diff(const Var &x, std::size_t axis);

// Finite-difference verification of reverse-mode gradients.
struct GradcheckReport {
    std::vector<double> max_rel_err; // one entry per input
    double worst = 0.0;
    bool pass = false;
};

struct GradcheckOptions {
    double tol = 1e-4;
    double step = 1e-5; // relative: h = step * (1 + |x|)
    // Upper bound on checked coordinates per input; 0 checks all of them.
    std::size_t max_checks_per_input = 0;
};

using ScalarFn = std::function<Var(Tape &, std::span<const Var>)>;

// rel-err = |a - b| / max(1, |a|, |b|), pass iff the worst value is <= tol.
GradcheckReport gradcheck(const ScalarFn &f, const std::vector<Tensor> &inputs,
                          const GradcheckOptions &options);
GradcheckReport gradcheck(const ScalarFn &f, const std::vector<Tensor> &inputs, double tol);

} // namespace sadreg::ad
