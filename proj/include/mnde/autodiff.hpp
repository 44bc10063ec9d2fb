#pragma once

#include "mnde/tensor.hpp"

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace mnde {

/// A named learnable tensor together with its accumulated gradient.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
};

/// Ordered, name-unique parameter collection. References stay valid across add().
class ParameterSet {
public:
    Parameter& add(std::string name, Tensor value);

    Parameter& get(const std::string& name);
    const Parameter& get(const std::string& name) const;
    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    std::size_t size() const noexcept { return params_.size(); }
    std::size_t scalar_count() const noexcept;

    auto begin() noexcept { return params_.begin(); }
    auto end() noexcept { return params_.end(); }
    auto begin() const noexcept { return params_.begin(); }
    auto end() const noexcept { return params_.end(); }

    void zero_grad();

private:
    std::deque<Parameter> params_;
    std::unordered_map<std::string, std::size_t> index_;
};

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
public:
    Var() = default;
    Var(const Var& o) : tape_(o.tape_), id_(o.id_), counted_(o.counted_) { retain(); }
    Var(Var&& o) noexcept : tape_(o.tape_), id_(o.id_), counted_(o.counted_) { o.counted_ = false; }
    Var& operator=(const Var& o) {
        Var tmp(o);
        swap(tmp);
        return *this;
    }
    Var& operator=(Var&& o) noexcept {
        Var tmp(std::move(o));
        swap(tmp);
        return *this;
    }
    ~Var() { release(); }

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    std::size_t dim(std::size_t axis) const { return value().dim(axis); }
    std::size_t id() const noexcept { return id_; }
    Tape* tape() const noexcept { return tape_; }
    bool valid() const noexcept { return tape_ != nullptr; }

private:
    friend class Tape;
    Var(Tape* tape, std::size_t id);
    void retain();
    void release() noexcept;
    void swap(Var& o) noexcept {
        std::swap(tape_, o.tape_);
        std::swap(id_, o.id_);
        std::swap(counted_, o.counted_);
    }

    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
    bool counted_ = false; // handle participates in inference-mode reference counting
};

/// Records one forward pass; consumed by exactly one backward pass.
///
/// Nodes are appended in execution order, so every node's inputs precede it
/// and a single reverse sweep visits each node once.
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, std::size_t)>;

    enum class Mode { training, inference };

    Tape() = default;
    /// Inference tapes bind parameters as constants and drop each value once no
    /// Var refers to it, so long forward passes run in bounded memory.
    explicit Tape(Mode mode) : inference_(mode == Mode::inference) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Leaf that never receives a gradient.
    Var constant(Tensor value);
    /// Differentiable leaf whose gradient is read back with grad().
    Var input(Tensor value);
    /// Differentiable leaf bound to a parameter; see accumulate_into().
    Var parameter(const Parameter& p);

    void backward(const Var& loss);
    bool consumed() const noexcept { return consumed_; }

    /// Gradient of the loss w.r.t. v; zeros when v is unreachable from the loss.
    Tensor grad(const Var& v) const;

    /// Adds the gradient of every bound parameter into its `grad` field in `params`.
    void accumulate_into(ParameterSet& params) const;

    std::size_t size() const noexcept { return nodes_.size(); }

    // Op-implementation interface.
    Var record(Tensor value, std::span<const Var> inputs, BackwardFn backward);
    const Tensor& value(std::size_t id) const { return nodes_[id].value; }
    bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
    /// Output gradient of a node; valid inside its backward function.
    const Tensor& out_grad(std::size_t id) const { return nodes_[id].grad; }
    /// Gradient buffer of an input, zero-initialised on first touch.
    Tensor& grad_buffer(std::size_t id);

private:
    friend class Var;
    struct Node {
        Tensor value;
        Tensor grad;
        BackwardFn backward;
        bool requires_grad = false;
        std::size_t refs = 0;
    };

    Var push(Tensor value, bool requires_grad);

    std::vector<Node> nodes_;
    std::vector<std::pair<std::size_t, std::string>> bound_params_;
    bool consumed_ = false;
    bool inference_ = false;
};

} // namespace mnde
