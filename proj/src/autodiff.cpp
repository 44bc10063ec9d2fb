#include "mnde/autodiff.hpp"

#include "mnde/errors.hpp"

namespace mnde {

Parameter& ParameterSet::add(std::string name, Tensor value) {
    if (index_.count(name)) throw DimensionError("duplicate parameter name: " + name);
    index_.emplace(name, params_.size());
    Tensor grad(value.shape(), 0.0);
    if (value.rank() == 0) grad = Tensor::scalar(0.0);
    params_.push_back(Parameter{std::move(name), std::move(value), std::move(grad)});
    return params_.back();
}

Parameter& ParameterSet::get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw DimensionError("unknown parameter: " + name);
    return params_[it->second];
}

const Parameter& ParameterSet::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw DimensionError("unknown parameter: " + name);
    return params_[it->second];
}

std::size_t ParameterSet::scalar_count() const noexcept {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
}

void ParameterSet::zero_grad() {
    for (auto& p : params_)
        for (double& g : p.grad.data()) g = 0.0;
}

Var::Var(Tape* tape, std::size_t id) : tape_(tape), id_(id), counted_(tape->inference_) { retain(); }

void Var::retain() {
    if (counted_) ++tape_->nodes_[id_].refs;
}

void Var::release() noexcept {
    if (!counted_) return;
    counted_ = false;
    auto& node = tape_->nodes_[id_];
    if (--node.refs == 0) node.value = Tensor{};
}

const Tensor& Var::value() const {
    if (!tape_) throw DimensionError("use of an unbound Var");
    return tape_->nodes_[id_].value;
}

Var Tape::push(Tensor value, bool requires_grad) {
    if (consumed_) throw DimensionError("tape already consumed by backward()");
    if (!value.all_finite())
        throw NumericError("non-finite value entering tape at node " + std::to_string(nodes_.size()));
    nodes_.push_back(Node{std::move(value), Tensor{}, nullptr, requires_grad});
    return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) { return push(std::move(value), false); }

Var Tape::input(Tensor value) { return push(std::move(value), !inference_); }

Var Tape::parameter(const Parameter& p) {
    Var v = push(p.value, !inference_);
    if (inference_) return v;
    bound_params_.emplace_back(v.id(), p.name);
    return v;
}

Var Tape::record(Tensor value, std::span<const Var> inputs, BackwardFn backward) {
    if (consumed_) throw DimensionError("tape already consumed by backward()");
    if (!value.all_finite())
        throw NumericError("non-finite result at tape node " + std::to_string(nodes_.size()));
    bool rg = false;
    for (const Var& in : inputs) {
        if (in.tape() != this) throw DimensionError("operands recorded on different tapes");
        rg = rg || nodes_[in.id()].requires_grad;
    }
    nodes_.push_back(Node{std::move(value), Tensor{}, rg ? std::move(backward) : nullptr, rg});
    return Var(this, nodes_.size() - 1);
}

Tensor& Tape::grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) {
        n.grad = n.value.rank() == 0 ? Tensor::scalar(0.0) : Tensor(n.value.shape(), 0.0);
    }
    return n.grad;
}

void Tape::backward(const Var& loss) {
    if (inference_) throw DimensionError("backward() on an inference tape");
    if (loss.tape() != this) throw DimensionError("loss was not recorded on this tape");
    if (consumed_) throw DimensionError("tape already consumed by backward()");
    if (loss.value().size() != 1)
        throw DimensionError("backward() needs a scalar loss, got " + shape_str(loss.shape()));
    consumed_ = true;
    grad_buffer(loss.id())[0] = 1.0;
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (n.backward && !n.grad.empty()) n.backward(*this, i);
    }
}

Tensor Tape::grad(const Var& v) const {
    const Node& n = nodes_.at(v.id());
    if (!n.grad.empty()) return n.grad;
    return n.value.rank() == 0 ? Tensor::scalar(0.0) : Tensor(n.value.shape(), 0.0);
}

void Tape::accumulate_into(ParameterSet& params) const {
    for (const auto& [id, name] : bound_params_) {
        const Node& n = nodes_[id];
        if (n.grad.empty()) continue;
        Parameter& p = params.get(name);
        for (std::size_t k = 0; k < n.grad.size(); ++k) p.grad[k] += n.grad[k];
    }
}

} // namespace mnde
