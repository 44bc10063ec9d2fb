#pragma once

// Differentiable tensor operations. Every op records its result and an exact
// backward rule on the tape of its operands.

#include "mnde/autodiff.hpp"

#include <functional>
#include <span>
#include <vector>

namespace mnde {

enum class Binary { add, sub, mul, div };
enum class Activation { relu, tanh };

/// Rank-2 product [m x k] * [k x p].
Var matmul(const Var& a, const Var& b);

/// Batched product. `a` is either [m x k] (shared by every batch entry) or
/// [B x m x k]; `b` is [B x k x p]. Result is [B x m x p].
Var bmm(const Var& a, const Var& b);

/// Pointwise op with broadcasting over axes of extent 1 (ranks must agree).
Var elementwise(const Var& a, const Var& b, Binary kind);
inline Var add(const Var& a, const Var& b) { return elementwise(a, b, Binary::add); }
inline Var sub(const Var& a, const Var& b) { return elementwise(a, b, Binary::sub); }
inline Var mul(const Var& a, const Var& b) { return elementwise(a, b, Binary::mul); }
inline Var div(const Var& a, const Var& b) { return elementwise(a, b, Binary::div); }

Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
/// sum_i coeffs[i] * terms[i]; all terms share one shape.
Var lincomb(std::span<const Var> terms, std::span<const double> coeffs);

Var activation(const Var& x, Activation kind);
inline Var relu(const Var& x) { return activation(x, Activation::relu); }
inline Var tanh(const Var& x) { return activation(x, Activation::tanh); }

Var softmax(const Var& x, std::size_t axis);

Var transpose(const Var& x, const std::vector<std::size_t>& perm);
/// Swap the last two axes.
Var transpose(const Var& x);
Var concat(std::span<const Var> parts, std::size_t axis);
Var slice(const Var& x, std::size_t axis, std::size_t begin, std::size_t end);
Var reduce_sum(const Var& x, std::size_t axis);
Var reduce_mean(const Var& x, std::size_t axis);
Var sum(const Var& x);
Var mean(const Var& x);
Var reshape(const Var& x, Shape shape);
/// Row selection on a rank-2 tensor; repeated indices accumulate in backward.
Var gather_rows(const Var& x, std::span<const std::size_t> rows);

/// Mean Huber penalty over all entries: e^2/2 for |e| <= delta, delta*|e| - delta^2/2 beyond.
Var huber(const Var& pred, const Var& target, double delta);

/// Max over coordinates of |analytic - central difference| / max(1, |analytic|)
/// for the scalar function f at x.
double gradcheck(const std::function<Var(Tape&, const Var&)>& f, const Tensor& x, double h = 1e-6);

} // namespace mnde
