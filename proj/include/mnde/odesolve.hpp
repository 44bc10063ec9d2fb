#pragma once

#include "mnde/autodiff.hpp"
#include "mnde/spline.hpp"

#include <cstddef>
#include <functional>

namespace mnde {

/// dH/dt = f(H, t) for autonomous/explicit fields; for controlled fields the
/// integrator multiplies f(H, t) by X'(t).
using VectorField = std::function<Var(const Var& state, double t)>;

struct SolveConfig {
    double step = 1.0 / 3.0; // fixed RK4 step
};

/// Number of fixed steps covering [t0, t1]; throws unless the step divides the span.
std::size_t step_count(double t0, double t1, double step);

/// Classic fixed-step RK4 on dH/dt = f(H, t), recorded on H0's tape.
Var integrate_node(const VectorField& f, const Var& h0, double t0, double t1, const SolveConfig& cfg);

/// RK4 on dH/dt = f(H, t) * X'(t). H0 is [P x c] with one row per path location;
/// X'(t) is broadcast across the channel axis.
Var integrate_ncde(const VectorField& f, const Var& h0, const ControlPath& path, double t0, double t1,
                   const SolveConfig& cfg);

struct OrderEstimate {
    double order = 0.0;       // log2(err(h) / err(h/2)); infinite when both errors vanish
    double coarse_error = 0.0;
    double fine_error = 0.0;
    bool exact = false;       // both errors are zero
};

/// Empirical convergence order of integrate_node against a closed-form endpoint.
OrderEstimate convergence_order(const VectorField& f, const Tensor& h0, double t0, double t1,
                                const Tensor& exact_end, double coarse_step);

} // namespace mnde
