#include "mnde/odesolve.hpp"

#include "mnde/errors.hpp"
#include "mnde/ops.hpp"

#include <array>
#include <cmath>
#include <limits>

namespace mnde {

std::size_t step_count(double t0, double t1, double step) {
    if (!(t1 > t0)) throw DimensionError("integration span must satisfy t1 > t0");
    if (!(step > 0.0)) throw DimensionError("solver step must be positive");
    const double span = t1 - t0;
    const double steps = std::round(span / step);
    if (steps < 1.0 || std::abs(steps * step - span) > 1e-9 * std::max(1.0, span))
        throw DimensionError("solver step " + std::to_string(step) + " does not divide span " +
                             std::to_string(span));
    return static_cast<std::size_t>(steps);
}

namespace {

// Shared RK4 driver; `stage` evaluates the (possibly controlled) derivative.
template <typename Stage>
Var rk4(Stage&& stage, const Var& h0, double t0, double t1, double step) {
    const std::size_t steps = step_count(t0, t1, step);
    const double h = (t1 - t0) / static_cast<double>(steps);
    Var state = h0;
    for (std::size_t s = 0; s < steps; ++s) {
        const double t = t0 + static_cast<double>(s) * h;
        try {
            const Var k1 = stage(state, t);
            const Var y2 = lincomb(std::array{state, k1}, std::array{1.0, 0.5 * h});
            const Var k2 = stage(y2, t + 0.5 * h);
            const Var y3 = lincomb(std::array{state, k2}, std::array{1.0, 0.5 * h});
            const Var k3 = stage(y3, t + 0.5 * h);
            const Var y4 = lincomb(std::array{state, k3}, std::array{1.0, h});
            const Var k4 = stage(y4, t + h);
            state = lincomb(std::array{state, k1, k2, k3, k4},
                            std::array{1.0, h / 6.0, h / 3.0, h / 3.0, h / 6.0});
        } catch (const NumericError& e) {
            throw NumericError("RK4 step " + std::to_string(s) + " at t=" + std::to_string(t) + ": " + e.what());
        }
    }
    return state;
}

} // namespace

Var integrate_node(const VectorField& f, const Var& h0, double t0, double t1, const SolveConfig& cfg) {
    auto stage = [&](const Var& y, double t) {
        Var k = f(y, t);
        if (k.shape() != y.shape())
            throw DimensionError("vector field changed state shape " + shape_str(y.shape()) + " -> " +
                                 shape_str(k.shape()));
        return k;
    };
    return rk4(stage, h0, t0, t1, cfg.step);
}

Var integrate_ncde(const VectorField& f, const Var& h0, const ControlPath& path, double t0, double t1,
                   const SolveConfig& cfg) {
    if (t0 < 0.0 || t1 > path.t_max())
        throw DimensionError("integration span [" + std::to_string(t0) + ", " + std::to_string(t1) +
                             "] outside control path domain [0, " + std::to_string(path.t_max()) + "]");
    if (h0.shape().size() != 2 || h0.dim(0) != path.locations())
        throw DimensionError("controlled state " + shape_str(h0.shape()) + " does not have one row per path location (" +
                             std::to_string(path.locations()) + ")");
    Tape& tape = *h0.tape();
    auto stage = [&](const Var& y, double t) {
        Var k = f(y, t);
        if (k.shape() != y.shape())
            throw DimensionError("vector field changed state shape " + shape_str(y.shape()) + " -> " +
                                 shape_str(k.shape()));
        // stage times can overshoot t1 by rounding; clamp into the path domain
        const double tc = std::min(t, path.t_max());
        Var control = tape.constant(path.eval_derivative(tc).reshaped({path.locations(), 1}));
        return mul(k, control);
    };
    return rk4(stage, h0, t0, t1, cfg.step);
}

OrderEstimate convergence_order(const VectorField& f, const Tensor& h0, double t0, double t1,
                                const Tensor& exact_end, double coarse_step) {
    auto error_at = [&](double step) {
        Tape tape;
        Var start = tape.constant(h0);
        Var end = integrate_node(f, start, t0, t1, SolveConfig{step});
        return max_abs_diff(end.value(), exact_end);
    };
    OrderEstimate est;
    est.coarse_error = error_at(coarse_step);
    est.fine_error = error_at(coarse_step / 2.0);
    if (est.coarse_error == 0.0 && est.fine_error == 0.0) {
        est.exact = true;
        est.order = std::numeric_limits<double>::infinity();
    } else if (est.fine_error == 0.0) {
        est.order = std::numeric_limits<double>::infinity();
    } else {
        est.order = std::log2(est.coarse_error / est.fine_error);
    }
    return est;
}

} // namespace mnde
