#pragma once

#include "mnde/tensor.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace mnde {

/// One cubic piece: a + b*(t - t_j) + c*(t - t_j)^2 + d*(t - t_j)^3.
struct CubicSegment {
    double a = 0.0;
    double b = 0.0;
    double c = 0.0;
    double d = 0.0;

    double value(double dt) const noexcept { return a + dt * (b + dt * (c + dt * d)); }
    double slope(double dt) const noexcept { return b + dt * (2.0 * c + 3.0 * dt * d); }
    double curvature(double dt) const noexcept { return 2.0 * c + 6.0 * dt * d; }
};

/// Natural cubic spline through (x_k, y_k) for strictly increasing x; one segment per interval.
std::vector<CubicSegment> natural_cubic_segments(std::span<const double> x, std::span<const double> y);

/// Piecewise-cubic control path X(t) per location on the unit knot grid 0..knots-1.
class ControlPath {
public:
    ControlPath(std::size_t locations, std::size_t knots, std::vector<CubicSegment> segments);

    std::size_t locations() const noexcept { return locations_; }
    std::size_t knots() const noexcept { return knots_; }
    double t_max() const noexcept { return static_cast<double>(knots_ - 1); }

    const CubicSegment& segment(std::size_t location, std::size_t j) const {
        return segments_[location * (knots_ - 1) + j];
    }

    /// X(t) for every location; t must lie in [0, knots-1].
    Tensor eval(double t) const;
    /// X'(t) for every location; t must lie in [0, knots-1].
    Tensor eval_derivative(double t) const;

    double value_at(std::size_t location, double t) const;
    double derivative_at(std::size_t location, double t) const;
    double second_derivative_at(std::size_t location, double t) const;

    /// Like value_at/derivative_at but continues linearly past the last knot, which
    /// keeps the extension C2 because the natural boundary has zero curvature there.
    double extended_value(std::size_t location, double t) const;
    double extended_derivative(std::size_t location, double t) const;

private:
    std::size_t locate(double t) const;
    void check_domain(double t) const;

    std::size_t locations_;
    std::size_t knots_;
    std::vector<CubicSegment> segments_;
};

/// Fits one natural cubic spline per row of an n x l measurement matrix. NaN marks a
/// missing measurement: gaps are bridged by the spline over the observed knots, and
/// leading/trailing gaps use the nearest piece's polynomial clamped to the observed range.
ControlPath fit_natural_cubic(const Tensor& measurements);

struct DenseSamples {
    Tensor values;      // n x (l/step)
    Tensor derivatives; // n x (l/step)
};

/// Samples X and X' at t = k*step, k = 0 .. l/step - 1.
DenseSamples dense_sample(const ControlPath& path, double step);

/// Number of samples l/step; throws when step does not divide l.
std::size_t dense_count(std::size_t knots, double step);

} // namespace mnde
