#include "mnde/spline.hpp"

#include "mnde/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mnde {

std::vector<CubicSegment> natural_cubic_segments(std::span<const double> x, std::span<const double> y) {
    const std::size_t n = x.size();
    if (n < 2 || y.size() != n) throw DataError("natural cubic spline needs at least 2 knots");
    std::vector<double> h(n - 1);
    for (std::size_t i = 0; i + 1 < n; ++i) {
        h[i] = x[i + 1] - x[i];
        if (!(h[i] > 0.0)) throw DataError("spline knots must be strictly increasing");
    }

    // Second derivatives M with M_0 = M_{n-1} = 0; tridiagonal system for the interior,
    // solved by forward elimination and back substitution.
    std::vector<double> m(n, 0.0);
    if (n > 2) {
        const std::size_t k = n - 2;
        std::vector<double> diag(k), upper(k), rhs(k);
        for (std::size_t i = 0; i < k; ++i) {
            diag[i] = 2.0 * (h[i] + h[i + 1]);
            upper[i] = h[i + 1];
            rhs[i] = 6.0 * ((y[i + 2] - y[i + 1]) / h[i + 1] - (y[i + 1] - y[i]) / h[i]);
        }
        for (std::size_t i = 1; i < k; ++i) {
            const double w = h[i] / diag[i - 1]; // sub-diagonal entry is h[i]
            diag[i] -= w * upper[i - 1];
            rhs[i] -= w * rhs[i - 1];
        }
        m[k] = rhs[k - 1] / diag[k - 1];
        for (std::size_t i = k - 1; i-- > 0;) m[i + 1] = (rhs[i] - upper[i] * m[i + 2]) / diag[i];
    }

    std::vector<CubicSegment> seg(n - 1);
    for (std::size_t i = 0; i + 1 < n; ++i) {
        seg[i].a = y[i];
        seg[i].b = (y[i + 1] - y[i]) / h[i] - h[i] * (2.0 * m[i] + m[i + 1]) / 6.0;
        seg[i].c = 0.5 * m[i];
        seg[i].d = (m[i + 1] - m[i]) / (6.0 * h[i]);
    }
    return seg;
}

ControlPath::ControlPath(std::size_t locations, std::size_t knots, std::vector<CubicSegment> segments)
    : locations_(locations), knots_(knots), segments_(std::move(segments)) {
    if (knots_ < 2) throw DataError("control path needs at least 2 knots");
    if (segments_.size() != locations_ * (knots_ - 1))
        throw DimensionError("control path coefficient count does not match locations x segments");
}

void ControlPath::check_domain(double t) const {
    if (!(t >= 0.0 && t <= t_max()))
        throw DimensionError("time " + std::to_string(t) + " outside control path domain [0, " +
                             std::to_string(t_max()) + "]");
}

std::size_t ControlPath::locate(double t) const {
    const auto j = static_cast<std::size_t>(std::floor(t));
    return std::min(j, knots_ - 2);
}

double ControlPath::value_at(std::size_t location, double t) const {
    check_domain(t);
    const std::size_t j = locate(t);
    return segment(location, j).value(t - static_cast<double>(j));
}

double ControlPath::derivative_at(std::size_t location, double t) const {
    check_domain(t);
    const std::size_t j = locate(t);
    return segment(location, j).slope(t - static_cast<double>(j));
}

double ControlPath::second_derivative_at(std::size_t location, double t) const {
    check_domain(t);
    const std::size_t j = locate(t);
    return segment(location, j).curvature(t - static_cast<double>(j));
}

double ControlPath::extended_value(std::size_t location, double t) const {
    if (t <= t_max()) return value_at(location, t);
    const CubicSegment& last = segment(location, knots_ - 2);
    return last.value(1.0) + last.slope(1.0) * (t - t_max());
}

double ControlPath::extended_derivative(std::size_t location, double t) const {
    if (t <= t_max()) return derivative_at(location, t);
    return segment(location, knots_ - 2).slope(1.0);
}

Tensor ControlPath::eval(double t) const {
    check_domain(t);
    Tensor out({locations_}, 0.0);
    const std::size_t j = locate(t);
    const double dt = t - static_cast<double>(j);
    for (std::size_t i = 0; i < locations_; ++i) out[i] = segment(i, j).value(dt);
    return out;
}

Tensor ControlPath::eval_derivative(double t) const {
    check_domain(t);
    Tensor out({locations_}, 0.0);
    const std::size_t j = locate(t);
    const double dt = t - static_cast<double>(j);
    for (std::size_t i = 0; i < locations_; ++i) out[i] = segment(i, j).slope(dt);
    return out;
}

namespace {

// Replaces NaN entries of one location's series by spline/extension values.
void fill_missing(std::vector<double>& row, std::size_t location) {
    std::vector<double> xs, ys;
    for (std::size_t j = 0; j < row.size(); ++j)
        if (!std::isnan(row[j])) {
            if (!std::isfinite(row[j]))
                throw DataError("non-finite measurement at location " + std::to_string(location));
            xs.push_back(static_cast<double>(j));
            ys.push_back(row[j]);
        }
    if (xs.size() == row.size()) return;
    if (xs.size() < 2)
        throw DataError("location " + std::to_string(location) + " has " + std::to_string(xs.size()) +
                        " observed values; at least 2 are required");
    const auto seg = natural_cubic_segments(xs, ys);
    const auto [lo_it, hi_it] = std::minmax_element(ys.begin(), ys.end());
    const double lo = *lo_it, hi = *hi_it;
    std::size_t k = 0;
    for (std::size_t j = 0; j < row.size(); ++j) {
        if (!std::isnan(row[j])) continue;
        const double t = static_cast<double>(j);
        if (t < xs.front()) {
            row[j] = std::clamp(seg.front().value(t - xs.front()), lo, hi);
        } else if (t > xs.back()) {
            row[j] = std::clamp(seg.back().value(t - xs[xs.size() - 2]), lo, hi);
        } else {
            while (xs[k + 1] < t) ++k;
            row[j] = seg[k].value(t - xs[k]);
        }
    }
}

} // namespace

ControlPath fit_natural_cubic(const Tensor& measurements) {
    if (measurements.rank() != 2) throw DimensionError("measurements must be an n x l matrix");
    const std::size_t n = measurements.dim(0), l = measurements.dim(1);
    if (l < 2) throw DataError("at least 2 time steps are required for a control path");
    std::vector<double> grid(l);
    for (std::size_t j = 0; j < l; ++j) grid[j] = static_cast<double>(j);
    std::vector<CubicSegment> all;
    all.reserve(n * (l - 1));
    std::vector<double> row(l);
    for (std::size_t i = 0; i < n; ++i) {
        std::copy_n(measurements.data().data() + i * l, l, row.begin());
        fill_missing(row, i);
        const auto seg = natural_cubic_segments(grid, row);
        all.insert(all.end(), seg.begin(), seg.end());
    }
    return ControlPath(n, l, std::move(all));
}

std::size_t dense_count(std::size_t knots, double step) {
    if (!(step > 0.0)) throw DimensionError("sampling step must be positive");
    const double ratio = static_cast<double>(knots) / step;
    const double rounded = std::round(ratio);
    if (rounded < 1.0 || std::abs(ratio - rounded) > 1e-9 * std::max(1.0, ratio))
        throw DimensionError("sampling step " + std::to_string(step) + " does not divide " +
                             std::to_string(knots) + " intervals");
    return static_cast<std::size_t>(rounded);
}

DenseSamples dense_sample(const ControlPath& path, double step) {
    const std::size_t count = dense_count(path.knots(), step);
    const std::size_t n = path.locations();
    DenseSamples out{Tensor({n, count}, 0.0), Tensor({n, count}, 0.0)};
    for (std::size_t k = 0; k < count; ++k) {
        const double t = static_cast<double>(k) * step;
        for (std::size_t i = 0; i < n; ++i) {
            out.values.at(i, k) = path.extended_value(i, t);
            out.derivatives.at(i, k) = path.extended_derivative(i, t);
        }
    }
    return out;
}

} // namespace mnde
