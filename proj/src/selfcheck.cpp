#include "mnde/selfcheck.hpp"

#include "mnde/io.hpp"
#include "mnde/model.hpp"
#include "mnde/odesolve.hpp"
#include "mnde/ops.hpp"
#include "mnde/spline.hpp"

#include <cmath>
#include <limits>
#include <random>

namespace mnde {

namespace {

CheckResult below(std::string group, std::string name, double error, double tol) {
    return {std::move(group), std::move(name), error, 0.0, tol, std::isfinite(error) && error < tol};
}

Tensor uniform(Shape shape, std::mt19937_64& gen, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = u(gen);
    return t;
}

// Keeps entries at least `gap` away from zero (kinks and poles).
Tensor away_from_zero(Tensor t, double gap) {
    for (double& v : t.data())
        if (std::abs(v) < gap) v = v < 0 ? v - gap : v + gap;
    return t;
}

using Unary = std::function<Var(Tape&, const Var&)>;

} // namespace

CheckResult gradient_check(const std::string& name, const std::function<Var(Tape&, const Var&)>& f, const Tensor& x,
                           double tol, double h) {
    CheckResult r = below("autodiff", name, 0.0, tol);
    try {
        r.error = gradcheck(f, x, h);
    } catch (const std::exception&) {
        r.error = std::numeric_limits<double>::infinity();
    }
    r.passed = std::isfinite(r.error) && r.error < tol;
    return r;
}

std::vector<CheckResult> autodiff_checks() {
    std::mt19937_64 gen(2024);
    std::vector<CheckResult> out;
    const Tensor a = uniform({3, 4}, gen), b = uniform({4, 2}, gen), c = uniform({3, 4}, gen);
    const Tensor row = uniform({1, 4}, gen), pos = uniform({3, 4}, gen, 0.5, 2.0);
    const Tensor ba = uniform({2, 3, 4}, gen), bb = uniform({2, 4, 2}, gen), w = uniform({3, 4}, gen);
    // weighted sum so that linear ops see a non-uniform output gradient
    auto wsum = [&](Tape& t, const Var& v) {
        std::mt19937_64 fixed(17);
        Tensor weights = uniform(v.shape(), fixed);
        return sum(mul(v, t.constant(weights)));
    };
    auto check = [&](const std::string& name, const Unary& f, const Tensor& x) {
        out.push_back(gradient_check("grad " + name, f, x));
    };
    check("matmul lhs", [&](Tape& t, const Var& x) { return wsum(t, matmul(x, t.constant(b))); }, a);
    check("matmul rhs", [&](Tape& t, const Var& x) { return wsum(t, matmul(t.constant(a), x)); }, b);
    check("bmm lhs", [&](Tape& t, const Var& x) { return wsum(t, bmm(x, t.constant(bb))); }, ba);
    check("bmm rhs", [&](Tape& t, const Var& x) { return wsum(t, bmm(t.constant(ba), x)); }, bb);
    check("bmm shared lhs", [&](Tape& t, const Var& x) { return wsum(t, bmm(x, t.constant(bb))); }, uniform({3, 4}, gen));
    check("add broadcast", [&](Tape& t, const Var& x) { return wsum(t, add(t.constant(a), x)); }, row);
    check("sub", [&](Tape& t, const Var& x) { return wsum(t, sub(t.constant(c), x)); }, a);
    check("mul", [&](Tape& t, const Var& x) { return wsum(t, mul(x, t.constant(c))); }, a);
    check("div numerator", [&](Tape& t, const Var& x) { return wsum(t, div(x, t.constant(pos))); }, a);
    check("div denominator", [&](Tape& t, const Var& x) { return wsum(t, div(t.constant(a), x)); }, pos);
    check("scale", [&](Tape& t, const Var& x) { return wsum(t, scale(x, -1.7)); }, a);
    check("add_scalar", [&](Tape& t, const Var& x) { return wsum(t, mul(add_scalar(x, 0.3), x)); }, a);
    check("lincomb", [&](Tape& t, const Var& x) {
        const Var parts[] = {x, mul(x, x), t.constant(c)};
        const double k[] = {0.5, -2.0, 1.0};
        return wsum(t, lincomb(parts, k));
    }, a);
    check("relu", [&](Tape& t, const Var& x) { return wsum(t, relu(x)); }, away_from_zero(a, 0.05));
    check("tanh", [&](Tape& t, const Var& x) { return wsum(t, tanh(x)); }, a);
    check("softmax axis 0", [&](Tape& t, const Var& x) { return wsum(t, softmax(x, 0)); }, a);
    check("softmax axis 1", [&](Tape& t, const Var& x) { return wsum(t, softmax(x, 1)); }, a);
    check("transpose", [&](Tape& t, const Var& x) { return wsum(t, transpose(x, {2, 0, 1})); }, ba);
    check("concat", [&](Tape& t, const Var& x) {
        const Var parts[] = {x, t.constant(c), mul(x, x)};
        return wsum(t, concat(parts, 1));
    }, a);
    check("slice", [&](Tape& t, const Var& x) { return wsum(t, slice(x, 1, 1, 3)); }, a);
    check("reduce_sum", [&](Tape& t, const Var& x) { return wsum(t, reduce_sum(x, 1)); }, ba);
    check("reduce_mean", [&](Tape& t, const Var& x) { return wsum(t, reduce_mean(x, 0)); }, ba);
    check("sum", [&](Tape& t, const Var& x) { return mul(sum(x), sum(mul(x, t.constant(w)))); }, a);
    check("mean", [&](Tape& t, const Var& x) { return mul(mean(x), mean(x)); }, a);
    check("reshape", [&](Tape& t, const Var& x) { return wsum(t, reshape(x, {2, 6})); }, a);
    check("gather_rows", [&](Tape& t, const Var& x) {
        const std::size_t rows[] = {2, 0, 2, 1};
        return wsum(t, gather_rows(x, rows));
    }, a);
    {
        Tensor p = a;
        for (std::size_t k = 0; k < p.size(); ++k)
            if (std::abs(std::abs(p[k] - c[k]) - 0.5) < 0.05) p[k] += 0.2;
        check("huber", [&](Tape& t, const Var& x) { return huber(scale(x, 1.3), t.constant(c), 0.5); }, p);
    }

    // the full model on a 3-node toy, every parameter
    ModelConfig cfg;
    cfg.n = 3;
    cfg.l = 6;
    cfg.l_out = 6;
    cfg.c = 4;
    cfg.c_edge = 2;
    cfg.d = 1;
    cfg.heads = 2;
    cfg.loops = 1;
    const ParameterSet ps = init_params(cfg, 7);
    Tensor window({3, 6});
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (std::size_t i = 0; i < 3; ++i) {
        const double offset = u(gen), phase = 3.0 * u(gen);
        for (std::size_t j = 0; j < 6; ++j)
            window.at(i, j) = offset + 0.7 * std::sin(0.25 * static_cast<double>(j) + phase) + 0.05 * u(gen);
    }
    const Tensor target = uniform({3, 6}, gen);
    const PreparedBatch in = prepare_batch(std::span<const Tensor>(&window, 1), cfg);
    double worst = 0.0;
    for (const Parameter& p : ps) {
        auto f = [&](Tape& tape, const Var& x) {
            Binder bind(tape, ps);
            bind.set(p.name, x);
            return huber(variant_forward(bind, in, cfg, Variant::MNDE), tape.constant(target), 1.0);
        };
        worst = std::max(worst, gradient_check(p.name, f, p.value).error);
    }
    out.push_back(below("autodiff", "grad huber(mnde_forward) toy, all parameters", worst, 1e-4));
    return out;
}

std::vector<CheckResult> spline_checks() {
    std::mt19937_64 gen(99);
    std::vector<CheckResult> out;
    const std::size_t n = 4, l = 12;
    const Tensor x = uniform({n, l}, gen, -5.0, 5.0);
    const ControlPath path = fit_natural_cubic(x);
    double knot = 0, c1 = 0, c2 = 0, boundary = 0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < l; ++j)
            knot = std::max(knot, std::abs(path.value_at(i, static_cast<double>(j)) - x.at(i, j)));
        for (std::size_t j = 1; j + 1 < l; ++j) {
            const CubicSegment& left = path.segment(i, j - 1);
            const CubicSegment& right = path.segment(i, j);
            c1 = std::max(c1, std::abs(left.slope(1.0) - right.slope(0.0)));
            c2 = std::max(c2, std::abs(left.curvature(1.0) - right.curvature(0.0)));
        }
        boundary = std::max({boundary, std::abs(path.segment(i, 0).curvature(0.0)),
                             std::abs(path.segment(i, l - 2).curvature(1.0))});
    }
    out.push_back(below("spline", "knot interpolation", knot, 1e-9));
    out.push_back(below("spline", "interior C1 continuity", c1, 1e-8));
    out.push_back(below("spline", "interior C2 continuity", c2, 1e-8));
    out.push_back(below("spline", "natural boundary", boundary, 1e-8));
    const ControlPath tent = fit_natural_cubic(Tensor::matrix({{0.0, 1.0, 0.0}}));
    out.push_back(below("spline", "(0,1,0) at t=0.5 equals 0.6875", std::abs(tent.value_at(0, 0.5) - 0.6875), 1e-12));
    return out;
}

std::vector<CheckResult> solver_checks() {
    std::vector<CheckResult> out;
    auto grow = [](const Var& y, double) { return y; };
    const Tensor one = Tensor::vector({1.0});
    const OrderEstimate est = convergence_order(grow, one, 0.0, 1.0, Tensor::vector({std::exp(1.0)}), 0.1);
    CheckResult order{"solver", "RK4 order on y'=y", est.order, 3.7, 4.3, est.order >= 3.7 && est.order <= 4.3};
    out.push_back(order);
    Tape tape;
    const Var end = integrate_node(grow, tape.constant(one), 0.0, 1.0, SolveConfig{0.01});
    out.push_back(below("solver", "e^t at step 1/100", std::abs(end.value()[0] - std::exp(1.0)), 1e-8));
    return out;
}

std::vector<CheckResult> ncde_checks() {
    std::vector<CheckResult> out;
    const std::size_t n = 3, l = 12;
    Tensor ramp({n, l});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < l; ++j) ramp.at(i, j) = static_cast<double>(j) + static_cast<double>(i);
    const ControlPath path = fit_natural_cubic(ramp);
    const Tensor h0 = Tensor::matrix({{0.5, -1.0}, {2.0, 0.0}, {-3.0, 1.25}});
    const double span = static_cast<double>(l - 1);
    {
        Tape tape;
        auto zero = [](const Var& y, double) { return scale(y, 0.0); };
        const Var h = integrate_ncde(zero, tape.constant(h0), path, 0.0, span, SolveConfig{});
        out.push_back(below("ncde", "zero field leaves the state unchanged", max_abs_diff(h.value(), h0), 1e-10));
    }
    {
        Tape tape;
        auto unit = [](const Var& y, double) { return add_scalar(scale(y, 0.0), 1.0); };
        const Var h = integrate_ncde(unit, tape.constant(h0), path, 0.0, span, SolveConfig{});
        Tensor want = h0;
        for (double& v : want.data()) v += span;
        out.push_back(below("ncde", "unit field under X(t)=t advances by the span", max_abs_diff(h.value(), want), 1e-10));
    }
    return out;
}

std::vector<CheckResult> run_selfcheck() {
    std::vector<CheckResult> all;
    for (auto group : {autodiff_checks, spline_checks, solver_checks, ncde_checks}) {
        auto part = group();
        all.insert(all.end(), part.begin(), part.end());
    }
    return all;
}

std::string format_check(const CheckResult& r) {
    std::string bound = r.lo == 0.0 ? "< " + format_double(r.hi) : "in [" + format_double(r.lo) + ", " + format_double(r.hi) + "]";
    return std::string(r.passed ? "PASS" : "FAIL") + " " + r.group + " " + r.name + " value=" + format_double(r.error) +
           " bound " + bound;
}

} // namespace mnde
