#pragma once

#include "mnde/autodiff.hpp"

#include <functional>
#include <string>
#include <vector>

namespace mnde {

struct CheckResult {
    std::string group;
    std::string name;
    double error = 0.0;     // the measured quantity (an error, or the order estimate)
    double lo = 0.0;        // pass when lo <= error < hi
    double hi = 0.0;
    bool passed = false;
};

/// Central-difference comparison of a scalar function's gradient; passes below `tol`.
CheckResult gradient_check(const std::string& name, const std::function<Var(Tape&, const Var&)>& f, const Tensor& x,
                           double tol = 1e-4, double h = 1e-6);

/// Every tensor op, plus the Huber loss of the full model on a 3-node toy.
std::vector<CheckResult> autodiff_checks();
/// Knot interpolation, interior C1/C2 continuity, natural boundary, the (0,1,0) example.
std::vector<CheckResult> spline_checks();
/// RK4 order on y' = y and e^t at step 1/100.
std::vector<CheckResult> solver_checks();
/// Zero field and unit field under a linear control.
std::vector<CheckResult> ncde_checks();

std::vector<CheckResult> run_selfcheck();

/// One line per check: "PASS autodiff grad matmul error=... bound=[lo, hi)".
std::string format_check(const CheckResult& r);

} // namespace mnde
