// Acceptance suite: one PASS/FAIL line per criterion. Pass criterion numbers as
// arguments to run a subset, e.g. `acceptance 1 2 8`.

#include "mnde/cli.hpp"
#include "mnde/data.hpp"
#include "mnde/io.hpp"
#include "mnde/selfcheck.hpp"
#include "mnde/spline.hpp"
#include "mnde/training.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <limits>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace mnde;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

// Worst check of a self-check group, plus the count of failures.
Outcome group_outcome(const std::vector<CheckResult>& checks, double seconds, double time_limit) {
    std::size_t failed = 0;
    std::string worst;
    for (const CheckResult& c : checks)
        if (!c.passed) {
            ++failed;
            if (worst.empty()) worst = " first failure: " + format_check(c);
        }
    const bool in_time = seconds < time_limit;
    return {failed == 0 && in_time, std::to_string(checks.size() - failed) + "/" + std::to_string(checks.size()) +
                                        " checks, " + fmt("%.1f s", seconds) + (in_time ? "" : " (over time limit)") + worst};
}

// ---------------------------------------------------------------------------
// 1-4: self-check groups

Outcome autodiff() {
    const auto t0 = Clock::now();
    const auto checks = autodiff_checks();
    const double s = seconds_since(t0);
    double worst = 0.0;
    for (const CheckResult& c : checks) worst = std::max(worst, c.error);
    Outcome o = group_outcome(checks, s, 60.0);
    o.detail += ", max relative error " + fmt("%.2e", worst) + " (< 1e-4, < 60 s)";
    return o;
}

// Natural cubic spline by a textbook tridiagonal (Thomas) solve on moments.
struct MomentSpline {
    std::vector<double> y, m;  // unit knot spacing

    explicit MomentSpline(std::vector<double> ys) : y(std::move(ys)), m(y.size(), 0.0) {
        const std::size_t n = y.size();
        if (n < 3) return;
        const std::size_t k = n - 2;
        std::vector<double> c(k), d(k);
        for (std::size_t i = 0; i < k; ++i) {
            const double rhs = 6.0 * (y[i + 2] - 2.0 * y[i + 1] + y[i]);
            const double denom = 4.0 - (i ? c[i - 1] : 0.0);
            c[i] = 1.0 / denom;
            d[i] = (rhs - (i ? d[i - 1] : 0.0)) / denom;
        }
        for (std::size_t i = k; i-- > 0;) m[i + 1] = d[i] - c[i] * (i + 1 < k ? m[i + 2] : 0.0);
    }

    double operator()(double t) const {
        const std::size_t j = std::min<std::size_t>(static_cast<std::size_t>(t), y.size() - 2);
        const double b = t - static_cast<double>(j), a = 1.0 - b;
        return m[j] * a * a * a / 6.0 + m[j + 1] * b * b * b / 6.0 + (y[j] - m[j] / 6.0) * a + (y[j + 1] - m[j + 1] / 6.0) * b;
    }
};

Outcome spline() {
    const auto t0 = Clock::now();
    const auto checks = spline_checks();
    Outcome o = group_outcome(checks, seconds_since(t0), std::numeric_limits<double>::infinity());

    const double hat = MomentSpline({0.0, 1.0, 0.0})(0.5);
    Tensor hat_knots({1, 3}, 0.0);
    hat_knots[1] = 1.0;
    const double hat_lib = fit_natural_cubic(hat_knots).value_at(0, 0.5);

    std::mt19937_64 gen(7);
    std::uniform_real_distribution<double> u(-100.0, 100.0);
    Tensor data({5, 12}, 0.0);
    for (double& v : data.data()) v = u(gen);
    const ControlPath path = fit_natural_cubic(data);
    double dev = 0.0;
    for (std::size_t i = 0; i < 5; ++i) {
        std::vector<double> row(12);
        for (std::size_t j = 0; j < 12; ++j) row[j] = data.at(i, j);
        const MomentSpline oracle(row);
        for (int k = 0; k <= 1100; ++k) {
            const double t = 0.01 * k;
            dev = std::max(dev, std::abs(oracle(t) - path.value_at(i, t)) / 100.0);
        }
    }
    const bool ok = std::abs(hat - 0.6875) < 1e-12 && std::abs(hat_lib - 0.6875) < 1e-12 && dev < 1e-12;
    o.pass = o.pass && ok;
    o.detail += ", oracle S(0.5)=" + fmt("%.15g", hat) + " library " + fmt("%.15g", hat_lib) +
                ", library vs tridiagonal oracle " + fmt("%.2e", dev) + " (scaled, < 1e-12)";
    return o;
}

Outcome solver() {
    const auto t0 = Clock::now();
    const auto checks = solver_checks();
    Outcome o = group_outcome(checks, seconds_since(t0), std::numeric_limits<double>::infinity());
    for (const CheckResult& c : checks)
        if (c.name.find("order") != std::string::npos) o.detail += ", order " + fmt("%.4f", c.error) + " in [3.7, 4.3]";
    return o;
}

Outcome ncde() {
    const auto t0 = Clock::now();
    return group_outcome(ncde_checks(), seconds_since(t0), std::numeric_limits<double>::infinity());
}

// ---------------------------------------------------------------------------
// 5-7: training runs

struct Recipe {
    SynthOptions data;
    ModelConfig model;
    TrainConfig train;
    double missing_rate = 0.0;
};

struct RunResult {
    double mae = 0.0;   // original units, on the evaluated split
    double seconds = 0.0;
    std::size_t windows = 0;
};

// Trains on the train split and scores the chosen split against clean truth.
RunResult fit_and_score(const Recipe& r, Variant variant, Split scored, bool use_last) {
    const auto t0 = Clock::now();
    const FlowDataset clean = synth_generate(r.data);
    const FlowDataset input = r.missing_rate > 0.0 ? inject_missing(clean, r.missing_rate, r.train.seed) : clean;
    ModelConfig mc = r.model;
    mc.n = clean.n();
    const Segment tr = split_segment(clean.intervals(), Split::train);
    const Segment va = split_segment(clean.intervals(), Split::val);
    const Normalizer z = Normalizer::fit(input, tr);
    const FlowDataset zin = z.apply(input), zt = z.apply(clean);
    const WindowSource train_set{&zin, &zt, window_origins(tr, mc.l, mc.l_out)};
    WindowSource val_set{&zin, &zt, {}};
    if (va.size() >= mc.l + mc.l_out) val_set.origins = window_origins(va, mc.l, mc.l_out);
    const TrainResult res = train(mc, variant, init_params(mc, r.train.seed), train_set, val_set, r.train);

    const WindowSource eval_set{&zin, &clean, window_origins(split_segment(clean.intervals(), scored), mc.l, mc.l_out)};
    const Tensor pred = z.invert(predict(mc, variant, use_last ? res.last : res.best, eval_set, r.train.threads, r.train.chunk));
    const Tensor truth = stacked_targets(mc, eval_set);
    return {compute_metrics(pred.data(), truth.data()).mae, seconds_since(t0), eval_set.origins.size()};
}

double population_std(const Tensor& t) {
    double mean = 0.0;
    for (double v : t.data()) mean += v;
    mean /= static_cast<double>(t.size());
    double ss = 0.0;
    for (double v : t.data()) ss += (v - mean) * (v - mean);
    return std::sqrt(ss / static_cast<double>(t.size()));
}

Recipe overfit_recipe() {
    Recipe r;
    r.data.n = 10;
    r.data.days = 3;
    r.data.scenario = "delay";
    r.data.noise = 1.0;
    r.model.l = 12;
    r.model.l_out = 12;
    r.model.c = 16;
    r.model.c_edge = 8;
    r.model.d = 2;
    r.model.heads = 4;
    r.model.loops = 1;
    r.model.step = 1.0;
    r.train.epochs = 200;
    r.train.batch_size = 16;
    r.train.patience = 0;
    r.train.optimizer.lr = 3e-3;
    r.train.threads = env_threads();
    return r;
}

Outcome overfit() {
    const Recipe r = overfit_recipe();
    const double sd = population_std(synth_generate(r.data).values);
    const RunResult run = fit_and_score(r, Variant::MNDE, Split::train, true);
    const double ratio = run.mae / sd;
    const bool ok = ratio < 0.05 && run.seconds < 900.0;
    return {ok, "MNDE train MAE " + fmt("%.3f", run.mae) + " = " + fmt("%.2f%%", 100.0 * ratio) + " of std " +
                    fmt("%.2f", sd) + " (< 5%), " + std::to_string(run.windows) + " windows, " +
                    fmt("%.0f s", run.seconds) + " (< 900 s)"};
}

Recipe ablation_recipe(std::uint64_t seed) {
    Recipe r;
    r.data.n = 20;
    r.data.days = 7;
    r.data.scenario = "delay+abrupt";
    r.data.seed = seed;
    r.model.l = 12;
    r.model.l_out = 24;
    r.model.c = 16;
    r.model.c_edge = 8;
    r.model.d = 2;
    r.model.heads = 4;
    r.model.loops = 1;
    r.model.step = 1.0;
    r.train.epochs = 15;
    r.train.batch_size = 16;
    r.train.patience = 0;
    r.train.optimizer.lr = 3e-3;
    r.train.seed = seed;
    r.train.threads = env_threads();
    return r;
}

Outcome ablation() {
    std::size_t ordered = 0;
    std::string detail;
    const Variant variants[] = {Variant::MNDE, Variant::CNDE3_STE, Variant::CNDE1_ST};
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        double mae[3];
        for (int k = 0; k < 3; ++k) mae[k] = fit_and_score(ablation_recipe(seed), variants[k], Split::test, false).mae;
        const bool ok = mae[0] <= mae[1] && mae[1] <= 1.1 * mae[2];
        ordered += ok ? 1 : 0;
        detail += " seed " + std::to_string(seed) + ": " + fmt("%.3f", mae[0]) + " / " + fmt("%.3f", mae[1]) + " / " +
                  fmt("%.3f", mae[2]) + (ok ? " ok;" : " out of order;");
    }
    return {ordered >= 2, "test MAE MNDE / CNDE3_STE / CNDE1_ST," + detail + " " + std::to_string(ordered) +
                              "/3 seeds ordered (need 2)"};
}

Recipe robustness_recipe() {
    Recipe r = overfit_recipe();
    r.data.noise = 5.0;
    r.train.epochs = 30;
    r.train.patience = 0;
    return r;
}

Outcome robustness() {
    Recipe r = robustness_recipe();
    const double base = fit_and_score(r, Variant::MNDE, Split::test, false).mae;
    r.missing_rate = 0.5;
    const double holed = fit_and_score(r, Variant::MNDE, Split::test, false).mae;
    const double degrade = holed / base - 1.0;
    return {degrade < 0.25, "test MAE 0% missing " + fmt("%.3f", base) + ", 50% missing " + fmt("%.3f", holed) +
                                ", degradation " + fmt("%.1f%%", 100.0 * degrade) + " (< 25%)"};
}

// ---------------------------------------------------------------------------
// 8: metrics against brute force

Outcome metrics_oracle() {
    std::mt19937_64 gen(2024);
    std::uniform_real_distribution<double> flow(0.0, 700.0), noise(-60.0, 60.0);
    std::bernoulli_distribution zero(0.05);
    const std::size_t rows = 20, cols = 96;
    Tensor truth({rows, cols}, 0.0), pred({rows, cols}, 0.0);
    for (std::size_t k = 0; k < truth.size(); ++k) {
        truth[k] = zero(gen) ? 0.0 : flow(gen);
        pred[k] = truth[k] + noise(gen);
    }
    double dev = 0.0;
    auto brute = [&](const std::vector<std::pair<double, double>>& pairs) {
        double ae = 0.0, se = 0.0, pe = 0.0;
        std::size_t nz = 0;
        for (auto [p, y] : pairs) {
            ae += std::abs(p - y);
            se += (p - y) * (p - y);
            if (y != 0.0) {
                pe += std::abs((p - y) / y);
                ++nz;
            }
        }
        const double n = static_cast<double>(pairs.size());
        return std::array<double, 3>{ae / n, std::sqrt(se / n), 100.0 * pe / static_cast<double>(nz)};
    };
    auto compare = [&](const Metrics& m, const std::array<double, 3>& b) {
        dev = std::max({dev, std::abs(m.mae - b[0]) / std::max(1.0, b[0]), std::abs(m.rmse - b[1]) / std::max(1.0, b[1]),
                        std::abs(m.mape - b[2]) / std::max(1.0, b[2])});
    };

    std::vector<std::pair<double, double>> all;
    for (std::size_t k = 0; k < truth.size(); ++k) all.emplace_back(pred[k], truth[k]);
    compare(compute_metrics(pred.data(), truth.data()), brute(all));

    const std::vector<std::size_t> cps{0, 23, 47, 95};
    const auto single = horizon_metrics(pred, truth, cps, false);
    const auto hourly = horizon_metrics(pred, truth, cps, true);
    for (std::size_t q = 0; q < cps.size(); ++q) {
        std::vector<std::pair<double, double>> col, hour;
        for (std::size_t i = 0; i < rows; ++i) {
            col.emplace_back(pred.at(i, cps[q]), truth.at(i, cps[q]));
            for (std::size_t j = cps[q] >= 11 ? cps[q] - 11 : 0; j <= cps[q]; ++j)
                hour.emplace_back(pred.at(i, j), truth.at(i, j));
        }
        compare(single[q].metrics, brute(col));
        compare(hourly[q].metrics, brute(hour));
    }

    const std::vector<double> edges{0, 100, 200, 300, 400, 500, 600};
    const auto bins = range_breakdown(pred, truth, edges);
    std::size_t bin_mismatch = 0, seen = 0;
    for (std::size_t b = 0; b < edges.size(); ++b) {
        const double lo = edges[b], hi = b + 1 < edges.size() ? edges[b + 1] : std::numeric_limits<double>::infinity();
        std::vector<std::pair<double, double>> members;
        for (auto [p, y] : all)
            if (y >= lo && y < hi) members.emplace_back(p, y);
        if (members.empty()) continue;
        const auto it = std::find_if(bins.begin(), bins.end(), [&](const RangeMetrics& r) { return r.lo == lo; });
        if (it == bins.end() || it->hi != hi || it->metrics.count != members.size()) {
            ++bin_mismatch;
            continue;
        }
        ++seen;
        const auto b3 = brute(members);
        // MAPE is undefined for a bin whose members are all zero truth
        if (std::isfinite(b3[2]))
            compare(it->metrics, b3);
        else
            compare(Metrics{it->metrics.mae, it->metrics.rmse, 0.0}, {b3[0], b3[1], 0.0});
    }
    if (seen != bins.size()) ++bin_mismatch;
    return {dev < 1e-12 && bin_mismatch == 0, "max relative deviation " + fmt("%.2e", dev) + " (< 1e-12), " +
                                                  std::to_string(bins.size()) + " range bins, " +
                                                  std::to_string(bin_mismatch) + " bin mismatches"};
}

// ---------------------------------------------------------------------------
// 9-10: CLI

int cli(const std::vector<std::string>& args, std::string* captured = nullptr) {
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    if (captured) *captured = out.str();
    if (code != kExitOk) std::cerr << err.str();
    return code;
}

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("mnde_acceptance_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

Outcome determinism() {
    const fs::path dir = fresh_dir("determinism");
    const std::string data = (dir / "flow.csv").string();
    write_atomic(dir / "run.cfg", "dataset = " + data +
                                      "\nn = 6\ndays = 2\nl_out = 12\nc = 8\nc_edge = 4\nloops = 2\nstep = 1\n"
                                      "epochs = 3\nbatch_size = 32\nseed = 11\nvariant = MNDE\n");
    const std::string cfg = (dir / "run.cfg").string();
    if (cli({"synth", "--config", cfg, "--out", data}) != kExitOk) return {false, "synth failed"};
    const std::string a = (dir / "a.ckpt").string(), b = (dir / "b.ckpt").string();
    if (cli({"train", "--config", cfg, "--checkpoint", a}) != kExitOk ||
        cli({"train", "--config", cfg, "--checkpoint", b}) != kExitOk)
        return {false, "train failed"};
    const bool same_ckpt = read_file(a) == read_file(b);
    const bool same_curve = read_file(a + ".loss.csv") == read_file(b + ".loss.csv");
    return {same_ckpt && same_curve, std::string("checkpoints ") + (same_ckpt ? "identical" : "differ") +
                                         " (" + std::to_string(read_file(a).size()) + " bytes), loss curves " +
                                         (same_curve ? "identical" : "differ")};
}

Outcome shape_contract() {
    const fs::path dir = fresh_dir("shape");
    const std::string data = (dir / "flow.csv").string(), ckpt = (dir / "m.ckpt").string();
    if (cli({"synth", "--n", "170", "--days", "1", "--out", data}) != kExitOk) return {false, "synth failed"};
    if (cli({"train", "--dataset", data, "--epochs", "0", "--checkpoint", ckpt}) != kExitOk) return {false, "train failed"};
    const FlowDataset full = load_flow_csv(data);
    FlowDataset recent;
    recent.values = Tensor({170, 12}, 0.0);
    for (std::size_t i = 0; i < 170; ++i)
        for (std::size_t j = 0; j < 12; ++j) recent.values.at(i, j) = full.values.at(i, 100 + j);
    write_flow_csv(dir / "recent.csv", recent);
    std::string csv;
    const auto t0 = Clock::now();
    if (cli({"forecast", "--checkpoint", ckpt, "--input", (dir / "recent.csv").string()}, &csv) != kExitOk)
        return {false, "forecast failed"};
    const double s = seconds_since(t0);
    std::istringstream in(csv);
    std::string line;
    std::size_t rows = 0, bad_rows = 0;
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    bool finite = true;
    while (std::getline(in, line)) {
        ++rows;
        std::istringstream cells(line);
        std::size_t cols = 0;
        for (std::string cell; std::getline(cells, cell, ',');) {
            ++cols;
            const double v = std::stod(cell);
            finite = finite && std::isfinite(v);
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        bad_rows += cols == 96 ? 0 : 1;
    }
    const Normalizer z = Normalizer::fit(full, split_segment(full.intervals(), Split::train));
    // untrained weights forecast near the training mean, so values sit on the flow scale
    const bool original_units = lo > z.mean - 10.0 * z.stddev && hi < z.mean + 10.0 * z.stddev;
    return {rows == 170 && bad_rows == 0 && finite && original_units,
            std::to_string(rows) + " rows, " + std::to_string(bad_rows) + " rows without 96 columns, values in [" +
                fmt("%.1f", lo) + ", " + fmt("%.1f", hi) + "] (train mean " + fmt("%.1f", z.mean) + "), forecast " +
                fmt("%.1f s", s)};
}

struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
};

} // namespace

int main(int argc, char** argv) {
    const std::vector<Criterion> all{
        {1, "autodiff gradcheck", autodiff},
        {2, "spline contract", spline},
        {3, "solver order", solver},
        {4, "NCDE identities", ncde},
        {5, "overfit oracle", overfit},
        {6, "ablation trend", ablation},
        {7, "robustness trend", robustness},
        {8, "metrics oracle", metrics_oracle},
        {9, "determinism", determinism},
        {10, "shape contract", shape_contract},
    };
    std::set<int> wanted;
    for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));
    int failed = 0;
    for (const Criterion& c : all) {
        if (!wanted.empty() && !wanted.count(c.id)) continue;
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failed += o.pass ? 0 : 1;
        std::cout << (o.pass ? "PASS" : "FAIL") << " [" << c.id << "] " << c.name << ": " << o.detail << std::endl;
    }
    return failed ? 1 : 0;
}
