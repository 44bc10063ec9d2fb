#include "doctest.h"

#include "mnde/data.hpp"
#include "mnde/errors.hpp"
#include "mnde/rng.hpp"

#include <cmath>
#include <filesystem>
#include <set>

using namespace mnde;

namespace {

bool same_values(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) return false;
    for (std::size_t k = 0; k < a.size(); ++k) {
        if (std::isnan(a[k]) != std::isnan(b[k])) return false;
        if (!std::isnan(a[k]) && a[k] != b[k]) return false;
    }
    return true;
}

std::size_t count_if_value(const Tensor& t, auto pred) {
    std::size_t c = 0;
    for (double v : t.data()) c += pred(v) ? 1 : 0;
    return c;
}

// Pearson correlation of x[t] with y[t + lag] over the overlap.
double lagged_correlation(const std::vector<double>& x, const std::vector<double>& y, std::size_t lag) {
    const std::size_t m = x.size() - lag;
    double mx = 0, my = 0;
    for (std::size_t t = 0; t < m; ++t) {
        mx += x[t];
        my += y[t + lag];
    }
    mx /= static_cast<double>(m);
    my /= static_cast<double>(m);
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t t = 0; t < m; ++t) {
        const double a = x[t] - mx, b = y[t + lag] - my;
        sxy += a * b;
        sxx += a * a;
        syy += b * b;
    }
    return sxy / std::sqrt(sxx * syy);
}

} // namespace

TEST_CASE("rng streams") {
    Rng a(7, "shuffle"), b(7, "shuffle"), c(7, "injection"), d(8, "shuffle");
    const auto x = a.next();
    CHECK(x == b.next());
    CHECK(x != c.next());
    CHECK(x != d.next());
    Rng u(1, "u");
    double lo = 1, hi = 0, sum = 0;
    for (int k = 0; k < 100000; ++k) {
        const double v = u.uniform();
        lo = std::min(lo, v);
        hi = std::max(hi, v);
        sum += v;
    }
    CHECK(lo >= 0.0);
    CHECK(hi < 1.0);
    CHECK(sum / 100000 == doctest::Approx(0.5).epsilon(0.01));
    Rng g(2, "g");
    double m1 = 0, m2 = 0;
    for (int k = 0; k < 100000; ++k) {
        const double v = g.normal();
        m1 += v;
        m2 += v * v;
    }
    CHECK(std::abs(m1 / 100000) < 0.02);
    CHECK(m2 / 100000 == doctest::Approx(1.0).epsilon(0.02));
    std::vector<int> perm{0, 1, 2, 3, 4, 5, 6, 7};
    Rng s(3, "shuffle");
    s.shuffle(perm);
    CHECK(std::set<int>(perm.begin(), perm.end()).size() == 8);
    CHECK(fnv1a("") == 0xcbf29ce484222325ULL);
    CHECK(fnv1a("a") == 0xaf63dc4c8601ec8cULL);
}

TEST_CASE("CSV parsing") {
    SUBCASE("well-formed 3-location file") {
        const auto ds = parse_flow_csv("# n=3\n# interval_minutes=5\n1,2,3\n4,NaN,6\n7,8,9\n10,11,12\n13,14,15\n");
        CHECK(ds.n() == 3);
        CHECK(ds.intervals() == 5);
        CHECK(ds.values.at(0, 1) == 4.0);
        CHECK(std::isnan(ds.values.at(1, 1)));
        CHECK(ds.values.at(2, 4) == 15.0);
        CHECK(ds.interval_minutes == 5);
    }
    SUBCASE("errors carry the line number") {
        try {
            parse_flow_csv("# n=3\n1,2,3\n4,5\n", "flows.csv");
            FAIL("expected a parse error");
        } catch (const DataError& e) {
            CHECK(std::string(e.what()).find("flows.csv:3") != std::string::npos);
        }
        CHECK_THROWS_AS(parse_flow_csv(""), DataError);
        CHECK_THROWS_AS(parse_flow_csv("# n=2\n"), DataError);
        CHECK_THROWS_AS(parse_flow_csv("1,2\n"), DataError);
        CHECK_THROWS_AS(parse_flow_csv("# n=2\n1,abc\n"), DataError);
        CHECK_THROWS_AS(parse_flow_csv("# n=2\n1,2,3\n"), DataError);
        CHECK_THROWS_AS(load_flow_csv("/nonexistent/flows.csv"), DataError);
    }
    SUBCASE("write then load is value-identical") {
        SynthOptions opt;
        opt.n = 4;
        opt.days = 1;
        FlowDataset ds = inject_missing(synth_generate(opt), 0.2, 5);
        const auto file = std::filesystem::temp_directory_path() / "mnde_roundtrip.csv";
        write_flow_csv(file, ds);
        const FlowDataset back = load_flow_csv(file);
        CHECK(same_values(back.values, ds.values));
        // injecting after loading matches loading an injected file
        const FlowDataset clean = synth_generate(opt);
        write_flow_csv(file, clean);
        const FlowDataset a = inject_zeros(load_flow_csv(file), 0.3, 9);
        write_flow_csv(file, inject_zeros(clean, 0.3, 9));
        CHECK(same_values(a.values, load_flow_csv(file).values));
        std::filesystem::remove(file);
    }
}

TEST_CASE("splits and windows") {
    CHECK(split_segment(100, Split::train).size() == 60);
    CHECK(split_segment(100, Split::val).size() == 20);
    CHECK(split_segment(100, Split::test).size() == 20);
    // rounding down favours the test tail; segments partition the series
    const std::size_t T = 17856;
    const Segment tr = split_segment(T, Split::train), va = split_segment(T, Split::val), te = split_segment(T, Split::test);
    CHECK(tr.begin == 0);
    CHECK(tr.end == va.begin);
    CHECK(va.end == te.begin);
    CHECK(te.end == T);
    CHECK(tr.size() == 10713);
    CHECK(va.size() == 3571);
    CHECK(window_origins(Segment{0, T}, 12, 96).size() == 17749);

    CHECK(window_origins(Segment{5, 5 + 108}, 12, 96).size() == 1);
    CHECK_THROWS_AS(window_origins(Segment{5, 5 + 107}, 12, 96), DataError);
    for (std::size_t len : {108u, 150u, 300u}) CHECK(window_origins(Segment{0, len}, 12, 96).size() == len - 107);

    SynthOptions opt;
    opt.n = 3;
    opt.days = 2;
    const FlowDataset ds = synth_generate(opt);
    std::set<std::size_t> seen;
    for (Split s : {Split::train, Split::val, Split::test}) {
        const Segment seg = split_segment(ds.intervals(), s);
        for (const Window& w : make_windows(ds, 12, 24, s)) {
            CHECK(w.origin >= seg.begin);
            CHECK(w.origin + 36 <= seg.end);
            CHECK(seen.insert(w.origin).second);
            CHECK(w.input.at(1, 11) == ds.values.at(1, w.origin + 11));
            CHECK(w.target.at(2, 0) == ds.values.at(2, w.origin + 12));
            CHECK(w.target.at(0, 23) == ds.values.at(0, w.origin + 35));
        }
    }
}

TEST_CASE("injection") {
    SynthOptions opt;
    opt.n = 100;
    opt.days = 35; // 100 x 10080 entries
    const FlowDataset ds = synth_generate(opt);
    const double N = static_cast<double>(ds.values.size());
    CHECK(same_values(inject_missing(ds, 0.0, 1).values, ds.values));
    CHECK(same_values(inject_zeros(ds, 0.0, 1).values, ds.values));

    const FlowDataset miss = inject_missing(ds, 0.5, 11);
    const double k = static_cast<double>(count_if_value(miss.values, [](double v) { return std::isnan(v); }));
    CHECK(std::abs(k - 0.5 * N) < 3.0 * std::sqrt(N * 0.25));
    CHECK(same_values(inject_missing(ds, 0.5, 11).values, miss.values));

    const std::size_t base_zeros = count_if_value(ds.values, [](double v) { return v == 0.0; });
    const FlowDataset zero = inject_zeros(ds, 0.25, 12);
    const double z = static_cast<double>(count_if_value(zero.values, [](double v) { return v == 0.0; }) - base_zeros);
    CHECK(std::abs(z - 0.25 * N) < 3.0 * std::sqrt(N * 0.25 * 0.75) + static_cast<double>(base_zeros));
    CHECK(count_if_value(zero.values, [](double v) { return std::isnan(v); }) == 0);

    CHECK_THROWS_AS(inject_missing(ds, 1.0, 1), ConfigError);
    CHECK_THROWS_AS(inject_zeros(ds, -0.1, 1), ConfigError);
}

TEST_CASE("synthetic generator") {
    SUBCASE("shape and determinism") {
        SynthOptions opt;
        opt.n = 5;
        opt.days = 2;
        opt.scenario = "delay+abrupt";
        const FlowDataset a = synth_generate(opt), b = synth_generate(opt);
        CHECK(a.values.shape() == Shape{5, 576});
        CHECK(same_values(a.values, b.values));
        opt.seed = 1;
        CHECK(!same_values(a.values, synth_generate(opt).values));
        CHECK(count_if_value(a.values, [](double v) { return v < 0.0 || std::isnan(v); }) == 0);
    }
    SUBCASE("noise-free base is exactly periodic") {
        SynthOptions opt;
        opt.n = 3;
        opt.days = 3;
        opt.scenario = "none";
        opt.noise = 0.0;
        const FlowDataset ds = synth_generate(opt);
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t t = 0; t + kIntervalsPerDay < ds.intervals(); ++t)
                CHECK(ds.values.at(i, t) == ds.values.at(i, t + kIntervalsPerDay));
    }
    SUBCASE("delay pulses travel down the chain") {
        SynthOptions opt;
        opt.n = 6;
        opt.days = 7;
        opt.tau = 4;
        const FlowDataset ds = synth_generate(opt);
        std::vector<double> d0, d3;
        for (std::size_t t = 1; t < ds.intervals(); ++t) {
            d0.push_back(ds.values.at(0, t) - ds.values.at(0, t - 1));
            d3.push_back(ds.values.at(3, t) - ds.values.at(3, t - 1));
        }
        std::size_t best = 0;
        double best_r = -2.0;
        for (std::size_t lag = 0; lag <= 40; ++lag) {
            const double r = lagged_correlation(d0, d3, lag);
            if (r > best_r) {
                best_r = r;
                best = lag;
            }
        }
        CHECK(best >= 11);
        CHECK(best <= 13);
    }
    SUBCASE("abrupt drops reach 20% of the base level") {
        SynthOptions opt;
        opt.n = 4;
        opt.days = 4;
        opt.scenario = "abrupt";
        opt.noise = 0.0;
        const FlowDataset ds = synth_generate(opt);
        opt.scenario = "none";
        const FlowDataset base = synth_generate(opt);
        std::size_t dropped = 0;
        for (std::size_t k = 0; k < ds.values.size(); ++k) {
            const double ratio = ds.values[k] / base.values[k];
            // overlapping events compound
            const double hops = std::log(ratio) / std::log(0.2);
            CHECK(std::abs(hops - std::round(hops)) < 1e-9);
            dropped += ratio < 0.5 ? 1 : 0;
        }
        CHECK(dropped > 0);
    }
    SUBCASE("invalid options") {
        SynthOptions opt;
        opt.scenario = "storm";
        CHECK_THROWS_AS(synth_generate(opt), ConfigError);
        opt.scenario = "none";
        opt.n = 1;
        CHECK_THROWS_AS(synth_generate(opt), ConfigError);
    }
}

TEST_CASE("summary") {
    const FlowDataset ds = parse_flow_csv("# n=2\n1,NaN\n3,4\n");
    const DatasetSummary s = summarize(ds);
    CHECK(s.n == 2);
    CHECK(s.intervals == 2);
    CHECK(s.missing_fraction == 0.25);
    CHECK(s.min == 1.0);
    CHECK(s.max == 4.0);
    CHECK(s.mean == doctest::Approx(8.0 / 3.0));
    CHECK(format_summary(s).rfind("n=2 intervals=2 missing_fraction=0.25 min=1 max=4 mean=", 0) == 0);
}
