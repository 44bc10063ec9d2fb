#include "doctest.h"

#include "mnde/errors.hpp"
#include "mnde/ops.hpp"
#include "mnde/training.hpp"
#include "test_util.hpp"

#include <json.hpp>

#include <cmath>
#include <random>

using namespace mnde;
using mnde::testing::random_tensor;

namespace {

ModelConfig toy_config() {
    ModelConfig cfg;
    cfg.n = 3;
    cfg.l = 6;
    cfg.l_out = 6;
    cfg.c = 4;
    cfg.c_edge = 2;
    cfg.d = 1;
    cfg.heads = 2;
    cfg.loops = 1;
    return cfg;
}

struct ToyData {
    FlowDataset raw, norm;
    Normalizer z;
    WindowSource train, val;
};

ToyData toy_data(std::size_t train_windows = 24) {
    SynthOptions opt;
    opt.n = 3;
    opt.days = 1;
    opt.noise = 1.0;
    ToyData d;
    d.raw = synth_generate(opt);
    const Segment seg{0, 200};
    d.z = Normalizer::fit(d.raw, seg);
    d.norm = d.z.apply(d.raw);
    d.train = {&d.norm, &d.norm, {}};
    d.val = {&d.norm, &d.norm, {}};
    for (std::size_t o = 0; o < train_windows; ++o) d.train.origins.push_back(o * 5);
    for (std::size_t o = 210; o < 230; o += 3) d.val.origins.push_back(o);
    return d;
}

bool params_equal(const ParameterSet& a, const ParameterSet& b) {
    auto ib = b.begin();
    for (const Parameter& p : a) {
        if (p.name != ib->name || p.value.shape() != ib->value.shape()) return false;
        for (std::size_t k = 0; k < p.value.size(); ++k)
            if (p.value[k] != ib->value[k]) return false;
        ++ib;
    }
    return a.size() == b.size();
}

// Reference metrics with an explicit double loop over rows and columns.
struct RefMetrics {
    double mae, rmse, mape;
};

RefMetrics reference_metrics(const Tensor& p, const Tensor& y, std::size_t col) {
    double a = 0, s = 0, m = 0;
    std::size_t n = 0, nm = 0;
    for (std::size_t i = 0; i < y.dim(0); ++i) {
        const double e = p.at(i, col) - y.at(i, col);
        a += std::fabs(e);
        s += e * e;
        ++n;
        if (y.at(i, col) != 0) {
            m += std::fabs(e) / std::fabs(y.at(i, col));
            ++nm;
        }
    }
    return {a / n, std::sqrt(s / n), 100 * m / nm};
}

} // namespace

TEST_CASE("huber loss") {
    CHECK(huber_loss(Tensor::vector({0.5}), Tensor::vector({0.0}), 1.0) == 0.125);
    CHECK(huber_loss(Tensor::vector({2.0}), Tensor::vector({0.0}), 1.0) == 1.5);
    CHECK(huber_loss(Tensor::vector({-2.0}), Tensor::vector({0.0}), 1.0) == 1.5);
    CHECK_THROWS_AS(huber_loss(Tensor::vector({1.0}), Tensor::vector({1.0, 2.0}), 1.0), DimensionError);

    std::mt19937_64 gen(3);
    const Tensor p = random_tensor({5, 7}, gen, -0.4, 0.4), y = random_tensor({5, 7}, gen, -0.4, 0.4);
    // every residual inside delta: half the mean squared error
    double mse = 0;
    for (std::size_t k = 0; k < p.size(); ++k) mse += (p[k] - y[k]) * (p[k] - y[k]);
    CHECK(huber_loss(p, y, 1.0) == doctest::Approx(0.5 * mse / 35).epsilon(1e-14));

    // tensor and tape versions agree
    const Tensor q = random_tensor({5, 7}, gen, -3, 3);
    Tape t;
    const double taped = huber(t.constant(q), t.constant(y), 1.0).value().item();
    CHECK(std::abs(taped - huber_loss(q, y, 1.0)) < 1e-14);
}

TEST_CASE("normalizer") {
    const std::vector<double> v{1, 2, 3};
    const Normalizer z = Normalizer::fit(v);
    CHECK(z.mean == 2.0);
    CHECK(std::abs(z.stddev - std::sqrt(2.0 / 3.0)) < 1e-15);
    CHECK(z.apply(1.0) == doctest::Approx(-1.224744871391589).epsilon(1e-12));
    CHECK(z.apply(3.0) == doctest::Approx(1.224744871391589).epsilon(1e-12));

    std::mt19937_64 gen(9);
    const Tensor x = random_tensor({4, 50}, gen, 0, 600);
    const Normalizer zz = Normalizer::fit(x.data());
    const Tensor back = zz.invert(zz.apply(x));
    CHECK(max_abs_diff(back, x) < 1e-12);
    const Tensor nx = zz.apply(x);
    double m = 0, s = 0;
    for (double u : nx.data()) m += u;
    m /= 200;
    for (double u : nx.data()) s += (u - m) * (u - m);
    CHECK(std::abs(m) < 1e-12);
    CHECK(std::abs(s / 200 - 1.0) < 1e-12);

    const std::vector<double> flat{4, 4, 4};
    CHECK_THROWS_AS(Normalizer::fit(flat), DataError);
    const std::vector<double> with_nan{1, std::nan(""), 3};
    CHECK(Normalizer::fit(with_nan).mean == 2.0);
    CHECK(std::isnan(z.apply(Tensor::vector({std::nan("")}))[0]));
}

TEST_CASE("AdamW") {
    ParameterSet ps;
    ps.add("a", Tensor::vector({1.0, -2.0}));
    ps.add("b", Tensor({2, 2}, 0.5));
    const ParameterSet before = ps;

    SUBCASE("zero gradient without decay is a fixed point") {
        AdamW opt(ps, {1e-3, 0.0});
        for (int k = 0; k < 5; ++k) opt.step(ps);
        CHECK(params_equal(ps, before));
        CHECK(opt.steps() == 5);
    }
    SUBCASE("first step moves by lr against the gradient sign") {
        AdamW opt(ps, {1e-3, 0.0});
        for (Parameter& p : ps) std::fill(p.grad.data().begin(), p.grad.data().end(), 1.0);
        ps.get("a").grad[1] = -4.0;
        opt.step(ps);
        CHECK(ps.get("a").value[0] == doctest::Approx(1.0 - 1e-3).epsilon(1e-9));
        CHECK(ps.get("a").value[1] == doctest::Approx(-2.0 + 1e-3).epsilon(1e-9));
        CHECK(ps.get("b").value[3] == doctest::Approx(0.5 - 1e-3).epsilon(1e-9));
    }
    SUBCASE("decay is applied to the weights, not the gradient") {
        AdamW opt(ps, {0.1, 0.5});
        opt.step(ps);
        CHECK(ps.get("a").value[0] == doctest::Approx(1.0 * (1 - 0.05)).epsilon(1e-15));
    }
    SUBCASE("non-finite gradients are rejected before any update") {
        AdamW opt(ps, {});
        for (Parameter& p : ps) std::fill(p.grad.data().begin(), p.grad.data().end(), 1.0);
        ps.get("b").grad[2] = std::nan("");
        try {
            opt.step(ps);
            FAIL("expected a numeric error");
        } catch (const NumericError& e) {
            CHECK(std::string(e.what()).find("b") != std::string::npos);
        }
        CHECK(params_equal(ps, before));
    }
}

TEST_CASE("metric examples") {
    const std::vector<double> y{1, 2, 3}, p{2, 2, 5};
    const Metrics m = compute_metrics(p, y);
    CHECK(m.mae == 1.0);
    CHECK(std::abs(m.rmse - std::sqrt(5.0 / 3.0)) < 1e-15);
    CHECK(m.mape == doctest::Approx(100.0 * (1.0 + 0.0 + 2.0 / 3.0) / 3.0).epsilon(1e-14));
    CHECK(m.mape == doctest::Approx(55.5556).epsilon(1e-5));

    // zero truth is excluded from MAPE only
    const std::vector<double> y0{0, 2}, p0{1, 1};
    const Metrics z = compute_metrics(p0, y0);
    CHECK(z.mae == 1.0);
    CHECK(z.mape == 50.0);
    CHECK(z.mape_count == 1);

    const std::vector<double> yn{std::nan(""), 4}, pn{100, 5};
    CHECK(compute_metrics(pn, yn).mae == 1.0);
}

TEST_CASE("horizon metrics against a brute-force oracle") {
    std::mt19937_64 gen(21);
    const Tensor y = random_tensor({20, 96}, gen, 0, 500), p = random_tensor({20, 96}, gen, 0, 500);
    const auto hs = horizon_metrics(p, y, kDefaultCheckpoints);
    REQUIRE(hs.size() == 3);
    for (const auto& h : hs) {
        const RefMetrics r = reference_metrics(p, y, h.index);
        CHECK(std::abs(h.metrics.mae - r.mae) < 1e-12);
        CHECK(std::abs(h.metrics.rmse - r.rmse) < 1e-12);
        CHECK(std::abs(h.metrics.mape - r.mape) < 1e-12);
        CHECK(h.metrics.rmse >= h.metrics.mae);
    }
    // hour averaging pools the 12 columns ending at the checkpoint
    const auto ha = horizon_metrics(p, y, kDefaultCheckpoints, true);
    double mae = 0;
    for (std::size_t c = 12; c <= 23; ++c) mae += reference_metrics(p, y, c).mae;
    CHECK(std::abs(ha[0].metrics.mae - mae / 12) < 1e-12);

    Tensor zero_truth = y;
    for (std::size_t i = 0; i < 20; ++i) zero_truth.at(i, 47) = 0.0;
    CHECK_THROWS_AS(horizon_metrics(p, zero_truth, kDefaultCheckpoints), DataError);
    const std::vector<std::size_t> beyond{96};
    CHECK_THROWS_AS(horizon_metrics(p, y, beyond), DimensionError);
}

TEST_CASE("range breakdown") {
    std::mt19937_64 gen(5);
    const Tensor y = random_tensor({10, 50}, gen, 0, 700), p = random_tensor({10, 50}, gen, 0, 700);
    const std::vector<double> one{0};
    const auto single = range_breakdown(p, y, one);
    REQUIRE(single.size() == 1);
    const Metrics all = compute_metrics(p.data(), y.data());
    CHECK(single[0].metrics.mae == all.mae);
    CHECK(single[0].metrics.count == 500);

    const auto bins = range_breakdown(p, y, kDefaultRangeEdges);
    std::size_t total = 0;
    for (const auto& b : bins) {
        total += b.metrics.count;
        CHECK(b.metrics.rmse >= b.metrics.mae);
    }
    CHECK(total == 500);
    CHECK(std::isinf(bins.back().hi));

    const Tensor yy = Tensor::vector({50, 150, 160}), pp = Tensor::vector({60, 140, 180});
    const std::vector<double> edges{0, 100, 200};
    const auto two = range_breakdown(pp, yy, edges);
    REQUIRE(two.size() == 2); // the open bin is empty
    CHECK(two[0].metrics.mae == 10.0);
    CHECK(two[1].metrics.mae == 15.0);
    CHECK(two[1].metrics.count == 2);
    const std::vector<double> bad{0, 100, 100};
    CHECK_THROWS_AS(range_breakdown(pp, yy, bad), ConfigError);
}

TEST_CASE("report JSON") {
    EvalReport r;
    r.variant = "MNDE";
    r.windows = 4;
    Metrics m{1.5, 2.0, std::nan(""), 10, 0};
    r.horizons.push_back({23, m});
    r.ranges.push_back({600, std::numeric_limits<double>::infinity(), m});
    const auto j = nlohmann::json::parse(report_json(r));
    CHECK(j["variant"] == "MNDE");
    CHECK(j["checkpoints"]["23"]["mae"] == 1.5);
    CHECK(j["checkpoints"]["23"]["minutes_ahead"] == 120);
    CHECK(j["checkpoints"]["23"]["mape"].is_null());
    CHECK(j["ranges"][0]["range"] == ">600");
    CHECK(j["ranges"][0]["hi"].is_null());
}

TEST_CASE("training loop") {
    const ModelConfig cfg = toy_config();
    ToyData d = toy_data();
    const ParameterSet init = init_params(cfg, 1);
    TrainConfig tc;
    tc.batch_size = 8;
    tc.chunk = 3;
    tc.optimizer.lr = 1e-2;

    SUBCASE("zero epochs leave the parameters untouched") {
        tc.epochs = 0;
        const TrainResult r = train(cfg, Variant::MNDE, init, d.train, d.val, tc);
        CHECK(params_equal(r.best, init));
        CHECK(params_equal(r.last, init));
        CHECK(r.curve.empty());
    }
    SUBCASE("loss decreases and runs are reproducible across thread counts") {
        tc.epochs = 6;
        tc.patience = 0;
        const TrainResult a = train(cfg, Variant::CNDE3_STE, init, d.train, d.val, tc);
        REQUIRE(a.curve.size() == 6);
        CHECK(a.curve.back().train_loss < a.curve.front().train_loss);
        for (const auto& e : a.curve) CHECK(std::isfinite(e.val_loss));
        tc.threads = 3;
        const TrainResult b = train(cfg, Variant::CNDE3_STE, init, d.train, d.val, tc);
        CHECK(params_equal(a.last, b.last));
        CHECK(params_equal(a.best, b.best));
        CHECK(a.best_epoch == b.best_epoch);
        const std::string csv = format_loss_curve(a.curve);
        CHECK(csv.rfind("epoch,train_loss,val_loss\n1,", 0) == 0);
    }
    SUBCASE("chunking does not change the batch loss") {
        tc.epochs = 1;
        tc.batch_size = 24;
        const TrainResult a = train(cfg, Variant::MNDE, init, d.train, d.val, tc);
        tc.chunk = 8;
        const TrainResult b = train(cfg, Variant::MNDE, init, d.train, d.val, tc);
        CHECK(std::abs(a.curve[0].train_loss - b.curve[0].train_loss) < 1e-12);
    }
    SUBCASE("missing targets are masked") {
        FlowDataset holes = inject_missing(d.norm, 0.2, 4);
        WindowSource src{&d.norm, &holes, d.train.origins};
        tc.epochs = 2;
        const TrainResult r = train(cfg, Variant::CNDE1_ST, init, src, d.val, tc);
        for (const auto& e : r.curve) CHECK(std::isfinite(e.train_loss));
    }
    SUBCASE("patience stops early") {
        tc.epochs = 50;
        tc.patience = 1;
        tc.optimizer.lr = 0.05;
        const TrainResult r = train(cfg, Variant::CNDE1_ST, init, d.train, d.val, tc);
        CHECK(r.curve.size() < 50);
    }
    SUBCASE("predict is chunk independent") {
        const Tensor a = predict(cfg, Variant::MNDE, init, d.val, 1, 1);
        const Tensor b = predict(cfg, Variant::MNDE, init, d.val, 2, 4);
        CHECK(a.shape() == Shape{d.val.origins.size() * 3, 6});
        CHECK(max_abs_diff(a, b) < 1e-12);
        const Tensor y = stacked_targets(cfg, d.val);
        CHECK(y.at(3, 0) == d.norm.values.at(0, d.val.origins[1] + 6));
    }
}

TEST_CASE("thread count from the environment") {
    setenv("MNDE_THREADS", "3", 1);
    CHECK(env_threads() == 3);
    setenv("MNDE_THREADS", "zero", 1);
    CHECK(env_threads() == 1);
    unsetenv("MNDE_THREADS");
    CHECK(env_threads() == 1);
}
