#include "mnde/data.hpp"

#include "mnde/errors.hpp"
#include "mnde/io.hpp"
#include "mnde/rng.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

namespace mnde {

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

std::size_t parse_header_count(std::string_view v, const std::string& where) {
    std::size_t out = 0;
    const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc{} || res.ptr != v.data() + v.size() || out == 0)
        throw DataError(where + ": bad header value '" + std::string(v) + "'");
    return out;
}

} // namespace

FlowDataset parse_flow_csv(const std::string& text, const std::string& source) {
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0, n = 0, minutes = 5;
    bool have_n = false;
    std::vector<double> rows; // interval-major
    std::size_t count = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string where = source + ":" + std::to_string(lineno);
        std::string_view s = trim(line);
        if (s.empty()) continue;
        if (s.front() == '#') {
            s.remove_prefix(1);
            s = trim(s);
            const auto eq = s.find('=');
            if (eq == std::string_view::npos) continue;
            const std::string_view key = trim(s.substr(0, eq)), value = trim(s.substr(eq + 1));
            if (key == "n") {
                n = parse_header_count(value, where);
                have_n = true;
            } else if (key == "interval_minutes") {
                minutes = parse_header_count(value, where);
            }
            continue;
        }
        if (!have_n) throw DataError(where + ": data row before the '# n=' header");
        std::size_t fields = 0;
        std::size_t pos = 0;
        while (true) {
            const std::size_t comma = s.find(',', pos);
            const std::string_view tok = trim(s.substr(pos, comma == std::string_view::npos ? s.npos : comma - pos));
            double v = 0.0;
            if (tok == "NaN" || tok == "nan") {
                v = std::numeric_limits<double>::quiet_NaN();
            } else {
                const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
                if (tok.empty() || res.ec != std::errc{} || res.ptr != tok.data() + tok.size() || !std::isfinite(v))
                    throw DataError(where + ": malformed value '" + std::string(tok) + "' in field " +
                                    std::to_string(fields + 1));
            }
            rows.push_back(v);
            ++fields;
            if (comma == std::string_view::npos) break;
            pos = comma + 1;
        }
        if (fields != n)
            throw DataError(where + ": expected " + std::to_string(n) + " fields, found " + std::to_string(fields));
        ++count;
    }
    if (!have_n) throw DataError(source + ": empty file or missing '# n=' header");
    if (count == 0) throw DataError(source + ": no data rows");
    FlowDataset ds{Tensor({n, count}), minutes};
    for (std::size_t t = 0; t < count; ++t)
        for (std::size_t i = 0; i < n; ++i) ds.values.at(i, t) = rows[t * n + i];
    return ds;
}

FlowDataset load_flow_csv(const std::filesystem::path& file) { return parse_flow_csv(read_file(file), file.string()); }

std::string format_flow_csv(const FlowDataset& ds) {
    std::string out = "# n=" + std::to_string(ds.n()) + "\n# interval_minutes=" + std::to_string(ds.interval_minutes) + "\n";
    for (std::size_t t = 0; t < ds.intervals(); ++t) {
        for (std::size_t i = 0; i < ds.n(); ++i) {
            if (i) out += ',';
            const double v = ds.values.at(i, t);
            out += std::isnan(v) ? std::string("NaN") : format_double(v);
        }
        out += '\n';
    }
    return out;
}

void write_flow_csv(const std::filesystem::path& file, const FlowDataset& ds) { write_atomic(file, format_flow_csv(ds)); }

Segment split_segment(std::size_t intervals, Split split) {
    const std::size_t train = intervals * 3 / 5, val = intervals / 5;
    switch (split) {
    case Split::train: return {0, train};
    case Split::val: return {train, train + val};
    case Split::test: return {train + val, intervals};
    }
    throw DataError("invalid split");
}

std::vector<std::size_t> window_origins(Segment seg, std::size_t l, std::size_t l_out) {
    if (seg.size() < l + l_out)
        throw DataError("segment of " + std::to_string(seg.size()) + " intervals is shorter than one window (" +
                        std::to_string(l + l_out) + ")");
    std::vector<std::size_t> out;
    out.reserve(seg.size() - l - l_out + 1);
    for (std::size_t o = seg.begin; o + l + l_out <= seg.end; ++o) out.push_back(o);
    return out;
}

Window make_window(const FlowDataset& ds, std::size_t origin, std::size_t l, std::size_t l_out) {
    if (origin + l + l_out > ds.intervals()) throw DataError("window at " + std::to_string(origin) + " exceeds dataset");
    const std::size_t n = ds.n();
    Window w{Tensor({n, l}), Tensor({n, l_out}), origin};
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < l; ++j) w.input.at(i, j) = ds.values.at(i, origin + j);
        for (std::size_t j = 0; j < l_out; ++j) w.target.at(i, j) = ds.values.at(i, origin + l + j);
    }
    return w;
}

std::vector<Window> make_windows(const FlowDataset& ds, std::size_t l, std::size_t l_out, Split split) {
    std::vector<Window> out;
    for (std::size_t o : window_origins(split_segment(ds.intervals(), split), l, l_out))
        out.push_back(make_window(ds, o, l, l_out));
    return out;
}

namespace {

FlowDataset inject(const FlowDataset& ds, double rate, std::uint64_t seed, double fill) {
    if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("injection rate must lie in [0, 1)");
    FlowDataset out = ds;
    Rng rng(seed, "injection");
    for (double& v : out.values.data())
        if (rng.bernoulli(rate)) v = fill;
    return out;
}

} // namespace

FlowDataset inject_missing(const FlowDataset& ds, double rate, std::uint64_t seed) {
    return inject(ds, rate, seed, std::numeric_limits<double>::quiet_NaN());
}

FlowDataset inject_zeros(const FlowDataset& ds, double rate, std::uint64_t seed) { return inject(ds, rate, seed, 0.0); }

FlowDataset synth_generate(const SynthOptions& opt) {
    if (opt.n < 2) throw ConfigError("synthetic data needs n >= 2");
    if (opt.days < 1) throw ConfigError("synthetic data needs days >= 1");
    const bool delay = opt.scenario == "delay" || opt.scenario == "delay+abrupt";
    const bool abrupt = opt.scenario == "abrupt" || opt.scenario == "delay+abrupt";
    if (!delay && !abrupt && opt.scenario != "none")
        throw ConfigError("unknown scenario '" + opt.scenario + "' (expected none, delay, abrupt or delay+abrupt)");
    if (opt.noise < 0.0) throw ConfigError("noise must be non-negative");

    const std::size_t n = opt.n, T = opt.days * kIntervalsPerDay;
    Rng rng(opt.seed, "synth");
    FlowDataset ds{Tensor({n, T}), 5};

    std::vector<double> offset(n);
    for (double& o : offset) o = rng.uniform(-30.0, 30.0);
    const double w = 2.0 * std::numbers::pi / static_cast<double>(kIntervalsPerDay);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t t = 0; t < T; ++t) {
            const double x = static_cast<double>(t % kIntervalsPerDay);
            // morning and evening peaks of different height
            ds.values.at(i, t) = 260.0 + offset[i] - 110.0 * std::cos(2.0 * w * x) - 60.0 * std::cos(w * x);
        }

    if (delay) {
        // congestion dips start at location 0 and travel down the chain
        const double width = 3.0;
        for (std::size_t start = 0; start < T; ++start) {
            if (!rng.bernoulli(opt.pulse_rate)) continue;
            const double amp = opt.pulse_amplitude * rng.uniform(0.6, 1.0);
            for (std::size_t i = 0; i < n; ++i) {
                const double centre = static_cast<double>(start + i * opt.tau);
                const double a = amp * std::pow(opt.decay, static_cast<double>(i));
                const auto lo = static_cast<std::ptrdiff_t>(centre - 4 * width), hi = static_cast<std::ptrdiff_t>(centre + 4 * width);
                for (std::ptrdiff_t t = std::max<std::ptrdiff_t>(lo, 0); t <= hi && t < static_cast<std::ptrdiff_t>(T); ++t) {
                    const double z = (static_cast<double>(t) - centre) / width;
                    ds.values.at(i, static_cast<std::size_t>(t)) -= a * std::exp(-0.5 * z * z);
                }
            }
        }
    }
    if (abrupt) {
        const double per_interval = opt.abrupt_rate / static_cast<double>(kIntervalsPerDay);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t t = 0; t < T; ++t) {
                if (!rng.bernoulli(per_interval)) continue;
                const std::size_t len = 12 + rng.below(25); // 1-3 hours
                for (std::size_t k = t; k < std::min(T, t + len); ++k) ds.values.at(i, k) *= 0.2;
            }
    }
    if (opt.noise > 0.0)
        for (double& v : ds.values.data()) v += opt.noise * rng.normal();
    for (double& v : ds.values.data()) v = std::max(v, 0.0);
    return ds;
}

DatasetSummary summarize(const FlowDataset& ds) {
    DatasetSummary s{ds.n(), ds.intervals(), 0.0, 0.0, 0.0, 0.0};
    std::size_t missing = 0, seen = 0;
    double lo = std::numeric_limits<double>::infinity(), hi = -lo, total = 0.0;
    for (double v : ds.values.data()) {
        if (std::isnan(v)) {
            ++missing;
            continue;
        }
        ++seen;
        lo = std::min(lo, v);
        hi = std::max(hi, v);
        total += v;
    }
    s.missing_fraction = static_cast<double>(missing) / static_cast<double>(ds.values.size());
    if (seen) {
        s.min = lo;
        s.max = hi;
        s.mean = total / static_cast<double>(seen);
    } else {
        s.min = s.max = s.mean = std::numeric_limits<double>::quiet_NaN();
    }
    return s;
}

std::string format_summary(const DatasetSummary& s) {
    return "n=" + std::to_string(s.n) + " intervals=" + std::to_string(s.intervals) +
           " missing_fraction=" + format_double(s.missing_fraction) + " min=" + format_double(s.min) +
           " max=" + format_double(s.max) + " mean=" + format_double(s.mean);
}

} // namespace mnde
