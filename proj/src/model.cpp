#include "mnde/model.hpp"

#include "mnde/errors.hpp"
#include "mnde/io.hpp"
#include "mnde/odesolve.hpp"
#include "mnde/ops.hpp"
#include "mnde/rng.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <map>
#include <sstream>

namespace mnde {

namespace {

bool divides(double total, double step) {
    if (!(step > 0.0)) return false;
    const double ratio = total / step;
    return std::abs(ratio - std::round(ratio)) <= 1e-9 * std::max(1.0, ratio) && std::round(ratio) >= 1.0;
}

std::size_t ratio_of(double total, double step) { return static_cast<std::size_t>(std::round(total / step)); }

template <typename F>
auto staged(const char* stage, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const DimensionError& e) {
        throw DimensionError(std::string(stage) + ": " + e.what());
    } catch (const DataError& e) {
        throw DataError(std::string(stage) + ": " + e.what());
    } catch (const NumericError& e) {
        throw NumericError(std::string(stage) + ": " + e.what());
    }
}

std::string loop_prefix(const std::string& module, std::size_t k) { return module + ".loop" + std::to_string(k); }

Var dense(Binder& bind, const std::string& prefix, const Var& x) {
    return add(matmul(x, bind(prefix + ".W")), bind(prefix + ".b"));
}

} // namespace

// ---------------------------------------------------------------------------
// configuration

void ModelConfig::validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError(msg); };
    if (n == 0) fail("n must be positive");
    if (l < 2) fail("l must be at least 2");
    if (l_out == 0 || c == 0 || c_edge == 0) fail("l_out, c and c_edge must be positive");
    if (heads == 0) fail("h must be positive");
    if (loops == 0) fail("loops must be positive");
    if (d == 0) fail("delay horizon d must be positive");
    if (3 * d >= l) fail("delay horizon must satisfy d < l/3 (d=" + std::to_string(d) + ", l=" + std::to_string(l) + ")");
    if (c_edge % heads != 0) fail("c_edge must be divisible by h");
    if (l_out % heads != 0) fail("l_out must be divisible by h");
    if (!divides(static_cast<double>(l), r)) fail("l/r must be integral");
    if (!divides(static_cast<double>(l), r_diff)) fail("l/r_diff must be integral");
    if (!divides(current_span(), step) || !divides(delayed_span(), step))
        fail("solver step must divide both integration spans");
}

std::size_t ModelConfig::dense_len() const { return ratio_of(static_cast<double>(l), r); }
std::size_t ModelConfig::diff_len() const { return ratio_of(static_cast<double>(l), r_diff); }

Variant parse_variant(std::string_view name) {
    static const std::array<std::pair<std::string_view, Variant>, 5> table{{
        {"CNDE1_ST", Variant::CNDE1_ST},
        {"CNDE3_ST", Variant::CNDE3_ST},
        {"CNDE3_STE", Variant::CNDE3_STE},
        {"CNDE3_STE_DNDE", Variant::CNDE3_STE_DNDE},
        {"MNDE", Variant::MNDE},
    }};
    for (const auto& [key, v] : table)
        if (key == name) return v;
    throw ConfigError("unknown variant '" + std::string(name) +
                      "' (expected CNDE1_ST, CNDE3_ST, CNDE3_STE, CNDE3_STE_DNDE or MNDE)");
}

std::string variant_name(Variant v) {
    switch (v) {
    case Variant::CNDE1_ST: return "CNDE1_ST";
    case Variant::CNDE3_ST: return "CNDE3_ST";
    case Variant::CNDE3_STE: return "CNDE3_STE";
    case Variant::CNDE3_STE_DNDE: return "CNDE3_STE_DNDE";
    case Variant::MNDE: return "MNDE";
    }
    throw ConfigError("invalid variant");
}

VariantPlan plan_for(Variant v, const ModelConfig& cfg) {
    VariantPlan p;
    p.loops = v == Variant::CNDE1_ST ? 1 : cfg.loops;
    p.edges = v == Variant::CNDE3_STE || v == Variant::CNDE3_STE_DNDE || v == Variant::MNDE;
    p.delayed = v == Variant::CNDE3_STE_DNDE || v == Variant::MNDE;
    p.differentiation = v == Variant::MNDE;
    return p;
}

// ---------------------------------------------------------------------------
// parameters

namespace {

// Glorot range multiplier for the output layers of the vector fields.
constexpr double kFieldGain = 0.1;

} // namespace

ParameterSet init_params(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed, "init");
    ParameterSet ps;
    auto glorot = [&](const std::string& name, std::size_t in, std::size_t out, double gain) {
        const double lim = gain * std::sqrt(6.0 / static_cast<double>(in + out));
        Tensor w({in, out});
        for (double& v : w.data()) v = rng.uniform(-lim, lim);
        ps.add(name, std::move(w));
    };
    auto fc = [&](const std::string& name, std::size_t in, std::size_t out, double gain = 1.0) {
        glorot(name + ".W", in, out, gain);
        ps.add(name + ".b", Tensor({1, out}));
    };
    auto adjacency = [&](const std::string& name) {
        Tensor a = Tensor::identity(cfg.n);
        for (double& v : a.data()) v += rng.uniform(-0.01, 0.01);
        ps.add(name, std::move(a));
    };
    const std::size_t L = cfg.dense_len(), c = cfg.c, ce = cfg.c_edge;
    for (const std::string module : {"cnde", "dnde"}) {
        fc(module + ".embed.T", L, c);
        fc(module + ".embed.ST", L, c);
        fc(module + ".embed.E", 2 * L, ce);
        for (std::size_t k = 0; k < cfg.loops; ++k) {
            const std::string p = loop_prefix(module, k);
            fc(p + ".T.1", c, c);
            fc(p + ".T.2", c, c);
            fc(p + ".T.3", c, c, kFieldGain);
            adjacency(p + ".S.A");
            fc(p + ".S.G", c, c);
            fc(p + ".S.F1", c, c, kFieldGain);
            fc(p + ".S.F2", c, c, kFieldGain);
            adjacency(p + ".E.A");
            fc(p + ".E.G", ce, ce);
            fc(p + ".E.F1", ce, ce, kFieldGain);
            fc(p + ".E.F2", ce, ce, kFieldGain);
        }
    }
    const std::size_t Ld = cfg.diff_len();
    fc("attn.q", Ld, ce);
    fc("attn.k", Ld, ce);
    fc("attn.v", Ld, cfg.l_out);
    const std::array<std::size_t, 4> widths{c, ce, c, ce};
    for (std::size_t m = 0; m < widths.size(); ++m) {
        const std::string p = "head.p" + std::to_string(m);
        fc(p + ".1", widths[m], widths[m]);
        fc(p + ".2", widths[m], cfg.l_out);
    }
    return ps;
}

Var Binder::operator()(const std::string& name) {
    auto it = bound_.find(name);
    if (it != bound_.end()) return it->second;
    Var v = tape_.parameter(params_.get(name));
    bound_.emplace(name, v);
    return v;
}

// ---------------------------------------------------------------------------
// building blocks

Embeddings embed_initial(Binder& bind, const std::string& module, const Tensor& samples, Batch batch) {
    if (samples.rank() != 2 || samples.dim(0) != batch.rows())
        throw DimensionError("samples " + shape_str(samples.shape()) + " do not have " + std::to_string(batch.rows()) +
                             " rows");
    const std::size_t L = samples.dim(1), n = batch.n;
    const std::string p = module + ".embed.";
    Var w_edge = bind(p + "E.W");
    if (w_edge.dim(0) != 2 * L)
        throw DimensionError("samples have " + std::to_string(L) + " columns, embedding expects " +
                             std::to_string(w_edge.dim(0) / 2));
    Tape& tape = bind.tape();
    Var x = tape.constant(samples);
    Embeddings out;
    out.temporal = dense(bind, p + "T", x);
    out.spatio = dense(bind, p + "ST", x);

    // FC on [x_i, x_j] = x_i W_top + x_j W_bottom + b, evaluated per node then paired
    Var src = matmul(x, slice(w_edge, 0, 0, L));
    Var tgt = matmul(x, slice(w_edge, 0, L, 2 * L));
    std::vector<std::size_t> src_rows, tgt_rows;
    src_rows.reserve(batch.windows * n * n);
    tgt_rows.reserve(batch.windows * n * n);
    for (std::size_t b = 0; b < batch.windows; ++b)
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                src_rows.push_back(b * n + i);
                tgt_rows.push_back(b * n + j);
            }
    out.edge = add(add(gather_rows(src, src_rows), gather_rows(tgt, tgt_rows)), bind(p + "E.b"));
    return out;
}

Var temporal_fn(Binder& bind, const std::string& prefix, const Var& h) {
    Var z = tanh(dense(bind, prefix + ".1", h));
    z = tanh(dense(bind, prefix + ".2", z));
    return add(dense(bind, prefix + ".3", z), h);
}

namespace {

// F1(relu(A x W + b)) + F2(x), where A mixes `groups` blocks of `n` rows of width m.
Var graph_block(Binder& bind, const std::string& prefix, const Var& x, std::size_t batches, std::size_t n,
                std::size_t m) {
    const std::size_t width = x.dim(1);
    Var mixed = bmm(bind(prefix + ".A"), reshape(x, {batches, n, m}));
    mixed = reshape(mixed, {x.dim(0), width});
    Var g = relu(dense(bind, prefix + ".G", mixed));
    return add(dense(bind, prefix + ".F1", g), dense(bind, prefix + ".F2", x));
}

} // namespace

Var spatial_fn(Binder& bind, const std::string& prefix, const Var& h, Batch batch) {
    if (h.shape().size() != 2 || h.dim(0) != batch.rows())
        throw DimensionError("node state " + shape_str(h.shape()) + " does not match batch");
    return graph_block(bind, prefix, h, batch.windows, batch.n, h.dim(1));
}

Var edge_fn(Binder& bind, const std::string& prefix, const Var& he, Batch batch) {
    if (he.shape().size() != 2 || he.dim(0) != batch.rows() * batch.n)
        throw DimensionError("edge state " + shape_str(he.shape()) + " does not match batch");
    // rows i*n + j within a window: contracting i leaves each target's n*c' block intact
    return graph_block(bind, prefix, he, batch.windows, batch.n, batch.n * he.dim(1));
}

NdeOutputs nde_forward(Binder& bind, const std::string& module, const ControlPath& path, const Tensor& samples,
                       double span, const ModelConfig& cfg, const NdeOptions& opt, Batch batch) {
    if (opt.loops == 0 || opt.loops > cfg.loops)
        throw DimensionError("loop count " + std::to_string(opt.loops) + " outside [1, " + std::to_string(cfg.loops) + "]");
    Embeddings emb = embed_initial(bind, module, samples, batch);
    NdeOutputs out{opt.temporal ? emb.temporal : Var{}, emb.spatio, opt.edges ? emb.edge : Var{}};
    const SolveConfig solve{cfg.step};
    for (std::size_t k = 0; k < opt.loops; ++k) {
        const std::string p = loop_prefix(module, k);
        if (opt.temporal) {
            VectorField f = [&](const Var& h, double) { return temporal_fn(bind, p + ".T", h); };
            out.temporal = integrate_ncde(f, out.temporal, path, 0.0, span, solve);
        }
        VectorField st = [&](const Var& h, double) {
            return tanh(mul(spatial_fn(bind, p + ".S", h, batch), temporal_fn(bind, p + ".T", h)));
        };
        out.spatio = integrate_ncde(st, out.spatio, path, 0.0, span, solve);
        if (opt.edges) {
            VectorField e = [&](const Var& h, double) { return edge_fn(bind, p + ".E", h, batch); };
            out.edge = integrate_node(e, out.edge, 0.0, span, solve);
        }
    }
    return out;
}

NdeOutputs cnde_forward(Binder& bind, const ControlPath& path, const Tensor& samples, const ModelConfig& cfg,
                        const NdeOptions& opt, Batch batch) {
    return nde_forward(bind, "cnde", path, samples, cfg.current_span(), cfg, opt, batch);
}

NdeOutputs dnde_forward(Binder& bind, const ControlPath& path, const Tensor& samples, const ModelConfig& cfg,
                        const NdeOptions& opt, Batch batch) {
    if (cfg.d == 0) throw DimensionError("delay horizon d must be positive");
    return nde_forward(bind, "dnde", path, samples, cfg.delayed_span(), cfg, opt, batch);
}

Var differentiation_forward(Binder& bind, const Tensor& derivatives, const ModelConfig& cfg, Batch batch) {
    if (derivatives.rank() != 2 || derivatives.dim(0) != batch.rows() || derivatives.dim(1) != cfg.diff_len())
        throw DimensionError("derivative samples " + shape_str(derivatives.shape()) + " expected [" +
                             std::to_string(batch.rows()) + "x" + std::to_string(cfg.diff_len()) + "]");
    Var x = bind.tape().constant(derivatives);
    Var q = dense(bind, "attn.q", x);
    Var k = dense(bind, "attn.k", x);
    Var v = dense(bind, "attn.v", x);
    const std::size_t h = cfg.heads, qw = q.dim(1) / h, vw = v.dim(1) / h;
    const std::size_t B = batch.windows, n = batch.n;
    const double score_scale = std::sqrt(static_cast<double>(qw));
    std::vector<Var> parts;
    parts.reserve(h);
    for (std::size_t head = 0; head < h; ++head) {
        Var qh = reshape(slice(q, 1, head * qw, (head + 1) * qw), {B, n, qw});
        Var kh = reshape(slice(k, 1, head * qw, (head + 1) * qw), {B, n, qw});
        Var vh = reshape(slice(v, 1, head * vw, (head + 1) * vw), {B, n, vw});
        Var scores = softmax(scale(bmm(qh, transpose(kh)), score_scale), 2);
        parts.push_back(reshape(bmm(scores, vh), {B * n, vw}));
    }
    return h == 1 ? parts.front() : concat(parts, 1);
}

Var transform_node(Binder& bind, const std::string& head, const Var& h) {
    return dense(bind, head + ".2", relu(dense(bind, head + ".1", h)));
}

Var transform_edge(Binder& bind, const std::string& head, const Var& he, Batch batch) {
    const std::size_t ce = he.dim(1);
    Var pooled = reduce_mean(reshape(he, {batch.windows, batch.n, batch.n, ce}), 1);
    return transform_node(bind, head, reshape(pooled, {batch.rows(), ce}));
}

Var aggregate(std::span<const Var> views) {
    const std::size_t K = views.size();
    if (K == 0) throw DimensionError("aggregate needs at least one view");
    for (const Var& p : views)
        if (p.shape() != views.front().shape() || p.shape().size() != 2)
            throw DimensionError("aggregate views must share one rank-2 shape");
    if (K == 1) return views.front();
    std::vector<Var> gates;
    gates.reserve(K);
    for (const Var& p : views) gates.push_back(softmax(p, 1));
    const std::vector<double> ones(K, 1.0);
    Var total = lincomb(gates, ones);
    std::vector<Var> terms;
    terms.reserve(K);
    for (std::size_t m = 0; m < K; ++m) terms.push_back(mul(views[m], sub(total, gates[m])));
    const std::vector<double> coeff(K, 1.0 / static_cast<double>(K * (K - 1)));
    return lincomb(terms, coeff);
}

// ---------------------------------------------------------------------------
// full forward

PreparedBatch prepare_batch(std::span<const Tensor> windows, const ModelConfig& cfg) {
    if (windows.empty()) throw DimensionError("empty batch");
    const std::size_t n = cfg.n, l = cfg.l;
    Tensor stacked({windows.size() * n, l});
    auto dst = stacked.data();
    for (std::size_t b = 0; b < windows.size(); ++b) {
        if (windows[b].shape() != Shape{n, l})
            throw DimensionError("window " + shape_str(windows[b].shape()) + " expected [" + std::to_string(n) + "x" +
                                 std::to_string(l) + "]");
        std::copy(windows[b].data().begin(), windows[b].data().end(), dst.begin() + b * n * l);
    }
    for (std::size_t row = 0; row < windows.size() * n; ++row) {
        auto vals = dst.subspan(row * l, l);
        std::size_t seen = 0;
        double last = 0.0;
        for (double v : vals)
            if (!std::isnan(v)) {
                ++seen;
                last = v;
            }
        if (seen < 2) std::fill(vals.begin(), vals.end(), seen == 1 ? last : 0.0);
    }
    ControlPath path = staged("spline fit", [&] { return fit_natural_cubic(stacked); });
    Tensor samples = staged("dense sampling", [&] { return dense_sample(path, cfg.r).values; });
    Tensor derivatives = staged("derivative sampling", [&] { return dense_sample(path, cfg.r_diff).derivatives; });
    return PreparedBatch{Batch{windows.size(), n}, std::move(path), std::move(samples), std::move(derivatives)};
}

Var variant_forward(Binder& bind, const PreparedBatch& in, const ModelConfig& cfg, Variant variant) {
    const VariantPlan plan = plan_for(variant, cfg);
    const NdeOptions opt{plan.loops, plan.edges, false};
    std::vector<Var> views;
    NdeOutputs cur = staged("CNDE", [&] { return cnde_forward(bind, in.path, in.samples, cfg, opt, in.batch); });
    views.push_back(staged("output head p0", [&] { return transform_node(bind, "head.p0", cur.spatio); }));
    if (plan.edges)
        views.push_back(staged("output head p1", [&] { return transform_edge(bind, "head.p1", cur.edge, in.batch); }));
    if (plan.delayed) {
        NdeOutputs del = staged("DNDE", [&] { return dnde_forward(bind, in.path, in.samples, cfg, opt, in.batch); });
        views.push_back(staged("output head p2", [&] { return transform_node(bind, "head.p2", del.spatio); }));
        if (plan.edges)
            views.push_back(
                staged("output head p3", [&] { return transform_edge(bind, "head.p3", del.edge, in.batch); }));
    }
    if (plan.differentiation)
        views.push_back(staged("differentiation", [&] { return differentiation_forward(bind, in.derivatives, cfg, in.batch); }));
    return staged("aggregation", [&] { return aggregate(views); });
}

Tensor variant_forward(const Tensor& window, const ParameterSet& params, const ModelConfig& cfg, Variant variant) {
    cfg.validate();
    const PreparedBatch in = prepare_batch(std::span<const Tensor>(&window, 1), cfg);
    Tape tape(Tape::Mode::inference);
    Binder bind(tape, params);
    return variant_forward(bind, in, cfg, variant).value();
}

Tensor mnde_forward(const Tensor& window, const ParameterSet& params, const ModelConfig& cfg) {
    return variant_forward(window, params, cfg, Variant::MNDE);
}

// ---------------------------------------------------------------------------
// checkpoints

namespace {

constexpr std::string_view kFormat = "mnde-v1";

std::map<std::string, std::string> config_fields(const ModelConfig& c) {
    return {{"n", std::to_string(c.n)},
            {"l", std::to_string(c.l)},
            {"l_out", std::to_string(c.l_out)},
            {"c", std::to_string(c.c)},
            {"c_edge", std::to_string(c.c_edge)},
            {"d", std::to_string(c.d)},
            {"h", std::to_string(c.heads)},
            {"loops", std::to_string(c.loops)},
            {"r", format_double(c.r)},
            {"r_diff", format_double(c.r_diff)},
            {"step", format_double(c.step)}};
}

double parse_number(const std::string& s, const std::string& what) {
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
        throw DataError("checkpoint: bad number '" + s + "' for " + what);
    return v;
}

std::size_t parse_count(const std::string& s, const std::string& what) {
    std::size_t v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
        throw DataError("checkpoint: bad integer '" + s + "' for " + what);
    return v;
}

} // namespace

void save_checkpoint(const std::filesystem::path& file, const Checkpoint& ckpt) {
    std::string out;
    out += kFormat;
    out += '\n';
    for (const auto& [k, v] : config_fields(ckpt.config)) out += "config " + k + "=" + v + "\n";
    out += "variant " + variant_name(ckpt.variant) + "\n";
    out += "normalizer " + format_double(ckpt.mean) + " " + format_double(ckpt.stddev) + "\n";
    out += "params " + std::to_string(ckpt.params.size()) + "\n";
    for (const Parameter& p : ckpt.params) {
        out += "param " + p.name + " " + std::to_string(p.value.rank());
        for (std::size_t d : p.value.shape()) out += " " + std::to_string(d);
        out += '\n';
        bool first = true;
        for (double v : p.value.data()) {
            if (!first) out += ' ';
            out += format_double(v);
            first = false;
        }
        out += '\n';
    }
    write_atomic(file, out);
}

Checkpoint load_checkpoint(const std::filesystem::path& file) {
    std::istringstream in(read_file(file));
    std::string line;
    if (!std::getline(in, line) || line != kFormat)
        throw DataError("checkpoint " + file.string() + " is not in format " + std::string(kFormat));
    Checkpoint ck;
    std::map<std::string, std::string> fields;
    std::size_t expected = 0;
    bool have_params = false;
    while (!have_params && std::getline(in, line)) {
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (key == "config") {
            std::string kv;
            ls >> kv;
            const auto eq = kv.find('=');
            if (eq == std::string::npos) throw DataError("checkpoint: malformed config line '" + line + "'");
            fields[kv.substr(0, eq)] = kv.substr(eq + 1);
        } else if (key == "variant") {
            std::string v;
            ls >> v;
            try {
                ck.variant = parse_variant(v);
            } catch (const ConfigError& e) {
                throw DataError(std::string("checkpoint: ") + e.what());
            }
        } else if (key == "normalizer") {
            std::string a, b;
            ls >> a >> b;
            ck.mean = parse_number(a, "normalizer mean");
            ck.stddev = parse_number(b, "normalizer std");
        } else if (key == "params") {
            std::string v;
            ls >> v;
            expected = parse_count(v, "param count");
            have_params = true;
        } else {
            throw DataError("checkpoint: unexpected line '" + line + "'");
        }
    }
    if (!have_params) throw DataError("checkpoint: missing params section");
    const auto defaults = config_fields(ModelConfig{});
    for (const auto& [k, v] : defaults)
        if (!fields.count(k)) throw DataError("checkpoint: missing config key " + k);
    ModelConfig& c = ck.config;
    c.n = parse_count(fields["n"], "n");
    c.l = parse_count(fields["l"], "l");
    c.l_out = parse_count(fields["l_out"], "l_out");
    c.c = parse_count(fields["c"], "c");
    c.c_edge = parse_count(fields["c_edge"], "c_edge");
    c.d = parse_count(fields["d"], "d");
    c.heads = parse_count(fields["h"], "h");
    c.loops = parse_count(fields["loops"], "loops");
    c.r = parse_number(fields["r"], "r");
    c.r_diff = parse_number(fields["r_diff"], "r_diff");
    c.step = parse_number(fields["step"], "step");
    for (std::size_t k = 0; k < expected; ++k) {
        if (!std::getline(in, line)) throw DataError("checkpoint: truncated parameter list");
        std::istringstream hs(line);
        std::string tag, name, tok;
        hs >> tag >> name >> tok;
        if (tag != "param") throw DataError("checkpoint: expected param header, got '" + line + "'");
        const std::size_t rank = parse_count(tok, name + " rank");
        Shape shape(rank);
        for (auto& d : shape) {
            hs >> tok;
            d = parse_count(tok, name + " shape");
        }
        if (!std::getline(in, line)) throw DataError("checkpoint: missing payload for " + name);
        std::istringstream ps(line);
        std::vector<double> data;
        data.reserve(shape_size(shape));
        while (ps >> tok) data.push_back(parse_number(tok, name));
        if (data.size() != shape_size(shape))
            throw DataError("checkpoint: payload of " + name + " has " + std::to_string(data.size()) +
                            " values, shape " + shape_str(shape) + " needs " + std::to_string(shape_size(shape)));
        ck.params.add(name, Tensor(shape, std::move(data)));
    }
    try {
        c.validate();
    } catch (const ConfigError& e) {
        throw DataError(std::string("checkpoint: ") + e.what());
    }
    const ParameterSet reference = init_params(c, 0);
    for (const Parameter& p : reference) {
        if (!ck.params.contains(p.name)) throw DataError("checkpoint: missing parameter " + p.name);
        if (ck.params.get(p.name).value.shape() != p.value.shape())
            throw DataError("checkpoint: parameter " + p.name + " has shape " +
                            shape_str(ck.params.get(p.name).value.shape()) + ", expected " + shape_str(p.value.shape()));
    }
    return ck;
}

} // namespace mnde
