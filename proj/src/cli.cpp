#include "mnde/cli.hpp"

#include "mnde/data.hpp"
#include "mnde/errors.hpp"
#include "mnde/io.hpp"
#include "mnde/selfcheck.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <ostream>
#include <set>
#include <sstream>

namespace mnde {

namespace {

struct KeySpec {
    const char* key;
    const char* fallback;
    const char* help;
};

// clang-format off
const KeySpec kKeys[] = {
    {"dataset", "", "flow CSV used by train, eval and robustness"},
    {"n", "0", "location count (0: take it from the dataset)"},
    {"l", "12", "input intervals"},
    {"l_out", "96", "forecast intervals"},
    {"c", "64", "node embedding width"},
    {"c_edge", "32", "edge and attention embedding width"},
    {"d", "2", "delayed module span"},
    {"h", "4", "attention heads"},
    {"loops", "3", "NDE loop count"},
    {"r", "1/3", "dense sampling increment"},
    {"r_diff", "1/3", "derivative sampling increment"},
    {"step", "1/3", "RK4 step"},
    {"lr", "1e-3", "learning rate"},
    {"weight_decay", "1e-3", "AdamW weight decay"},
    {"batch_size", "64", "windows per optimizer step"},
    {"epochs", "100", "training epochs (0 writes the initialization)"},
    {"delta", "1", "Huber threshold"},
    {"seed", "0", "seed for init, shuffle, injection and synth streams"},
    {"variant", "MNDE", "CNDE1_ST | CNDE3_ST | CNDE3_STE | CNDE3_STE_DNDE | MNDE"},
    {"checkpoints", "23,47,95", "horizon indices reported by eval"},
    {"missing_rate", "0", "fraction of input entries replaced by NaN"},
    {"zero_rate", "0", "fraction of input entries replaced by 0"},
    {"patience", "20", "early-stopping patience in epochs (0 disables)"},
    {"select", "best", "checkpoint written by train: best | last"},
    {"chunk", "8", "windows per tape"},
    {"checkpoint", "mnde.ckpt", "checkpoint path (eval accepts a comma-separated list)"},
    {"loss_curve", "", "loss-curve CSV (default: <checkpoint>.loss.csv)"},
    {"out", "", "output file (default: stdout)"},
    {"input", "", "forecast input CSV with exactly l intervals"},
    {"split", "test", "evaluation split: train | val | test"},
    {"hour_averaged", "false", "average the 12 intervals ending at each checkpoint"},
    {"ranges", "0,100,200,300,400,500,600", "flow-range bin edges for eval (empty disables)"},
    {"days", "3", "synth: days of 288 intervals"},
    {"scenario", "delay", "synth: none | delay | abrupt | delay+abrupt"},
    {"noise", "5", "synth: Gaussian noise std"},
    {"tau", "4", "synth: per-hop delay in intervals"},
    {"mode", "missing", "robustness: missing | zeros"},
    {"rates", "", "robustness rates (default 0,0.1,0.3,0.5 or 0,0.1,0.25)"},
};
// clang-format on

const std::set<std::string> kModelKeys{"l", "l_out", "c", "c_edge", "d", "h", "loops", "r", "r_diff", "step"};

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

double parse_number(std::string_view s, const std::string& key) {
    s = trim(s);
    const auto slash = s.find('/');
    if (slash != std::string_view::npos)
        return parse_number(s.substr(0, slash), key) / parse_number(s.substr(slash + 1), key);
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || res.ec != std::errc{} || res.ptr != s.data() + s.size() || !std::isfinite(v))
        throw ConfigError("key '" + key + "': expected a number, got '" + std::string(s) + "'");
    return v;
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string_view rest = s;
    while (!trim(rest).empty()) {
        const auto comma = rest.find(',');
        out.emplace_back(trim(rest.substr(0, comma)));
        if (comma == std::string_view::npos) break;
        rest.remove_prefix(comma + 1);
    }
    return out;
}

} // namespace

RunConfig::RunConfig() {
    for (const KeySpec& k : kKeys) values_[k.key] = k.fallback;
}

const std::vector<std::string>& RunConfig::keys() {
    static const std::vector<std::string> all = [] {
        std::vector<std::string> v;
        for (const KeySpec& k : kKeys) v.emplace_back(k.key);
        return v;
    }();
    return all;
}

bool RunConfig::known(const std::string& key) {
    return std::any_of(std::begin(kKeys), std::end(kKeys), [&](const KeySpec& k) { return key == k.key; });
}

RunConfig RunConfig::parse(const std::string& text, const std::string& source) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string_view s = line;
        if (const auto hash = s.find('#'); hash != std::string_view::npos) s = s.substr(0, hash);
        s = trim(s);
        if (s.empty()) continue;
        const auto eq = s.find('=');
        const std::string where = source + ":" + std::to_string(lineno);
        if (eq == std::string_view::npos) throw ConfigError(where + ": expected key = value");
        const std::string key(trim(s.substr(0, eq)));
        if (!known(key)) throw ConfigError(where + ": unknown key '" + key + "'");
        cfg.set(key, std::string(trim(s.substr(eq + 1))));
    }
    return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& file) {
    std::string text;
    try {
        text = read_file(file);
    } catch (const DataError& e) {
        throw ConfigError(e.what());
    }
    return parse(text, file.string());
}

void RunConfig::set(const std::string& key, const std::string& value) {
    if (!known(key)) throw ConfigError("unknown key '" + key + "'");
    values_[key] = value;
    set_.insert(key);
}

const std::string& RunConfig::get(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown key '" + key + "'");
    return it->second;
}

double RunConfig::real(const std::string& key) const { return parse_number(get(key), key); }

std::size_t RunConfig::count(const std::string& key) const {
    const double v = real(key);
    if (v < 0 || v != std::floor(v) || v > 1e15)
        throw ConfigError("key '" + key + "': expected a non-negative integer, got '" + get(key) + "'");
    return static_cast<std::size_t>(v);
}

bool RunConfig::flag(const std::string& key) const {
    const std::string& v = get(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("key '" + key + "': expected true or false, got '" + v + "'");
}

std::vector<std::size_t> RunConfig::counts(const std::string& key) const {
    std::vector<std::size_t> out;
    for (const std::string& s : split_list(get(key))) {
        const double v = parse_number(s, key);
        if (v < 0 || v != std::floor(v)) throw ConfigError("key '" + key + "': '" + s + "' is not a non-negative integer");
        out.push_back(static_cast<std::size_t>(v));
    }
    return out;
}

std::vector<double> RunConfig::reals(const std::string& key) const {
    std::vector<double> out;
    for (const std::string& s : split_list(get(key))) out.push_back(parse_number(s, key));
    return out;
}

ModelConfig RunConfig::model(std::size_t n_override) const {
    ModelConfig m;
    m.n = count("n") ? count("n") : n_override;
    m.l = count("l");
    m.l_out = count("l_out");
    m.c = count("c");
    m.c_edge = count("c_edge");
    m.d = count("d");
    m.heads = count("h");
    m.loops = count("loops");
    m.r = real("r");
    m.r_diff = real("r_diff");
    m.step = real("step");
    return m;
}

TrainConfig RunConfig::training() const {
    TrainConfig t;
    t.epochs = count("epochs");
    t.batch_size = count("batch_size");
    t.delta = real("delta");
    t.optimizer.lr = real("lr");
    t.optimizer.weight_decay = real("weight_decay");
    t.seed = count("seed");
    t.patience = count("patience");
    t.chunk = count("chunk");
    t.threads = env_threads();
    return t;
}

// ---------------------------------------------------------------------------
// commands

namespace {

struct Context {
    RunConfig cfg;
    std::ostream& out;
    std::ostream& err;
};

// Writes to the `out` file when set, otherwise to the stream.
void emit(Context& ctx, const std::string& content) {
    const std::string& path = ctx.cfg.get("out");
    if (path.empty())
        ctx.out << content;
    else
        write_atomic(path, content);
}

FlowDataset load_dataset(const RunConfig& cfg) {
    const std::string& path = cfg.get("dataset");
    if (path.empty()) throw ConfigError("no dataset given (set 'dataset')");
    return load_flow_csv(path);
}

// Input series after missing/zero injection; the targets stay clean.
FlowDataset corrupted_input(const FlowDataset& clean, const RunConfig& cfg) {
    FlowDataset in = clean;
    const double missing = cfg.real("missing_rate"), zeros = cfg.real("zero_rate");
    const std::uint64_t seed = cfg.count("seed");
    if (missing > 0.0) in = inject_missing(in, missing, seed);
    if (zeros > 0.0) in = inject_zeros(in, zeros, seed + 1);
    if (missing < 0.0 || zeros < 0.0) throw ConfigError("injection rates must lie in [0, 1)");
    return in;
}

Split parse_split(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    throw ConfigError("unknown split '" + s + "' (expected train, val or test)");
}

int cmd_synth(Context& ctx) {
    SynthOptions opt;
    opt.n = ctx.cfg.count("n") ? ctx.cfg.count("n") : 10;
    opt.days = ctx.cfg.count("days");
    opt.seed = ctx.cfg.count("seed");
    opt.scenario = ctx.cfg.get("scenario");
    opt.noise = ctx.cfg.real("noise");
    opt.tau = ctx.cfg.count("tau");
    const FlowDataset ds = synth_generate(opt);
    const std::string& path = ctx.cfg.get("out");
    const std::string summary = format_summary(summarize(ds)) + "\n";
    if (path.empty()) {
        ctx.out << format_flow_csv(ds);
        ctx.err << summary;
    } else {
        write_flow_csv(path, ds);
        ctx.out << summary;
    }
    return kExitOk;
}

int cmd_train(Context& ctx) {
    const RunConfig& cfg = ctx.cfg;
    const FlowDataset clean = load_dataset(cfg);
    if (cfg.count("n") && cfg.count("n") != clean.n())
        throw DataError("config sets n=" + std::to_string(cfg.count("n")) + " but the dataset has " +
                        std::to_string(clean.n()) + " locations");
    const ModelConfig mc = cfg.model(clean.n());
    mc.validate();
    const Variant variant = parse_variant(cfg.get("variant"));
    const std::string select = cfg.get("select");
    if (select != "best" && select != "last") throw ConfigError("select must be best or last");
    TrainConfig tc = cfg.training();

    const Segment train_seg = split_segment(clean.intervals(), Split::train);
    const Segment val_seg = split_segment(clean.intervals(), Split::val);
    const FlowDataset input = corrupted_input(clean, cfg);
    const Normalizer z = Normalizer::fit(input, train_seg);
    const FlowDataset zin = z.apply(input), ztarget = z.apply(clean);
    const WindowSource train_set{&zin, &ztarget, window_origins(train_seg, mc.l, mc.l_out)};
    WindowSource val_set{&zin, &ztarget, {}};
    if (val_seg.size() >= mc.l + mc.l_out) val_set.origins = window_origins(val_seg, mc.l, mc.l_out);

    const ParameterSet init = init_params(mc, tc.seed);
    const TrainResult result = train(mc, variant, init, train_set, val_set, tc, [&](const EpochRecord& r) {
        ctx.out << "epoch " << r.epoch << " train_loss=" << format_double(r.train_loss)
                << " val_loss=" << format_double(r.val_loss) << "\n";
        ctx.out.flush();
    });

    const std::filesystem::path ckpt = cfg.get("checkpoint");
    save_checkpoint(ckpt, Checkpoint{mc, variant, z.mean, z.stddev, select == "best" ? result.best : result.last});
    const std::string curve_path = cfg.get("loss_curve").empty() ? ckpt.string() + ".loss.csv" : cfg.get("loss_curve");
    write_atomic(curve_path, format_loss_curve(result.curve));
    ctx.out << "wrote " << ckpt.string() << " (" << select << ", epoch " << (select == "best" ? result.best_epoch : result.curve.size())
            << ") and " << curve_path << "\n";
    return kExitOk;
}

Checkpoint load_compatible(const Context& ctx, const std::string& path) {
    Checkpoint ck = load_checkpoint(path);
    const ModelConfig want = ctx.cfg.model(ck.config.n);
    for (const std::string& key : kModelKeys) {
        if (!ctx.cfg.is_set(key)) continue;
        const ModelConfig& c = ck.config;
        const bool same = (key == "l" && want.l == c.l) || (key == "l_out" && want.l_out == c.l_out) ||
                          (key == "c" && want.c == c.c) || (key == "c_edge" && want.c_edge == c.c_edge) ||
                          (key == "d" && want.d == c.d) || (key == "h" && want.heads == c.heads) ||
                          (key == "loops" && want.loops == c.loops) || (key == "r" && want.r == c.r) ||
                          (key == "r_diff" && want.r_diff == c.r_diff) || (key == "step" && want.step == c.step);
        if (!same) throw ConfigError("config key '" + key + "' does not match checkpoint " + path);
    }
    if (ctx.cfg.count("n") && ctx.cfg.count("n") != ck.config.n)
        throw ConfigError("config sets n=" + std::to_string(ctx.cfg.count("n")) + " but checkpoint " + path + " has n=" +
                          std::to_string(ck.config.n));
    return ck;
}

EvalReport evaluate(const Context& ctx, const Checkpoint& ck, const FlowDataset& clean, const FlowDataset& input,
                    bool with_ranges) {
    const ModelConfig& mc = ck.config;
    if (clean.n() != mc.n)
        throw DataError("checkpoint expects n=" + std::to_string(mc.n) + " but the dataset has " + std::to_string(clean.n()) +
                        " locations");
    const Normalizer z{ck.mean, ck.stddev};
    const FlowDataset zin = z.apply(input);
    const Segment seg = split_segment(clean.intervals(), parse_split(ctx.cfg.get("split")));
    const WindowSource src{&zin, &clean, window_origins(seg, mc.l, mc.l_out)};
    const Tensor pred = z.invert(predict(mc, ck.variant, ck.params, src, env_threads(), ctx.cfg.count("chunk")));
    const Tensor truth = stacked_targets(mc, src);
    EvalReport r;
    r.variant = variant_name(ck.variant);
    r.windows = src.origins.size();
    r.hour_averaged = ctx.cfg.flag("hour_averaged");
    const auto cps = ctx.cfg.counts("checkpoints");
    r.horizons = horizon_metrics(pred, truth, cps, r.hour_averaged);
    const auto edges = ctx.cfg.reals("ranges");
    if (with_ranges && !edges.empty()) r.ranges = range_breakdown(pred, truth, edges);
    return r;
}

int cmd_eval(Context& ctx) {
    const FlowDataset clean = load_dataset(ctx.cfg);
    const FlowDataset input = corrupted_input(clean, ctx.cfg);
    const auto paths = split_list(ctx.cfg.get("checkpoint"));
    if (paths.empty()) throw ConfigError("no checkpoint given");
    std::vector<EvalReport> reports;
    for (const std::string& p : paths) reports.push_back(evaluate(ctx, load_compatible(ctx, p), clean, input, true));
    if (reports.size() == 1) {
        emit(ctx, report_json(reports[0]));
        return kExitOk;
    }
    // ablation table: one row per checkpoint
    nlohmann::ordered_json j;
    nlohmann::ordered_json table = nlohmann::ordered_json::array();
    nlohmann::ordered_json all = nlohmann::ordered_json::array();
    for (std::size_t k = 0; k < reports.size(); ++k) {
        nlohmann::ordered_json row;
        row["checkpoint"] = paths[k];
        row["variant"] = reports[k].variant;
        for (const HorizonMetrics& h : reports[k].horizons) {
            const std::string suffix = "@" + std::to_string(h.index);
            row["mae" + suffix] = h.metrics.mae;
            row["rmse" + suffix] = h.metrics.rmse;
            row["mape" + suffix] = std::isfinite(h.metrics.mape) ? nlohmann::ordered_json(h.metrics.mape) : nullptr;
        }
        table.push_back(row);
        all.push_back(nlohmann::ordered_json::parse(report_json(reports[k])));
    }
    j["ablation"] = table;
    j["reports"] = all;
    emit(ctx, j.dump(2) + "\n");
    return kExitOk;
}

int cmd_forecast(Context& ctx) {
    const Checkpoint ck = load_compatible(ctx, ctx.cfg.get("checkpoint"));
    const std::string& input_path = ctx.cfg.get("input");
    if (input_path.empty()) throw ConfigError("forecast needs 'input' (CSV with the last l intervals)");
    const FlowDataset recent = load_flow_csv(input_path);
    const ModelConfig& mc = ck.config;
    if (recent.n() != mc.n)
        throw DataError(input_path + ": " + std::to_string(recent.n()) + " locations, checkpoint expects " + std::to_string(mc.n));
    if (recent.intervals() != mc.l)
        throw DataError(input_path + ": " + std::to_string(recent.intervals()) + " intervals, forecast needs exactly " +
                        std::to_string(mc.l));
    const Normalizer z{ck.mean, ck.stddev};
    const Tensor y = z.invert(variant_forward(z.apply(recent.values), ck.params, mc, ck.variant));
    std::string csv;
    for (std::size_t i = 0; i < y.dim(0); ++i) {
        for (std::size_t j = 0; j < y.dim(1); ++j) {
            if (j) csv += ',';
            csv += format_double(y.at(i, j));
        }
        csv += '\n';
    }
    emit(ctx, csv);
    return kExitOk;
}

int cmd_gradcheck(Context& ctx) {
    std::size_t failed = 0;
    const auto results = run_selfcheck();
    for (const CheckResult& r : results) {
        ctx.out << format_check(r) << "\n";
        failed += r.passed ? 0 : 1;
    }
    ctx.out << (results.size() - failed) << "/" << results.size() << " checks passed\n";
    return failed ? kExitNumeric : kExitOk;
}

int cmd_robustness(Context& ctx) {
    const FlowDataset clean = load_dataset(ctx.cfg);
    const Checkpoint ck = load_compatible(ctx, ctx.cfg.get("checkpoint"));
    const std::string mode = ctx.cfg.get("mode");
    if (mode != "missing" && mode != "zeros") throw ConfigError("mode must be missing or zeros");
    std::vector<double> rates = ctx.cfg.reals("rates");
    if (rates.empty()) rates = mode == "missing" ? std::vector<double>{0, 0.1, 0.3, 0.5} : std::vector<double>{0, 0.1, 0.25};
    std::string csv = "mode,rate,checkpoint,mae,rmse,mape\n";
    for (double rate : rates) {
        Context run{ctx.cfg, ctx.out, ctx.err};
        run.cfg.set("missing_rate", mode == "missing" ? format_double(rate) : "0");
        run.cfg.set("zero_rate", mode == "zeros" ? format_double(rate) : "0");
        const EvalReport r = evaluate(run, ck, clean, corrupted_input(clean, run.cfg), false);
        for (const HorizonMetrics& h : r.horizons)
            csv += mode + "," + format_double(rate) + "," + std::to_string(h.index) + "," + format_double(h.metrics.mae) +
                   "," + format_double(h.metrics.rmse) + "," + format_double(h.metrics.mape) + "\n";
    }
    emit(ctx, csv);
    return kExitOk;
}

using Command = int (*)(Context&);

const std::pair<const char*, std::pair<Command, const char*>> kCommands[] = {
    {"synth", {cmd_synth, "generate a synthetic flow dataset"}},
    {"train", {cmd_train, "train a model and write a checkpoint plus loss curve"}},
    {"eval", {cmd_eval, "evaluate checkpoints on a dataset split (JSON report)"}},
    {"forecast", {cmd_forecast, "forecast l' intervals from the last l intervals"}},
    {"gradcheck", {cmd_gradcheck, "run the gradient, spline and solver self-checks"}},
    {"robustness", {cmd_robustness, "evaluate under injected missing values or zeros"}},
};

} // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Multi-view neural differential equations for traffic flow forecasting", "mnde"};
    app.require_subcommand(1, 1);
    app.set_help_flag("--help", "print this help");
    std::string config_path;
    std::map<std::string, std::string> flags;
    std::vector<std::pair<CLI::App*, std::vector<std::pair<std::string, CLI::Option*>>>> subs;
    for (const auto& [name, cmd] : kCommands) {
        CLI::App* sub = app.add_subcommand(name, cmd.second);
        sub->set_help_flag("--help", "print this help");
        sub->add_option("--config", config_path, "key = value run configuration file");
        std::vector<std::pair<std::string, CLI::Option*>> opts;
        for (const KeySpec& k : kKeys) {
            CLI::Option* o = sub->add_option(std::string("--") + k.key, flags[k.key], k.help);
            opts.emplace_back(k.key, o);
        }
        subs.emplace_back(sub, std::move(opts));
    }
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "mnde: " << e.what() << "\n";
        return kExitUsage;
    }

    try {
        for (auto& [sub, opts] : subs) {
            if (!sub->parsed()) continue;
            Context ctx{config_path.empty() ? RunConfig() : RunConfig::load(config_path), out, err};
            for (auto& [key, opt] : opts)
                if (opt->count()) ctx.cfg.set(key, flags[key]);
            for (const auto& [name, cmd] : kCommands)
                if (sub->get_name() == name) return cmd.first(ctx);
        }
    } catch (const ConfigError& e) {
        err << "mnde: configuration error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const DimensionError& e) {
        err << "mnde: configuration error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const DataError& e) {
        err << "mnde: data error: " << e.what() << "\n";
        return kExitData;
    } catch (const NumericError& e) {
        err << "mnde: numerical failure: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::exception& e) {
        err << "mnde: error: " << e.what() << "\n";
        return kExitUsage;
    }
    return kExitUsage;
}

} // namespace mnde
