#include "mnde/training.hpp"

#include "mnde/errors.hpp"
#include "mnde/io.hpp"
#include "mnde/ops.hpp"
#include "mnde/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <exception>
#include <limits>
#include <memory>
#include <thread>

namespace mnde {

double huber_loss(const Tensor& pred, const Tensor& target, double delta) {
    if (pred.shape() != target.shape())
        throw DimensionError("huber_loss shapes differ: " + shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
    if (!(delta > 0.0)) throw DimensionError("huber delta must be positive");
    if (pred.size() == 0) throw DimensionError("huber_loss of empty tensors");
    double total = 0.0;
    for (std::size_t k = 0; k < pred.size(); ++k) {
        const double e = std::abs(pred[k] - target[k]);
        total += e <= delta ? 0.5 * e * e : delta * e - 0.5 * delta * delta;
    }
    return total / static_cast<double>(pred.size());
}

// ---------------------------------------------------------------------------
// normalizer

Normalizer Normalizer::fit(std::span<const double> values) {
    double sum = 0.0;
    std::size_t count = 0;
    for (double v : values)
        if (std::isfinite(v)) {
            sum += v;
            ++count;
        }
    if (count == 0) throw DataError("cannot fit normalizer: no observed training values");
    const double mean = sum / static_cast<double>(count);
    double ss = 0.0;
    for (double v : values)
        if (std::isfinite(v)) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / static_cast<double>(count));
    if (!(sd > 0.0)) throw DataError("cannot fit normalizer: training values are constant");
    return Normalizer{mean, sd};
}

Normalizer Normalizer::fit(const FlowDataset& ds, Segment seg) {
    std::vector<double> vals;
    vals.reserve(ds.n() * seg.size());
    for (std::size_t i = 0; i < ds.n(); ++i)
        for (std::size_t t = seg.begin; t < seg.end; ++t) vals.push_back(ds.values.at(i, t));
    return fit(vals);
}

Tensor Normalizer::apply(const Tensor& x) const {
    Tensor out = x;
    for (double& v : out.data()) v = apply(v);
    return out;
}

Tensor Normalizer::invert(const Tensor& z) const {
    Tensor out = z;
    for (double& v : out.data()) v = invert(v);
    return out;
}

FlowDataset Normalizer::apply(const FlowDataset& ds) const { return FlowDataset{apply(ds.values), ds.interval_minutes}; }

// ---------------------------------------------------------------------------
// optimizer

AdamW::AdamW(const ParameterSet& params, AdamWConfig cfg) : cfg_(cfg) {
    for (const Parameter& p : params) {
        m_.emplace_back(p.value.size(), 0.0);
        v_.emplace_back(p.value.size(), 0.0);
    }
}

void AdamW::step(ParameterSet& params) {
    if (params.size() != m_.size()) throw DimensionError("optimizer state does not match parameter set");
    for (const Parameter& p : params)
        if (!p.grad.all_finite()) throw NumericError("non-finite gradient for parameter " + p.name);
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const double decay = 1.0 - cfg_.lr * cfg_.weight_decay;
    std::size_t k = 0;
    for (Parameter& p : params) {
        auto& m = m_[k];
        auto& v = v_[k];
        ++k;
        if (m.size() != p.value.size()) throw DimensionError("optimizer state shape mismatch for " + p.name);
        for (std::size_t i = 0; i < m.size(); ++i) {
            const double g = p.grad[i];
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
            const double mhat = m[i] / c1, vhat = v[i] / c2;
            p.value[i] = p.value[i] * decay - cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

// ---------------------------------------------------------------------------
// metrics

Metrics compute_metrics(std::span<const double> pred, std::span<const double> truth) {
    if (pred.size() != truth.size()) throw DimensionError("metric inputs differ in length");
    Metrics m;
    double abs_sum = 0.0, sq_sum = 0.0, pct_sum = 0.0;
    for (std::size_t k = 0; k < pred.size(); ++k) {
        const double y = truth[k];
        if (std::isnan(y)) continue;
        const double e = pred[k] - y;
        abs_sum += std::abs(e);
        sq_sum += e * e;
        ++m.count;
        if (y != 0.0) {
            pct_sum += std::abs(e / y);
            ++m.mape_count;
        }
    }
    const double nan = std::numeric_limits<double>::quiet_NaN();
    m.mae = m.count ? abs_sum / static_cast<double>(m.count) : nan;
    m.rmse = m.count ? std::sqrt(sq_sum / static_cast<double>(m.count)) : nan;
    m.mape = m.mape_count ? 100.0 * pct_sum / static_cast<double>(m.mape_count) : nan;
    return m;
}

std::vector<HorizonMetrics> horizon_metrics(const Tensor& pred, const Tensor& truth,
                                            std::span<const std::size_t> checkpoints, bool hour_averaged) {
    if (pred.shape() != truth.shape() || pred.rank() != 2)
        throw DimensionError("metrics need equally shaped rank-2 inputs, got " + shape_str(pred.shape()) + " and " +
                             shape_str(truth.shape()));
    const std::size_t rows = pred.dim(0), cols = pred.dim(1);
    std::vector<HorizonMetrics> out;
    for (std::size_t j : checkpoints) {
        if (j >= cols) throw DimensionError("checkpoint " + std::to_string(j) + " beyond horizon " + std::to_string(cols));
        const std::size_t first = hour_averaged ? (j >= 11 ? j - 11 : 0) : j;
        std::vector<double> p, y;
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t c = first; c <= j; ++c) {
                p.push_back(pred.at(i, c));
                y.push_back(truth.at(i, c));
            }
        Metrics m = compute_metrics(p, y);
        if (m.count == 0) throw DataError("no observed ground truth at checkpoint " + std::to_string(j));
        if (m.mape_count == 0)
            throw DataError("ground truth is all zero at checkpoint " + std::to_string(j) + "; MAPE is undefined");
        out.push_back({j, m});
    }
    return out;
}

std::vector<RangeMetrics> range_breakdown(const Tensor& pred, const Tensor& truth, std::span<const double> edges) {
    if (pred.shape() != truth.shape()) throw DimensionError("range breakdown inputs differ in shape");
    if (edges.empty()) throw ConfigError("range breakdown needs at least one edge");
    for (std::size_t k = 1; k < edges.size(); ++k)
        if (!(edges[k] > edges[k - 1])) throw ConfigError("range edges must be strictly ascending");
    std::vector<std::vector<double>> bp(edges.size()), by(edges.size());
    for (std::size_t k = 0; k < truth.size(); ++k) {
        const double y = truth[k];
        if (std::isnan(y) || y < edges.front()) continue;
        const std::size_t bin = static_cast<std::size_t>(std::upper_bound(edges.begin(), edges.end(), y) - edges.begin()) - 1;
        bp[bin].push_back(pred[k]);
        by[bin].push_back(y);
    }
    std::vector<RangeMetrics> out;
    for (std::size_t b = 0; b < edges.size(); ++b) {
        if (by[b].empty()) continue;
        const double hi = b + 1 < edges.size() ? edges[b + 1] : std::numeric_limits<double>::infinity();
        out.push_back({edges[b], hi, compute_metrics(bp[b], by[b])});
    }
    return out;
}

namespace {

nlohmann::ordered_json number_or_null(double v) {
    if (std::isfinite(v)) return v;
    return nullptr;
}

nlohmann::ordered_json metrics_json(const Metrics& m) {
    nlohmann::ordered_json j;
    j["mae"] = number_or_null(m.mae);
    j["rmse"] = number_or_null(m.rmse);
    j["mape"] = number_or_null(m.mape);
    j["count"] = m.count;
    j["mape_count"] = m.mape_count;
    return j;
}

} // namespace

std::string report_json(const EvalReport& r) {
    nlohmann::ordered_json j;
    j["variant"] = r.variant;
    j["windows"] = r.windows;
    j["mode"] = r.hour_averaged ? "hour-averaged" : "single-interval";
    j["mape_excludes_zero_truth"] = true;
    nlohmann::ordered_json hz = nlohmann::ordered_json::object();
    for (const HorizonMetrics& h : r.horizons) {
        nlohmann::ordered_json block = metrics_json(h.metrics);
        block["minutes_ahead"] = (h.index + 1) * 5;
        hz[std::to_string(h.index)] = block;
    }
    j["checkpoints"] = hz;
    if (!r.ranges.empty()) {
        nlohmann::ordered_json arr = nlohmann::ordered_json::array();
        for (const RangeMetrics& b : r.ranges) {
            nlohmann::ordered_json block;
            block["range"] = std::isfinite(b.hi) ? format_double(b.lo) + "-" + format_double(b.hi) : ">" + format_double(b.lo);
            block["lo"] = b.lo;
            block["hi"] = number_or_null(b.hi);
            const nlohmann::ordered_json mj = metrics_json(b.metrics);
            for (auto it = mj.begin(); it != mj.end(); ++it) block[it.key()] = it.value();
            arr.push_back(block);
        }
        j["ranges"] = arr;
    }
    return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// batching helpers

namespace {

struct ChunkData {
    std::vector<Tensor> inputs;
    Tensor targets; // (B*n) x l_out
};

ChunkData gather_chunk(const ModelConfig& cfg, const WindowSource& src, std::span<const std::size_t> origins) {
    ChunkData c;
    const std::size_t n = cfg.n, l = cfg.l, lo = cfg.l_out;
    c.targets = Tensor({origins.size() * n, lo});
    for (std::size_t b = 0; b < origins.size(); ++b) {
        const std::size_t o = origins[b];
        if (o + l + lo > src.input->intervals()) throw DataError("window origin " + std::to_string(o) + " out of range");
        Tensor in({n, l});
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < l; ++j) in.at(i, j) = src.input->values.at(i, o + j);
            for (std::size_t j = 0; j < lo; ++j) c.targets.at(b * n + i, j) = src.target->values.at(i, o + l + j);
        }
        c.inputs.push_back(std::move(in));
    }
    return c;
}

void check_source(const ModelConfig& cfg, const WindowSource& src) {
    if (!src.input || !src.target) throw DataError("window source has no data");
    if (src.input->n() != cfg.n || src.target->n() != cfg.n)
        throw DataError("dataset has " + std::to_string(src.input->n()) + " locations, model expects " + std::to_string(cfg.n));
    if (src.input->intervals() != src.target->intervals()) throw DataError("input and target series differ in length");
}

// Runs jobs 0..count-1 on up to `threads` workers; rethrows the first failure in job order.
void run_jobs(std::size_t count, std::size_t threads, const std::function<void(std::size_t)>& job) {
    if (threads <= 1 || count <= 1) {
        for (std::size_t k = 0; k < count; ++k) job(k);
        return;
    }
    std::vector<std::exception_ptr> errors(count);
    for (std::size_t start = 0; start < count; start += threads) {
        const std::size_t end = std::min(count, start + threads);
        std::vector<std::thread> pool;
        for (std::size_t k = start; k < end; ++k)
            pool.emplace_back([&, k] {
                try {
                    job(k);
                } catch (...) {
                    errors[k] = std::current_exception();
                }
            });
        for (auto& t : pool) t.join();
        for (std::size_t k = start; k < end; ++k)
            if (errors[k]) std::rethrow_exception(errors[k]);
    }
}

bool has_nan(const Tensor& t) {
    return std::any_of(t.data().begin(), t.data().end(), [](double v) { return std::isnan(v); });
}

} // namespace

Tensor predict(const ModelConfig& cfg, Variant variant, const ParameterSet& params, const WindowSource& src,
               std::size_t threads, std::size_t chunk) {
    check_source(cfg, src);
    const std::size_t total = src.origins.size(), n = cfg.n;
    Tensor out({total * n, cfg.l_out});
    if (total == 0) return out;
    chunk = std::max<std::size_t>(chunk, 1);
    const std::size_t chunks = (total + chunk - 1) / chunk;
    run_jobs(chunks, threads, [&](std::size_t k) {
        const std::size_t b0 = k * chunk, b1 = std::min(total, b0 + chunk);
        const ChunkData data = gather_chunk(cfg, src, std::span(src.origins).subspan(b0, b1 - b0));
        const PreparedBatch in = prepare_batch(data.inputs, cfg);
        Tape tape(Tape::Mode::inference);
        Binder bind(tape, params);
        Var y = variant_forward(bind, in, cfg, variant);
        std::copy(y.value().data().begin(), y.value().data().end(), out.data().begin() + b0 * n * cfg.l_out);
    });
    return out;
}

Tensor stacked_targets(const ModelConfig& cfg, const WindowSource& src) {
    check_source(cfg, src);
    return gather_chunk(cfg, src, src.origins).targets;
}

double evaluate_loss(const ModelConfig& cfg, Variant variant, const ParameterSet& params, const WindowSource& src,
                     double delta, std::size_t threads) {
    const Tensor pred = predict(cfg, variant, params, src, threads);
    const Tensor target = stacked_targets(cfg, src);
    std::vector<double> p, y;
    for (std::size_t k = 0; k < target.size(); ++k)
        if (!std::isnan(target[k])) {
            p.push_back(pred[k]);
            y.push_back(target[k]);
        }
    if (y.empty()) throw DataError("no observed targets to evaluate");
    return huber_loss(Tensor({p.size()}, p), Tensor({y.size()}, y), delta);
}

TrainResult train(const ModelConfig& cfg, Variant variant, const ParameterSet& init, const WindowSource& train_set,
                  const WindowSource& val_set, const TrainConfig& tc, const EpochCallback& on_epoch) {
    cfg.validate();
    check_source(cfg, train_set);
    if (!val_set.origins.empty()) check_source(cfg, val_set);
    if (tc.batch_size == 0) throw ConfigError("batch_size must be positive");
    if (!(tc.delta > 0.0)) throw ConfigError("delta must be positive");
    if (train_set.origins.empty() && tc.epochs > 0) throw DataError("no training windows");

    TrainResult result{init, init, {}, 0};
    ParameterSet& params = result.last;
    AdamW opt(params, tc.optimizer);
    Rng shuffler(tc.seed, "shuffle");
    std::vector<std::size_t> order = train_set.origins;
    const std::size_t chunk = std::max<std::size_t>(tc.chunk, 1);
    double best_val = std::numeric_limits<double>::infinity();
    std::size_t since_best = 0;

    for (std::size_t epoch = 1; epoch <= tc.epochs; ++epoch) {
        shuffler.shuffle(order);
        double epoch_loss = 0.0;
        std::size_t batch_index = 0;
        for (std::size_t b0 = 0; b0 < order.size(); b0 += tc.batch_size, ++batch_index) {
            const std::size_t b1 = std::min(order.size(), b0 + tc.batch_size);
            const std::size_t windows = b1 - b0;
            const std::size_t chunks = (windows + chunk - 1) / chunk;
            params.zero_grad();
            double batch_loss = 0.0;
            // one wave of chunks at a time; gradients are summed in chunk order
            const std::size_t width = std::max<std::size_t>(tc.threads, 1);
            for (std::size_t w0 = 0; w0 < chunks; w0 += width) {
                const std::size_t w1 = std::min(chunks, w0 + width);
                std::vector<std::unique_ptr<Tape>> tapes(w1 - w0);
                std::vector<double> losses(w1 - w0, 0.0);
                try {
                    run_jobs(w1 - w0, tc.threads, [&](std::size_t k) {
                        const std::size_t c0 = b0 + (w0 + k) * chunk, c1 = std::min(b1, c0 + chunk);
                        const ChunkData data = gather_chunk(cfg, train_set, std::span(order).subspan(c0, c1 - c0));
                        const PreparedBatch in = prepare_batch(data.inputs, cfg);
                        auto tape = std::make_unique<Tape>();
                        Binder bind(*tape, params);
                        Var pred = variant_forward(bind, in, cfg, variant);
                        Tensor target = data.targets;
                        if (has_nan(target)) {
                            // missing targets contribute zero error
                            Tensor mask(target.shape(), 1.0);
                            for (std::size_t q = 0; q < target.size(); ++q)
                                if (std::isnan(target[q])) {
                                    mask[q] = 0.0;
                                    target[q] = 0.0;
                                }
                            pred = mul(pred, tape->constant(mask));
                        }
                        const double weight = static_cast<double>(c1 - c0) / static_cast<double>(windows);
                        Var loss = scale(huber(pred, tape->constant(std::move(target)), tc.delta), weight);
                        tape->backward(loss);
                        losses[k] = loss.value().item();
                        tapes[k] = std::move(tape);
                    });
                } catch (const NumericError& e) {
                    throw NumericError("epoch " + std::to_string(epoch) + " batch " + std::to_string(batch_index) + ": " +
                                       e.what());
                }
                for (std::size_t k = 0; k < tapes.size(); ++k) {
                    tapes[k]->accumulate_into(params);
                    tapes[k].reset();
                    batch_loss += losses[k];
                }
            }
            if (!std::isfinite(batch_loss))
                throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + " batch " +
                                   std::to_string(batch_index));
            try {
                opt.step(params);
            } catch (const NumericError& e) {
                throw NumericError("epoch " + std::to_string(epoch) + " batch " + std::to_string(batch_index) + ": " +
                                   e.what());
            }
            epoch_loss += batch_loss * static_cast<double>(windows);
        }
        EpochRecord rec{epoch, epoch_loss / static_cast<double>(order.size()), 0.0};
        rec.val_loss = val_set.origins.empty() ? rec.train_loss
                                               : evaluate_loss(cfg, variant, params, val_set, tc.delta, tc.threads);
        result.curve.push_back(rec);
        if (on_epoch) on_epoch(rec);
        if (rec.val_loss < best_val) {
            best_val = rec.val_loss;
            result.best = params;
            result.best_epoch = epoch;
            since_best = 0;
        } else if (tc.patience > 0 && ++since_best >= tc.patience) {
            break;
        }
    }
    for (Parameter& p : result.best) std::fill(p.grad.data().begin(), p.grad.data().end(), 0.0);
    for (Parameter& p : result.last) std::fill(p.grad.data().begin(), p.grad.data().end(), 0.0);
    return result;
}

std::string format_loss_curve(const std::vector<EpochRecord>& curve) {
    std::string out = "epoch,train_loss,val_loss\n";
    for (const EpochRecord& r : curve)
        out += std::to_string(r.epoch) + "," + format_double(r.train_loss) + "," + format_double(r.val_loss) + "\n";
    return out;
}

std::size_t env_threads() {
    const char* v = std::getenv("MNDE_THREADS");
    if (!v || !*v) return 1;
    std::size_t n = 0;
    const auto res = std::from_chars(v, v + std::strlen(v), n);
    if (res.ec != std::errc{} || *res.ptr != '\0' || n == 0) return 1;
    return n;
}

} // namespace mnde
