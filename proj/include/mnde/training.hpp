#pragma once

#include "mnde/autodiff.hpp"
#include "mnde/data.hpp"
#include "mnde/model.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mnde {

/// Mean Huber penalty of two equally shaped tensors.
double huber_loss(const Tensor& pred, const Tensor& target, double delta);

/// z-score with population standard deviation.
struct Normalizer {
    double mean = 0.0;
    double stddev = 1.0;

    /// Fits on the finite entries; throws DataError when they are constant or absent.
    static Normalizer fit(std::span<const double> values);
    /// Fits on the training segment of a dataset.
    static Normalizer fit(const FlowDataset& ds, Segment seg);

    double apply(double x) const { return (x - mean) / stddev; }
    double invert(double z) const { return z * stddev + mean; }
    Tensor apply(const Tensor& x) const;  // NaN stays NaN
    Tensor invert(const Tensor& z) const;
    FlowDataset apply(const FlowDataset& ds) const;
};

struct AdamWConfig {
    double lr = 1e-3;
    double weight_decay = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adam with decoupled weight decay: theta <- theta - lr*wd*theta, then the
/// bias-corrected Adam update computed from the gradient alone.
class AdamW {
public:
    AdamW(const ParameterSet& params, AdamWConfig cfg);
    /// Applies one update from params' accumulated gradients. Throws NumericError
    /// naming the first parameter with a non-finite gradient (params untouched).
    void step(ParameterSet& params);
    std::size_t steps() const { return t_; }

private:
    AdamWConfig cfg_;
    std::size_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

// ---------------------------------------------------------------------------
// metrics

/// Default horizon checkpoints: end of hours 2, 4 and 8.
inline const std::vector<std::size_t> kDefaultCheckpoints{23, 47, 95};

struct Metrics {
    double mae = 0.0;
    double rmse = 0.0;
    double mape = 0.0;       // percent, over entries with non-zero truth; NaN if none
    std::size_t count = 0;   // entries with finite truth
    std::size_t mape_count = 0;
};

/// Metrics over matching entries; NaN truths are skipped.
Metrics compute_metrics(std::span<const double> pred, std::span<const double> truth);

struct HorizonMetrics {
    std::size_t index = 0;
    Metrics metrics;
};

/// Per checkpoint column j of (rows x l') predictions: metrics of column j, or with
/// `hour_averaged` of the 12 columns ending at j. Throws DataError when every
/// truth value considered at a checkpoint is zero.
std::vector<HorizonMetrics> horizon_metrics(const Tensor& pred, const Tensor& truth,
                                            std::span<const std::size_t> checkpoints, bool hour_averaged = false);

struct RangeMetrics {
    double lo = 0.0;
    double hi = 0.0; // +inf for the open last bin
    Metrics metrics;
};

/// Bins entries by ground truth: [e0, e1), ..., [e_last, inf). Empty bins are omitted.
std::vector<RangeMetrics> range_breakdown(const Tensor& pred, const Tensor& truth, std::span<const double> edges);

inline const std::vector<double> kDefaultRangeEdges{0, 100, 200, 300, 400, 500, 600};

struct EvalReport {
    std::string variant;
    std::size_t windows = 0;
    bool hour_averaged = false;
    std::vector<HorizonMetrics> horizons;
    std::vector<RangeMetrics> ranges;
};

std::string report_json(const EvalReport& report);

// ---------------------------------------------------------------------------
// training

struct TrainConfig {
    std::size_t epochs = 100;
    std::size_t batch_size = 64;
    double delta = 1.0;
    AdamWConfig optimizer;
    std::uint64_t seed = 0;
    std::size_t patience = 20; // 0 disables early stopping
    std::size_t threads = 1;
    std::size_t chunk = 8; // windows per tape
};

/// Normalized input and clean target series over the same intervals.
struct WindowSource {
    const FlowDataset* input = nullptr;
    const FlowDataset* target = nullptr;
    std::vector<std::size_t> origins;
};

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
};

struct TrainResult {
    ParameterSet best;  // lowest validation loss (initial parameters when epochs = 0)
    ParameterSet last;
    std::vector<EpochRecord> curve;
    std::size_t best_epoch = 0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

TrainResult train(const ModelConfig& cfg, Variant variant, const ParameterSet& init, const WindowSource& train_set,
                  const WindowSource& val_set, const TrainConfig& tc, const EpochCallback& on_epoch = {});

/// Stacked forecasts ((windows*n) x l') in normalized units, one inference tape per chunk.
Tensor predict(const ModelConfig& cfg, Variant variant, const ParameterSet& params, const WindowSource& src,
               std::size_t threads = 1, std::size_t chunk = 8);

/// Stacked targets matching predict().
Tensor stacked_targets(const ModelConfig& cfg, const WindowSource& src);

double evaluate_loss(const ModelConfig& cfg, Variant variant, const ParameterSet& params, const WindowSource& src,
                     double delta, std::size_t threads = 1);

std::string format_loss_curve(const std::vector<EpochRecord>& curve);

/// MNDE_THREADS if set to a positive integer, otherwise 1.
std::size_t env_threads();

} // namespace mnde
