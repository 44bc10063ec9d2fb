#pragma once

// The multi-view NDE forecaster. Forward passes work on B windows stacked along
// the row axis: node states are (B*n) x c with row b*n + i, edge states are
// (B*n*n) x c' with row b*n*n + i*n + j (i source, j target).

#include "mnde/autodiff.hpp"
#include "mnde/spline.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace mnde {

struct ModelConfig {
    std::size_t n = 0;
    std::size_t l = 12;
    std::size_t l_out = 96;
    std::size_t c = 64;
    std::size_t c_edge = 32;
    std::size_t d = 2;
    std::size_t heads = 4;
    std::size_t loops = 3;
    double r = 1.0 / 3.0;      // embedding sample spacing
    double r_diff = 1.0 / 3.0; // derivative sample spacing
    double step = 1.0 / 3.0;   // RK4 step

    /// Throws ConfigError on any violated constraint.
    void validate() const;
    std::size_t dense_len() const; // l / r
    std::size_t diff_len() const;  // l / r_diff
    /// Integration span of the current module; the control path lives on [0, l-1].
    double current_span() const { return static_cast<double>(l - 1); }
    double delayed_span() const { return static_cast<double>(d); }
};

enum class Variant { CNDE1_ST, CNDE3_ST, CNDE3_STE, CNDE3_STE_DNDE, MNDE };

Variant parse_variant(std::string_view name);
std::string variant_name(Variant v);

struct VariantPlan {
    std::size_t loops = 1;
    bool edges = false;
    bool delayed = false;
    bool differentiation = false;
    std::size_t views() const { return 1 + (edges ? 1 : 0) + (delayed ? (edges ? 2 : 1) : 0) + (differentiation ? 1 : 0); }
};

VariantPlan plan_for(Variant v, const ModelConfig& cfg);

/// Full parameter set (every variant uses a subset). Weights are Glorot-uniform
/// (output layers of T, S and E at 0.1 of the range), biases zero, adjacency
/// matrices I + U(-0.01, 0.01).
ParameterSet init_params(const ModelConfig& cfg, std::uint64_t seed);

/// Binds parameters onto a tape on first use.
class Binder {
public:
    Binder(Tape& tape, const ParameterSet& params) : tape_(tape), params_(params) {}
    Var operator()(const std::string& name);
    /// Binds `name` to an existing tape value instead of the stored parameter.
    void set(const std::string& name, const Var& v) { bound_.insert_or_assign(name, v); }
    Tape& tape() { return tape_; }

private:
    Tape& tape_;
    const ParameterSet& params_;
    std::unordered_map<std::string, Var> bound_;
};

struct Batch {
    std::size_t windows = 1;
    std::size_t n = 0;
    std::size_t rows() const { return windows * n; }
};

struct Embeddings {
    Var temporal; // (B*n) x c
    Var spatio;   // (B*n) x c
    Var edge;     // (B*n*n) x c'
};

/// Three FC embeddings of the dense samples ((B*n) x l/r). The edge embedding of
/// pair (i, j) is an FC on the concatenated sample rows of i and j.
Embeddings embed_initial(Binder& bind, const std::string& module, const Tensor& samples, Batch batch);

/// FC-tanh-FC-tanh-FC plus identity skip.
Var temporal_fn(Binder& bind, const std::string& prefix, const Var& h);
/// F1(relu(A_S H W_S + b_S)) + F2(H).
Var spatial_fn(Binder& bind, const std::string& prefix, const Var& h, Batch batch);
/// As spatial_fn with A_E contracting the source-node axis of the pair tensor.
Var edge_fn(Binder& bind, const std::string& prefix, const Var& he, Batch batch);

struct NdeOptions {
    std::size_t loops = 1;
    bool edges = true;
    bool temporal = false; // H_T does not reach the output; only integrated on request
};

struct NdeOutputs {
    Var temporal; // invalid unless requested
    Var spatio;
    Var edge; // invalid unless edges are enabled
};

/// Per loop: H_T under T(H)X', H_ST under tanh(S(H)*T(H))X', H_E under E(H).
NdeOutputs nde_forward(Binder& bind, const std::string& module, const ControlPath& path, const Tensor& samples,
                       double span, const ModelConfig& cfg, const NdeOptions& opt, Batch batch);
NdeOutputs cnde_forward(Binder& bind, const ControlPath& path, const Tensor& samples, const ModelConfig& cfg,
                        const NdeOptions& opt, Batch batch);
NdeOutputs dnde_forward(Binder& bind, const ControlPath& path, const Tensor& samples, const ModelConfig& cfg,
                        const NdeOptions& opt, Batch batch);

/// Multi-head self-attention over locations on derivative samples ((B*n) x l/r_diff).
Var differentiation_forward(Binder& bind, const Tensor& derivatives, const ModelConfig& cfg, Batch batch);

/// Two-layer MLP to (B*n) x l'.
Var transform_node(Binder& bind, const std::string& head, const Var& h);
/// Mean over source locations, then a two-layer MLP.
Var transform_edge(Binder& bind, const std::string& head, const Var& he, Batch batch);

/// Softmax-gated combination of K >= 1 equally shaped views (softmax along the
/// time axis). With K = 1 the single view is returned unchanged.
Var aggregate(std::span<const Var> views);

/// Spline fit and dense sampling of a stack of raw windows (each n x l, NaN = missing).
/// Locations with fewer than 2 observations are filled with their only value, or 0.
struct PreparedBatch {
    Batch batch;
    ControlPath path;
    Tensor samples;     // (B*n) x l/r
    Tensor derivatives; // (B*n) x l/r_diff
};

PreparedBatch prepare_batch(std::span<const Tensor> windows, const ModelConfig& cfg);

/// Forecast (B*n) x l' on the tape.
Var variant_forward(Binder& bind, const PreparedBatch& input, const ModelConfig& cfg, Variant variant);

Tensor variant_forward(const Tensor& window, const ParameterSet& params, const ModelConfig& cfg, Variant variant);
Tensor mnde_forward(const Tensor& window, const ParameterSet& params, const ModelConfig& cfg);

struct Checkpoint {
    ModelConfig config;
    Variant variant = Variant::MNDE;
    double mean = 0.0;
    double stddev = 1.0;
    ParameterSet params;
};

/// Text archive tagged "mnde-v1"; written to a temporary file and renamed into place.
void save_checkpoint(const std::filesystem::path& file, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& file);

} // namespace mnde
