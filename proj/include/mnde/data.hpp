#pragma once

#include "mnde/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace mnde {

/// n x T flow matrix (one column per 5-minute interval); NaN marks a missing value.
struct FlowDataset {
    Tensor values;
    std::size_t interval_minutes = 5;

    std::size_t n() const { return values.dim(0); }
    std::size_t intervals() const { return values.dim(1); }
};

/// CSV with "# n=<count>" and "# interval_minutes=<m>" header lines, then one
/// row per interval with n comma-separated values ("NaN" for missing).
FlowDataset load_flow_csv(const std::filesystem::path& file);
FlowDataset parse_flow_csv(const std::string& text, const std::string& source = "<memory>");
std::string format_flow_csv(const FlowDataset& ds);
void write_flow_csv(const std::filesystem::path& file, const FlowDataset& ds);

enum class Split { train, val, test };

struct Segment {
    std::size_t begin = 0;
    std::size_t end = 0; // exclusive
    std::size_t size() const { return end - begin; }
};

/// Chronological 3:1:1 split: train = floor(3T/5), val = floor(T/5), test = rest.
Segment split_segment(std::size_t intervals, Split split);

/// Origins of all stride-1 windows (l inputs followed by l_out targets) inside the segment.
std::vector<std::size_t> window_origins(Segment seg, std::size_t l, std::size_t l_out);

struct Window {
    Tensor input;  // n x l
    Tensor target; // n x l_out
    std::size_t origin = 0;
};

Window make_window(const FlowDataset& ds, std::size_t origin, std::size_t l, std::size_t l_out);
std::vector<Window> make_windows(const FlowDataset& ds, std::size_t l, std::size_t l_out, Split split);

/// Each entry independently replaced by NaN (missing) or 0.0 (zeros) with probability `rate`.
FlowDataset inject_missing(const FlowDataset& ds, double rate, std::uint64_t seed);
FlowDataset inject_zeros(const FlowDataset& ds, double rate, std::uint64_t seed);

struct SynthOptions {
    std::size_t n = 10;
    std::size_t days = 3;
    std::uint64_t seed = 0;
    std::string scenario = "delay"; // none | delay | abrupt | delay+abrupt
    double noise = 5.0;             // Gaussian noise std in flow units
    std::size_t tau = 4;            // per-hop delay in intervals
    double pulse_amplitude = 80.0;
    double pulse_rate = 1.0 / 48.0; // pulse starts per interval at location 0
    double decay = 0.9;             // amplitude factor per hop
    double abrupt_rate = 1.0;       // drop events per location per day
};

constexpr std::size_t kIntervalsPerDay = 288;

/// Chain of n locations with a daily double-peak profile plus planted structure.
FlowDataset synth_generate(const SynthOptions& opt);

struct DatasetSummary {
    std::size_t n = 0;
    std::size_t intervals = 0;
    double missing_fraction = 0.0;
    double min = 0.0;
    double max = 0.0;
    double mean = 0.0;
};

DatasetSummary summarize(const FlowDataset& ds);
/// "n=… intervals=… missing_fraction=… min=… max=… mean=…"
std::string format_summary(const DatasetSummary& s);

} // namespace mnde
