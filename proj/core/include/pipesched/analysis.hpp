#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pipesched/rational.hpp"
#include "pipesched/schedule.hpp"
#include "pipesched/simulator.hpp"
#include "pipesched/types.hpp"

namespace pipesched {

// Closed forms assume canonical costs (tb = 2 tf) and v = 2 where chunks apply.
// Throws Error(UnsupportedCombination) for approaches without a closed form
// (the V-shaped single pipeline) or for (D, N) outside the builder's domain.
Rational analytic_bubble_ratio(ApproachId approach, int d, int n);

struct AnalyticMemory {
    Rational weights;          // multiples of Mθ
    Rational activations_low;  // multiples of Ma
    Rational activations_high;
};

AnalyticMemory analytic_memory(ApproachId approach, int d, int n);

// Symbolic renderings of the closed forms above, in D, N, Mθ, Ma.
struct ClosedForm {
    std::string bubble_ratio;
    std::string weights;
    std::string activations;
    std::string comm;  // empty when no communication formula exists
};
ClosedForm closed_form(ApproachId approach);

// Peak activation comparators for scaling past N = D, in multiples of Ma.
Rational early_forward_peak(int d);        // (3D-3)/2
Rational mixpipe_peak(int d);              // (3D-2)/2
Rational chimera_forward_doubling_peak(int d);  // 2D

// Number of sequential P2P messages on the critical path.
std::int64_t analytic_p2p_count(ApproachId approach, int d, int n);
double analytic_comm_time(ApproachId approach, int d, int n, const ModelProfile& profile, const ClusterSpec& cluster,
                          double grad_volume);

struct AnalyticRow {
    ApproachId approach;
    Rational bubble_ratio;
    AnalyticMemory memory;
    std::optional<double> comm_time;
};

struct SimulatedRow {
    Rational makespan;
    Rational bubble_ratio;
    Rational peak_activations_low;   // min over devices
    Rational peak_activations_high;  // max over devices
    Rational peak_weights;
    CommTotals comm;
};

struct ComparisonEntry {
    ApproachId approach;
    int D = 0;
    int N = 0;
    int W = 1;
    std::int64_t B = 1;
    std::optional<AnalyticRow> analytic;  // empty when no closed form exists
    SimulatedRow simulated;
    double samples_per_sec = 0;
};

struct ComparisonReport {
    std::vector<ComparisonEntry> rows;
};

// Builds and simulates every approach in canonical zero-communication mode.
ComparisonReport compare_canonical(const std::vector<ApproachId>& approaches, int d, int n, int v = 2);

struct RowVerdict {
    ApproachId approach;
    bool pass = false;
    Rational bubble_delta;  // simulated - analytic
    std::string detail;
};

struct Validation {
    bool pass = true;
    std::vector<RowVerdict> rows;
};

// Pass iff every simulated bubble ratio equals its closed form exactly and
// every device's peak activation lies inside the analytic range.
Validation validate_against_analytic(const ComparisonReport& report);

std::string report_csv(const ComparisonReport& report);
std::string report_table(const ComparisonReport& report);

// Grid search over (W, D, B) at a fixed mini-batch B_hat and device count P.
struct SearchSpace {
    std::vector<int> W;
    std::vector<int> D;
    std::vector<std::int64_t> B;
};

// Whole-model costs from which per-configuration stage costs are derived.
struct WorkloadModel {
    double forward_seconds_per_sample = 0;  // one sample through the whole model
    double backward_factor = 2.0;
    double model_weight_bytes = 0;          // gradients have the same volume
    double activation_bytes_per_sample = 0;
};

struct SearchOptions {
    bool eager_sync = true;
    MappingPolicy mapping = MappingPolicy::ReplicasColocated;
    int v = 2;
    int threads = 0;  // 0 = hardware concurrency
};

struct SearchRow {
    ApproachId approach;
    int W = 0;
    int D = 0;
    std::int64_t B = 0;
    int N = 0;
    bool feasible = false;
    std::string skipped;  // reason when not feasible
    ComparisonEntry entry;
};

struct SearchResult {
    std::vector<SearchRow> rows;  // in (approach, W, D, B) order
    std::vector<SearchRow> best;  // one per approach with a feasible row
};

SearchResult grid_search(const ModelProfile& profile, const ClusterSpec& cluster, const WorkloadModel& workload,
                         const SearchSpace& space, const std::vector<ApproachId>& approaches,
                         const SearchOptions& options = {});

std::string search_csv(const SearchResult& result);

}  // namespace pipesched
