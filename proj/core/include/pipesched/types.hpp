#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "pipesched/rational.hpp"

namespace pipesched {

struct ClusterSpec {
    int devices_per_pipeline = 1;   // D
    int replicated_pipelines = 1;   // W
    int total_devices = 1;          // P, must equal W * D
    int devices_per_node = 1;
    double intra_node_bandwidth = 1.0;  // bytes / s
    double inter_node_bandwidth = 1.0;  // bytes / s
    double p2p_latency = 0.0;           // s

    static ClusterSpec single(int d) {
        ClusterSpec c;
        c.devices_per_pipeline = d;
        c.total_devices = d;
        c.devices_per_node = d;
        return c;
    }
};

struct ModelProfile {
    std::int64_t micro_batch_size = 1;  // B
    std::int64_t micro_batches = 1;     // N
    std::int64_t mini_batch_size = 1;   // B_hat = B * N * W
    std::int64_t sequence_length = 1;   // S
    std::int64_t hidden_size = 1;       // H
    std::int64_t bytes_per_element = 2;
};

// Times are exact rationals. In canonical mode tf = 1 and tb = 2, so every
// schedule figure compares without rounding. Memory values are bytes.
struct CostModel {
    Rational tf{1};
    Rational tb{2};
    double weights_mem = 1.0;      // per full device stage
    double activations_mem = 1.0;  // per micro-batch through a full device stage
    std::optional<double> gradient_volume;  // per stage-replica group, defaults to weights_mem
    Rational local_copy_cost{0};

    double grad_volume() const { return gradient_volume.value_or(weights_mem); }
    bool canonical() const { return tb == tf * Rational(2); }

    static CostModel canonical_units() { return CostModel{}; }
};

enum class ApproachId {
    GPipe,
    Dapple1F1B,
    InterleavedLooping,
    VShapedInterleaved,
    Chimera,
    BitPipe,
    BitPipeEarlyForward,
};

inline constexpr std::array<ApproachId, 7> kAllApproaches = {
    ApproachId::GPipe,   ApproachId::Dapple1F1B, ApproachId::InterleavedLooping,
    ApproachId::VShapedInterleaved, ApproachId::Chimera, ApproachId::BitPipe,
    ApproachId::BitPipeEarlyForward,
};

std::string_view approach_name(ApproachId id);
// Accepts canonical names and a few lowercase aliases ("1f1b", "bitpipe-ef", ...).
std::optional<ApproachId> parse_approach(std::string_view name);
bool is_bidirectional(ApproachId id);

std::int64_t message_size(const ModelProfile& profile);

const ClusterSpec& validate_cluster(const ClusterSpec& cluster);
const ModelProfile& validate_profile(const ModelProfile& profile, int replicated_pipelines);
const CostModel& validate_costs(const CostModel& costs);

}  // namespace pipesched
