#include "pipesched/types.hpp"

#include <algorithm>
#include <cctype>
#include <string>

#include "pipesched/error.hpp"

namespace pipesched {

std::string_view to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::InvalidTopology: return "InvalidTopology";
        case ErrorKind::NonPositiveBandwidth: return "NonPositiveBandwidth";
        case ErrorKind::InvalidProfile: return "InvalidProfile";
        case ErrorKind::InvalidCost: return "InvalidCost";
        case ErrorKind::ConfigParse: return "ConfigParse";
        case ErrorKind::UnknownApproach: return "UnknownApproach";
        case ErrorKind::InsufficientMicroBatches: return "InsufficientMicroBatches";
        case ErrorKind::InvalidChunking: return "InvalidChunking";
        case ErrorKind::OddChunkCount: return "OddChunkCount";
        case ErrorKind::OddDeviceCount: return "OddDeviceCount";
        case ErrorKind::MergeConflict: return "MergeConflict";
        case ErrorKind::InvalidSchedule: return "InvalidSchedule";
        case ErrorKind::UnmappedDevice: return "UnmappedDevice";
        case ErrorKind::DeadlockDetected: return "DeadlockDetected";
        case ErrorKind::EmptyTimeline: return "EmptyTimeline";
        case ErrorKind::UnsupportedCombination: return "UnsupportedCombination";
        case ErrorKind::EmptySpace: return "EmptySpace";
        case ErrorKind::ShapeMismatch: return "ShapeMismatch";
        case ErrorKind::ProtocolViolation: return "ProtocolViolation";
    }
    return "Unknown";
}

bool is_config_error(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::InvalidTopology:
        case ErrorKind::NonPositiveBandwidth:
        case ErrorKind::InvalidProfile:
        case ErrorKind::InvalidCost:
        case ErrorKind::ConfigParse:
        case ErrorKind::UnknownApproach:
            return true;
        default:
            return false;
    }
}

std::string_view approach_name(ApproachId id) {
    switch (id) {
        case ApproachId::GPipe: return "GPipe";
        case ApproachId::Dapple1F1B: return "Dapple1F1B";
        case ApproachId::InterleavedLooping: return "InterleavedLooping";
        case ApproachId::VShapedInterleaved: return "VShapedInterleaved";
        case ApproachId::Chimera: return "Chimera";
        case ApproachId::BitPipe: return "BitPipe";
        case ApproachId::BitPipeEarlyForward: return "BitPipeEarlyForward";
    }
    return "?";
}

std::optional<ApproachId> parse_approach(std::string_view name) {
    std::string key;
    for (char c : name) {
        if (c == '-' || c == '_') continue;
        key.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
    for (ApproachId id : kAllApproaches) {
        std::string canon;
        for (char c : approach_name(id)) canon.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        if (canon == key) return id;
    }
    if (key == "dapple" || key == "1f1b") return ApproachId::Dapple1F1B;
    if (key == "1f1bint" || key == "interleaved" || key == "looping") return ApproachId::InterleavedLooping;
    if (key == "vshaped") return ApproachId::VShapedInterleaved;
    if (key == "bitpipeef" || key == "earlyforward") return ApproachId::BitPipeEarlyForward;
    return std::nullopt;
}

bool is_bidirectional(ApproachId id) {
    return id == ApproachId::Chimera || id == ApproachId::BitPipe || id == ApproachId::BitPipeEarlyForward;
}

std::int64_t message_size(const ModelProfile& p) {
    return p.bytes_per_element * p.micro_batch_size * p.sequence_length * p.hidden_size;
}

const ClusterSpec& validate_cluster(const ClusterSpec& c) {
    if (c.devices_per_pipeline < 1 || c.replicated_pipelines < 1 || c.devices_per_node < 1) {
        throw Error(ErrorKind::InvalidTopology, "device counts must be positive");
    }
    if (c.total_devices != c.replicated_pipelines * c.devices_per_pipeline) {
        throw Error(ErrorKind::InvalidTopology,
                    "total_devices " + std::to_string(c.total_devices) + " != W*D = " +
                        std::to_string(c.replicated_pipelines * c.devices_per_pipeline));
    }
    if (c.total_devices % c.devices_per_node != 0) {
        throw Error(ErrorKind::InvalidTopology, "devices_per_node must divide total_devices");
    }
    if (!(c.intra_node_bandwidth > 0.0) || !(c.inter_node_bandwidth > 0.0)) {
        throw Error(ErrorKind::NonPositiveBandwidth, "bandwidths must be strictly positive");
    }
    if (c.p2p_latency < 0.0) throw Error(ErrorKind::InvalidTopology, "p2p_latency must be >= 0");
    return c;
}

const ModelProfile& validate_profile(const ModelProfile& p, int w) {
    if (p.micro_batch_size < 1 || p.micro_batches < 1 || p.sequence_length < 1 || p.hidden_size < 1 ||
        p.bytes_per_element < 1) {
        throw Error(ErrorKind::InvalidProfile, "B, N, S, H and bytes_per_element must be >= 1");
    }
    if (p.mini_batch_size != p.micro_batch_size * p.micro_batches * w) {
        throw Error(ErrorKind::InvalidProfile, "mini_batch_size must equal B * N * W");
    }
    return p;
}

const CostModel& validate_costs(const CostModel& c) {
    if (c.tf < Rational(0) || c.tb < Rational(0) || c.local_copy_cost < Rational(0)) {
        throw Error(ErrorKind::InvalidCost, "times must be >= 0");
    }
    if (c.weights_mem < 0 || c.activations_mem < 0 || c.grad_volume() < 0) {
        throw Error(ErrorKind::InvalidCost, "memory constants must be >= 0");
    }
    return c;
}

}  // namespace pipesched
