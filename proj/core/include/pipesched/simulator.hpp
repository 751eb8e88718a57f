#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "pipesched/rational.hpp"
#include "pipesched/schedule.hpp"
#include "pipesched/types.hpp"

namespace pipesched {

enum class MappingPolicy { Linear, ReplicasColocated };

std::string_view mapping_name(MappingPolicy p);

// Global device g = w * D + (d - 1) for replica w and pipeline device d.
struct DeviceMapping {
    MappingPolicy policy = MappingPolicy::Linear;
    std::vector<std::pair<int, int>> placement;  // g -> (node, local rank)

    int node_of(int g) const { return placement.at(static_cast<std::size_t>(g)).first; }
};

// Linear fills nodes in global-device order. ReplicasColocated walks the
// device pairs (k, D+1-k) across all replicas first, so every copy of a
// stage (data-parallel and bidirectional) lands on one node when it fits.
DeviceMapping make_mapping(const ClusterSpec& cluster, MappingPolicy policy);

enum class EventKind { Compute, P2PSend, P2PRecv, LocalCopy, AllReduce };

struct Event {
    int device = 0;  // global device id
    EventKind kind = EventKind::Compute;
    std::optional<Task> task;  // compute task, or the consumer of a transfer
    Rational start;
    Rational end;
    std::int64_t payload_bytes = 0;
    int peer = -1;            // other end of a P2P transfer
    bool inter_node = false;  // comm events only
    int group_stage = 0;      // allreduce: stage index of the replica group
    std::vector<int> group;   // allreduce: member devices
};

struct CommTotals {
    std::int64_t p2p_messages = 0;
    std::int64_t p2p_messages_intra = 0;
    std::int64_t p2p_messages_inter = 0;
    std::int64_t p2p_bytes_intra = 0;
    std::int64_t p2p_bytes_inter = 0;
    std::int64_t local_copies = 0;
    std::int64_t allreduce_groups = 0;
    double allreduce_bytes_intra = 0;
    double allreduce_bytes_inter = 0;
    // P2P transfers on the critical path of one pipeline replica: the chain
    // of back-to-back dependencies ending at the last compute, taking the
    // chain with the most transfers when several are tight.
    std::int64_t critical_path_messages = 0;

    std::int64_t p2p_bytes() const { return p2p_bytes_intra + p2p_bytes_inter; }
    double allreduce_bytes() const { return allreduce_bytes_intra + allreduce_bytes_inter; }
};

struct MemorySample {
    Rational time;
    int activation_chunks = 0;  // in-flight forward chunks; one chunk = Ma / v
};

struct Timeline {
    ApproachId approach = ApproachId::GPipe;
    int D = 1;
    int W = 1;
    int v = 1;
    int N = 0;
    std::vector<Event> events;  // sorted by (start, device, kind, task)
    Rational makespan;
    Rational compute_makespan;  // end of the last compute task
    Rational total_compute;     // summed over every device
    std::vector<int> resident_chunks;                     // per device
    std::vector<std::vector<MemorySample>> memory_trace;  // per device, after each change
    CommTotals comm;

    int devices() const { return D * W; }
};

struct SimOptions {
    bool eager_sync = false;
    std::int64_t message_bytes = 0;  // activation / gradient message between stages
};

Timeline simulate(const Schedule& schedule, const CostModel& costs, const ClusterSpec& cluster,
                  const DeviceMapping& mapping, const SimOptions& options = {});

// Zero-communication run on a single pipeline replica: no P2P payload, no
// latency and no gradient synchronisation.
Timeline simulate_canonical(const Schedule& schedule, const CostModel& costs = CostModel::canonical_units());

Rational measured_bubble_ratio(const Timeline& t);

struct DevicePeak {
    Rational weights;      // multiples of Mθ
    Rational activations;  // multiples of Ma
};

struct MemoryProfile {
    std::vector<DevicePeak> per_device;
    Rational min_activations;
    Rational max_activations;
    Rational max_weights;
};

MemoryProfile memory_profile(const Timeline& t);
const CommTotals& comm_accounting(const Timeline& t);

std::string timeline_to_json(const Timeline& t);
std::string timeline_to_svg(const Timeline& t);

// Text slot grid of a canonical timeline, one line per device
// ("P1: F1a F2a . B1a B1a ..."). One slot is tf / v.
std::string slot_grid_text(const Timeline& t, const CostModel& costs = CostModel::canonical_units());

}  // namespace pipesched
