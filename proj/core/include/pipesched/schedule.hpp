#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "pipesched/types.hpp"

namespace pipesched {

enum class TaskKind { Forward, Backward };
enum class Direction { Down, Up };

struct Task {
    TaskKind kind = TaskKind::Forward;
    int micro_batch = 1;  // global id, 1-based
    int stage = 1;        // 1-based within its pipeline
    Direction direction = Direction::Down;
    int unit = 0;         // basic-unit index in [0, K)

    bool same_op(const Task& o) const {
        return kind == o.kind && micro_batch == o.micro_batch && stage == o.stage && direction == o.direction;
    }
    friend bool operator==(const Task&, const Task&) = default;
};

std::string to_string(const Task& t);

struct StageMap {
    int num_stages = 0;
    Direction direction = Direction::Down;
    std::vector<int> assignment;  // assignment[s - 1] = device (1-based)

    int device(int stage) const { return assignment.at(static_cast<std::size_t>(stage - 1)); }
    // (s, s+1) pairs that sit on one device and are realised by a local copy.
    std::vector<std::pair<int, int>> locality() const;
    int cross_device_boundaries() const;
};

StageMap straight_map(int d, Direction dir);             // v = 1
StageMap looping_map(int d, int v, Direction dir);       // device k holds k, k+D, ...
StageMap v_shaped_map(int d, int v, Direction dir);      // zig-zag across devices

struct Schedule {
    ApproachId approach = ApproachId::GPipe;
    int D = 1;
    int N = 0;
    int v = 1;
    int K = 1;
    std::vector<std::vector<Task>> per_device;  // index device - 1, execution order
    std::vector<StageMap> stage_maps;           // [Down] or [Down, Up]
    // Optional start slot of every task, parallel to per_device. One slot is
    // tf / v; a forward takes one slot and a backward two.
    std::vector<std::vector<std::int64_t>> slot_start;

    bool has_slot_grid() const { return !slot_start.empty(); }
    const StageMap& map_for(Direction dir) const;
    int stages_per_pipeline() const { return v * D; }
    int device_of(const Task& t) const { return map_for(t.direction).device(t.stage); }
    std::size_t task_count() const;
};

inline constexpr int kForwardSlots = 1;
inline constexpr int kBackwardSlots = 2;
inline int slots_of(TaskKind k) { return k == TaskKind::Forward ? kForwardSlots : kBackwardSlots; }

// Dataflow predecessor of a task (nullopt for the first forward stage).
std::optional<Task> dataflow_predecessor(const Task& t, int num_stages);

// Completeness, placement, uniqueness, dataflow order and slot overlap checks.
// Throws Error(InvalidSchedule) with the first violation found.
void validate_schedule(const Schedule& s);

Schedule build_gpipe(int d, int n);
Schedule build_1f1b(int d, int n);
Schedule build_interleaved_looping(int d, int n, int v);
Schedule build_v_shaped(int d, int n, int v, Direction dir);
Schedule merge_bidirectional(const Schedule& down, const Schedule& up);
Schedule build_chimera(int d, int n);
Schedule build_bitpipe(int d, int n, int v, bool early_forward);

// Slot-timed down and up halves of the BitPipe basic unit (or its K-unit
// concatenation), before merging. Does not reject odd D, so the merge
// conflict on odd device counts can be exhibited.
std::pair<Schedule, Schedule> bitpipe_halves(int d, int n, int v);

// Builds the schedule for an approach with the usual defaults (v applies to
// the interleaved and BitPipe families only).
Schedule build(ApproachId approach, int d, int n, int v = 2);

std::string schedule_to_json(const Schedule& s);
Schedule schedule_from_json(const std::string& text);

}  // namespace pipesched
