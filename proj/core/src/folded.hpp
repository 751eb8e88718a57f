#pragma once

// Slot-level construction of bidirectional schedules on the folded problem:
// device k and device D+1-k form one resource, because the up pipeline is the
// mirror image of the down pipeline. Timing the down pipeline on these
// resources and mirroring it therefore never puts two tasks in one slot.

#include <cstdint>
#include <vector>

#include "pipesched/schedule.hpp"

namespace pipesched::detail {

struct FoldedTask {
    TaskKind kind;
    int mb;      // local id within the down pipeline, 1-based
    int stage;
    int resource;
    std::int64_t start = -1;
};

struct FoldedPlan {
    std::vector<FoldedTask> tasks;
    int units = 1;
    int unit_size = 1;  // micro-batches per direction in one basic unit
};

enum class Priority {
    ForwardFirst,   // forward, then lower micro-batch, then lower stage
    BackwardFirst,  // backward, then lower micro-batch, then lower stage
    MicroBatch,     // lower micro-batch, then backward, then lower stage
    Rank,           // caller-supplied rank per task, lower first
};

FoldedPlan chimera_plan(int d, int m);
FoldedPlan bitpipe_plain_plan(int d, int v, int m, int unit);
FoldedPlan bitpipe_early_forward_plan(int d, int v, int m, int unit);

// Non-delay list schedule: repeatedly starts the eligible task with the
// earliest possible start, ties broken by `prio`; a forward may not start
// while `cap` forward chunks are in flight on its resource. Exposed for tests.
FoldedPlan capped_list_plan(int d, int v, bool vshape, int m, int unit, int cap, Priority prio,
                            const std::vector<std::int64_t>& rank = {});

}  // namespace pipesched::detail
