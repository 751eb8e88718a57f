#include "folded.hpp"

#include <algorithm>
#include <limits>
#include <set>
#include <tuple>

#include "pipesched/error.hpp"

namespace pipesched::detail {
namespace {

struct Problem {
    int stages = 0;
    int resources = 0;
    std::vector<FoldedTask> tasks;  // index = ((mb-1)*stages + stage-1)*2 + kind
    std::vector<int> pred;          // -1 for the first forward
    std::vector<std::vector<int>> succ;

    int index(int mb, int stage, TaskKind k) const {
        return ((mb - 1) * stages + (stage - 1)) * 2 + (k == TaskKind::Backward ? 1 : 0);
    }
};

Problem make_problem(int d, int v, bool vshape, int m) {
    StageMap map = vshape ? v_shaped_map(d, v, Direction::Down) : looping_map(d, v, Direction::Down);
    Problem p;
    p.stages = v * d;
    p.resources = (d + 1) / 2;
    p.tasks.resize(static_cast<std::size_t>(m * p.stages * 2));
    p.pred.assign(p.tasks.size(), -1);
    p.succ.assign(p.tasks.size(), {});
    for (int mb = 1; mb <= m; ++mb) {
        for (int s = 1; s <= p.stages; ++s) {
            int dev = map.device(s);
            int r = std::min(dev, d + 1 - dev);
            for (TaskKind k : {TaskKind::Forward, TaskKind::Backward}) {
                int i = p.index(mb, s, k);
                p.tasks[static_cast<std::size_t>(i)] = FoldedTask{k, mb, s, r, -1};
                auto pr = dataflow_predecessor(Task{k, mb, s, Direction::Down, 0}, p.stages);
                if (pr) {
                    int j = p.index(mb, pr->stage, pr->kind);
                    p.pred[static_cast<std::size_t>(i)] = j;
                    p.succ[static_cast<std::size_t>(j)].push_back(i);
                }
            }
        }
    }
    return p;
}

std::int64_t end_of(const FoldedTask& t) { return t.start + slots_of(t.kind); }

// Busy intervals of one resource, kept sorted, with first-fit insertion.
class Intervals {
public:
    std::int64_t earliest(std::int64_t ready, std::int64_t len) const {
        std::int64_t t = ready;
        for (const auto& [a, b] : iv_) {
            if (b <= t) continue;
            if (a >= t + len) break;
            t = std::max(t, b);
        }
        return t;
    }
    void add(std::int64_t a, std::int64_t b) { iv_.insert({a, b}); }

private:
    std::set<std::pair<std::int64_t, std::int64_t>> iv_;
};

void insert_first_fit(Problem& p, std::vector<Intervals>& res, int i) {
    auto& t = p.tasks[static_cast<std::size_t>(i)];
    std::int64_t ready = 0;
    int j = p.pred[static_cast<std::size_t>(i)];
    if (j >= 0) ready = end_of(p.tasks[static_cast<std::size_t>(j)]);
    auto& r = res[static_cast<std::size_t>(t.resource - 1)];
    t.start = r.earliest(ready, slots_of(t.kind));
    r.add(t.start, end_of(t));
}

std::tuple<std::int64_t, int, int> priority_key(const FoldedTask& t, Priority prio, std::int64_t rank) {
    int fb = t.kind == TaskKind::Forward ? 0 : 1;
    switch (prio) {
        case Priority::ForwardFirst: return {fb, t.mb, t.stage};
        case Priority::BackwardFirst: return {1 - fb, t.mb, t.stage};
        case Priority::MicroBatch: return {t.mb, 1 - fb, t.stage};
        case Priority::Rank: return {rank, t.mb, t.stage};
    }
    return {fb, t.mb, t.stage};
}

}  // namespace

FoldedPlan capped_list_plan(int d, int v, bool vshape, int m, int unit, int cap, Priority prio,
                            const std::vector<std::int64_t>& rank) {
    Problem p = make_problem(d, v, vshape, m);
    const auto n = p.tasks.size();
    std::vector<std::int64_t> free_at(static_cast<std::size_t>(p.resources), 0);
    std::vector<int> inflight(static_cast<std::size_t>(p.resources), 0);
    std::set<int> eligible;
    for (std::size_t i = 0; i < n; ++i) {
        if (p.pred[i] < 0) eligible.insert(static_cast<int>(i));
    }
    std::size_t placed = 0;
    while (placed < n) {
        int best = -1;
        std::int64_t best_start = 0;
        for (int i : eligible) {
            const auto& t = p.tasks[static_cast<std::size_t>(i)];
            const auto r = static_cast<std::size_t>(t.resource - 1);
            if (t.kind == TaskKind::Forward && inflight[r] >= cap) continue;
            std::int64_t s = free_at[r];
            int j = p.pred[static_cast<std::size_t>(i)];
            if (j >= 0) s = std::max(s, end_of(p.tasks[static_cast<std::size_t>(j)]));
            if (best < 0 || s < best_start ||
                (s == best_start &&
                 priority_key(t, prio, rank.empty() ? 0 : rank[static_cast<std::size_t>(i)]) <
                     priority_key(p.tasks[static_cast<std::size_t>(best)], prio,
                                  rank.empty() ? 0 : rank[static_cast<std::size_t>(best)]))) {
                best = i;
                best_start = s;
            }
        }
        if (best < 0) {
            throw Error(ErrorKind::InvalidSchedule,
                        "activation cap " + std::to_string(cap) + " leaves no runnable task");
        }
        auto& t = p.tasks[static_cast<std::size_t>(best)];
        const auto r = static_cast<std::size_t>(t.resource - 1);
        t.start = best_start;
        free_at[r] = end_of(t);
        inflight[r] += t.kind == TaskKind::Forward ? 1 : -1;
        eligible.erase(best);
        for (int s : p.succ[static_cast<std::size_t>(best)]) eligible.insert(s);
        ++placed;
    }
    FoldedPlan plan;
    plan.tasks = std::move(p.tasks);
    plan.unit_size = unit;
    plan.units = (m + unit - 1) / unit;
    return plan;
}

FoldedPlan chimera_plan(int d, int m) {
    // Cap of D in-flight stage activations per device: Chimera's upper bound.
    // A single basic unit keeps the 1F1B preference for backwards; longer
    // runs fill ahead with forwards, which is what keeps the steady state dense.
    const int unit = std::max(1, d / 2);
    const Priority prio = m <= unit ? Priority::BackwardFirst : Priority::ForwardFirst;
    return capped_list_plan(d, 1, false, m, unit, d, prio);
}

FoldedPlan bitpipe_plain_plan(int d, int v, int m, int unit) {
    // Basic unit: each micro-batch's whole chain placed first-fit, in id order.
    Problem base = make_problem(d, v, true, unit);
    std::vector<Intervals> res(static_cast<std::size_t>(base.resources));
    for (int mb = 1; mb <= unit; ++mb) {
        for (int s = 1; s <= base.stages; ++s) insert_first_fit(base, res, base.index(mb, s, TaskKind::Forward));
        for (int s = base.stages; s >= 1; --s) insert_first_fit(base, res, base.index(mb, s, TaskKind::Backward));
    }

    // Further units replay the unit's task sequence in start-time order, each
    // task placed first-fit, so early work of unit k+1 drops into the tail
    // bubbles of unit k as far as dependencies allow.
    std::vector<int> seq(base.tasks.size());
    for (std::size_t i = 0; i < seq.size(); ++i) seq[i] = static_cast<int>(i);
    std::stable_sort(seq.begin(), seq.end(), [&](int a, int b) {
        const auto& x = base.tasks[static_cast<std::size_t>(a)];
        const auto& y = base.tasks[static_cast<std::size_t>(b)];
        return std::make_tuple(x.start, static_cast<int>(x.kind) == 0, x.mb, x.stage) <
               std::make_tuple(y.start, static_cast<int>(y.kind) == 0, y.mb, y.stage);
    });

    Problem p = make_problem(d, v, true, m);
    std::vector<Intervals> all(static_cast<std::size_t>(p.resources));
    const int units = (m + unit - 1) / unit;
    for (int k = 0; k < units; ++k) {
        for (int i : seq) {
            const auto& t = base.tasks[static_cast<std::size_t>(i)];
            int mb = t.mb + k * unit;
            if (mb > m) continue;
            insert_first_fit(p, all, p.index(mb, t.stage, t.kind));
        }
    }
    FoldedPlan plan;
    plan.tasks = std::move(p.tasks);
    plan.unit_size = unit;
    plan.units = units;
    return plan;
}

FoldedPlan bitpipe_early_forward_plan(int d, int v, int m, int unit) {
    // Peak of (3D-3)/2 micro-batch activations, counted in chunks of 1/v. A
    // single micro-batch already pins 2v chunks on device 1 before its first
    // backward, which exceeds the cap at D = 2.
    const int cap = v * (3 * d - 3) / 2;
    return capped_list_plan(d, v, true, m, unit, std::max(cap, 2 * v), Priority::ForwardFirst);
}

}  // namespace pipesched::detail
