#include "pipesched/schedule.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include "folded.hpp"
#include "pipesched/error.hpp"

namespace pipesched {

std::string to_string(const Task& t) {
    std::ostringstream os;
    os << (t.kind == TaskKind::Forward ? 'F' : 'B') << t.micro_batch << "@s" << t.stage
       << (t.direction == Direction::Down ? "v" : "^");
    return os.str();
}

std::vector<std::pair<int, int>> StageMap::locality() const {
    std::vector<std::pair<int, int>> out;
    for (int s = 1; s < num_stages; ++s) {
        if (device(s) == device(s + 1)) out.emplace_back(s, s + 1);
    }
    return out;
}

int StageMap::cross_device_boundaries() const {
    return num_stages > 0 ? num_stages - 1 - static_cast<int>(locality().size()) : 0;
}

namespace {

StageMap make_map(int d, int v, Direction dir, bool vshape) {
    StageMap m;
    m.num_stages = v * d;
    m.direction = dir;
    m.assignment.resize(static_cast<std::size_t>(m.num_stages));
    for (int s = 1; s <= m.num_stages; ++s) {
        int leg = (s - 1) / d;
        int pos = (s - 1) % d;
        int dev = (vshape && leg % 2 == 1) ? d - pos : pos + 1;
        if (dir == Direction::Up) dev = d + 1 - dev;
        m.assignment[static_cast<std::size_t>(s - 1)] = dev;
    }
    return m;
}

void require(bool ok, ErrorKind kind, const std::string& msg) {
    if (!ok) throw Error(kind, msg);
}

Task fwd(int mb, int stage, Direction dir = Direction::Down, int unit = 0) {
    return Task{TaskKind::Forward, mb, stage, dir, unit};
}
Task bwd(int mb, int stage, Direction dir = Direction::Down, int unit = 0) {
    return Task{TaskKind::Backward, mb, stage, dir, unit};
}

Schedule empty_schedule(ApproachId a, int d, int n, int v) {
    Schedule s;
    s.approach = a;
    s.D = d;
    s.N = n;
    s.v = v;
    s.K = 1;
    s.per_device.assign(static_cast<std::size_t>(d), {});
    return s;
}

// Per-device order of the Megatron-style interleaved schedule. Micro-batches
// advance in groups of D; each group runs through chunk 0, then chunk 1, ...
// `stage_of(chunk, position)` places a chunk of a logical pipeline position.
template <class StageOf, class Warmup>
std::vector<Task> interleaved_order(int d, int n, int v, int position, Direction dir, StageOf stage_of,
                                    Warmup warmup) {
    std::vector<std::pair<int, int>> fseq;  // (chunk, mb)
    std::vector<std::pair<int, int>> bseq;
    for (int g0 = 0; g0 < n; g0 += d) {
        int g1 = std::min(n, g0 + d);
        for (int c = 0; c < v; ++c) {
            for (int m = g0 + 1; m <= g1; ++m) {
                fseq.emplace_back(c, m);
                bseq.emplace_back(v - 1 - c, m);
            }
        }
    }
    const int total = n * v;
    const int w = std::clamp(warmup(position), 0, total);
    std::vector<Task> out;
    out.reserve(static_cast<std::size_t>(2 * total));
    auto f = [&](int i) { return fwd(fseq[i].second, stage_of(fseq[i].first, position), dir); };
    auto b = [&](int i) { return bwd(bseq[i].second, stage_of(bseq[i].first, position), dir); };
    for (int i = 0; i < w; ++i) out.push_back(f(i));
    for (int i = 0; i < total - w; ++i) {
        out.push_back(f(w + i));
        out.push_back(b(i));
    }
    for (int i = total - w; i < total; ++i) out.push_back(b(i));
    return out;
}

// Turns slot-timed folded tasks into one direction's half schedule.
Schedule half_from_folded(const detail::FoldedPlan& plan, int d, int n, int v, Direction dir,
                          const StageMap& down_map, ApproachId approach) {
    Schedule s = empty_schedule(approach, d, n / 2, v);
    s.K = plan.units;
    s.slot_start.assign(static_cast<std::size_t>(d), {});
    StageMap map = down_map;
    if (dir == Direction::Up) {
        for (int& dev : map.assignment) dev = d + 1 - dev;
        map.direction = Direction::Up;
    }
    s.stage_maps = {map};

    struct Item {
        std::int64_t start;
        Task task;
    };
    std::vector<std::vector<Item>> rows(static_cast<std::size_t>(d));
    for (const auto& ft : plan.tasks) {
        int mb = dir == Direction::Down ? 2 * ft.mb - 1 : 2 * ft.mb;
        Task t{ft.kind, mb, ft.stage, dir, (ft.mb - 1) / plan.unit_size};
        int dev = map.device(ft.stage);
        rows[static_cast<std::size_t>(dev - 1)].push_back({ft.start, t});
    }
    for (int dev = 0; dev < d; ++dev) {
        auto& r = rows[static_cast<std::size_t>(dev)];
        std::sort(r.begin(), r.end(), [](const Item& a, const Item& b) { return a.start < b.start; });
        for (const auto& it : r) {
            s.per_device[static_cast<std::size_t>(dev)].push_back(it.task);
            s.slot_start[static_cast<std::size_t>(dev)].push_back(it.start);
        }
    }
    return s;
}

std::pair<Schedule, Schedule> halves_from_plan(const detail::FoldedPlan& plan, int d, int n, int v,
                                               const StageMap& down_map, ApproachId approach) {
    return {half_from_folded(plan, d, n, v, Direction::Down, down_map, approach),
            half_from_folded(plan, d, n, v, Direction::Up, down_map, approach)};
}

}  // namespace

StageMap straight_map(int d, Direction dir) { return make_map(d, 1, dir, false); }
StageMap looping_map(int d, int v, Direction dir) { return make_map(d, v, dir, false); }
StageMap v_shaped_map(int d, int v, Direction dir) { return make_map(d, v, dir, true); }

const StageMap& Schedule::map_for(Direction dir) const {
    for (const auto& m : stage_maps) {
        if (m.direction == dir) return m;
    }
    throw Error(ErrorKind::InvalidSchedule, "schedule has no stage map for the requested direction");
}

std::size_t Schedule::task_count() const {
    std::size_t n = 0;
    for (const auto& r : per_device) n += r.size();
    return n;
}

std::optional<Task> dataflow_predecessor(const Task& t, int num_stages) {
    if (t.kind == TaskKind::Forward) {
        if (t.stage == 1) return std::nullopt;
        return Task{TaskKind::Forward, t.micro_batch, t.stage - 1, t.direction, t.unit};
    }
    if (t.stage == num_stages) return Task{TaskKind::Forward, t.micro_batch, t.stage, t.direction, t.unit};
    return Task{TaskKind::Backward, t.micro_batch, t.stage + 1, t.direction, t.unit};
}

void validate_schedule(const Schedule& s) {
    auto fail = [](const std::string& msg) { throw Error(ErrorKind::InvalidSchedule, msg); };
    if (s.D < 1 || s.v < 1) fail("D and v must be positive");
    if (static_cast<int>(s.per_device.size()) != s.D) fail("per_device size differs from D");
    if (s.stage_maps.empty()) fail("no stage map");
    for (const auto& m : s.stage_maps) {
        if (m.num_stages != s.v * s.D || static_cast<int>(m.assignment.size()) != m.num_stages) {
            fail("stage map size differs from v*D");
        }
        std::vector<int> held(static_cast<std::size_t>(s.D), 0);
        for (int dev : m.assignment) {
            if (dev < 1 || dev > s.D) fail("stage mapped outside [1, D]");
            ++held[static_cast<std::size_t>(dev - 1)];
        }
        for (int h : held) {
            if (h != s.v) fail("device does not hold exactly v stages of a pipeline");
        }
    }
    if (s.has_slot_grid()) {
        if (s.slot_start.size() != s.per_device.size()) fail("slot grid shape mismatch");
        for (std::size_t i = 0; i < s.per_device.size(); ++i) {
            if (s.slot_start[i].size() != s.per_device[i].size()) fail("slot grid shape mismatch");
        }
    }

    using Key = std::tuple<int, int, int, int>;  // kind, mb, stage, dir
    auto key = [](const Task& t) {
        return Key{static_cast<int>(t.kind), t.micro_batch, t.stage, static_cast<int>(t.direction)};
    };
    std::map<Key, std::pair<int, std::size_t>> where;  // -> (device, index)
    std::map<int, Direction> mb_dir;
    for (int dev = 1; dev <= s.D; ++dev) {
        const auto& row = s.per_device[static_cast<std::size_t>(dev - 1)];
        for (std::size_t i = 0; i < row.size(); ++i) {
            const Task& t = row[i];
            const int S = s.map_for(t.direction).num_stages;
            if (t.stage < 1 || t.stage > S) fail("stage out of range in " + to_string(t));
            if (s.device_of(t) != dev) fail(to_string(t) + " placed on the wrong device");
            if (!where.emplace(key(t), std::make_pair(dev, i)).second) fail("duplicate task " + to_string(t));
            auto [it, fresh] = mb_dir.emplace(t.micro_batch, t.direction);
            if (!fresh && it->second != t.direction) fail("micro-batch in both directions");
        }
    }
    if (static_cast<int>(mb_dir.size()) != s.N) fail("micro-batch count differs from N");
    int expect = 1;
    for (const auto& [mb, dir] : mb_dir) {
        if (mb != expect++) fail("micro-batch ids are not 1..N");
        const int S = s.map_for(dir).num_stages;
        for (int st = 1; st <= S; ++st) {
            for (TaskKind k : {TaskKind::Forward, TaskKind::Backward}) {
                Task t{k, mb, st, dir, 0};
                if (!where.count(key(t))) fail("missing task " + to_string(t));
            }
        }
    }
    for (const auto& [k, loc] : where) {
        const auto& row = s.per_device[static_cast<std::size_t>(loc.first - 1)];
        const Task& t = row[loc.second];
        auto pred = dataflow_predecessor(t, s.map_for(t.direction).num_stages);
        if (!pred) continue;
        const auto& ploc = where.at(key(*pred));
        if (ploc.first == loc.first && ploc.second > loc.second) {
            fail(to_string(t) + " listed before its local predecessor " + to_string(*pred));
        }
        if (s.has_slot_grid()) {
            std::int64_t pend = s.slot_start[static_cast<std::size_t>(ploc.first - 1)][ploc.second] +
                                slots_of(pred->kind);
            if (s.slot_start[static_cast<std::size_t>(loc.first - 1)][loc.second] < pend) {
                fail(to_string(t) + " starts before its predecessor ends");
            }
        }
    }
    if (s.has_slot_grid()) {
        for (std::size_t dev = 0; dev < s.per_device.size(); ++dev) {
            std::int64_t free_at = 0;
            for (std::size_t i = 0; i < s.per_device[dev].size(); ++i) {
                if (s.slot_start[dev][i] < free_at) fail("overlapping slots on device " + std::to_string(dev + 1));
                free_at = s.slot_start[dev][i] + slots_of(s.per_device[dev][i].kind);
            }
        }
    }
}

Schedule build_gpipe(int d, int n) {
    require(d >= 1 && n >= 1, ErrorKind::InvalidSchedule, "GPipe needs D >= 1 and N >= 1");
    Schedule s = empty_schedule(ApproachId::GPipe, d, n, 1);
    s.stage_maps = {straight_map(d, Direction::Down)};
    for (int dev = 1; dev <= d; ++dev) {
        auto& row = s.per_device[static_cast<std::size_t>(dev - 1)];
        for (int m = 1; m <= n; ++m) row.push_back(fwd(m, dev));
        for (int m = n; m >= 1; --m) row.push_back(bwd(m, dev));
    }
    return s;
}

Schedule build_1f1b(int d, int n) {
    require(d >= 1, ErrorKind::InvalidSchedule, "1F1B needs D >= 1");
    require(n >= d, ErrorKind::InsufficientMicroBatches,
            "1F1B needs N >= D (N=" + std::to_string(n) + ", D=" + std::to_string(d) + ")");
    Schedule s = empty_schedule(ApproachId::Dapple1F1B, d, n, 1);
    s.stage_maps = {straight_map(d, Direction::Down)};
    for (int dev = 1; dev <= d; ++dev) {
        auto& row = s.per_device[static_cast<std::size_t>(dev - 1)];
        const int warm = d - dev;
        for (int m = 1; m <= warm; ++m) row.push_back(fwd(m, dev));
        for (int i = 0; i < n - warm; ++i) {
            row.push_back(fwd(warm + 1 + i, dev));
            row.push_back(bwd(1 + i, dev));
        }
        for (int m = n - warm + 1; m <= n; ++m) row.push_back(bwd(m, dev));
    }
    return s;
}

Schedule build_interleaved_looping(int d, int n, int v) {
    require(d >= 1 && v >= 1 && n >= 1, ErrorKind::InvalidSchedule, "looping needs D, N, v >= 1");
    require(n % d == 0, ErrorKind::InvalidChunking,
            "N=" + std::to_string(n) + " is not a multiple of D=" + std::to_string(d));
    if (v == 1) {
        Schedule s = build_1f1b(d, n);
        s.approach = ApproachId::InterleavedLooping;
        return s;
    }
    Schedule s = empty_schedule(ApproachId::InterleavedLooping, d, n, v);
    s.stage_maps = {looping_map(d, v, Direction::Down)};
    auto stage_of = [d](int c, int q) { return c * d + q; };
    auto warm = [d, v](int q) { return (d - q) * 2 + (v - 1) * d; };
    for (int dev = 1; dev <= d; ++dev) {
        s.per_device[static_cast<std::size_t>(dev - 1)] =
            interleaved_order(d, n, v, dev, Direction::Down, stage_of, warm);
    }
    return s;
}

Schedule build_v_shaped(int d, int n, int v, Direction dir) {
    require(v >= 2 && v % 2 == 0, ErrorKind::OddChunkCount, "V-shaped mapping needs an even v >= 2");
    require(d >= 1 && n >= 1, ErrorKind::InvalidSchedule, "V-shaped needs D, N >= 1");
    Schedule s = empty_schedule(ApproachId::VShapedInterleaved, d, n, v);
    s.stage_maps = {v_shaped_map(d, v, dir)};
    auto stage_of = [d](int c, int q) { return c % 2 == 0 ? c * d + q : c * d + (d + 1 - q); };
    // The looping warmup counts deadlock once the second leg runs back up
    // the devices; a uniform 2D-1 warmup is the smallest that never does.
    auto warm = [d](int) { return 2 * d - 1; };
    for (int dev = 1; dev <= d; ++dev) {
        int q = dir == Direction::Down ? dev : d + 1 - dev;
        s.per_device[static_cast<std::size_t>(dev - 1)] = interleaved_order(d, n, v, q, dir, stage_of, warm);
    }
    return s;
}

Schedule merge_bidirectional(const Schedule& down, const Schedule& up) {
    require(down.has_slot_grid() && up.has_slot_grid(), ErrorKind::InvalidSchedule,
            "merge needs slot-timed halves");
    require(down.D == up.D && down.v == up.v, ErrorKind::InvalidSchedule, "halves differ in D or v");
    require(down.stage_maps.size() == 1 && up.stage_maps.size() == 1 &&
                down.stage_maps[0].direction == Direction::Down && up.stage_maps[0].direction == Direction::Up,
            ErrorKind::InvalidSchedule, "merge needs one down and one up half");
    const int d = down.D;
    Schedule s = empty_schedule(down.approach, d, down.N + up.N, down.v);
    s.K = std::max(down.K, up.K);
    s.stage_maps = {down.stage_maps[0], up.stage_maps[0]};
    s.slot_start.assign(static_cast<std::size_t>(d), {});

    std::set<int> ids;
    for (const Schedule* h : {&down, &up}) {
        for (const auto& row : h->per_device) {
            for (const Task& t : row) {
                if (t.kind == TaskKind::Forward && t.stage == 1 && !ids.insert(t.micro_batch).second) {
                    throw Error(ErrorKind::InvalidSchedule, "micro-batch ids overlap between directions");
                }
            }
        }
    }

    for (int dev = 0; dev < d; ++dev) {
        struct Item {
            std::int64_t start;
            int half;
            std::size_t idx;
        };
        std::vector<Item> items;
        const auto ud = static_cast<std::size_t>(dev);
        for (std::size_t i = 0; i < down.per_device[ud].size(); ++i) items.push_back({down.slot_start[ud][i], 0, i});
        for (std::size_t i = 0; i < up.per_device[ud].size(); ++i) items.push_back({up.slot_start[ud][i], 1, i});
        std::sort(items.begin(), items.end(),
                  [](const Item& a, const Item& b) { return std::tie(a.start, a.half) < std::tie(b.start, b.half); });
        std::int64_t free_at = 0;
        const Task* holder = nullptr;
        for (const Item& it : items) {
            const Task& t = (it.half == 0 ? down : up).per_device[ud][it.idx];
            if (it.start < free_at) {
                throw Error(ErrorKind::MergeConflict, "device " + std::to_string(dev + 1) + " slot " +
                                                          std::to_string(it.start) + ": " + to_string(*holder) +
                                                          " vs " + to_string(t));
            }
            free_at = it.start + slots_of(t.kind);
            holder = &t;
            s.per_device[ud].push_back(t);
            s.slot_start[ud].push_back(it.start);
        }
    }
    require(d % 2 == 0, ErrorKind::OddDeviceCount, "bidirectional merge needs an even D");
    return s;
}

Schedule build_chimera(int d, int n) {
    require(d >= 1 && d % 2 == 0, ErrorKind::OddDeviceCount, "Chimera needs an even D");
    require(n % 2 == 0, ErrorKind::InvalidChunking, "Chimera needs an even N");
    require(n >= d, ErrorKind::InsufficientMicroBatches, "Chimera needs N >= D");
    StageMap down = straight_map(d, Direction::Down);
    auto plan = detail::chimera_plan(d, n / 2);
    auto [h_down, h_up] = halves_from_plan(plan, d, n, 1, down, ApproachId::Chimera);
    Schedule s = merge_bidirectional(h_down, h_up);
    s.approach = ApproachId::Chimera;
    return s;
}

std::pair<Schedule, Schedule> bitpipe_halves(int d, int n, int v) {
    require(v >= 2 && v % 2 == 0, ErrorKind::OddChunkCount, "BitPipe needs an even v");
    require(d >= 1 && n >= 2 && n % 2 == 0, ErrorKind::InvalidChunking, "BitPipe needs an even N >= 2");
    StageMap down = v_shaped_map(d, v, Direction::Down);
    int unit = (d % 2 == 0 && n % d == 0) ? d / 2 : n / 2;
    auto plan = detail::bitpipe_plain_plan(d, v, n / 2, unit);
    return halves_from_plan(plan, d, n, v, down, ApproachId::BitPipe);
}

Schedule build_bitpipe(int d, int n, int v, bool early_forward) {
    require(d >= 1 && d % 2 == 0, ErrorKind::OddDeviceCount, "BitPipe needs an even D");
    require(v >= 2 && v % 2 == 0, ErrorKind::OddChunkCount, "BitPipe needs an even v");
    require(n >= d && n % d == 0, ErrorKind::InvalidChunking,
            "N=" + std::to_string(n) + " is not a positive multiple of D=" + std::to_string(d));
    if (!early_forward) {
        auto [h_down, h_up] = bitpipe_halves(d, n, v);
        Schedule s = merge_bidirectional(h_down, h_up);
        s.approach = ApproachId::BitPipe;
        return s;
    }
    require(n >= 2 * d, ErrorKind::InsufficientMicroBatches, "early forwarding needs at least two basic units");
    StageMap down = v_shaped_map(d, v, Direction::Down);
    auto plan = detail::bitpipe_early_forward_plan(d, v, n / 2, d / 2);
    auto [h_down, h_up] = halves_from_plan(plan, d, n, v, down, ApproachId::BitPipeEarlyForward);
    Schedule s = merge_bidirectional(h_down, h_up);
    s.approach = ApproachId::BitPipeEarlyForward;
    return s;
}

Schedule build(ApproachId approach, int d, int n, int v) {
    switch (approach) {
        case ApproachId::GPipe: return build_gpipe(d, n);
        case ApproachId::Dapple1F1B: return build_1f1b(d, n);
        case ApproachId::InterleavedLooping: return build_interleaved_looping(d, n, v);
        case ApproachId::VShapedInterleaved: return build_v_shaped(d, n, v, Direction::Down);
        case ApproachId::Chimera: return build_chimera(d, n);
        case ApproachId::BitPipe: return build_bitpipe(d, n, v, false);
        case ApproachId::BitPipeEarlyForward: return build_bitpipe(d, n, v, true);
    }
    throw Error(ErrorKind::UnknownApproach, "unknown approach");
}

}  // namespace pipesched
