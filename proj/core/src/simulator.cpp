#include "pipesched/simulator.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include "pipesched/error.hpp"

namespace pipesched {

std::string_view mapping_name(MappingPolicy p) {
    return p == MappingPolicy::Linear ? "linear" : "colocated";
}

DeviceMapping make_mapping(const ClusterSpec& c, MappingPolicy policy) {
    validate_cluster(c);
    const int d = c.devices_per_pipeline;
    const int w = c.replicated_pipelines;
    DeviceMapping m;
    m.policy = policy;
    m.placement.resize(static_cast<std::size_t>(c.total_devices));
    std::vector<int> order;
    order.reserve(static_cast<std::size_t>(c.total_devices));
    if (policy == MappingPolicy::Linear) {
        for (int g = 0; g < c.total_devices; ++g) order.push_back(g);
    } else {
        for (int k = 1; k <= (d + 1) / 2; ++k) {
            for (int r = 0; r < w; ++r) order.push_back(r * d + k - 1);
            if (d + 1 - k != k) {
                for (int r = 0; r < w; ++r) order.push_back(r * d + d - k);
            }
        }
    }
    for (std::size_t pos = 0; pos < order.size(); ++pos) {
        const int p = static_cast<int>(pos);
        m.placement[static_cast<std::size_t>(order[pos])] = {p / c.devices_per_node, p % c.devices_per_node};
    }
    return m;
}

namespace {

using TaskKey = std::tuple<int, int, int, int>;  // kind, mb, stage, dir

TaskKey key_of(const Task& t) {
    return {static_cast<int>(t.kind), t.micro_batch, t.stage, static_cast<int>(t.direction)};
}

struct Done {
    int device;
    Rational start;
    Rational end;
};

bool event_less(const Event& a, const Event& b) {
    auto tk = [](const Event& e) {
        return e.task ? std::make_tuple(static_cast<int>(e.task->direction), e.task->micro_batch, e.task->stage,
                                        static_cast<int>(e.task->kind))
                      : std::make_tuple(-1, -1, e.group_stage, -1);
    };
    return std::make_tuple(a.start, a.device, static_cast<int>(a.kind), tk(a)) <
           std::make_tuple(b.start, b.device, static_cast<int>(b.kind), tk(b));
}

}  // namespace

Timeline simulate(const Schedule& s, const CostModel& costs, const ClusterSpec& cluster,
                  const DeviceMapping& mapping, const SimOptions& opt) {
    validate_costs(costs);
    validate_cluster(cluster);
    if (cluster.devices_per_pipeline != s.D) {
        throw Error(ErrorKind::InvalidTopology, "cluster D differs from schedule D");
    }
    const int D = s.D;
    const int W = cluster.replicated_pipelines;
    const int P = D * W;
    if (static_cast<int>(mapping.placement.size()) < P) {
        throw Error(ErrorKind::UnmappedDevice, "mapping covers " + std::to_string(mapping.placement.size()) +
                                                   " of " + std::to_string(P) + " devices");
    }

    Timeline tl;
    tl.approach = s.approach;
    tl.D = D;
    tl.W = W;
    tl.v = s.v;
    tl.N = s.N;
    tl.resident_chunks.assign(static_cast<std::size_t>(P), 0);
    tl.memory_trace.assign(static_cast<std::size_t>(P), {});

    const Rational tf_chunk = costs.tf / Rational(s.v);
    const Rational tb_chunk = costs.tb / Rational(s.v);
    auto duration = [&](const Task& t) { return t.kind == TaskKind::Forward ? tf_chunk : tb_chunk; };
    auto transfer = [&](int a, int b) {
        const bool inter = mapping.node_of(a) != mapping.node_of(b);
        const double bw = inter ? cluster.inter_node_bandwidth : cluster.intra_node_bandwidth;
        const double secs = cluster.p2p_latency + static_cast<double>(opt.message_bytes) / bw;
        return std::make_pair(secs == 0.0 ? Rational(0) : Rational::from_double(secs), inter);
    };

    // Resident chunks per device: distinct (direction, stage) held.
    for (int d = 1; d <= D; ++d) {
        int n = 0;
        for (const auto& m : s.stage_maps) n += static_cast<int>(std::count(m.assignment.begin(), m.assignment.end(), d));
        for (int w = 0; w < W; ++w) tl.resident_chunks[static_cast<std::size_t>(w * D + d - 1)] = n;
    }

    // Per replica, list-schedule every device's task list in order.
    std::vector<std::map<TaskKey, Done>> done(static_cast<std::size_t>(W));
    std::vector<std::size_t> ptr(static_cast<std::size_t>(P), 0);
    std::vector<Rational> free_at(static_cast<std::size_t>(P), Rational(0));
    std::size_t remaining = s.task_count() * static_cast<std::size_t>(W);

    struct Binding {
        int device_prev = -1;  // index into compute list of the same device, or -1
        bool input_tight = false;
        bool input_p2p = false;
        TaskKey input;
    };
    std::vector<std::vector<std::pair<Task, Binding>>> replica0(static_cast<std::size_t>(D));

    while (remaining > 0) {
        bool progress = false;
        for (int g = 0; g < P; ++g) {
            const int w = g / D;
            const int d = g % D + 1;
            const auto& row = s.per_device[static_cast<std::size_t>(d - 1)];
            auto& p = ptr[static_cast<std::size_t>(g)];
            auto& dn = done[static_cast<std::size_t>(w)];
            while (p < row.size()) {
                const Task& t = row[p];
                const int S = s.map_for(t.direction).num_stages;
                auto pred = dataflow_predecessor(t, S);
                Rational arrival(0);
                Binding bind;
                if (pred) {
                    auto it = dn.find(key_of(*pred));
                    if (it == dn.end()) break;
                    const int src = w * D + it->second.device - 1;
                    bind.input = key_of(*pred);
                    if (src == g) {
                        arrival = it->second.end;
                        if (pred->stage != t.stage) {
                            arrival += costs.local_copy_cost;
                            Event e;
                            e.device = g;
                            e.kind = EventKind::LocalCopy;
                            e.task = t;
                            e.start = it->second.end;
                            e.end = arrival;
                            tl.events.push_back(e);
                            ++tl.comm.local_copies;
                        }
                    } else {
                        auto [dt, inter] = transfer(src, g);
                        arrival = it->second.end + dt;
                        bind.input_p2p = true;
                        Event snd;
                        snd.device = src;
                        snd.kind = EventKind::P2PSend;
                        snd.task = t;
                        snd.start = it->second.end;
                        snd.end = arrival;
                        snd.payload_bytes = opt.message_bytes;
                        snd.peer = g;
                        snd.inter_node = inter;
                        Event rcv = snd;
                        rcv.device = g;
                        rcv.kind = EventKind::P2PRecv;
                        rcv.peer = src;
                        tl.events.push_back(snd);
                        tl.events.push_back(rcv);
                        ++tl.comm.p2p_messages;
                        if (inter) {
                            ++tl.comm.p2p_messages_inter;
                            tl.comm.p2p_bytes_inter += opt.message_bytes;
                        } else {
                            ++tl.comm.p2p_messages_intra;
                            tl.comm.p2p_bytes_intra += opt.message_bytes;
                        }
                    }
                }
                const Rational start = max(free_at[static_cast<std::size_t>(g)], arrival);
                const Rational end = start + duration(t);
                if (w == 0) {
                    auto& list = replica0[static_cast<std::size_t>(d - 1)];
                    if (!list.empty() && free_at[static_cast<std::size_t>(g)] == start) {
                        bind.device_prev = static_cast<int>(list.size()) - 1;
                    }
                    bind.input_tight = pred && arrival == start;
                    list.emplace_back(t, bind);
                }
                free_at[static_cast<std::size_t>(g)] = end;
                dn[key_of(t)] = Done{d, start, end};
                Event e;
                e.device = g;
                e.kind = EventKind::Compute;
                e.task = t;
                e.start = start;
                e.end = end;
                tl.events.push_back(e);
                tl.total_compute += duration(t);
                tl.compute_makespan = max(tl.compute_makespan, end);
                ++p;
                --remaining;
                progress = true;
            }
        }
        if (!progress) {
            // Follow "waits for the device that owns my missing input" until a repeat.
            std::ostringstream os;
            std::vector<int> seen(static_cast<std::size_t>(P), -1);
            int g = 0;
            while (ptr[static_cast<std::size_t>(g)] >= s.per_device[static_cast<std::size_t>(g % D)].size()) ++g;
            for (int step = 0; seen[static_cast<std::size_t>(g)] < 0; ++step) {
                seen[static_cast<std::size_t>(g)] = step;
                const Task& t = s.per_device[static_cast<std::size_t>(g % D)][ptr[static_cast<std::size_t>(g)]];
                auto pred = dataflow_predecessor(t, s.map_for(t.direction).num_stages);
                os << "device " << g + 1 << " waits at " << to_string(t) << " for " << to_string(*pred) << "; ";
                g = (g / D) * D + s.device_of(*pred) - 1;
            }
            throw Error(ErrorKind::DeadlockDetected, "cycle: " + os.str());
        }
    }

    // Gradient synchronisation: one allreduce per stage-replica group.
    std::map<int, std::vector<int>> groups;  // stage -> member devices
    for (int w = 0; w < W; ++w) {
        for (const auto& m : s.stage_maps) {
            for (int st = 1; st <= m.num_stages; ++st) groups[st].push_back(w * D + m.device(st) - 1);
        }
    }
    if (s.N > 0) {
        std::vector<Rational> last_compute(static_cast<std::size_t>(P), Rational(0));
        std::map<std::pair<int, int>, Rational> last_backward;  // (device, stage)
        for (const Event& e : tl.events) {
            if (e.kind != EventKind::Compute) continue;
            last_compute[static_cast<std::size_t>(e.device)] = max(last_compute[static_cast<std::size_t>(e.device)], e.end);
            if (e.task->kind == TaskKind::Backward) {
                auto& lb = last_backward[{e.device, e.task->stage}];
                lb = max(lb, e.end);
            }
        }
        struct Pending {
            Rational ready;
            int stage;
            std::vector<int> members;
        };
        std::vector<Pending> pend;
        for (auto& [st, mem] : groups) {
            std::sort(mem.begin(), mem.end());
            mem.erase(std::unique(mem.begin(), mem.end()), mem.end());
            if (mem.size() < 2) continue;
            Rational ready(0);
            for (int g : mem) {
                ready = max(ready, opt.eager_sync ? last_backward[{g, st}] : last_compute[static_cast<std::size_t>(g)]);
            }
            pend.push_back({ready, st, mem});
        }
        std::sort(pend.begin(), pend.end(),
                  [](const Pending& a, const Pending& b) { return std::tie(a.ready, a.stage) < std::tie(b.ready, b.stage); });
        std::vector<Rational> comm_free(static_cast<std::size_t>(P), Rational(0));
        const double vol = costs.grad_volume();
        for (const auto& pg : pend) {
            bool inter = false;
            for (int g : pg.members) inter = inter || mapping.node_of(g) != mapping.node_of(pg.members.front());
            const double bw = inter ? cluster.inter_node_bandwidth : cluster.intra_node_bandwidth;
            const Rational dur = vol == 0.0 ? Rational(0) : Rational::from_double(vol / bw);
            Rational start = pg.ready;
            for (int g : pg.members) start = max(start, comm_free[static_cast<std::size_t>(g)]);
            const Rational end = start + dur;
            for (int g : pg.members) {
                comm_free[static_cast<std::size_t>(g)] = end;
                Event e;
                e.device = g;
                e.kind = EventKind::AllReduce;
                e.start = start;
                e.end = end;
                e.payload_bytes = static_cast<std::int64_t>(vol);
                e.inter_node = inter;
                e.group_stage = pg.stage;
                e.group = pg.members;
                tl.events.push_back(e);
            }
            ++tl.comm.allreduce_groups;
            (inter ? tl.comm.allreduce_bytes_inter : tl.comm.allreduce_bytes_intra) += vol;
            tl.makespan = max(tl.makespan, end);
        }
    }
    tl.makespan = max(tl.makespan, tl.compute_makespan);
    std::sort(tl.events.begin(), tl.events.end(), event_less);

    // Activation trace: +1 chunk at forward completion, -1 at backward completion.
    for (int g = 0; g < P; ++g) {
        std::vector<std::pair<Rational, int>> deltas;
        for (const Event& e : tl.events) {
            if (e.device != g || e.kind != EventKind::Compute) continue;
            deltas.emplace_back(e.end, e.task->kind == TaskKind::Forward ? 1 : -1);
        }
        std::sort(deltas.begin(), deltas.end());
        int cur = 0;
        auto& trace = tl.memory_trace[static_cast<std::size_t>(g)];
        trace.push_back({Rational(0), 0});
        for (const auto& [t, dv] : deltas) {
            cur += dv;
            trace.push_back({t, cur});
        }
    }

    // Critical path over replica 0, preferring chains with more transfers.
    std::map<TaskKey, std::pair<int, std::size_t>> pos;
    for (int d = 0; d < D; ++d) {
        for (std::size_t i = 0; i < replica0[static_cast<std::size_t>(d)].size(); ++i) {
            pos[key_of(replica0[static_cast<std::size_t>(d)][i].first)] = {d, i};
        }
    }
    std::vector<std::vector<std::int64_t>> best(static_cast<std::size_t>(D));
    for (int d = 0; d < D; ++d) best[static_cast<std::size_t>(d)].assign(replica0[static_cast<std::size_t>(d)].size(), -1);
    auto& dn0 = done.front();
    // Tasks in start order guarantee predecessors are resolved first.
    std::vector<std::pair<Rational, TaskKey>> order;
    for (const auto& [k, v] : dn0) order.emplace_back(v.start, k);
    std::sort(order.begin(), order.end());
    std::int64_t crit = 0;
    for (const auto& [st, k] : order) {
        auto [d, i] = pos.at(k);
        const Binding& b = replica0[static_cast<std::size_t>(d)][i].second;
        std::int64_t v = 0;
        if (b.device_prev >= 0) v = std::max(v, best[static_cast<std::size_t>(d)][static_cast<std::size_t>(b.device_prev)]);
        if (b.input_tight) {
            auto [pd, pi] = pos.at(b.input);
            v = std::max(v, best[static_cast<std::size_t>(pd)][pi] + (b.input_p2p ? 1 : 0));
        }
        best[static_cast<std::size_t>(d)][i] = v;
        if (dn0.at(k).end == tl.compute_makespan) crit = std::max(crit, v);
    }
    tl.comm.critical_path_messages = crit;
    return tl;
}

Timeline simulate_canonical(const Schedule& s, const CostModel& costs) {
    ClusterSpec c = ClusterSpec::single(s.D);
    CostModel zero = costs;
    zero.gradient_volume = 0.0;
    return simulate(s, zero, c, make_mapping(c, MappingPolicy::Linear), SimOptions{});
}

Rational measured_bubble_ratio(const Timeline& t) {
    if (t.makespan == Rational(0)) throw Error(ErrorKind::EmptyTimeline, "timeline has zero makespan");
    return Rational(1) - t.total_compute / (Rational(t.devices()) * t.makespan);
}

MemoryProfile memory_profile(const Timeline& t) {
    MemoryProfile mp;
    bool first = true;
    for (int g = 0; g < t.devices(); ++g) {
        int peak = 0;
        for (const auto& sm : t.memory_trace[static_cast<std::size_t>(g)]) peak = std::max(peak, sm.activation_chunks);
        DevicePeak dp{Rational(t.resident_chunks[static_cast<std::size_t>(g)], t.v), Rational(peak, t.v)};
        if (first) {
            mp.min_activations = mp.max_activations = dp.activations;
            first = false;
        }
        mp.min_activations = min(mp.min_activations, dp.activations);
        mp.max_activations = max(mp.max_activations, dp.activations);
        mp.max_weights = max(mp.max_weights, dp.weights);
        mp.per_device.push_back(dp);
    }
    return mp;
}

const CommTotals& comm_accounting(const Timeline& t) { return t.comm; }

}  // namespace pipesched
