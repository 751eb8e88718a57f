#include "pipesched/analysis.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <sstream>
#include <thread>

#include "pipesched/error.hpp"

namespace pipesched {
namespace {

[[noreturn]] void unsupported(ApproachId a, const std::string& why) {
    throw Error(ErrorKind::UnsupportedCombination, std::string(approach_name(a)) + ": " + why);
}

// Mirrors the builders' preconditions so closed forms are only offered where a
// schedule exists.
void check_domain(ApproachId a, int d, int n) {
    if (d < 1 || n < 1) unsupported(a, "D and N must be positive");
    switch (a) {
        case ApproachId::GPipe: return;
        case ApproachId::Dapple1F1B:
            if (n < d) unsupported(a, "needs N >= D");
            return;
        case ApproachId::InterleavedLooping:
            if (n % d != 0) unsupported(a, "needs N a multiple of D");
            return;
        case ApproachId::VShapedInterleaved: unsupported(a, "no closed form for the single V-shaped pipeline");
        case ApproachId::Chimera:
            if (d % 2 != 0 || n % 2 != 0 || n < d) unsupported(a, "needs even D, even N and N >= D");
            return;
        case ApproachId::BitPipe:
            if (d % 2 != 0 || n % d != 0) unsupported(a, "needs even D and N a multiple of D");
            return;
        case ApproachId::BitPipeEarlyForward:
            if (d % 2 != 0 || n % d != 0 || n < 2 * d) unsupported(a, "needs even D and N a multiple of D, N >= 2D");
            return;
    }
}

std::string fmt_double(double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", x);
    return buf;
}

}  // namespace

Rational analytic_bubble_ratio(ApproachId a, int d, int n) {
    check_domain(a, d, n);
    switch (a) {
        case ApproachId::GPipe:
        case ApproachId::Dapple1F1B: return Rational(d - 1, n + d - 1);
        case ApproachId::InterleavedLooping: return Rational(d - 1, 2 * n + d - 1);
        case ApproachId::Chimera: return Rational(2 * (d - 2), 3 * n + 2 * (d - 2));
        case ApproachId::BitPipe: return Rational(d - 2, 3 * n + d - 2);
        case ApproachId::BitPipeEarlyForward: return Rational(d - 2, 4 * n + d - 2);
        case ApproachId::VShapedInterleaved: break;
    }
    unsupported(a, "no closed form");
}

ClosedForm closed_form(ApproachId a) {
    const std::string p2p = "(2N+2(D-1))*msg/W_inter";
    const std::string p2p_int = "(4N+4(D-1))*msg/W_inter";
    switch (a) {
        case ApproachId::GPipe: return {"(D-1)/(N+D-1)", "Mθ", "N*Ma", ""};
        case ApproachId::Dapple1F1B: return {"(D-1)/(N+D-1)", "Mθ", "[Ma, D*Ma]", p2p};
        case ApproachId::InterleavedLooping: return {"(D-1)/(2N+D-1)", "Mθ", "[(D+1)/2*Ma, D*Ma]", p2p_int};
        case ApproachId::Chimera:
            return {"(D-2)/(3N/2+D-2)", "2Mθ", "[(D+2)/2*Ma, D*Ma]", p2p + " + M_grad/W_intra"};
        case ApproachId::BitPipe:
            return {"(D-2)/(3N+D-2)", "2Mθ", "[(D+3)/2*Ma, D*Ma]", p2p_int + " + M_grad/W_intra"};
        case ApproachId::BitPipeEarlyForward: return {"(D-2)/(4N+D-2)", "2Mθ", "peak (3D-3)/2*Ma", ""};
        case ApproachId::VShapedInterleaved: break;
    }
    unsupported(a, "no closed form");
}

Rational early_forward_peak(int d) { return Rational(3 * d - 3, 2); }
Rational mixpipe_peak(int d) { return Rational(3 * d - 2, 2); }
Rational chimera_forward_doubling_peak(int d) { return Rational(2 * d); }

AnalyticMemory analytic_memory(ApproachId a, int d, int n) {
    check_domain(a, d, n);
    // The bidirectional lower bounds exceed D at D = 2; the range is clamped so
    // that low <= high always holds.
    auto range = [](Rational w, Rational low, Rational high) { return AnalyticMemory{w, min(low, high), high}; };
    switch (a) {
        case ApproachId::GPipe: return range(1, n, n);
        case ApproachId::Dapple1F1B: return range(1, 1, d);
        case ApproachId::InterleavedLooping: return range(1, Rational(d + 1, 2), d);
        case ApproachId::Chimera: return range(2, Rational(d + 2, 2), d);
        case ApproachId::BitPipe: return range(2, Rational(d + 3, 2), d);
        case ApproachId::BitPipeEarlyForward: return range(2, Rational(d + 3, 2), early_forward_peak(d));
        case ApproachId::VShapedInterleaved: break;
    }
    unsupported(a, "no closed form");
}

std::int64_t analytic_p2p_count(ApproachId a, int d, int n) {
    const std::int64_t base = 2LL * n + 2LL * (d - 1);
    switch (a) {
        case ApproachId::Dapple1F1B:
        case ApproachId::Chimera: return base;
        case ApproachId::InterleavedLooping:
        case ApproachId::BitPipe: return 2 * base;
        default: unsupported(a, "no communication formula");
    }
}

double analytic_comm_time(ApproachId a, int d, int n, const ModelProfile& profile, const ClusterSpec& cluster,
                          double grad_volume) {
    const double msg = static_cast<double>(message_size(profile));
    double t = static_cast<double>(analytic_p2p_count(a, d, n)) * msg / cluster.inter_node_bandwidth;
    if (is_bidirectional(a)) t += grad_volume / cluster.intra_node_bandwidth;
    return t;
}

ComparisonReport compare_canonical(const std::vector<ApproachId>& approaches, int d, int n, int v) {
    ComparisonReport report;
    for (ApproachId a : approaches) {
        Schedule s = build(a, d, n, v);
        Timeline t = simulate_canonical(s);
        MemoryProfile mp = memory_profile(t);
        ComparisonEntry e;
        e.approach = a;
        e.D = d;
        e.N = n;
        e.simulated = SimulatedRow{t.makespan, measured_bubble_ratio(t), mp.min_activations, mp.max_activations,
                                   mp.max_weights, t.comm};
        e.samples_per_sec = static_cast<double>(n) / t.makespan.to_double();
        try {
            AnalyticRow row{a, analytic_bubble_ratio(a, d, n), analytic_memory(a, d, n), std::nullopt};
            e.analytic = row;
        } catch (const Error& err) {
            if (err.kind() != ErrorKind::UnsupportedCombination) throw;
        }
        report.rows.push_back(std::move(e));
    }
    return report;
}

Validation validate_against_analytic(const ComparisonReport& report) {
    Validation v;
    for (const auto& e : report.rows) {
        RowVerdict r{e.approach, true, Rational(0), {}};
        if (!e.analytic) {
            r.detail = "no closed form, not checked";
            v.rows.push_back(std::move(r));
            continue;
        }
        const auto& an = *e.analytic;
        r.bubble_delta = e.simulated.bubble_ratio - an.bubble_ratio;
        std::ostringstream why;
        if (r.bubble_delta != Rational(0)) {
            r.pass = false;
            why << "bubble " << e.simulated.bubble_ratio.str() << " vs " << an.bubble_ratio.str() << "; ";
        }
        if (e.simulated.peak_activations_low < an.memory.activations_low ||
            e.simulated.peak_activations_high > an.memory.activations_high) {
            r.pass = false;
            why << "activations [" << e.simulated.peak_activations_low.str() << ", "
                << e.simulated.peak_activations_high.str() << "] outside [" << an.memory.activations_low.str() << ", "
                << an.memory.activations_high.str() << "]; ";
        }
        if (e.simulated.peak_weights != an.memory.weights) {
            r.pass = false;
            why << "weights " << e.simulated.peak_weights.str() << " vs " << an.memory.weights.str() << "; ";
        }
        r.detail = why.str();
        if (!r.detail.empty()) r.detail.resize(r.detail.size() - 2);
        v.pass = v.pass && r.pass;
        v.rows.push_back(std::move(r));
    }
    return v;
}

namespace {

constexpr const char* kCsvHeader =
    "approach,D,N,W,B,bubble_ratio_analytic,bubble_ratio_sim,peak_act_Ma,peak_wt_Mθ,p2p_bytes,ar_bytes,makespan,"
    "samples_per_sec";

std::vector<std::string> csv_cells(const ComparisonEntry& e) {
    return {std::string(approach_name(e.approach)),
            std::to_string(e.D),
            std::to_string(e.N),
            std::to_string(e.W),
            std::to_string(e.B),
            e.analytic ? e.analytic->bubble_ratio.str() : "",
            e.simulated.bubble_ratio.str(),
            e.simulated.peak_activations_high.str(),
            e.simulated.peak_weights.str(),
            std::to_string(e.simulated.comm.p2p_bytes()),
            fmt_double(e.simulated.comm.allreduce_bytes()),
            e.simulated.makespan.str(),
            fmt_double(e.samples_per_sec)};
}

std::string join(const std::vector<std::string>& cells) {
    std::string out;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) out += ',';
        out += cells[i];
    }
    return out;
}

}  // namespace

std::string report_csv(const ComparisonReport& report) {
    std::string out = std::string(kCsvHeader) + "\n";
    for (const auto& e : report.rows) out += join(csv_cells(e)) + "\n";
    return out;
}

std::string report_table(const ComparisonReport& report) {
    std::vector<std::vector<std::string>> rows;
    rows.push_back({"approach", "D", "N", "bubble(analytic)", "bubble(sim)", "act(analytic)", "act(sim)", "weights",
                    "makespan"});
    for (const auto& e : report.rows) {
        std::string an_bubble = "n/a", an_act = "n/a";
        if (e.analytic) {
            an_bubble = e.analytic->bubble_ratio.str();
            an_act = "[" + e.analytic->memory.activations_low.str() + ", " +
                     e.analytic->memory.activations_high.str() + "]";
        }
        rows.push_back({std::string(approach_name(e.approach)), std::to_string(e.D), std::to_string(e.N), an_bubble,
                        e.simulated.bubble_ratio.str(), an_act,
                        "[" + e.simulated.peak_activations_low.str() + ", " +
                            e.simulated.peak_activations_high.str() + "]",
                        e.simulated.peak_weights.str(), e.simulated.makespan.str()});
    }
    std::vector<std::size_t> width(rows[0].size(), 0);
    for (const auto& r : rows) {
        for (std::size_t i = 0; i < r.size(); ++i) width[i] = std::max(width[i], r[i].size());
    }
    std::string out;
    for (const auto& r : rows) {
        std::string line;
        for (std::size_t i = 0; i < r.size(); ++i) {
            line += r[i];
            if (i + 1 < r.size()) line += std::string(width[i] - r[i].size() + 2, ' ');
        }
        out += line + "\n";
    }
    return out;
}

namespace {

struct Job {
    ApproachId approach;
    int W, D;
    std::int64_t B;
};

SearchRow run_job(const Job& j, const ModelProfile& profile, const ClusterSpec& cluster, const WorkloadModel& wl,
                  const SearchOptions& opt) {
    SearchRow row;
    row.approach = j.approach;
    row.W = j.W;
    row.D = j.D;
    row.B = j.B;
    const std::int64_t b_hat = profile.mini_batch_size;
    if (static_cast<std::int64_t>(j.W) * j.D > cluster.total_devices) {
        row.skipped = "W*D exceeds the available devices";
        return row;
    }
    if (b_hat % (j.B * j.W) != 0) {
        row.skipped = "mini-batch not divisible by B*W";
        return row;
    }
    row.N = static_cast<int>(b_hat / (j.B * j.W));
    ClusterSpec c = cluster;
    c.devices_per_pipeline = j.D;
    c.replicated_pipelines = j.W;
    c.total_devices = j.W * j.D;
    c.devices_per_node = std::min(cluster.devices_per_node, c.total_devices);
    if (c.total_devices % c.devices_per_node != 0) {
        row.skipped = "devices per node does not divide W*D";
        return row;
    }
    try {
        Schedule s = build(j.approach, j.D, row.N, opt.v);
        CostModel costs;
        const double tf = wl.forward_seconds_per_sample * static_cast<double>(j.B) / j.D;
        costs.tf = Rational::from_double(tf);
        costs.tb = Rational::from_double(tf * wl.backward_factor);
        costs.weights_mem = wl.model_weight_bytes / j.D;
        costs.activations_mem = wl.activation_bytes_per_sample * static_cast<double>(j.B) / j.D;
        costs.gradient_volume = wl.model_weight_bytes / (static_cast<double>(j.D) * s.v);
        ModelProfile p = profile;
        p.micro_batch_size = j.B;
        p.micro_batches = row.N;
        SimOptions so;
        so.eager_sync = opt.eager_sync;
        so.message_bytes = message_size(p);
        Timeline t = simulate(s, costs, c, make_mapping(c, opt.mapping), so);
        MemoryProfile mp = memory_profile(t);
        auto& e = row.entry;
        e.approach = j.approach;
        e.D = j.D;
        e.N = row.N;
        e.W = j.W;
        e.B = j.B;
        e.simulated = SimulatedRow{t.makespan, measured_bubble_ratio(t), mp.min_activations, mp.max_activations,
                                   mp.max_weights, t.comm};
        e.samples_per_sec = static_cast<double>(b_hat) / t.makespan.to_double();
        try {
            e.analytic = AnalyticRow{j.approach, analytic_bubble_ratio(j.approach, j.D, row.N),
                                     analytic_memory(j.approach, j.D, row.N), std::nullopt};
        } catch (const Error& err) {
            if (err.kind() != ErrorKind::UnsupportedCombination) throw;
        }
        row.feasible = true;
    } catch (const Error& err) {
        row.skipped = err.what();
    }
    return row;
}

}  // namespace

SearchResult grid_search(const ModelProfile& profile, const ClusterSpec& cluster, const WorkloadModel& workload,
                         const SearchSpace& space, const std::vector<ApproachId>& approaches,
                         const SearchOptions& options) {
    if (space.W.empty() || space.D.empty() || space.B.empty() || approaches.empty()) {
        throw Error(ErrorKind::EmptySpace, "search space has an empty dimension");
    }
    std::vector<Job> jobs;
    for (ApproachId a : approaches) {
        for (int w : space.W) {
            for (int d : space.D) {
                for (std::int64_t b : space.B) jobs.push_back({a, w, d, b});
            }
        }
    }
    SearchResult res;
    res.rows.resize(jobs.size());
    unsigned threads = options.threads > 0 ? static_cast<unsigned>(options.threads)
                                           : std::max(1u, std::thread::hardware_concurrency());
    threads = std::min<unsigned>(threads, static_cast<unsigned>(jobs.size()));
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < jobs.size(); i = next++) {
            res.rows[i] = run_job(jobs[i], profile, cluster, workload, options);
        }
    };
    std::vector<std::thread> pool;
    for (unsigned i = 1; i < threads; ++i) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();

    for (ApproachId a : approaches) {
        const SearchRow* best = nullptr;
        for (const auto& r : res.rows) {
            if (r.approach != a || !r.feasible) continue;
            if (!best || r.entry.samples_per_sec > best->entry.samples_per_sec) best = &r;
        }
        if (best) res.best.push_back(*best);
    }
    return res;
}

std::string search_csv(const SearchResult& result) {
    std::string out = std::string(kCsvHeader) + ",best,skipped\n";
    for (const auto& r : result.rows) {
        bool is_best = false;
        for (const auto& b : result.best) {
            is_best = is_best || (b.approach == r.approach && b.W == r.W && b.D == r.D && b.B == r.B);
        }
        std::vector<std::string> cells;
        if (r.feasible) {
            cells = csv_cells(r.entry);
        } else {
            cells = {std::string(approach_name(r.approach)), std::to_string(r.D), std::to_string(r.N),
                     std::to_string(r.W), std::to_string(r.B), "", "", "", "", "", "", "", ""};
        }
        cells.push_back(is_best ? "1" : "0");
        std::string skipped = r.skipped;
        std::replace(skipped.begin(), skipped.end(), ',', ';');
        cells.push_back(skipped);
        out += join(cells) + "\n";
    }
    return out;
}

}  // namespace pipesched
