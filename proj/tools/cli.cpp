#include "cli.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "pipesched/analysis.hpp"
#include "pipesched/config.hpp"
#include "pipesched/error.hpp"
#include "pipesched/runtime.hpp"
#include "pipesched/schedule.hpp"
#include "pipesched/simulator.hpp"

namespace pipesched::cli {
namespace {

namespace fs = std::filesystem;

struct Options {
    std::string config;
    std::vector<std::string> approaches;
    std::string out = "out";
    std::string format;  // empty = every format
    std::string eager_sync;
    std::string early_forward;
    int v = 0;  // 0 = take it from the config
    std::string mapping;
    std::optional<std::int64_t> seed;
    std::string schedule;  // render: existing schedule document
    bool inject_fault = false;
};

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void setup_logging() {
    static bool done = false;
    if (done) return;
    done = true;
    auto logger = spdlog::stderr_color_st("pipesched");
    spdlog::set_default_logger(logger);
    spdlog::set_pattern("[%l] %v");
    spdlog::set_level(spdlog::level::warn);
    if (const char* env = std::getenv("PIPESCHED_LOG")) {
        auto lvl = spdlog::level::from_str(env);
        // from_str maps unknown names to off; only accept real names.
        if (lvl != spdlog::level::off || std::string(env) == "off") spdlog::set_level(lvl);
    }
}

bool wants(const Options& o, const char* fmt) { return o.format.empty() || o.format == fmt; }

void write_file(const fs::path& p, const std::string& content) {
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    if (!f) throw UsageError("cannot write " + p.string());
    f << content;
    spdlog::info("wrote {}", p.string());
}

fs::path prepare_out(const Options& o) {
    fs::path out(o.out);
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec || !fs::is_directory(out)) throw UsageError("output directory " + o.out + " is not writable");
    return out;
}

// Timestamps live only here, never in data files.
void write_metadata(const fs::path& out, const std::string& command, const std::vector<std::string>& args) {
    nlohmann::ordered_json meta;
    meta["command"] = command;
    meta["args"] = args;
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char buf[32];
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    meta["finished_at"] = buf;
    meta["tool_version"] = "0.1.0";
    write_file(out / "metadata.json", meta.dump(2) + "\n");
}

bool on_off(const std::string& v, bool fallback) {
    if (v.empty()) return fallback;
    return v == "on";
}

Config load(const Options& o) {
    if (o.config.empty()) throw UsageError("--config is required");
    Config c = load_config(o.config);
    c.run.eager_sync = on_off(o.eager_sync, c.run.eager_sync);
    c.run.early_forward = on_off(o.early_forward, c.run.early_forward);
    if (o.v > 0) c.run.v = o.v;
    if (o.mapping == "linear") c.run.mapping = MappingPolicy::Linear;
    if (o.mapping == "colocated") c.run.mapping = MappingPolicy::ReplicasColocated;
    if (o.seed) c.verify.seeds = {static_cast<std::uint64_t>(*o.seed)};
    return c;
}

std::vector<ApproachId> resolve(const Options& o, const std::vector<ApproachId>& fallback, bool early_forward) {
    std::vector<ApproachId> out;
    if (!o.approaches.empty()) {
        for (const auto& name : o.approaches) {
            auto id = parse_approach(name);
            if (!id) throw Error(ErrorKind::UnknownApproach, "--approach '" + name + "' is not a known approach");
            out.push_back(*id);
        }
    } else {
        out = fallback;
    }
    if (out.empty()) throw UsageError("no approach given (use --approach or run.approaches)");
    if (early_forward) {
        for (auto& a : out) {
            if (a == ApproachId::BitPipe) a = ApproachId::BitPipeEarlyForward;
        }
    }
    return out;
}

Schedule build_with_context(ApproachId a, const Config& c) {
    const int d = c.cluster.devices_per_pipeline;
    const int n = static_cast<int>(c.model.micro_batches);
    try {
        return build(a, d, n, c.run.v);
    } catch (const Error& e) {
        throw Error(e.kind(), std::string(approach_name(a)) + " with cluster.devices_per_pipeline=" +
                                  std::to_string(d) + ", model.micro_batches=" + std::to_string(n) +
                                  ", run.v=" + std::to_string(c.run.v) + ": " + e.detail());
    }
}

std::string file_stem(ApproachId a) { return std::string(approach_name(a)); }

std::string schedule_csv(const Schedule& s) {
    std::string out = "device,index,kind,micro_batch,stage,direction,unit,slot\n";
    for (std::size_t d = 0; d < s.per_device.size(); ++d) {
        for (std::size_t i = 0; i < s.per_device[d].size(); ++i) {
            const Task& t = s.per_device[d][i];
            out += std::to_string(d + 1) + "," + std::to_string(i) + "," +
                   (t.kind == TaskKind::Forward ? "F" : "B") + "," + std::to_string(t.micro_batch) + "," +
                   std::to_string(t.stage) + "," + (t.direction == Direction::Down ? "down" : "up") + "," +
                   std::to_string(t.unit) + "," +
                   (s.has_slot_grid() ? std::to_string(s.slot_start[d][i]) : std::string()) + "\n";
        }
    }
    return out;
}

Timeline run_simulation(const Schedule& s, const Config& c) {
    if (c.run.canonical) return simulate_canonical(s);
    SimOptions so;
    so.eager_sync = c.run.eager_sync;
    so.message_bytes = message_size(c.model);
    return simulate(s, c.costs, c.cluster, make_mapping(c.cluster, c.run.mapping), so);
}

int cmd_plan(const Options& o) {
    Config c = load(o);
    auto approaches = resolve(o, c.run.approaches, c.run.early_forward);
    fs::path out = prepare_out(o);
    for (ApproachId a : approaches) {
        Schedule s = build_with_context(a, c);
        const std::string stem = file_stem(a);
        if (wants(o, "json")) write_file(out / (stem + ".schedule.json"), schedule_to_json(s));
        if (wants(o, "csv")) write_file(out / (stem + ".schedule.csv"), schedule_csv(s));
        Timeline t = simulate_canonical(s);
        if (wants(o, "svg")) write_file(out / (stem + ".gantt.svg"), timeline_to_svg(t));
        write_file(out / (stem + ".grid.txt"), slot_grid_text(t));
        std::cout << stem << ": " << s.task_count() << " tasks, canonical makespan " << t.makespan.str() << "\n";
    }
    return kExitOk;
}

ComparisonEntry entry_of(ApproachId a, const Config& c, const Timeline& t) {
    MemoryProfile mp = memory_profile(t);
    ComparisonEntry e;
    e.approach = a;
    e.D = c.cluster.devices_per_pipeline;
    e.N = static_cast<int>(c.model.micro_batches);
    e.W = c.cluster.replicated_pipelines;
    e.B = c.model.micro_batch_size;
    e.simulated = SimulatedRow{t.makespan, measured_bubble_ratio(t), mp.min_activations, mp.max_activations,
                               mp.max_weights, t.comm};
    e.samples_per_sec = static_cast<double>(c.model.mini_batch_size) / t.makespan.to_double();
    try {
        e.analytic = AnalyticRow{a, analytic_bubble_ratio(a, e.D, e.N), analytic_memory(a, e.D, e.N), std::nullopt};
    } catch (const Error& err) {
        if (err.kind() != ErrorKind::UnsupportedCombination) throw;
    }
    return e;
}

int cmd_simulate(const Options& o) {
    Config c = load(o);
    auto approaches = resolve(o, c.run.approaches, c.run.early_forward);
    fs::path out = prepare_out(o);
    ComparisonReport report;
    for (ApproachId a : approaches) {
        Schedule s = build_with_context(a, c);
        Timeline t = run_simulation(s, c);
        const std::string stem = file_stem(a);
        if (wants(o, "json")) write_file(out / (stem + ".timeline.json"), timeline_to_json(t));
        if (wants(o, "svg")) write_file(out / (stem + ".gantt.svg"), timeline_to_svg(t));
        report.rows.push_back(entry_of(a, c, t));
    }
    if (wants(o, "csv")) write_file(out / "report.csv", report_csv(report));
    std::cout << report_table(report);
    return kExitOk;
}

int cmd_compare(const Options& o) {
    Config c = load(o);
    auto approaches = resolve(o, c.run.approaches, c.run.early_forward);
    fs::path out = prepare_out(o);
    const int d = c.cluster.devices_per_pipeline;
    const int n = static_cast<int>(c.model.micro_batches);
    ComparisonReport report;
    for (ApproachId a : approaches) {
        Schedule s = build_with_context(a, c);
        report.rows.push_back(entry_of(a, c, simulate_canonical(s)));
    }
    Validation val = validate_against_analytic(report);

    std::ostringstream text;
    text << "Closed forms at D=" << d << ", N=" << n << "\n";
    for (ApproachId a : approaches) {
        try {
            ClosedForm f = closed_form(a);
            AnalyticMemory m = analytic_memory(a, d, n);
            text << "  " << approach_name(a) << ": bubble " << f.bubble_ratio << " = "
                 << analytic_bubble_ratio(a, d, n).str() << "; weights " << f.weights << "; activations "
                 << f.activations << " = [" << m.activations_low.str() << ", " << m.activations_high.str()
                 << "]\n";
        } catch (const Error& e) {
            text << "  " << approach_name(a) << ": " << e.detail() << "\n";
        }
    }
    text << "\n" << report_table(report) << "\n";
    for (const auto& r : val.rows) {
        text << (r.pass ? "PASS " : "FAIL ") << approach_name(r.approach);
        if (!r.detail.empty()) text << " (" << r.detail << ")";
        text << "\n";
    }

    std::string comm = "approach,formula,p2p_messages,critical_path_messages_sim,comm_seconds\n";
    for (ApproachId a : approaches) {
        try {
            const auto count = analytic_p2p_count(a, d, n);
            const double secs = analytic_comm_time(a, d, n, c.model, c.cluster, c.costs.grad_volume());
            char buf[64];
            std::snprintf(buf, sizeof buf, "%.9g", secs);
            std::int64_t sim = 0;
            for (const auto& e : report.rows) {
                if (e.approach == a) sim = e.simulated.comm.critical_path_messages;
            }
            comm += std::string(approach_name(a)) + "," + closed_form(a).comm + "," + std::to_string(count) + "," +
                    std::to_string(sim) + "," + buf + "\n";
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::UnsupportedCombination) throw;
        }
    }
    if (wants(o, "csv")) {
        write_file(out / "report.csv", report_csv(report));
        write_file(out / "comm.csv", comm);
    }
    write_file(out / "report.txt", text.str());
    std::cout << text.str();
    return kExitOk;
}

int cmd_search(const Options& o) {
    Config c = load(o);
    auto fallback = c.search.approaches.empty() ? c.run.approaches : c.search.approaches;
    auto approaches = resolve(o, fallback, c.run.early_forward);
    fs::path out = prepare_out(o);
    SearchOptions so;
    so.eager_sync = c.run.eager_sync;
    so.mapping = c.run.mapping;
    so.v = c.run.v;
    SearchResult r = grid_search(c.model, c.cluster, workload_of(c), c.search.space, approaches, so);
    write_file(out / "search.csv", search_csv(r));
    for (const auto& b : r.best) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.6g", b.entry.samples_per_sec);
        std::cout << "best " << approach_name(b.approach) << ": W=" << b.W << " D=" << b.D << " B=" << b.B
                  << " N=" << b.N << " samples/s=" << buf << "\n";
    }
    return kExitOk;
}

int cmd_verify(const Options& o) {
    Config c = load(o);
    auto approaches = resolve(o, c.run.approaches, false);
    fs::path out = prepare_out(o);
    VerifyOptions vo;
    vo.approaches = approaches;
    vo.D = c.verify.D;
    vo.N = c.verify.N;
    vo.v = c.verify.v;
    vo.seeds = c.verify.seeds;
    vo.width = c.verify.width;
    vo.rows = c.verify.rows;
    vo.tolerance = c.verify.tolerance;
    vo.inject_fault = o.inject_fault;
    auto cases = verify_equivalence(vo);
    std::string csv = "approach,D,N,v,seed,pass,max_rel_error,error\n";
    bool ok = true;
    for (const auto& k : cases) {
        char err[32];
        std::snprintf(err, sizeof err, "%.3e", k.max_rel_error);
        std::cout << (k.pass ? "PASS " : "FAIL ") << approach_name(k.approach) << " D=" << k.D << " N=" << k.N
                  << " v=" << k.v << " seed=" << k.seed << " max_rel=" << err;
        if (!k.error.empty()) std::cout << " " << k.error;
        std::cout << "\n";
        std::string e = k.error;
        std::replace(e.begin(), e.end(), ',', ';');
        csv += std::string(approach_name(k.approach)) + "," + std::to_string(k.D) + "," + std::to_string(k.N) + "," +
               std::to_string(k.v) + "," + std::to_string(k.seed) + "," + (k.pass ? "1" : "0") + "," + err + "," +
               e + "\n";
        ok = ok && k.pass;
    }
    if (wants(o, "csv")) write_file(out / "verify.csv", csv);
    std::cout << (ok ? "verify: all " : "verify: FAILED among ") << cases.size() << " cases\n";
    return ok ? kExitOk : kExitVerify;
}

int cmd_render(const Options& o) {
    fs::path out = prepare_out(o);
    std::vector<std::pair<std::string, Schedule>> items;
    if (!o.schedule.empty()) {
        std::ifstream in(o.schedule, std::ios::binary);
        if (!in) throw UsageError("cannot read " + o.schedule);
        std::stringstream ss;
        ss << in.rdbuf();
        Schedule s = schedule_from_json(ss.str());
        items.emplace_back(fs::path(o.schedule).stem().stem().string(), std::move(s));
    } else {
        Config c = load(o);
        for (ApproachId a : resolve(o, c.run.approaches, c.run.early_forward)) {
            items.emplace_back(file_stem(a), build_with_context(a, c));
        }
    }
    for (const auto& [stem, s] : items) {
        Timeline t = simulate_canonical(s);
        if (wants(o, "svg")) write_file(out / (stem + ".gantt.svg"), timeline_to_svg(t));
        if (wants(o, "json")) write_file(out / (stem + ".timeline.json"), timeline_to_json(t));
        write_file(out / (stem + ".grid.txt"), slot_grid_text(t));
    }
    return kExitOk;
}

void add_common(CLI::App* sc, Options& o) {
    sc->add_option("--config", o.config, "TOML or JSON config with cluster, model and costs sections");
    sc->add_option("--approach", o.approaches, "approach name, repeatable");
    sc->add_option("--out", o.out, "output directory")->capture_default_str();
    sc->add_option("--format", o.format, "restrict data outputs to one format")
        ->check(CLI::IsMember({"json", "csv", "svg"}));
    sc->add_option("--eager-sync", o.eager_sync, "launch gradient allreduce after each stage's last backward")
        ->check(CLI::IsMember({"on", "off"}));
    sc->add_option("--early-forward", o.early_forward, "use the early-forward BitPipe variant")
        ->check(CLI::IsMember({"on", "off"}));
    sc->add_option("--v", o.v, "model chunks per device")->check(CLI::PositiveNumber);
    sc->add_option("--mapping", o.mapping, "device mapping policy")->check(CLI::IsMember({"colocated", "linear"}));
    sc->add_option("--seed", o.seed, "seed for the verification toy model and batch");
}

}  // namespace

int run(const std::vector<std::string>& args) {
    setup_logging();
    Options o;
    CLI::App app{"Plan, simulate and verify synchronous pipeline-parallel schedules.", "pipesched"};
    app.require_subcommand(1);
    struct Sub {
        const char* name;
        const char* help;
        int (*fn)(const Options&);
    };
    const Sub subs[] = {
        {"plan", "build schedules and write them out", cmd_plan},
        {"simulate", "simulate schedules and write timelines, Gantt charts and a report", cmd_simulate},
        {"compare", "closed forms against canonical simulation", cmd_compare},
        {"search", "grid search over W, D and B", cmd_search},
        {"verify", "numeric equivalence against the sequential baseline", cmd_verify},
        {"render", "render schedules as Gantt charts and slot grids", cmd_render},
    };
    std::vector<std::pair<CLI::App*, int (*)(const Options&)>> commands;
    for (const auto& s : subs) {
        auto* sc = app.add_subcommand(s.name, s.help);
        add_common(sc, o);
        if (std::string(s.name) == "render") sc->add_option("--schedule", o.schedule, "schedule JSON to render");
        if (std::string(s.name) == "verify") sc->add_flag("--inject-fault", o.inject_fault, "corrupt every schedule first");
        commands.emplace_back(sc, s.fn);
    }

    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    for (const auto& [sc, fn] : commands) {
        if (!sc->parsed()) continue;
        try {
            int code = fn(o);
            if (!o.schedule.empty() || !o.config.empty()) {
                write_metadata(fs::path(o.out), sc->get_name(), {args.begin() + 1, args.end()});
            }
            return code;
        } catch (const UsageError& e) {
            spdlog::error("{}", e.what());
            std::cerr << "error: " << e.what() << "\n";
            return kExitUsage;
        } catch (const Error& e) {
            std::cerr << "error: " << e.what() << "\n";
            return is_config_error(e.kind()) ? kExitUsage : kExitDomain;
        }
    }
    return kExitUsage;
}

}  // namespace pipesched::cli
