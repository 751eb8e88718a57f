#include <algorithm>
#include <cstdio>
#include <sstream>

#include <json.hpp>

#include "pipesched/error.hpp"
#include "pipesched/schedule.hpp"
#include "pipesched/simulator.hpp"

namespace pipesched {
namespace {

using nlohmann::ordered_json;

const char* kind_name(EventKind k) {
    switch (k) {
        case EventKind::Compute: return "compute";
        case EventKind::P2PSend: return "p2p_send";
        case EventKind::P2PRecv: return "p2p_recv";
        case EventKind::LocalCopy: return "local_copy";
        case EventKind::AllReduce: return "allreduce";
    }
    return "?";
}

std::string fixed(double x, int prec = 6) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", prec, x);
    return buf;
}

ordered_json task_json(const Task& t) {
    ordered_json j;
    j["kind"] = t.kind == TaskKind::Forward ? "F" : "B";
    j["mb"] = t.micro_batch;
    j["stage"] = t.stage;
    j["dir"] = t.direction == Direction::Down ? "down" : "up";
    j["unit"] = t.unit;
    return j;
}

Task task_from(const ordered_json& j) {
    Task t;
    const std::string k = j.at("kind").get<std::string>();
    if (k != "F" && k != "B") throw Error(ErrorKind::ConfigParse, "task kind must be F or B");
    t.kind = k == "F" ? TaskKind::Forward : TaskKind::Backward;
    t.micro_batch = j.at("mb").get<int>();
    t.stage = j.at("stage").get<int>();
    const std::string d = j.at("dir").get<std::string>();
    if (d != "down" && d != "up") throw Error(ErrorKind::ConfigParse, "task dir must be down or up");
    t.direction = d == "down" ? Direction::Down : Direction::Up;
    t.unit = j.value("unit", 0);
    return t;
}

std::string token(const Timeline& t, const Task& task) {
    std::string s = (task.kind == TaskKind::Forward ? "F" : "B") + std::to_string(task.micro_batch);
    if (t.v > 1) s.push_back(static_cast<char>('a' + (task.stage - 1) / t.D));
    return s;
}

}  // namespace

std::string schedule_to_json(const Schedule& s) {
    ordered_json j;
    j["approach"] = std::string(approach_name(s.approach));
    j["D"] = s.D;
    j["N"] = s.N;
    j["v"] = s.v;
    j["K"] = s.K;
    j["stage_maps"] = ordered_json::array();
    for (const auto& m : s.stage_maps) {
        ordered_json mj;
        mj["direction"] = m.direction == Direction::Down ? "down" : "up";
        mj["num_stages"] = m.num_stages;
        mj["assignment"] = m.assignment;
        ordered_json loc = ordered_json::array();
        for (auto [a, b] : m.locality()) loc.push_back({a, b});
        mj["locality"] = loc;
        j["stage_maps"].push_back(mj);
    }
    j["per_device"] = ordered_json::array();
    for (std::size_t d = 0; d < s.per_device.size(); ++d) {
        ordered_json row = ordered_json::array();
        for (std::size_t i = 0; i < s.per_device[d].size(); ++i) {
            ordered_json tj = task_json(s.per_device[d][i]);
            if (s.has_slot_grid()) tj["slot"] = s.slot_start[d][i];
            row.push_back(tj);
        }
        j["per_device"].push_back(row);
    }
    return j.dump(1) + "\n";
}

Schedule schedule_from_json(const std::string& text) {
    try {
        ordered_json j = ordered_json::parse(text);
        Schedule s;
        auto a = parse_approach(j.at("approach").get<std::string>());
        if (!a) throw Error(ErrorKind::UnknownApproach, j.at("approach").get<std::string>());
        s.approach = *a;
        s.D = j.at("D").get<int>();
        s.N = j.at("N").get<int>();
        s.v = j.at("v").get<int>();
        s.K = j.value("K", 1);
        for (const auto& mj : j.at("stage_maps")) {
            StageMap m;
            m.direction = mj.at("direction").get<std::string>() == "up" ? Direction::Up : Direction::Down;
            m.num_stages = mj.at("num_stages").get<int>();
            m.assignment = mj.at("assignment").get<std::vector<int>>();
            s.stage_maps.push_back(m);
        }
        bool slots = false;
        for (const auto& row : j.at("per_device")) {
            std::vector<Task> tasks;
            std::vector<std::int64_t> st;
            for (const auto& tj : row) {
                tasks.push_back(task_from(tj));
                if (tj.contains("slot")) {
                    slots = true;
                    st.push_back(tj.at("slot").get<std::int64_t>());
                }
            }
            s.per_device.push_back(std::move(tasks));
            s.slot_start.push_back(std::move(st));
        }
        if (!slots) s.slot_start.clear();
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::ConfigParse, std::string("schedule document: ") + e.what());
    }
}

std::string timeline_to_json(const Timeline& t) {
    ordered_json j;
    j["approach"] = std::string(approach_name(t.approach));
    j["D"] = t.D;
    j["W"] = t.W;
    j["N"] = t.N;
    j["v"] = t.v;
    j["makespan"] = t.makespan.str();
    j["makespan_value"] = fixed(t.makespan.to_double(), 9);
    j["bubble_ratio"] = t.makespan == Rational(0) ? std::string("0") : measured_bubble_ratio(t).str();
    ordered_json c;
    c["p2p_messages"] = t.comm.p2p_messages;
    c["p2p_messages_intra"] = t.comm.p2p_messages_intra;
    c["p2p_messages_inter"] = t.comm.p2p_messages_inter;
    c["p2p_bytes_intra"] = t.comm.p2p_bytes_intra;
    c["p2p_bytes_inter"] = t.comm.p2p_bytes_inter;
    c["local_copies"] = t.comm.local_copies;
    c["allreduce_groups"] = t.comm.allreduce_groups;
    c["allreduce_bytes_intra"] = fixed(t.comm.allreduce_bytes_intra, 0);
    c["allreduce_bytes_inter"] = fixed(t.comm.allreduce_bytes_inter, 0);
    c["critical_path_messages"] = t.comm.critical_path_messages;
    j["comm_totals"] = c;
    auto mp = memory_profile(t);
    ordered_json mem = ordered_json::array();
    for (std::size_t g = 0; g < mp.per_device.size(); ++g) {
        mem.push_back({{"device", g + 1},
                       {"peak_weights_Mtheta", mp.per_device[g].weights.str()},
                       {"peak_activations_Ma", mp.per_device[g].activations.str()}});
    }
    j["memory"] = mem;
    ordered_json ev = ordered_json::array();
    for (const Event& e : t.events) {
        ordered_json ej;
        ej["device"] = e.device + 1;
        ej["kind"] = kind_name(e.kind);
        if (e.task) ej["task"] = task_json(*e.task);
        ej["start"] = e.start.str();
        ej["end"] = e.end.str();
        if (e.kind != EventKind::Compute) ej["bytes"] = e.payload_bytes;
        if (e.peer >= 0) ej["peer"] = e.peer + 1;
        if (e.kind == EventKind::P2PSend || e.kind == EventKind::P2PRecv || e.kind == EventKind::AllReduce) {
            ej["inter_node"] = e.inter_node;
        }
        if (e.kind == EventKind::AllReduce) {
            ej["stage"] = e.group_stage;
            std::vector<int> members;
            for (int g : e.group) members.push_back(g + 1);
            ej["group"] = members;
        }
        ev.push_back(ej);
    }
    j["events"] = ev;
    return j.dump(1) + "\n";
}

std::string slot_grid_text(const Timeline& t, const CostModel& costs) {
    const Rational slot = costs.tf / Rational(t.v);
    const Rational cells_q = t.compute_makespan / slot;
    const auto cells = static_cast<std::size_t>((cells_q.num() + cells_q.den() - 1) / cells_q.den());
    std::vector<std::vector<std::string>> grid(static_cast<std::size_t>(t.D), std::vector<std::string>(cells, "."));
    std::size_t width = 1;
    for (const Event& e : t.events) {
        if (e.kind != EventKind::Compute || e.device >= t.D) continue;
        const Rational a = e.start / slot;
        const Rational b = e.end / slot;
        const std::string tok = token(t, *e.task);
        width = std::max(width, tok.size());
        for (std::int64_t c = a.num() / a.den(); c < (b.num() + b.den() - 1) / b.den(); ++c) {
            grid[static_cast<std::size_t>(e.device)][static_cast<std::size_t>(c)] = tok;
        }
    }
    std::string out;
    for (int d = 0; d < t.D; ++d) {
        std::string line = "P" + std::to_string(d + 1) + ":";
        for (const auto& cell : grid[static_cast<std::size_t>(d)]) {
            line += " " + cell + std::string(width - cell.size(), ' ');
        }
        while (line.back() == ' ') line.pop_back();
        out += line + "\n";
    }
    return out;
}

std::string timeline_to_svg(const Timeline& t) {
    const double scale = t.makespan == Rational(0) ? 1.0 : 900.0 / t.makespan.to_double();
    const int row_h = 34;
    const int lane_h = 22;
    const int left = 48;
    const int devices = t.devices();
    const int height = devices * row_h + 30;
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << left + 920 << "\" height=\"" << height
       << "\" font-family=\"monospace\" font-size=\"10\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    for (int g = 0; g < devices; ++g) {
        os << "<text x=\"4\" y=\"" << g * row_h + 15 << "\">P" << g + 1 << "</text>\n";
    }
    // Forward chunks go light-to-dark blue by chunk index, backward in green.
    static const char* fwd[] = {"#1f4e9c", "#6f9fe0", "#2c6fd1", "#a9c6f0"};
    static const char* bwd[] = {"#1d6b36", "#6cc38b", "#2e8f4d", "#a5dcb7"};
    for (const Event& e : t.events) {
        const double x = left + e.start.to_double() * scale;
        const double w = std::max(0.5, (e.end - e.start).to_double() * scale);
        const int y = e.device * row_h;
        if (e.kind == EventKind::Compute) {
            const int c = std::min(3, (e.task->stage - 1) / t.D);
            const bool f = e.task->kind == TaskKind::Forward;
            os << "<rect x=\"" << fixed(x, 3) << "\" y=\"" << y << "\" width=\"" << fixed(w, 3) << "\" height=\""
               << lane_h << "\" fill=\"" << (f ? fwd[c] : bwd[c]) << "\" stroke=\"black\" stroke-width=\"0.3\"/>\n";
            os << "<text x=\"" << fixed(x + 2, 3) << "\" y=\"" << y + 14 << "\" fill=\"white\">"
               << (f ? 'F' : 'B') << e.task->micro_batch << "</text>\n";
        } else if (e.kind == EventKind::AllReduce || e.kind == EventKind::P2PSend) {
            const char* color = e.kind == EventKind::AllReduce ? "#c0392b" : "#e0a030";
            os << "<rect x=\"" << fixed(x, 3) << "\" y=\"" << y + lane_h + 2 << "\" width=\"" << fixed(w, 3)
               << "\" height=\"6\" fill=\"" << color << "\"/>\n";
        }
    }
    os << "<text x=\"" << left << "\" y=\"" << height - 8 << "\">" << approach_name(t.approach)
       << " makespan=" << fixed(t.makespan.to_double(), 6) << "</text>\n";
    os << "</svg>\n";
    return os.str();
}

}  // namespace pipesched
