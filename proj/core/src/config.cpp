#include "pipesched/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>
#include <toml.hpp>

#include "pipesched/error.hpp"

namespace pipesched {
namespace {

using json = nlohmann::ordered_json;

[[noreturn]] void bad(const std::string& msg) { throw Error(ErrorKind::ConfigParse, msg); }

json from_toml(const toml::node& node) {
    if (auto* t = node.as_table()) {
        json o = json::object();
        for (const auto& [k, v] : *t) o[std::string(k.str())] = from_toml(v);
        return o;
    }
    if (auto* a = node.as_array()) {
        json arr = json::array();
        for (const auto& v : *a) arr.push_back(from_toml(v));
        return arr;
    }
    if (auto* s = node.as_string()) return s->get();
    if (auto* i = node.as_integer()) return i->get();
    if (auto* f = node.as_floating_point()) return f->get();
    if (auto* b = node.as_boolean()) return b->get();
    bad("unsupported TOML value (dates and times are not accepted)");
}

// Reads one section and rejects keys nobody consumed.
class Section {
public:
    Section(const json& root, const std::string& name) : name_(name) {
        if (!root.contains(name)) return;
        if (!root[name].is_object()) bad("[" + name + "] must be a table");
        obj_ = root[name];
    }
    void finish() const {
        for (const auto& [k, v] : obj_.items()) {
            if (!used_.count(k)) bad("unknown key " + name_ + "." + k);
        }
    }

    bool has(const std::string& k) const { return obj_.contains(k); }

    template <class T>
    void get(const std::string& k, T& out) {
        if (!obj_.contains(k)) return;
        used_.insert(k);
        out = convert<T>(obj_[k], k);
    }

    void rational(const std::string& k, Rational& out) {
        if (!obj_.contains(k)) return;
        used_.insert(k);
        const auto& v = obj_[k];
        if (v.is_number_integer()) {
            out = Rational(v.get<std::int64_t>());
        } else if (v.is_number()) {
            out = Rational::from_double(v.get<double>());
        } else if (v.is_string()) {
            try {
                out = Rational::parse(v.get<std::string>());
            } catch (const std::exception&) {
                bad(where(k) + " is not a number or fraction");
            }
        } else {
            bad(where(k) + " must be a number or a fraction string");
        }
    }

    void approaches(const std::string& k, std::vector<ApproachId>& out) {
        std::vector<std::string> names;
        get(k, names);
        if (!obj_.contains(k)) return;
        out.clear();
        for (const auto& n : names) {
            auto id = parse_approach(n);
            if (!id) throw Error(ErrorKind::UnknownApproach, where(k) + ": unknown approach '" + n + "'");
            out.push_back(*id);
        }
    }

private:
    std::string where(const std::string& k) const { return name_ + "." + k; }

    template <class T>
    T convert(const json& v, const std::string& k) {
        try {
            if constexpr (std::is_same_v<T, bool>) {
                if (!v.is_boolean()) bad(where(k) + " must be a boolean");
            } else if constexpr (std::is_integral_v<T>) {
                if (!v.is_number_integer()) bad(where(k) + " must be an integer");
            } else if constexpr (std::is_floating_point_v<T>) {
                if (!v.is_number()) bad(where(k) + " must be a number");
            } else if constexpr (std::is_same_v<T, std::string>) {
                if (!v.is_string()) bad(where(k) + " must be a string");
            } else {
                if (!v.is_array()) bad(where(k) + " must be an array");
            }
            return v.get<T>();
        } catch (const json::exception&) {
            bad(where(k) + " has the wrong type");
        }
    }

    std::string name_;
    json obj_ = json::object();
    std::set<std::string> used_;
};

MappingPolicy parse_mapping(const std::string& s) {
    if (s == "colocated") return MappingPolicy::ReplicasColocated;
    if (s == "linear") return MappingPolicy::Linear;
    bad("run.mapping must be 'colocated' or 'linear'");
}

Config from_json(const json& root) {
    if (!root.is_object()) bad("config root must be a table");
    static const std::set<std::string> known{"cluster", "model", "costs", "run", "search", "verify"};
    for (const auto& [k, v] : root.items()) {
        if (!known.count(k)) bad("unknown section [" + k + "]");
    }
    Config c;
    {
        Section s(root, "cluster");
        auto& cl = c.cluster;
        s.get("devices_per_pipeline", cl.devices_per_pipeline);
        s.get("replicated_pipelines", cl.replicated_pipelines);
        cl.total_devices = cl.devices_per_pipeline * cl.replicated_pipelines;
        s.get("total_devices", cl.total_devices);
        cl.devices_per_node = cl.total_devices;
        s.get("devices_per_node", cl.devices_per_node);
        s.get("intra_node_bandwidth", cl.intra_node_bandwidth);
        s.get("inter_node_bandwidth", cl.inter_node_bandwidth);
        s.get("p2p_latency", cl.p2p_latency);
        s.finish();
    }
    {
        Section s(root, "model");
        auto& m = c.model;
        s.get("micro_batch_size", m.micro_batch_size);
        s.get("micro_batches", m.micro_batches);
        m.mini_batch_size = m.micro_batch_size * m.micro_batches * c.cluster.replicated_pipelines;
        s.get("mini_batch_size", m.mini_batch_size);
        s.get("sequence_length", m.sequence_length);
        s.get("hidden_size", m.hidden_size);
        s.get("bytes_per_element", m.bytes_per_element);
        s.finish();
    }
    {
        Section s(root, "costs");
        auto& k = c.costs;
        s.rational("tf", k.tf);
        k.tb = k.tf * Rational(2);
        s.rational("tb", k.tb);
        s.get("weights_mem", k.weights_mem);
        s.get("activations_mem", k.activations_mem);
        if (s.has("gradient_volume")) {
            double g = 0;
            s.get("gradient_volume", g);
            k.gradient_volume = g;
        }
        s.rational("local_copy_cost", k.local_copy_cost);
        s.finish();
    }
    {
        Section s(root, "run");
        auto& r = c.run;
        s.approaches("approaches", r.approaches);
        s.get("v", r.v);
        s.get("eager_sync", r.eager_sync);
        s.get("early_forward", r.early_forward);
        std::string mapping = "colocated";
        s.get("mapping", mapping);
        r.mapping = parse_mapping(mapping);
        s.get("canonical", r.canonical);
        s.finish();
    }
    {
        Section s(root, "search");
        auto& r = c.search;
        s.get("W", r.space.W);
        s.get("D", r.space.D);
        s.get("B", r.space.B);
        s.approaches("approaches", r.approaches);
        if (s.has("forward_seconds_per_sample")) {
            WorkloadModel w;
            s.get("forward_seconds_per_sample", w.forward_seconds_per_sample);
            s.get("backward_factor", w.backward_factor);
            s.get("model_weight_bytes", w.model_weight_bytes);
            s.get("activation_bytes_per_sample", w.activation_bytes_per_sample);
            r.workload = w;
        }
        s.finish();
    }
    {
        Section s(root, "verify");
        auto& r = c.verify;
        s.get("D", r.D);
        s.get("N", r.N);
        s.get("v", r.v);
        s.get("seeds", r.seeds);
        s.get("width", r.width);
        s.get("rows", r.rows);
        s.get("tolerance", r.tolerance);
        s.finish();
    }
    validate_cluster(c.cluster);
    validate_profile(c.model, c.cluster.replicated_pipelines);
    validate_costs(c.costs);
    if (c.run.v < 1) throw Error(ErrorKind::InvalidChunking, "run.v must be >= 1");
    return c;
}

}  // namespace

Config parse_config(const std::string& text, ConfigFormat format) {
    json root;
    if (format == ConfigFormat::Json) {
        try {
            root = json::parse(text);
        } catch (const json::parse_error& e) {
            bad(std::string("JSON: ") + e.what());
        }
    } else {
        try {
            root = from_toml(toml::parse(text));
        } catch (const toml::parse_error& e) {
            std::ostringstream os;
            os << "TOML line " << e.source().begin.line << ": " << e.description();
            bad(os.str());
        }
    }
    return from_json(root);
}

Config load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) bad("cannot read " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    const bool is_json = path.size() >= 5 && path.compare(path.size() - 5, 5, ".json") == 0;
    return parse_config(ss.str(), is_json ? ConfigFormat::Json : ConfigFormat::Toml);
}

WorkloadModel workload_of(const Config& c) {
    if (c.search.workload) return *c.search.workload;
    const double d = c.cluster.devices_per_pipeline;
    const double b = static_cast<double>(c.model.micro_batch_size);
    WorkloadModel w;
    w.forward_seconds_per_sample = c.costs.tf.to_double() * d / b;
    w.backward_factor = c.costs.tf == Rational(0) ? 2.0 : (c.costs.tb / c.costs.tf).to_double();
    w.model_weight_bytes = c.costs.weights_mem * d;
    w.activation_bytes_per_sample = c.costs.activations_mem * d / b;
    return w;
}

}  // namespace pipesched
