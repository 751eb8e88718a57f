#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pipesched/analysis.hpp"
#include "pipesched/runtime.hpp"
#include "pipesched/simulator.hpp"
#include "pipesched/types.hpp"

namespace pipesched {

struct RunSection {
    std::vector<ApproachId> approaches;
    int v = 2;
    bool eager_sync = false;
    bool early_forward = false;
    MappingPolicy mapping = MappingPolicy::ReplicasColocated;
    bool canonical = true;  // simulate in cost-free canonical units
};

struct SearchSection {
    SearchSpace space;
    std::vector<ApproachId> approaches;
    // Whole-model costs. When absent they are derived from the costs section,
    // which then describes one device stage at the configured D and B.
    std::optional<WorkloadModel> workload;
};

struct VerifySection {
    std::vector<int> D{1, 2, 4};
    std::vector<int> N{1, 2, 4, 8};
    std::vector<int> v{1, 2};
    std::vector<std::uint64_t> seeds{1, 2, 3};
    int width = 3;
    int rows = 2;
    double tolerance = 1e-9;
};

struct Config {
    ClusterSpec cluster;
    ModelProfile model;
    CostModel costs;
    RunSection run;
    SearchSection search;
    VerifySection verify;
};

enum class ConfigFormat { Toml, Json };

// Keys map one-to-one onto the struct fields; unknown keys and wrong types
// raise Error(ConfigParse), failed invariants the matching validation error.
Config parse_config(const std::string& text, ConfigFormat format);
// Format chosen by extension: ".json" is JSON, anything else TOML.
Config load_config(const std::string& path);

WorkloadModel workload_of(const Config& config);

}  // namespace pipesched
