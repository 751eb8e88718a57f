#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"

namespace fs = std::filesystem;
using namespace pipesched::cli;

namespace {

fs::path scratch(const std::string& name) {
    fs::path p = fs::temp_directory_path() / ("pipesched_test_cli_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

fs::path write_config(const fs::path& dir, const std::string& text) {
    fs::path p = dir / "config.toml";
    std::ofstream(p) << text;
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

int cli(std::vector<std::string> args) {
    args.insert(args.begin(), "pipesched");
    return run(args);
}

const std::string kD4N4 = "[cluster]\ndevices_per_pipeline = 4\n[model]\nmicro_batches = 4\n";

}  // namespace

TEST_CASE("plan writes a BitPipe grid matching the derived fixture") {
    auto dir = scratch("plan");
    auto cfg = write_config(dir, kD4N4);
    REQUIRE(cli({"plan", "--config", cfg.string(), "--approach", "bitpipe", "--out", (dir / "out").string()}) ==
            kExitOk);
    CHECK(slurp(dir / "out" / "BitPipe.grid.txt") == slurp(fs::path(PIPESCHED_GOLDEN_DIR) / "bitpipe_d4_n4.txt"));
    CHECK(fs::exists(dir / "out" / "BitPipe.schedule.json"));
    CHECK(fs::exists(dir / "out" / "metadata.json"));
}

TEST_CASE("usage errors exit with 1") {
    auto dir = scratch("usage");
    auto cfg = write_config(dir, kD4N4);
    CHECK(cli({}) == kExitUsage);
    CHECK(cli({"frobnicate"}) == kExitUsage);
    CHECK(cli({"plan", "--config", cfg.string(), "--approach", "nope", "--out", dir.string()}) == kExitUsage);
    CHECK(cli({"plan", "--approach", "GPipe", "--out", dir.string()}) == kExitUsage);
    CHECK(cli({"plan", "--config", cfg.string(), "--format", "xml"}) == kExitUsage);
    CHECK(cli({"compare", "--config", cfg.string(), "--out", dir.string()}) == kExitUsage);  // no approaches
    auto bad = write_config(dir, "[cluster]\nwhat = 1\n");
    CHECK(cli({"plan", "--config", bad.string(), "--approach", "GPipe", "--out", dir.string()}) == kExitUsage);
}

TEST_CASE("domain errors exit with 2") {
    auto dir = scratch("domain");
    auto cfg = write_config(dir, "[cluster]\ndevices_per_pipeline = 3\n[model]\nmicro_batches = 3\n");
    CHECK(cli({"plan", "--config", cfg.string(), "--approach", "BitPipe", "--out", dir.string()}) == kExitDomain);
}

TEST_CASE("compare reports the BitPipe ratio") {
    auto dir = scratch("compare");
    auto cfg = write_config(dir, kD4N4);
    REQUIRE(cli({"compare", "--config", cfg.string(), "--approach", "BitPipe", "--approach", "GPipe", "--out",
                 dir.string()}) == kExitOk);
    auto csv = slurp(dir / "report.csv");
    CHECK(csv.find("BitPipe,4,4,1,1,1/7,1/7,") != std::string::npos);
    CHECK(csv.find("GPipe,4,4,1,1,3/7,3/7,") != std::string::npos);
}

TEST_CASE("eager synchronisation on and off") {
    auto dir = scratch("eager");
    const std::string cfg_text = R"([cluster]
devices_per_pipeline = 4
intra_node_bandwidth = 1.0
inter_node_bandwidth = 0.25
[model]
micro_batches = 4
[costs]
gradient_volume = 0.5
[run]
approaches = ["BitPipe"]
canonical = false
)";
    auto cfg = write_config(dir, cfg_text);
    REQUIRE(cli({"simulate", "--config", cfg.string(), "--eager-sync", "on", "--out", (dir / "on").string()}) == kExitOk);
    REQUIRE(cli({"simulate", "--config", cfg.string(), "--eager-sync", "off", "--out", (dir / "off").string()}) ==
            kExitOk);
    auto makespan = [](const std::string& csv) {
        auto line = csv.substr(csv.find('\n') + 1);
        std::vector<std::string> cells;
        std::stringstream ss(line.substr(0, line.find('\n')));
        for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
        REQUIRE(cells.size() >= 12);
        return cells[11];
    };
    const auto on = makespan(slurp(dir / "on" / "report.csv"));
    const auto off = makespan(slurp(dir / "off" / "report.csv"));
    CHECK(on != off);
}

TEST_CASE("verify passes, and fails with exit 3 on an injected fault") {
    auto dir = scratch("verify");
    auto cfg = write_config(dir, R"([cluster]
devices_per_pipeline = 2
[run]
approaches = ["DAPPLE", "BitPipe"]
[verify]
D = [1, 2]
N = [2, 4]
v = [1, 2]
seeds = [1]
)");
    CHECK(cli({"verify", "--config", cfg.string(), "--out", (dir / "ok").string()}) == kExitOk);
    CHECK(cli({"verify", "--config", cfg.string(), "--inject-fault", "--out", (dir / "bad").string()}) == kExitVerify);
}

TEST_CASE("repeated runs write identical data files") {
    auto dir = scratch("determinism");
    auto cfg = write_config(dir, kD4N4);
    for (const char* sub : {"plan", "simulate", "compare", "render"}) {
        CAPTURE(sub);
        const auto a = dir / (std::string(sub) + "_a");
        const auto b = dir / (std::string(sub) + "_b");
        for (const auto& out : {a, b}) {
            REQUIRE(cli({sub, "--config", cfg.string(), "--approach", "Chimera", "--approach", "BitPipe", "--out",
                         out.string()}) == kExitOk);
        }
        int files = 0;
        for (const auto& e : fs::directory_iterator(a)) {
            if (e.path().filename() == "metadata.json") continue;
            CAPTURE(e.path().filename().string());
            CHECK(slurp(e.path()) == slurp(b / e.path().filename()));
            ++files;
        }
        CHECK(files > 0);
    }
}
