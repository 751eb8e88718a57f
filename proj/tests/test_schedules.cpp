#include <doctest.h>

#include <fstream>
#include <set>
#include <sstream>

#include "pipesched/error.hpp"
#include "pipesched/schedule.hpp"
#include "pipesched/simulator.hpp"

using namespace pipesched;

namespace {

std::vector<std::string> tokens(const std::vector<Task>& row) {
    std::vector<std::string> out;
    for (const Task& t : row) out.push_back((t.kind == TaskKind::Forward ? "F" : "B") + std::to_string(t.micro_batch));
    return out;
}

std::vector<std::string> seq(std::initializer_list<const char*> xs) { return {xs.begin(), xs.end()}; }

ErrorKind kind_of(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.kind();
    }
    FAIL("expected pipesched::Error");
    return ErrorKind::InvalidSchedule;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path);
    REQUIRE(in.good());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string grid_of(const Schedule& s) { return slot_grid_text(simulate_canonical(s)); }

}  // namespace

TEST_CASE("GPipe runs every forward then backwards in reverse") {
    auto s = build_gpipe(4, 8);
    CHECK(tokens(s.per_device[0]) ==
          seq({"F1", "F2", "F3", "F4", "F5", "F6", "F7", "F8", "B8", "B7", "B6", "B5", "B4", "B3", "B2", "B1"}));
    CHECK(tokens(build_gpipe(1, 1).per_device[0]) == seq({"F1", "B1"}));
    CHECK_NOTHROW(validate_schedule(s));
}

TEST_CASE("GPipe D=2 N=2 leaves one forward and one backward bubble per device") {
    // Hand-drawn grid: P1 F1 F2 . . . B2 B2 B1 B1 ; P2 . F1 F2 B2 B2 B1 B1 . .
    auto t = simulate_canonical(build_gpipe(2, 2));
    CHECK(t.makespan == Rational(9));
    CHECK(t.makespan * Rational(2) - t.total_compute == Rational(3 * 2));
}

TEST_CASE("1F1B orders") {
    auto s = build_1f1b(4, 8);
    CHECK(tokens(s.per_device[3]) ==
          seq({"F1", "B1", "F2", "B2", "F3", "B3", "F4", "B4", "F5", "B5", "F6", "B6", "F7", "B7", "F8", "B8"}));
    CHECK(tokens(s.per_device[0]) ==
          seq({"F1", "F2", "F3", "F4", "B1", "F5", "B2", "F6", "B3", "F7", "B4", "F8", "B5", "B6", "B7", "B8"}));
    CHECK(tokens(build_1f1b(1, 3).per_device[0]) == seq({"F1", "B1", "F2", "B2", "F3", "B3"}));
    CHECK(kind_of([] { build_1f1b(4, 3); }) == ErrorKind::InsufficientMicroBatches);
}

TEST_CASE("stage maps") {
    auto loop = looping_map(2, 2, Direction::Down);
    CHECK(loop.assignment == std::vector<int>{1, 2, 1, 2});
    CHECK(loop.cross_device_boundaries() == 3);
    CHECK(loop.locality().empty());

    auto vs = v_shaped_map(2, 2, Direction::Down);
    CHECK(vs.assignment == std::vector<int>{1, 2, 2, 1});
    CHECK(vs.locality() == std::vector<std::pair<int, int>>{{2, 3}});
    CHECK(vs.cross_device_boundaries() == 2);

    CHECK(v_shaped_map(4, 2, Direction::Up).device(1) == 4);
    CHECK(v_shaped_map(1, 2, Direction::Down).cross_device_boundaries() == 0);
    CHECK(straight_map(3, Direction::Up).assignment == std::vector<int>{3, 2, 1});
}

TEST_CASE("interleaved with one chunk is 1F1B") {
    auto a = build_interleaved_looping(4, 8, 1);
    auto b = build_1f1b(4, 8);
    for (int d = 0; d < 4; ++d) CHECK(a.per_device[d] == b.per_device[d]);
}

TEST_CASE("V-shaped single pipeline needs an even chunk count") {
    CHECK(kind_of([] { build_v_shaped(4, 4, 3, Direction::Down); }) == ErrorKind::OddChunkCount);
    CHECK_NOTHROW(validate_schedule(build_v_shaped(4, 8, 2, Direction::Down)));
    CHECK_NOTHROW(validate_schedule(build_v_shaped(3, 5, 2, Direction::Up)));
}

TEST_CASE("every builder passes validation across small sizes") {
    for (ApproachId a : kAllApproaches) {
        for (int d : {1, 2, 4, 6, 8}) {
            for (int n : {d, 2 * d, 4 * d}) {
                CAPTURE(approach_name(a));
                CAPTURE(d);
                CAPTURE(n);
                try {
                    auto s = build(a, d, n);
                    CHECK_NOTHROW(validate_schedule(s));
                    CHECK(s.task_count() == static_cast<std::size_t>(2 * n * s.v * d));
                } catch (const Error& e) {
                    // Only documented precondition failures are acceptable.
                    CHECK((e.kind() == ErrorKind::InsufficientMicroBatches || e.kind() == ErrorKind::OddDeviceCount));
                }
            }
        }
    }
}

TEST_CASE("validation catches a reordered dependency") {
    auto s = build_1f1b(2, 2);
    std::swap(s.per_device[1][0], s.per_device[1][1]);  // backward before its forward
    CHECK(kind_of([&] { validate_schedule(s); }) == ErrorKind::InvalidSchedule);

    auto missing = build_gpipe(2, 2);
    missing.per_device[0].pop_back();
    CHECK(kind_of([&] { validate_schedule(missing); }) == ErrorKind::InvalidSchedule);
}

TEST_CASE("bidirectional merge succeeds for even device counts") {
    for (int d = 2; d <= 16; d += 2) {
        CAPTURE(d);
        auto [down, up] = bitpipe_halves(d, d, 2);
        auto merged = merge_bidirectional(down, up);
        CHECK_NOTHROW(validate_schedule(merged));
        CHECK(merged.stage_maps.size() == 2);
    }
}

TEST_CASE("odd device counts never merge silently") {
    auto [down, up] = bitpipe_halves(3, 2, 2);
    const auto k = kind_of([&] { merge_bidirectional(down, up); });
    CHECK((k == ErrorKind::MergeConflict || k == ErrorKind::OddDeviceCount));
    CHECK(kind_of([] { build_bitpipe(3, 2, 2, false); }) == ErrorKind::OddDeviceCount);
    CHECK(kind_of([] { build_chimera(3, 2); }) == ErrorKind::OddDeviceCount);
}

TEST_CASE("Chimera holds both pipeline directions on every device") {
    auto s = build_chimera(4, 4);
    CHECK_NOTHROW(validate_schedule(s));
    for (const auto& row : s.per_device) {
        std::set<Direction> dirs;
        for (const Task& t : row) dirs.insert(t.direction);
        CHECK(dirs.size() == 2);
    }
}

TEST_CASE("BitPipe D=2 N=2 has no idle interior slots") {
    auto t = simulate_canonical(build_bitpipe(2, 2, 2, false));
    CHECK(t.makespan * Rational(2) == t.total_compute);
}

TEST_CASE("BitPipe with four chunks flushes earlier") {
    auto v2 = simulate_canonical(build_bitpipe(4, 8, 2, false));
    auto v4 = simulate_canonical(build_bitpipe(4, 8, 4, false));
    CHECK(v4.makespan < v2.makespan);
}

TEST_CASE("schedule JSON round-trips") {
    auto s = build_bitpipe(4, 4, 2, false);
    auto back = schedule_from_json(schedule_to_json(s));
    CHECK(back.approach == s.approach);
    CHECK(back.per_device == s.per_device);
    CHECK(back.slot_start == s.slot_start);
    CHECK(schedule_to_json(back) == schedule_to_json(s));
}

TEST_CASE("slot grids match the independently derived fixtures") {
    struct Case {
        const char* file;
        ApproachId approach;
    };
    const Case cases[] = {
        {"gpipe", ApproachId::GPipe},         {"1f1b", ApproachId::Dapple1F1B},
        {"interleaved", ApproachId::InterleavedLooping}, {"chimera", ApproachId::Chimera},
        {"bitpipe", ApproachId::BitPipe},
    };
    for (const auto& c : cases) {
        for (int n : {4, 8}) {
            const std::string name = std::string(c.file) + "_d4_n" + std::to_string(n) + ".txt";
            CAPTURE(name);
            CHECK(grid_of(build(c.approach, 4, n)) == read_file(std::string(PIPESCHED_GOLDEN_DIR) + "/" + name));
        }
    }
}
