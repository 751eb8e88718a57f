#include <doctest.h>

#include "pipesched/analysis.hpp"
#include "pipesched/error.hpp"
#include "pipesched/schedule.hpp"
#include "pipesched/simulator.hpp"

using namespace pipesched;

namespace {

ErrorKind kind_of(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.kind();
    }
    FAIL("expected pipesched::Error");
    return ErrorKind::InvalidSchedule;
}

// Swaps the first adjacent pair on device 1 that still validates and makes
// the step longer, i.e. delays one forward behind later work.
Schedule delay_one_forward(Schedule s) {
    s.slot_start.clear();
    const Rational base = simulate_canonical(s).makespan;
    auto& row = s.per_device[0];
    for (std::size_t i = 0; i + 1 < row.size(); ++i) {
        if (row[i].kind != TaskKind::Forward) continue;
        Schedule c = s;
        std::swap(c.per_device[0][i], c.per_device[0][i + 1]);
        try {
            validate_schedule(c);
            if (simulate_canonical(c).makespan > base) return c;
        } catch (const Error&) {
        }
    }
    FAIL("no delaying mutation found");
    return s;
}

}  // namespace

TEST_CASE("closed-form bubble ratios") {
    CHECK(analytic_bubble_ratio(ApproachId::GPipe, 4, 4) == Rational(3, 7));
    CHECK(analytic_bubble_ratio(ApproachId::BitPipe, 2, 2) == Rational(0));
    CHECK(analytic_bubble_ratio(ApproachId::BitPipeEarlyForward, 8, 16) == Rational(3, 35));
    CHECK(analytic_bubble_ratio(ApproachId::Chimera, 2, 2) == Rational(0));
    CHECK(analytic_bubble_ratio(ApproachId::InterleavedLooping, 4, 4) == Rational(3, 11));
    CHECK(kind_of([] { analytic_bubble_ratio(ApproachId::VShapedInterleaved, 4, 4); }) ==
          ErrorKind::UnsupportedCombination);
    CHECK(kind_of([] { analytic_bubble_ratio(ApproachId::BitPipe, 3, 3); }) == ErrorKind::UnsupportedCombination);
}

TEST_CASE("bubble ratios order as expected at equal D and N") {
    for (int d : {4, 8}) {
        for (int n : {d, 2 * d, 4 * d}) {
            auto r = [&](ApproachId a) { return analytic_bubble_ratio(a, d, n); };
            if (n >= 2 * d) CHECK(r(ApproachId::BitPipeEarlyForward) < r(ApproachId::BitPipe));
            CHECK(r(ApproachId::BitPipe) < r(ApproachId::Chimera));
            CHECK(r(ApproachId::BitPipe) < r(ApproachId::InterleavedLooping));
            CHECK(r(ApproachId::InterleavedLooping) < r(ApproachId::Dapple1F1B));
            CHECK(r(ApproachId::Dapple1F1B) == r(ApproachId::GPipe));
        }
    }
}

TEST_CASE("bubble ratio shrinks with more micro-batches") {
    for (ApproachId a : {ApproachId::GPipe, ApproachId::InterleavedLooping, ApproachId::Chimera, ApproachId::BitPipe}) {
        CHECK(analytic_bubble_ratio(a, 4, 8) < analytic_bubble_ratio(a, 4, 4));
        CHECK(analytic_bubble_ratio(a, 4, 16) < analytic_bubble_ratio(a, 4, 8));
    }
}

TEST_CASE("closed-form memory") {
    auto b = analytic_memory(ApproachId::BitPipe, 4, 4);
    CHECK(b.weights == Rational(2));
    CHECK(b.activations_low == Rational(7, 2));
    CHECK(b.activations_high == Rational(4));

    auto g = analytic_memory(ApproachId::GPipe, 4, 8);
    CHECK(g.weights == Rational(1));
    CHECK(g.activations_low == Rational(8));
    CHECK(g.activations_high == Rational(8));

    CHECK(early_forward_peak(8) == Rational(21, 2));
    CHECK(mixpipe_peak(8) == Rational(11));
    CHECK(chimera_forward_doubling_peak(8) == Rational(16));
    CHECK(early_forward_peak(8) < mixpipe_peak(8));
    CHECK(mixpipe_peak(8) < chimera_forward_doubling_peak(8));

    auto small = analytic_memory(ApproachId::BitPipe, 2, 2);
    CHECK(small.activations_low <= small.activations_high);
}

TEST_CASE("communication formulas") {
    ModelProfile p;
    p.sequence_length = 1024;
    p.hidden_size = 3072;
    ClusterSpec c = ClusterSpec::single(4);
    c.inter_node_bandwidth = 25e9;
    c.intra_node_bandwidth = 200e9;
    CHECK(analytic_p2p_count(ApproachId::Dapple1F1B, 4, 4) == 14);
    CHECK(analytic_p2p_count(ApproachId::InterleavedLooping, 4, 4) == 28);
    CHECK(analytic_comm_time(ApproachId::Dapple1F1B, 4, 4, p, c, 0) == doctest::Approx(14 * 6291456 / 25e9));
    CHECK(analytic_comm_time(ApproachId::Dapple1F1B, 4, 4, p, c, 0) == doctest::Approx(3.52e-3).epsilon(0.01));

    const double grad = 1e9;
    const double bit = analytic_comm_time(ApproachId::BitPipe, 4, 8, p, c, grad) - grad / c.intra_node_bandwidth;
    const double chi = analytic_comm_time(ApproachId::Chimera, 4, 8, p, c, grad) - grad / c.intra_node_bandwidth;
    CHECK(bit == doctest::Approx(2 * chi));

    CHECK(analytic_p2p_count(ApproachId::Dapple1F1B, 1, 0) == 0);
    CHECK(kind_of([] { analytic_p2p_count(ApproachId::GPipe, 4, 4); }) == ErrorKind::UnsupportedCombination);
}

TEST_CASE("closed forms render symbolically") {
    CHECK(closed_form(ApproachId::BitPipe).bubble_ratio == "(D-2)/(3N+D-2)");
    CHECK(closed_form(ApproachId::GPipe).activations == "N*Ma");
    CHECK(closed_form(ApproachId::Dapple1F1B).comm == "(2N+2(D-1))*msg/W_inter");
}

TEST_CASE("canonical comparison validates at N = D") {
    for (int d : {2, 4, 8}) {
        CAPTURE(d);
        auto report = compare_canonical({ApproachId::GPipe, ApproachId::Dapple1F1B, ApproachId::InterleavedLooping,
                                         ApproachId::Chimera, ApproachId::BitPipe},
                                        d, d);
        auto v = validate_against_analytic(report);
        for (const auto& r : v.rows) CHECK_MESSAGE(r.pass, approach_name(r.approach), ": ", r.detail);
    }
}

TEST_CASE("GPipe peak equals N activations") {
    auto report = compare_canonical({ApproachId::GPipe}, 4, 4);
    CHECK(report.rows[0].simulated.peak_activations_high == Rational(4));
    CHECK(validate_against_analytic(report).pass);
}

TEST_CASE("V-shaped rows are reported without a closed form") {
    auto report = compare_canonical({ApproachId::VShapedInterleaved}, 4, 4);
    CHECK_FALSE(report.rows[0].analytic.has_value());
    auto v = validate_against_analytic(report);
    CHECK(v.pass);
    CHECK(v.rows[0].detail == "no closed form, not checked");
}

TEST_CASE("a corrupted BitPipe schedule fails validation") {
    auto report = compare_canonical({ApproachId::BitPipe}, 4, 4);
    REQUIRE(validate_against_analytic(report).pass);
    auto bad = delay_one_forward(build_bitpipe(4, 4, 2, false));
    auto t = simulate_canonical(bad);
    report.rows[0].simulated.bubble_ratio = measured_bubble_ratio(t);
    report.rows[0].simulated.makespan = t.makespan;
    auto v = validate_against_analytic(report);
    CHECK_FALSE(v.pass);
    CHECK(v.rows[0].bubble_delta > Rational(0));
}

TEST_CASE("report CSV") {
    auto report = compare_canonical({ApproachId::BitPipe}, 4, 4);
    auto csv = report_csv(report);
    CHECK(csv.rfind("approach,D,N,W,B,bubble_ratio_analytic,bubble_ratio_sim,", 0) == 0);
    CHECK(csv.find("BitPipe,4,4,1,1,1/7,1/7,") != std::string::npos);
    CHECK(report_table(report).find("1/7") != std::string::npos);
}

namespace {

struct SearchFixture {
    ModelProfile profile;
    ClusterSpec cluster;
    WorkloadModel workload;

    SearchFixture() {
        profile.micro_batch_size = 1;
        profile.micro_batches = 16;
        profile.mini_batch_size = 16;
        profile.sequence_length = 128;
        profile.hidden_size = 256;
        cluster.devices_per_pipeline = 4;
        cluster.total_devices = 4;
        cluster.devices_per_node = 4;
        cluster.intra_node_bandwidth = 1e12;
        cluster.inter_node_bandwidth = 1e12;
        workload.forward_seconds_per_sample = 1e-3;
        workload.model_weight_bytes = 1e6;
    }
};

}  // namespace

TEST_CASE("search over a single point returns it") {
    SearchFixture f;
    auto r = grid_search(f.profile, f.cluster, f.workload, SearchSpace{{1}, {4}, {2}}, {ApproachId::BitPipe});
    REQUIRE(r.rows.size() == 1);
    REQUIRE(r.best.size() == 1);
    CHECK(r.best[0].W == 1);
    CHECK(r.best[0].D == 4);
    CHECK(r.best[0].B == 2);
    CHECK(r.best[0].N == 8);
}

TEST_CASE("larger micro-batches win when messages dominate") {
    SearchFixture f;
    f.cluster.p2p_latency = 1.0;  // every transfer costs far more than compute
    auto r = grid_search(f.profile, f.cluster, f.workload, SearchSpace{{1}, {4}, {1, 4}}, {ApproachId::Dapple1F1B});
    REQUIRE(r.best.size() == 1);
    CHECK(r.best[0].B == 4);
}

TEST_CASE("search skips infeasible points and rejects empty spaces") {
    SearchFixture f;
    auto r = grid_search(f.profile, f.cluster, f.workload, SearchSpace{{1, 2}, {4}, {3}}, {ApproachId::GPipe});
    for (const auto& row : r.rows) {
        CHECK_FALSE(row.feasible);
        CHECK_FALSE(row.skipped.empty());
    }
    CHECK(r.best.empty());
    CHECK(kind_of([&] { grid_search(f.profile, f.cluster, f.workload, SearchSpace{{}, {4}, {1}}, {ApproachId::GPipe}); }) ==
          ErrorKind::EmptySpace);
}

TEST_CASE("search output does not depend on the thread count") {
    SearchFixture f;
    SearchSpace space{{1}, {2, 4}, {1, 2, 4}};
    SearchOptions one;
    one.threads = 1;
    SearchOptions many;
    many.threads = 8;
    auto a = grid_search(f.profile, f.cluster, f.workload, space, {ApproachId::Chimera, ApproachId::BitPipe}, one);
    auto b = grid_search(f.profile, f.cluster, f.workload, space, {ApproachId::Chimera, ApproachId::BitPipe}, many);
    CHECK(search_csv(a) == search_csv(b));
}
