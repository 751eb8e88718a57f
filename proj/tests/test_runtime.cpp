#include <doctest.h>

#include "pipesched/error.hpp"
#include "pipesched/runtime.hpp"
#include "pipesched/schedule.hpp"

using namespace pipesched;

namespace {

ToyModel scalar_chain(int stages, double w) {
    ToyModel m;
    m.tanh = false;
    m.dims.assign(static_cast<std::size_t>(stages + 1), 1);
    for (int s = 0; s < stages; ++s) m.weights.push_back(Eigen::MatrixXd::Constant(1, 1, w));
    return m;
}

MicroBatch scalar_mb(double x, double t) {
    return {Eigen::MatrixXd::Constant(1, 1, x), Eigen::MatrixXd::Constant(1, 1, t)};
}

}  // namespace

TEST_CASE("single scalar stage gives the MSE derivative") {
    auto m = scalar_chain(1, 0.5);
    Batch b{scalar_mb(3.0, 1.0)};
    auto r = run_schedule_numeric(build_gpipe(1, 1), m, b);
    // y = w x = 1.5, loss = (y - t)^2 = 0.25, dL/dw = 2 (y - t) x = 3.
    CHECK(r.loss == doctest::Approx(0.25));
    CHECK(r.gradients[0](0, 0) == doctest::Approx(3.0));
    CHECK(r.weights[0](0, 0) == doctest::Approx(0.5 - 0.1 * 3.0));
}

TEST_CASE("identity network under 1F1B") {
    auto m = scalar_chain(2, 1.0);
    Batch b{scalar_mb(2.0, 1.0), scalar_mb(-1.0, 1.0)};
    auto r = run_schedule_numeric(build_1f1b(2, 2), m, b);
    // y = x; loss = ((2-1)^2 + (-1-1)^2) / 2 = 2.5.
    CHECK(r.loss == doctest::Approx(2.5));
    // dL/dw for either layer = mean of 2 (x - t) x = (2*1*2 + 2*(-2)*(-1)) / 2 = 4.
    CHECK(r.gradients[0](0, 0) == doctest::Approx(4.0));
    CHECK(r.gradients[1](0, 0) == doctest::Approx(4.0));
}

TEST_CASE("same inputs give identical outputs") {
    auto m = make_toy_model(8, 3, 11);
    auto b = make_batch(m, 4, 2, 12);
    auto s = build_bitpipe(4, 4, 2, false);
    auto r1 = run_schedule_numeric(s, m, b);
    auto r2 = run_schedule_numeric(s, m, b);
    CHECK(max_relative_error(r1, r2) == 0.0);
    CHECK(r1.loss == r2.loss);
}

TEST_CASE("accumulated gradient is the mean of single micro-batch gradients") {
    auto m = make_toy_model(4, 3, 5);
    auto b = make_batch(m, 4, 2, 6);
    auto all = run_schedule_numeric(build_1f1b(4, 4), m, b);
    std::vector<Eigen::MatrixXd> mean(m.weights.size());
    for (std::size_t s = 0; s < mean.size(); ++s) mean[s] = Eigen::MatrixXd::Zero(m.weights[s].rows(), m.weights[s].cols());
    for (const auto& mb : b) {
        auto one = run_schedule_numeric(build_gpipe(4, 1), m, Batch{mb});
        for (std::size_t s = 0; s < mean.size(); ++s) mean[s] += one.gradients[s] / 4.0;
    }
    for (std::size_t s = 0; s < mean.size(); ++s) {
        CHECK((all.gradients[s] - mean[s]).cwiseAbs().maxCoeff() <= 1e-12 * (1.0 + mean[s].cwiseAbs().maxCoeff()));
    }
}

TEST_CASE("BitPipe matches the sequential baseline") {
    auto m = make_toy_model(8, 3, 1);
    auto b = make_batch(m, 4, 2, 2);
    auto got = run_schedule_numeric(build_bitpipe(4, 4, 2, false), m, b);
    auto ref = sequential_baseline(m, b);
    CHECK(max_relative_error(got, ref) <= 1e-9);
    CHECK(got.replicas_consistent);
}

TEST_CASE("GPipe and BitPipe produce the same step") {
    // Eight stages: one per device for GPipe on 8 devices, two per device for
    // BitPipe on 4.
    auto m = make_toy_model(8, 3, 3);
    auto b = make_batch(m, 8, 2, 4);
    auto gp = run_schedule_numeric(build_gpipe(8, 8), m, b);
    auto bp = run_schedule_numeric(build_bitpipe(4, 8, 2, false), m, b);
    CHECK(max_relative_error(gp, bp) <= 1e-9);
    CHECK(gp.loss == doctest::Approx(bp.loss).epsilon(1e-12));
}

TEST_CASE("shape mismatches are rejected") {
    auto m = make_toy_model(4, 3, 1);
    auto b = make_batch(m, 2, 2, 1);
    CHECK_THROWS_AS(run_schedule_numeric(build_gpipe(2, 2), m, b), Error);
    CHECK_THROWS_AS(run_schedule_numeric(build_gpipe(4, 3), m, b), Error);
}

TEST_CASE("an injected ordering fault is caught") {
    auto m = make_toy_model(4, 3, 1);
    auto b = make_batch(m, 4, 2, 1);
    try {
        run_schedule_numeric(inject_fault(build_1f1b(4, 4)), m, b);
        FAIL("fault was not detected");
    } catch (const Error& e) {
        CHECK((e.kind() == ErrorKind::ProtocolViolation || e.kind() == ErrorKind::DeadlockDetected));
    }
}

TEST_CASE("verification sweep") {
    VerifyOptions o;
    o.approaches = {kAllApproaches.begin(), kAllApproaches.end()};
    o.D = {1, 2, 4};
    o.N = {1, 2, 4, 8};
    o.v = {1, 2};
    o.seeds = {1, 2, 3};
    auto cases = verify_equivalence(o);
    CHECK(cases.size() > 100);
    for (const auto& c : cases) {
        CAPTURE(approach_name(c.approach));
        CAPTURE(c.D);
        CAPTURE(c.N);
        CAPTURE(c.v);
        CHECK_MESSAGE(c.pass, c.error);
    }

    o.inject_fault = true;
    for (const auto& c : verify_equivalence(o)) CHECK_FALSE(c.pass);

    VerifyOptions one;
    one.approaches = {ApproachId::GPipe};
    one.D = {1};
    one.N = {1};
    one.v = {1};
    one.seeds = {7};
    auto single = verify_equivalence(one);
    REQUIRE(single.size() == 1);
    CHECK(single[0].pass);
}
