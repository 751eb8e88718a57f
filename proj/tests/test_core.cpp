#include <doctest.h>

#include <stdexcept>

#include "pipesched/config.hpp"
#include "pipesched/error.hpp"
#include "pipesched/rational.hpp"
#include "pipesched/types.hpp"

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

}  // namespace

TEST_CASE("rational arithmetic stays in lowest terms") {
    Rational a(6, -8);
    CHECK(a.num() == -3);
    CHECK(a.den() == 4);
    CHECK(Rational(1, 3) + Rational(1, 6) == Rational(1, 2));
    CHECK(Rational(3, 7) * Rational(7, 3) == Rational(1));
    CHECK(Rational(1) / Rational(3) - Rational(1, 3) == Rational(0));
    CHECK(Rational(1, 3) < Rational(1, 2));
    CHECK(-Rational(2, 5) == Rational(-2, 5));
    CHECK(Rational(3, 7).str() == "3/7");
    CHECK(Rational(14, 7).str() == "2");
    CHECK_THROWS_AS(Rational(1, 0), std::domain_error);
    CHECK_THROWS_AS(Rational(INT64_MAX) + Rational(1), std::overflow_error);
}

TEST_CASE("rational parsing and rounding") {
    CHECK(Rational::parse("3/6") == Rational(1, 2));
    CHECK(Rational::parse("0.125") == Rational(1, 8));
    CHECK(Rational::parse("-0.5") == Rational(-1, 2));
    CHECK(Rational::parse("17") == Rational(17));
    CHECK(Rational::from_double(0.25) == Rational(1, 4));
    CHECK(Rational(1, 3).round_to(100) == Rational(33, 100));
    CHECK(Rational(2, 3).round_to(100) == Rational(67, 100));
    CHECK(min(Rational(1, 2), Rational(1, 3)) == Rational(1, 3));
    CHECK(max(Rational(1, 2), Rational(1, 3)) == Rational(1, 2));
}

TEST_CASE("message size is 2 B S H bytes in half precision") {
    ModelProfile p;
    p.micro_batch_size = 1;
    p.sequence_length = 1024;
    p.hidden_size = 3072;
    CHECK(message_size(p) == 6'291'456);

    ModelProfile unit;
    CHECK(message_size(unit) == 2);

    ModelProfile bert;
    bert.micro_batch_size = 4;
    bert.sequence_length = 512;
    bert.hidden_size = 2560;
    CHECK(message_size(bert) == 10'485'760);
}

TEST_CASE("cluster validation") {
    ClusterSpec c;
    c.devices_per_pipeline = 8;
    c.replicated_pipelines = 4;
    c.total_devices = 32;
    c.devices_per_node = 8;
    CHECK_NOTHROW(validate_cluster(c));

    CHECK_NOTHROW(validate_cluster(ClusterSpec::single(4)));

    ClusterSpec bad = ClusterSpec::single(4);
    bad.replicated_pipelines = 2;
    bad.total_devices = 7;
    bad.devices_per_node = 7;
    CHECK(kind_of([&] { validate_cluster(bad); }) == ErrorKind::InvalidTopology);

    ClusterSpec bw = ClusterSpec::single(2);
    bw.inter_node_bandwidth = 0;
    CHECK(kind_of([&] { validate_cluster(bw); }) == ErrorKind::NonPositiveBandwidth);
}

TEST_CASE("profile and cost validation") {
    ModelProfile p;
    p.micro_batch_size = 2;
    p.micro_batches = 4;
    p.mini_batch_size = 16;
    CHECK_NOTHROW(validate_profile(p, 2));
    CHECK(kind_of([&] { validate_profile(p, 1); }) == ErrorKind::InvalidProfile);

    CostModel c;
    c.tf = Rational(-1);
    CHECK(kind_of([&] { validate_costs(c); }) == ErrorKind::InvalidCost);
    CHECK(CostModel::canonical_units().canonical());
}

TEST_CASE("approach names round-trip and accept aliases") {
    for (ApproachId id : kAllApproaches) CHECK(parse_approach(approach_name(id)) == id);
    CHECK(parse_approach("1f1b") == ApproachId::Dapple1F1B);
    CHECK(parse_approach("1F1B-Int") == ApproachId::InterleavedLooping);
    CHECK(parse_approach("bitpipe-ef") == ApproachId::BitPipeEarlyForward);
    CHECK_FALSE(parse_approach("pipedream").has_value());
    CHECK(is_bidirectional(ApproachId::Chimera));
    CHECK_FALSE(is_bidirectional(ApproachId::InterleavedLooping));
}

TEST_CASE("error kinds split into config and domain errors") {
    CHECK(is_config_error(ErrorKind::ConfigParse));
    CHECK(is_config_error(ErrorKind::UnknownApproach));
    CHECK_FALSE(is_config_error(ErrorKind::OddDeviceCount));
    Error e(ErrorKind::MergeConflict, "slot 3");
    CHECK(std::string(e.what()) == "MergeConflict: slot 3");
    CHECK(e.detail() == "slot 3");
}

TEST_CASE("TOML config fills defaults") {
    auto c = parse_config(R"(
[cluster]
devices_per_pipeline = 4
replicated_pipelines = 2
devices_per_node = 4
[model]
micro_batch_size = 2
micro_batches = 8
[costs]
tf = "1/3"
[run]
approaches = ["GPipe", "bitpipe"]
mapping = "linear"
)",
                          ConfigFormat::Toml);
    CHECK(c.cluster.total_devices == 8);
    CHECK(c.model.mini_batch_size == 32);
    CHECK(c.costs.tf == Rational(1, 3));
    CHECK(c.costs.tb == Rational(2, 3));
    REQUIRE(c.run.approaches.size() == 2);
    CHECK(c.run.approaches[1] == ApproachId::BitPipe);
    CHECK(c.run.mapping == MappingPolicy::Linear);
    CHECK(c.run.v == 2);
}

TEST_CASE("JSON config is equivalent to TOML") {
    auto t = parse_config("[cluster]\ndevices_per_pipeline = 4\n[costs]\ntf = 0.5\n", ConfigFormat::Toml);
    auto j = parse_config(R"({"cluster": {"devices_per_pipeline": 4}, "costs": {"tf": 0.5}})", ConfigFormat::Json);
    CHECK(t.cluster.devices_per_pipeline == j.cluster.devices_per_pipeline);
    CHECK(t.costs.tf == j.costs.tf);
    CHECK(t.costs.tf == Rational(1, 2));
}

TEST_CASE("config errors") {
    CHECK(kind_of([] { parse_config("[cluster]\nbogus = 1\n", ConfigFormat::Toml); }) == ErrorKind::ConfigParse);
    CHECK(kind_of([] { parse_config("[nope]\n", ConfigFormat::Toml); }) == ErrorKind::ConfigParse);
    CHECK(kind_of([] { parse_config("[cluster]\ndevices_per_pipeline = \"x\"\n", ConfigFormat::Toml); }) ==
          ErrorKind::ConfigParse);
    CHECK(kind_of([] { parse_config("[cluster\n", ConfigFormat::Toml); }) == ErrorKind::ConfigParse);
    CHECK(kind_of([] { parse_config("{", ConfigFormat::Json); }) == ErrorKind::ConfigParse);
    CHECK(kind_of([] { parse_config("[run]\napproaches = [\"Foo\"]\n", ConfigFormat::Toml); }) ==
          ErrorKind::UnknownApproach);
    CHECK(kind_of([] { parse_config("[cluster]\ntotal_devices = 3\n", ConfigFormat::Toml); }) ==
          ErrorKind::InvalidTopology);
    CHECK(kind_of([] { load_config("/nonexistent/pipesched.toml"); }) == ErrorKind::ConfigParse);
}

TEST_CASE("shipped configs load") {
    for (const char* name : {"canonical_d4n4.toml", "eager_sync_d4n4.toml", "comm_bert64.toml", "bert64_32gpu.toml",
                             "verify.toml"}) {
        CAPTURE(name);
        CHECK_NOTHROW(load_config(std::string(PIPESCHED_CONFIG_DIR) + "/" + name));
    }
}

TEST_CASE("workload derived from per-stage costs") {
    auto c = parse_config(R"(
[cluster]
devices_per_pipeline = 4
[model]
micro_batch_size = 2
[costs]
tf = 0.5
weights_mem = 10.0
activations_mem = 3.0
)",
                          ConfigFormat::Toml);
    auto w = workload_of(c);
    CHECK(w.forward_seconds_per_sample == doctest::Approx(1.0));
    CHECK(w.backward_factor == doctest::Approx(2.0));
    CHECK(w.model_weight_bytes == doctest::Approx(40.0));
    CHECK(w.activation_bytes_per_sample == doctest::Approx(6.0));
}
