#include <benchmark/benchmark.h>

#include "pipesched/analysis.hpp"
#include "pipesched/runtime.hpp"
#include "pipesched/schedule.hpp"
#include "pipesched/simulator.hpp"

using namespace pipesched;

namespace {

void BM_Build(benchmark::State& state, ApproachId a) {
    const int d = static_cast<int>(state.range(0));
    for (auto _ : state) benchmark::DoNotOptimize(build(a, d, 4 * d));
}
BENCHMARK_CAPTURE(BM_Build, dapple, ApproachId::Dapple1F1B)->Arg(4)->Arg(8)->Arg(16);
BENCHMARK_CAPTURE(BM_Build, interleaved, ApproachId::InterleavedLooping)->Arg(4)->Arg(8)->Arg(16);
BENCHMARK_CAPTURE(BM_Build, chimera, ApproachId::Chimera)->Arg(4)->Arg(8)->Arg(16);
BENCHMARK_CAPTURE(BM_Build, bitpipe, ApproachId::BitPipe)->Arg(4)->Arg(8)->Arg(16);
BENCHMARK_CAPTURE(BM_Build, bitpipe_ef, ApproachId::BitPipeEarlyForward)->Arg(4)->Arg(8)->Arg(16);

void BM_SimulateCanonical(benchmark::State& state) {
    const int d = static_cast<int>(state.range(0));
    const Schedule s = build_bitpipe(d, 4 * d, 2, false);
    for (auto _ : state) benchmark::DoNotOptimize(simulate_canonical(s));
}
BENCHMARK(BM_SimulateCanonical)->Arg(4)->Arg(8)->Arg(16);

void BM_SimulateCluster(benchmark::State& state) {
    ClusterSpec c;
    c.devices_per_pipeline = 8;
    c.replicated_pipelines = 4;
    c.total_devices = 32;
    c.devices_per_node = 8;
    c.intra_node_bandwidth = 200e9;
    c.inter_node_bandwidth = 25e9;
    const Schedule s = build_bitpipe(8, 16, 2, false);
    const auto map = make_mapping(c, MappingPolicy::ReplicasColocated);
    SimOptions so;
    so.eager_sync = true;
    so.message_bytes = 10'485'760;
    for (auto _ : state) benchmark::DoNotOptimize(simulate(s, CostModel{}, c, map, so));
}
BENCHMARK(BM_SimulateCluster);

void BM_GridSearch(benchmark::State& state) {
    ModelProfile p;
    p.micro_batch_size = 4;
    p.micro_batches = 8;
    p.mini_batch_size = 128;
    p.sequence_length = 512;
    p.hidden_size = 2560;
    ClusterSpec c;
    c.devices_per_pipeline = 8;
    c.replicated_pipelines = 4;
    c.total_devices = 32;
    c.devices_per_node = 8;
    c.intra_node_bandwidth = 200e9;
    c.inter_node_bandwidth = 25e9;
    WorkloadModel w;
    w.forward_seconds_per_sample = 0.0343;
    w.model_weight_bytes = 1.007e10;
    SearchOptions o;
    o.threads = static_cast<int>(state.range(0));
    for (auto _ : state) {
        benchmark::DoNotOptimize(
            grid_search(p, c, w, SearchSpace{{1, 2, 4, 8}, {4, 8, 16}, {1, 2, 4, 8}}, {ApproachId::BitPipe}, o));
    }
}
BENCHMARK(BM_GridSearch)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);

void BM_NumericStep(benchmark::State& state) {
    const ToyModel m = make_toy_model(8, 16, 1);
    const Batch b = make_batch(m, 8, 4, 2);
    const Schedule s = build_bitpipe(4, 8, 2, false);
    for (auto _ : state) benchmark::DoNotOptimize(run_schedule_numeric(s, m, b));
}
BENCHMARK(BM_NumericStep)->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();
