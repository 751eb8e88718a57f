#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pipesched/schedule.hpp"

namespace pipesched {

// Chain of dense layers, one per pipeline stage: y = f(x W^T), with f = tanh
// on every stage but the last (or identity everywhere when `tanh` is false).
struct ToyModel {
    std::vector<int> dims;                 // dims[s-1] -> dims[s] for stage s
    std::vector<Eigen::MatrixXd> weights;  // weights[s-1] is dims[s] x dims[s-1]
    bool tanh = true;

    int stages() const { return static_cast<int>(weights.size()); }
};

ToyModel make_toy_model(int stages, int width, std::uint64_t seed);

struct MicroBatch {
    Eigen::MatrixXd input;   // rows x dims.front()
    Eigen::MatrixXd target;  // rows x dims.back()
};
using Batch = std::vector<MicroBatch>;

Batch make_batch(const ToyModel& model, int micro_batches, int rows, std::uint64_t seed);

struct StepResult {
    std::vector<Eigen::MatrixXd> gradients;  // mean over all micro-batches, per stage
    std::vector<Eigen::MatrixXd> weights;    // after the single SGD update
    double loss = 0;                         // mean micro-batch MSE before the update
    bool replicas_consistent = true;         // bidirectional: both copies identical after update
};

struct RuntimeOptions {
    double learning_rate = 0.1;
};

// Runs one training step by executing every device's task list on its own
// thread. Activations and gradients travel as tagged messages; a message for a
// task the receiver does not own, a duplicate, or a leftover raises
// ProtocolViolation, and a cyclic wait raises DeadlockDetected.
StepResult run_schedule_numeric(const Schedule& schedule, const ToyModel& model, const Batch& batch,
                                const RuntimeOptions& options = {});

StepResult sequential_baseline(const ToyModel& model, const Batch& batch, const RuntimeOptions& options = {});

// Largest elementwise difference over gradients and weights, relative to the
// largest magnitude of the corresponding reference matrix.
double max_relative_error(const StepResult& got, const StepResult& reference);

struct VerifyCase {
    ApproachId approach;
    int D = 0;
    int N = 0;
    int v = 0;
    std::uint64_t seed = 0;
    bool pass = false;
    double max_rel_error = 0;
    std::string error;  // builder or runtime failure
};

struct VerifyOptions {
    std::vector<ApproachId> approaches;
    std::vector<int> D;
    std::vector<int> N;
    std::vector<int> v;
    std::vector<std::uint64_t> seeds;
    int width = 3;
    int rows = 2;
    double tolerance = 1e-9;
    bool inject_fault = false;  // corrupts each schedule before running it
};

// Combinations the builders reject are skipped, not reported.
std::vector<VerifyCase> verify_equivalence(const VerifyOptions& options);

// Test hook: reorders the last device's task list so its first backward runs
// before the forward it depends on.
Schedule inject_fault(Schedule s);

}  // namespace pipesched
