#include "pipesched/runtime.hpp"

#include <algorithm>
#include <cmath>
#include <condition_variable>
#include <exception>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <thread>
#include <tuple>

#include "pipesched/error.hpp"

namespace pipesched {
namespace {

using Eigen::MatrixXd;
using Key = std::tuple<int, int, int, int>;  // kind, micro-batch, stage, direction

Key key_of(const Task& t) {
    return {static_cast<int>(t.kind), t.micro_batch, t.stage, static_cast<int>(t.direction)};
}

Task forward_of(const Task& t) { return Task{TaskKind::Forward, t.micro_batch, t.stage, t.direction, t.unit}; }

MatrixXd random_matrix(std::mt19937_64& rng, int rows, int cols, double scale) {
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    MatrixXd m(rows, cols);
    for (int c = 0; c < cols; ++c) {
        for (int r = 0; r < rows; ++r) m(r, c) = dist(rng) * scale;
    }
    return m;
}

void check_shapes(const ToyModel& model, const Batch& batch) {
    if (model.stages() < 1 || static_cast<int>(model.dims.size()) != model.stages() + 1) {
        throw Error(ErrorKind::ShapeMismatch, "model needs stages + 1 layer widths");
    }
    for (int s = 1; s <= model.stages(); ++s) {
        const auto& w = model.weights[static_cast<std::size_t>(s - 1)];
        if (w.rows() != model.dims[static_cast<std::size_t>(s)] ||
            w.cols() != model.dims[static_cast<std::size_t>(s - 1)]) {
            throw Error(ErrorKind::ShapeMismatch, "stage " + std::to_string(s) + " weights do not match widths");
        }
    }
    for (std::size_t m = 0; m < batch.size(); ++m) {
        const auto& mb = batch[m];
        if (mb.input.cols() != model.dims.front() || mb.target.cols() != model.dims.back() ||
            mb.input.rows() != mb.target.rows() || mb.input.rows() < 1) {
            throw Error(ErrorKind::ShapeMismatch, "micro-batch " + std::to_string(m + 1) + " has the wrong shape");
        }
    }
}

// Per-stage math shared by the threaded runtime and the sequential baseline.
struct StageMath {
    const ToyModel& model;

    bool activated(int stage) const { return model.tanh && stage < model.stages(); }

    MatrixXd forward(int stage, const MatrixXd& x) const {
        const auto& w = model.weights[static_cast<std::size_t>(stage - 1)];
        if (x.cols() != w.cols()) {
            throw Error(ErrorKind::ShapeMismatch, "stage " + std::to_string(stage) + " input width " +
                                                      std::to_string(x.cols()) + " != " + std::to_string(w.cols()));
        }
        MatrixXd z = x * w.transpose();
        return activated(stage) ? MatrixXd(z.array().tanh()) : z;
    }

    // Returns dL/dx and adds dL/dW into `grad`.
    MatrixXd backward(int stage, const MatrixXd& x, const MatrixXd& y, const MatrixXd& gy, MatrixXd& grad) const {
        const auto& w = model.weights[static_cast<std::size_t>(stage - 1)];
        MatrixXd gz = activated(stage) ? MatrixXd(gy.array() * (1.0 - y.array().square())) : gy;
        grad += gz.transpose() * x;
        return gz * w;
    }

    static double loss(const MatrixXd& y, const MatrixXd& t) {
        return (y - t).array().square().sum() / static_cast<double>(y.size());
    }
    static MatrixXd loss_grad(const MatrixXd& y, const MatrixXd& t) {
        return 2.0 * (y - t) / static_cast<double>(y.size());
    }
};

std::vector<MatrixXd> zero_grads(const ToyModel& model) {
    std::vector<MatrixXd> g;
    for (const auto& w : model.weights) g.push_back(MatrixXd::Zero(w.rows(), w.cols()));
    return g;
}

StepResult finish_step(const ToyModel& model, std::vector<MatrixXd> grads, double loss, const RuntimeOptions& opt) {
    StepResult r;
    r.loss = loss;
    r.weights = model.weights;
    for (std::size_t s = 0; s < grads.size(); ++s) r.weights[s] -= opt.learning_rate * grads[s];
    r.gradients = std::move(grads);
    return r;
}

struct Aborted {};

class Transport {
public:
    Transport(int devices, std::vector<std::map<Key, int>> owned)
        : inbox_(static_cast<std::size_t>(devices)),
          owned_(std::move(owned)),
          waiting_(static_cast<std::size_t>(devices)),
          finished_(static_cast<std::size_t>(devices), false) {}

    void send(int dst, const Task& target, MatrixXd data) {
        std::lock_guard lk(mu_);
        auto k = key_of(target);
        auto& own = owned_[static_cast<std::size_t>(dst)];
        auto it = own.find(k);
        if (it == own.end()) {
            fail_locked(ErrorKind::ProtocolViolation,
                        "message for " + to_string(target) + " sent to device " + std::to_string(dst + 1) +
                            ", which does not run it");
        }
        if (it->second != 0 || inbox_[static_cast<std::size_t>(dst)].count(k)) {
            fail_locked(ErrorKind::ProtocolViolation, "duplicate message for " + to_string(target));
        }
        inbox_[static_cast<std::size_t>(dst)].emplace(k, std::move(data));
        cv_.notify_all();
    }

    MatrixXd receive(int dev, const Task& target) {
        std::unique_lock lk(mu_);
        auto k = key_of(target);
        auto& box = inbox_[static_cast<std::size_t>(dev)];
        auto& waiting = waiting_[static_cast<std::size_t>(dev)];
        for (;;) {
            if (abort_) throw Aborted{};
            auto it = box.find(k);
            if (it != box.end()) {
                waiting.reset();
                MatrixXd m = std::move(it->second);
                box.erase(it);
                owned_[static_cast<std::size_t>(dev)][k] = 1;
                return m;
            }
            waiting = k;
            if (stuck_locked()) {
                fail_locked(ErrorKind::DeadlockDetected, "every remaining device is waiting; device " +
                                                             std::to_string(dev + 1) + " waits for " +
                                                             to_string(target));
            }
            cv_.wait(lk);
        }
    }

    void done(int dev) {
        std::lock_guard lk(mu_);
        finished_[static_cast<std::size_t>(dev)] = true;
        cv_.notify_all();
    }

    void fail(std::exception_ptr e) {
        std::lock_guard lk(mu_);
        if (!error_) error_ = e;
        abort_ = true;
        cv_.notify_all();
    }

    void rethrow() const {
        if (error_) std::rethrow_exception(error_);
        for (std::size_t d = 0; d < inbox_.size(); ++d) {
            if (!inbox_[d].empty()) {
                throw Error(ErrorKind::ProtocolViolation,
                            "device " + std::to_string(d + 1) + " has undelivered messages after the step");
            }
        }
    }

private:
    // True when every unfinished worker waits for a message that is not queued.
    bool stuck_locked() const {
        for (std::size_t d = 0; d < inbox_.size(); ++d) {
            if (finished_[d]) continue;
            if (!waiting_[d] || inbox_[d].count(*waiting_[d])) return false;
        }
        return true;
    }

    [[noreturn]] void fail_locked(ErrorKind kind, const std::string& msg) {
        if (!error_) error_ = std::make_exception_ptr(Error(kind, msg));
        abort_ = true;
        cv_.notify_all();
        throw Aborted{};
    }

    std::mutex mu_;
    std::condition_variable cv_;
    std::vector<std::map<Key, MatrixXd>> inbox_;
    std::vector<std::map<Key, int>> owned_;  // task -> consumed flag
    std::vector<std::optional<Key>> waiting_;
    std::vector<bool> finished_;
    bool abort_ = false;
    std::exception_ptr error_;
};

struct Replica {
    std::vector<MatrixXd> grads;
    double loss = 0;
    int micro_batches = 0;
};

}  // namespace

ToyModel make_toy_model(int stages, int width, std::uint64_t seed) {
    if (stages < 1 || width < 1) throw Error(ErrorKind::ShapeMismatch, "toy model needs stages >= 1 and width >= 1");
    std::mt19937_64 rng(seed);
    ToyModel m;
    m.dims.assign(static_cast<std::size_t>(stages + 1), width);
    for (int s = 0; s < stages; ++s) m.weights.push_back(random_matrix(rng, width, width, 1.0 / std::sqrt(width)));
    return m;
}

Batch make_batch(const ToyModel& model, int micro_batches, int rows, std::uint64_t seed) {
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    Batch b;
    for (int m = 0; m < micro_batches; ++m) {
        MicroBatch mb;
        mb.input = random_matrix(rng, rows, model.dims.front(), 1.0);
        mb.target = random_matrix(rng, rows, model.dims.back(), 1.0);
        b.push_back(std::move(mb));
    }
    return b;
}

StepResult sequential_baseline(const ToyModel& model, const Batch& batch, const RuntimeOptions& options) {
    check_shapes(model, batch);
    StageMath math{model};
    auto grads = zero_grads(model);
    double loss = 0;
    for (const auto& mb : batch) {
        std::vector<MatrixXd> xs{mb.input};
        for (int s = 1; s <= model.stages(); ++s) xs.push_back(math.forward(s, xs.back()));
        loss += StageMath::loss(xs.back(), mb.target);
        MatrixXd g = StageMath::loss_grad(xs.back(), mb.target);
        for (int s = model.stages(); s >= 1; --s) {
            auto i = static_cast<std::size_t>(s);
            g = math.backward(s, xs[i - 1], xs[i], g, grads[i - 1]);
        }
    }
    const auto n = static_cast<double>(batch.size());
    for (auto& g : grads) g /= n;
    return finish_step(model, std::move(grads), loss / n, options);
}

StepResult run_schedule_numeric(const Schedule& schedule, const ToyModel& model, const Batch& batch,
                                const RuntimeOptions& options) {
    check_shapes(model, batch);
    const int stages = schedule.stages_per_pipeline();
    if (model.stages() != stages) {
        throw Error(ErrorKind::ShapeMismatch, "model has " + std::to_string(model.stages()) +
                                                  " stages, schedule needs " + std::to_string(stages));
    }
    if (static_cast<int>(batch.size()) != schedule.N) {
        throw Error(ErrorKind::ShapeMismatch, "batch has " + std::to_string(batch.size()) +
                                                  " micro-batches, schedule needs " + std::to_string(schedule.N));
    }
    const int d = schedule.D;
    std::vector<std::map<Key, int>> owned(static_cast<std::size_t>(d));
    for (int dev = 0; dev < d; ++dev) {
        for (const Task& t : schedule.per_device[static_cast<std::size_t>(dev)]) {
            if (t.micro_batch < 1 || t.micro_batch > schedule.N) {
                throw Error(ErrorKind::ProtocolViolation, "task " + to_string(t) + " names an unknown micro-batch");
            }
            owned[static_cast<std::size_t>(dev)][key_of(t)] = 0;
        }
    }
    Transport net(d, owned);
    StageMath math{model};
    std::vector<Replica> replicas(2);
    for (auto& r : replicas) r.grads = zero_grads(model);

    auto worker = [&](int dev) {
        std::map<Key, MatrixXd> local;                          // same-device inputs, keyed by consumer
        std::map<Key, std::pair<MatrixXd, MatrixXd>> context;  // forward (x, y) kept for the backward
        auto take_local = [&](const Task& t) {
            auto it = local.find(key_of(t));
            if (it == local.end()) {
                throw Error(ErrorKind::ProtocolViolation,
                            "device " + std::to_string(dev + 1) + " runs " + to_string(t) + " before its input exists");
            }
            MatrixXd m = std::move(it->second);
            local.erase(it);
            return m;
        };
        auto deliver = [&](const Task& consumer, MatrixXd data) {
            int to = schedule.device_of(consumer) - 1;
            if (to == dev) {
                local[key_of(consumer)] = std::move(data);
            } else {
                net.send(to, consumer, std::move(data));
            }
        };
        auto input_for = [&](const Task& t) -> MatrixXd {
            auto pred = dataflow_predecessor(t, stages);
            if (!pred) return batch[static_cast<std::size_t>(t.micro_batch - 1)].input;
            if (schedule.device_of(*pred) - 1 == dev) return take_local(t);
            return net.receive(dev, t);
        };
        try {
            for (const Task& t : schedule.per_device[static_cast<std::size_t>(dev)]) {
                auto& rep = replicas[t.direction == Direction::Down ? 0 : 1];
                const auto& mb = batch[static_cast<std::size_t>(t.micro_batch - 1)];
                if (t.kind == TaskKind::Forward) {
                    MatrixXd x = input_for(t);
                    MatrixXd y = math.forward(t.stage, x);
                    if (t.stage == stages) {
                        // Loss bookkeeping happens only on the last stage's device.
                        rep.loss += StageMath::loss(y, mb.target);
                        ++rep.micro_batches;
                        local[key_of(Task{TaskKind::Backward, t.micro_batch, t.stage, t.direction, t.unit})] =
                            StageMath::loss_grad(y, mb.target);
                    } else {
                        deliver(Task{TaskKind::Forward, t.micro_batch, t.stage + 1, t.direction, t.unit}, y);
                    }
                    context[key_of(t)] = {std::move(x), std::move(y)};
                } else {
                    MatrixXd gy = t.stage == stages ? take_local(t) : input_for(t);
                    auto it = context.find(key_of(forward_of(t)));
                    if (it == context.end()) {
                        throw Error(ErrorKind::ProtocolViolation, "device " + std::to_string(dev + 1) + " runs " +
                                                                      to_string(t) + " before its forward");
                    }
                    MatrixXd gx = math.backward(t.stage, it->second.first, it->second.second, gy,
                                                rep.grads[static_cast<std::size_t>(t.stage - 1)]);
                    context.erase(it);
                    if (t.stage > 1) deliver(Task{TaskKind::Backward, t.micro_batch, t.stage - 1, t.direction, t.unit}, gx);
                }
            }
            net.done(dev);
        } catch (const Aborted&) {
            net.done(dev);
        } catch (...) {
            net.fail(std::current_exception());
            net.done(dev);
        }
    };

    std::vector<std::thread> threads;
    for (int dev = 0; dev < d; ++dev) threads.emplace_back(worker, dev);
    for (auto& t : threads) t.join();
    net.rethrow();

    // Each replica's gradient is the mean over its own micro-batches; the two
    // means are then averaged, which equals the mean over all N.
    std::vector<MatrixXd> grads = zero_grads(model);
    double loss = 0;
    int used = 0;
    for (auto& r : replicas) {
        if (r.micro_batches == 0) continue;
        ++used;
        for (std::size_t s = 0; s < grads.size(); ++s) grads[s] += r.grads[s] / r.micro_batches;
        loss += r.loss;
    }
    for (auto& g : grads) g /= std::max(used, 1);
    StepResult result = finish_step(model, std::move(grads), loss / schedule.N, options);
    if (used == 2 && replicas[0].micro_batches != replicas[1].micro_batches) {
        throw Error(ErrorKind::ProtocolViolation, "replicas processed different micro-batch counts");
    }
    // The up replica applies the same allreduced gradient to its own copy of
    // the initial weights.
    StepResult twin = finish_step(model, result.gradients, result.loss, options);
    for (std::size_t s = 0; s < twin.weights.size(); ++s) {
        result.replicas_consistent = result.replicas_consistent && twin.weights[s] == result.weights[s];
    }
    return result;
}

double max_relative_error(const StepResult& got, const StepResult& ref) {
    if (got.gradients.size() != ref.gradients.size() || got.weights.size() != ref.weights.size()) {
        throw Error(ErrorKind::ShapeMismatch, "step results have different stage counts");
    }
    double worst = 0;
    auto cmp = [&](const MatrixXd& a, const MatrixXd& b) {
        if (a.rows() != b.rows() || a.cols() != b.cols()) {
            throw Error(ErrorKind::ShapeMismatch, "step results have different matrix shapes");
        }
        double scale = std::max(b.cwiseAbs().maxCoeff(), 1e-300);
        worst = std::max(worst, (a - b).cwiseAbs().maxCoeff() / scale);
    };
    for (std::size_t s = 0; s < ref.gradients.size(); ++s) cmp(got.gradients[s], ref.gradients[s]);
    for (std::size_t s = 0; s < ref.weights.size(); ++s) cmp(got.weights[s], ref.weights[s]);
    worst = std::max(worst, std::abs(got.loss - ref.loss) / std::max(std::abs(ref.loss), 1e-300));
    return worst;
}

Schedule inject_fault(Schedule s) {
    auto& row = s.per_device.back();
    auto b = std::find_if(row.begin(), row.end(), [](const Task& t) { return t.kind == TaskKind::Backward; });
    if (b == row.end()) return s;
    auto f = std::find(row.begin(), row.end(), forward_of(*b));
    if (f == row.end()) return s;
    std::rotate(f, b, b + 1);
    s.slot_start.clear();
    return s;
}

std::vector<VerifyCase> verify_equivalence(const VerifyOptions& opt) {
    std::vector<VerifyCase> out;
    for (ApproachId a : opt.approaches) {
        const bool chunked = a == ApproachId::InterleavedLooping || a == ApproachId::VShapedInterleaved ||
                             a == ApproachId::BitPipe || a == ApproachId::BitPipeEarlyForward;
        for (int d : opt.D) {
            for (int n : opt.N) {
                for (int v : opt.v) {
                    if (!chunked && v != 1) continue;
                    Schedule s;
                    try {
                        s = build(a, d, n, v);
                    } catch (const Error&) {
                        continue;
                    }
                    if (opt.inject_fault) s = inject_fault(std::move(s));
                    for (std::uint64_t seed : opt.seeds) {
                        VerifyCase c{a, d, n, v, seed, false, 0, {}};
                        try {
                            ToyModel model = make_toy_model(s.stages_per_pipeline(), opt.width, seed);
                            Batch batch = make_batch(model, n, opt.rows, seed);
                            StepResult got = run_schedule_numeric(s, model, batch);
                            StepResult ref = sequential_baseline(model, batch);
                            c.max_rel_error = max_relative_error(got, ref);
                            c.pass = c.max_rel_error <= opt.tolerance && got.replicas_consistent;
                        } catch (const Error& e) {
                            c.error = e.what();
                        }
                        out.push_back(std::move(c));
                    }
                }
            }
        }
    }
    return out;
}

}  // namespace pipesched
