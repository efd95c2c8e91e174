#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <queue>
#include <set>
#include <string>
#include <thread>
#include <utility>
#include <variant>
#include <vector>

#include "rudra/checkpoint.hpp"
#include "rudra/clock.hpp"
#include "rudra/dataset.hpp"
#include "rudra/errors.hpp"
#include "rudra/model.hpp"
#include "rudra/protocol.hpp"
#include "rudra/rng.hpp"
#include "rudra/runlog.hpp"

namespace rudra {

using NodeId = std::uint32_t;

enum class Arch { Base, Adv, AdvStar };

inline const char* to_string(Arch a) {
    switch (a) {
        case Arch::Base: return "base";
        case Arch::Adv: return "adv";
        case Arch::AdvStar: return "advstar";
    }
    return "?";
}

enum class ScheduleMode { VirtualTime, Threads };

inline const char* to_string(ScheduleMode m) {
    return m == ScheduleMode::VirtualTime ? "virtual" : "threads";
}

/// Virtual-time cost model. All durations are in abstract seconds; zero
/// jitter makes every run trace fully deterministic (it stays deterministic
/// with jitter, since draws come from seeded per-entity streams).
struct TimingModel {
    double compute_base = 1.0;      // mean gradient compute time per learner
    double compute_jitter = 0.0;    // uniform multiplicative spread [0, j)
    double link_latency = 0.01;     // one-way message latency per hop
    double link_jitter = 0.0;       // uniform multiplicative spread [0, j)
    double server_service = 0.0;    // per-message occupancy at PS nodes
    double straggler_factor = 1.0;  // compute multiplier for slow learners
    std::uint32_t straggler_count = 0;

    void validate() const {
        if (compute_base <= 0.0) throw ConfigError("timing: compute_base must be > 0");
        if (compute_jitter < 0.0) throw ConfigError("timing: compute_jitter must be >= 0");
        if (link_latency < 0.0) throw ConfigError("timing: link_latency must be >= 0");
        if (link_jitter < 0.0) throw ConfigError("timing: link_jitter must be >= 0");
        if (server_service < 0.0) throw ConfigError("timing: server_service must be >= 0");
        if (straggler_factor < 1.0) throw ConfigError("timing: straggler_factor must be >= 1");
    }
};

struct ClusterConfig {
    std::uint32_t lambda = 1;
    std::uint32_t mu = 8;
    SyncPolicy policy = SyncPolicy::hardsync();
    LearningRatePolicy lr;
    double momentum = 0.0;
    double weight_decay = 0.0;
    Arch arch = Arch::Base;
    std::uint32_t tree_leaves = 1;  // PS leaf groups, adv and advstar only
    ScheduleMode mode = ScheduleMode::VirtualTime;
    SamplingMode sampling = SamplingMode::Independent;
    std::uint32_t epochs = 1;
    std::uint64_t seed = 1;
    TimingModel timing;
    double divergence_factor = 50.0;  // window loss above this multiple of
                                      // the first window's loss aborts the run
    std::uint64_t max_updates = 0;    // safety cap, 0 disables

    void validate() const {
        if (lambda < 1) throw ConfigError("cluster: lambda must be >= 1");
        if (mu < 1) throw ConfigError("cluster: mu must be >= 1");
        if (epochs < 1) throw ConfigError("cluster: epochs must be >= 1");
        policy.validate(lambda);
        lr.validate();
        if (lr.mode == LrMode::StalenessModulated && policy.kind != SyncKind::Softsync)
            throw ConfigError("cluster: staleness-modulated learning rate requires softsync");
        timing.validate();
        if (timing.straggler_count > lambda)
            throw ConfigError("cluster: straggler_count exceeds lambda");
        if (arch != Arch::Base) {
            if (tree_leaves < 1 || tree_leaves > lambda)
                throw ConfigError("cluster: tree_leaves must lie in [1, lambda]");
            if (lambda % tree_leaves != 0)
                throw ConfigError("cluster: lambda must divide evenly across tree leaves");
            const std::uint32_t lump = lambda / tree_leaves;
            const std::uint32_t c = required_gradient_count(policy, lambda);
            if (c % lump != 0)
                throw ConfigError(
                    "cluster: leaf group size " + std::to_string(lump) +
                    " does not divide the update window " + std::to_string(c) +
                    "; pick tree_leaves so each window is a whole number of leaf batches");
        }
        if (divergence_factor <= 1.0)
            throw ConfigError("cluster: divergence_factor must be > 1");
    }
};

// ---------------------------------------------------------------------------
// Messages

struct MsgTimestampQuery { LearnerId learner = 0; };
struct MsgTimestampReply { Timestamp ts = 0; };
struct MsgPullRequest { LearnerId learner = 0; };
struct MsgWeightsReply { VersionedWeights weights; };
struct MsgGradientPush { GradientMessage grad; bool wants_ack = false; };
struct MsgPushAck {};
struct MsgWeightsBroadcast { VersionedWeights weights; };
struct MsgComputeDone {};
struct MsgShutdown {};
struct MsgHalt {};  // thread engine sentinel, never seen by actors

using Message = std::variant<MsgTimestampQuery, MsgTimestampReply, MsgPullRequest,
                             MsgWeightsReply, MsgGradientPush, MsgPushAck,
                             MsgWeightsBroadcast, MsgComputeDone, MsgShutdown, MsgHalt>;

// ---------------------------------------------------------------------------
// Engine interface

class Context {
public:
    virtual ~Context() = default;
    virtual double now() const = 0;
    virtual ScheduleMode mode() const = 0;
    virtual void send(NodeId dst, Message msg) = 0;
    virtual void self_after(double delay, Message msg) = 0;
    virtual void learner_finished() = 0;
};

class Node {
public:
    virtual ~Node() = default;
    virtual void on_start(Context&) {}
    virtual void on_message(Context&, Message) = 0;
};

/// Deterministic discrete-event scheduler. Events order by (time, seq) with
/// seq assigned at creation, messages on one edge keep FIFO order, and PS
/// nodes serialize: each message occupies the node for its service time and
/// the handler runs at service completion.
class VirtualEngine {
public:
    VirtualEngine(std::vector<Node*> nodes, std::uint32_t num_service_nodes,
                  const TimingModel& timing, std::uint64_t seed)
        : nodes_(std::move(nodes)),
          num_service_(num_service_nodes),
          timing_(timing),
          seed_(seed),
          busy_until_(nodes_.size(), 0.0) {}

    double run() {
        for (NodeId id = 0; id < nodes_.size(); ++id) {
            Ctx ctx(*this, id, 0.0);
            nodes_[id]->on_start(ctx);
        }
        std::uint64_t dispatched = 0;
        while (!queue_.empty()) {
            Ev ev = std::move(const_cast<Ev&>(queue_.top()));
            queue_.pop();
            now_ = ev.time;
            if (!ev.serviced && ev.dst < num_service_ && timing_.server_service > 0.0) {
                const double start = std::max(ev.time, busy_until_[ev.dst]);
                const double done = start + timing_.server_service;
                busy_until_[ev.dst] = done;
                ev.time = done;
                ev.serviced = true;
                ev.seq = next_seq_++;
                queue_.push(std::move(ev));
                continue;
            }
            if (++dispatched > kEventCap)
                throw ProtocolError("virtual engine: event cap exceeded, run diverges or loops");
            Ctx ctx(*this, ev.dst, ev.time);
            nodes_[ev.dst]->on_message(ctx, std::move(ev.msg));
        }
        return now_;
    }

private:
    static constexpr std::uint64_t kEventCap = 100'000'000;

    struct Ev {
        double time = 0.0;
        std::uint64_t seq = 0;
        NodeId dst = 0;
        bool serviced = false;
        Message msg;
    };
    struct EvOrder {
        bool operator()(const Ev& a, const Ev& b) const {
            if (a.time != b.time) return a.time > b.time;
            return a.seq > b.seq;
        }
    };

    class Ctx final : public Context {
    public:
        Ctx(VirtualEngine& e, NodeId self, double now) : e_(e), self_(self), now_(now) {}
        double now() const override { return now_; }
        ScheduleMode mode() const override { return ScheduleMode::VirtualTime; }
        void send(NodeId dst, Message msg) override { e_.post(self_, dst, std::move(msg)); }
        void self_after(double delay, Message msg) override {
            e_.post_at(self_, self_, now_ + delay, std::move(msg));
        }
        void learner_finished() override {}

    private:
        VirtualEngine& e_;
        NodeId self_;
        double now_;
    };

    void post(NodeId src, NodeId dst, Message msg) {
        double latency = timing_.link_latency;
        if (timing_.link_jitter > 0.0) {
            const std::uint64_t edge = (static_cast<std::uint64_t>(src) << 32) | dst;
            auto [it, fresh] = edge_rngs_.try_emplace(edge, seed_, streams::link_latency(edge));
            latency *= 1.0 + timing_.link_jitter * it->second.next_double();
        }
        post_at(src, dst, now_ + latency, std::move(msg));
    }

    void post_at(NodeId src, NodeId dst, double t, Message msg) {
        if (dst >= nodes_.size()) throw PreconditionError("engine: destination out of range");
        const std::uint64_t edge = (static_cast<std::uint64_t>(src) << 32) | dst;
        auto [it, fresh] = last_delivery_.try_emplace(edge, 0.0);
        const double deliver = std::max(t, it->second);  // FIFO per edge
        it->second = deliver;
        queue_.push(Ev{deliver, next_seq_++, dst, false, std::move(msg)});
    }

    std::vector<Node*> nodes_;
    std::uint32_t num_service_;
    TimingModel timing_;
    std::uint64_t seed_;
    std::vector<double> busy_until_;
    std::priority_queue<Ev, std::vector<Ev>, EvOrder> queue_;
    std::map<std::uint64_t, double> last_delivery_;
    std::map<std::uint64_t, RngStream> edge_rngs_;
    double now_ = 0.0;
    std::uint64_t next_seq_ = 0;
};

/// Real-thread engine over the same actors: one thread and one FIFO inbox
/// per node. Timing comes from the wall clock; the run is correct but not
/// bit-reproducible.
class ThreadEngine {
public:
    ThreadEngine(std::vector<Node*> nodes, std::uint32_t num_service_nodes,
                 std::uint32_t num_learners)
        : nodes_(std::move(nodes)),
          num_service_(num_service_nodes),
          num_learners_(num_learners),
          boxes_(nodes_.size()) {}

    double run() {
        start_ = std::chrono::steady_clock::now();
        std::vector<std::thread> threads;
        threads.reserve(nodes_.size());
        for (NodeId id = 0; id < nodes_.size(); ++id)
            threads.emplace_back([this, id] { node_loop(id); });

        {
            std::unique_lock lk(done_mu_);
            done_cv_.wait(lk, [&] { return learners_done_ == num_learners_; });
        }
        // Every learner sent its last message before signalling, so inboxes
        // already hold all remaining traffic; halt in leaf-to-root order.
        for (NodeId id = num_service_; id < nodes_.size(); ++id) post(id, MsgHalt{});
        for (NodeId id = num_service_; id < nodes_.size(); ++id) threads[id].join();
        for (NodeId id = 1; id < num_service_; ++id) post(id, MsgHalt{});
        for (NodeId id = 1; id < num_service_; ++id) threads[id].join();
        post(0, MsgHalt{});
        threads[0].join();
        return elapsed();
    }

private:
    struct Inbox {
        std::mutex mu;
        std::condition_variable cv;
        std::deque<Message> q;
    };

    class Ctx final : public Context {
    public:
        Ctx(ThreadEngine& e, NodeId self) : e_(e), self_(self) {}
        double now() const override { return e_.elapsed(); }
        ScheduleMode mode() const override { return ScheduleMode::Threads; }
        void send(NodeId dst, Message msg) override { e_.post(dst, std::move(msg)); }
        void self_after(double, Message msg) override { e_.post(self_, std::move(msg)); }
        void learner_finished() override { e_.signal_done(); }

    private:
        ThreadEngine& e_;
        NodeId self_;
    };

    void node_loop(NodeId id) {
        Ctx ctx(*this, id);
        nodes_[id]->on_start(ctx);
        Inbox& box = boxes_[id];
        for (;;) {
            Message msg;
            {
                std::unique_lock lk(box.mu);
                box.cv.wait(lk, [&] { return !box.q.empty(); });
                msg = std::move(box.q.front());
                box.q.pop_front();
            }
            if (std::holds_alternative<MsgHalt>(msg)) return;
            nodes_[id]->on_message(ctx, std::move(msg));
        }
    }

    void post(NodeId dst, Message msg) {
        Inbox& box = boxes_[dst];
        {
            std::lock_guard lk(box.mu);
            box.q.push_back(std::move(msg));
        }
        box.cv.notify_one();
    }

    void signal_done() {
        {
            std::lock_guard lk(done_mu_);
            ++learners_done_;
        }
        done_cv_.notify_all();
    }

    double elapsed() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

    std::vector<Node*> nodes_;
    std::uint32_t num_service_;
    std::uint32_t num_learners_;
    std::vector<Inbox> boxes_;
    std::chrono::steady_clock::time_point start_;
    std::mutex done_mu_;
    std::condition_variable done_cv_;
    std::uint32_t learners_done_ = 0;
};

// ---------------------------------------------------------------------------
// Run state shared by the actors of one cluster

struct RunShared {
    ClusterConfig cfg;
    ModelSpec model;
    const Dataset* train = nullptr;
    const Dataset* test = nullptr;
    std::unique_ptr<DataServer> data;
    RunLog log;
    VersionedWeights final_weights;
    bool stop_initiated = false;
};

// ---------------------------------------------------------------------------
// Learner actor

class LearnerActor final : public Node {
public:
    LearnerActor(LearnerId id, NodeId parent, std::vector<NodeId> bcast_children,
                 RunShared* run)
        : id_(id),
          parent_(parent),
          bcast_children_(std::move(bcast_children)),
          run_(run),
          advstar_(run->cfg.arch == Arch::AdvStar),
          hardsync_(run->cfg.policy.kind == SyncKind::Hardsync),
          compute_rng_(run->cfg.seed, streams::learner_compute(id)) {}

    std::uint64_t computed() const { return computed_; }
    std::uint64_t pulls_served() const { return served_; }
    std::uint64_t pulls_skipped() const { return skipped_; }
    const std::vector<TimingSample>& samples() const { return samples_; }

    void on_start(Context& ctx) override { begin_cycle(ctx); }

    void on_message(Context& ctx, Message msg) override {
        if (std::holds_alternative<MsgShutdown>(msg)) {
            stopped_ = true;
            // Replies held at a draining server and broadcasts from an
            // absorbed update never come; abandon waits that depend on them.
            if (state_ == State::AwaitTs || state_ == State::WaitFresh) finish(ctx);
            return;
        }
        if (auto* b = std::get_if<MsgWeightsBroadcast>(&msg)) {
            for (NodeId child : bcast_children_) ctx.send(child, MsgWeightsBroadcast{b->weights});
            if (!has_latest_ || b->weights.timestamp > latest_.timestamp) {
                latest_ = std::move(b->weights);
                has_latest_ = true;
            }
            if (state_ == State::WaitFresh) try_use_buffer(ctx);
            return;
        }
        if (finished_) return;  // late replies after an abandoned cycle
        if (auto* r = std::get_if<MsgTimestampReply>(&msg)) {
            expect(State::AwaitTs, "timestamp reply");
            if (!has_weights_ || r->ts > weights_.timestamp) {
                state_ = State::AwaitWeights;
                ctx.send(parent_, MsgPullRequest{id_});
            } else {
                ++skipped_;
                pull_wait_ = ctx.now() - t_wait_start_;
                start_compute(ctx);
            }
            return;
        }
        if (auto* w = std::get_if<MsgWeightsReply>(&msg)) {
            expect(State::AwaitWeights, "weights reply");
            weights_ = std::move(w->weights);
            has_weights_ = true;
            ++served_;
            pull_wait_ = ctx.now() - t_wait_start_;
            start_compute(ctx);
            return;
        }
        if (std::holds_alternative<MsgComputeDone>(msg)) {
            expect(State::Computing, "compute completion");
            push_gradient(ctx);
            return;
        }
        if (std::holds_alternative<MsgPushAck>(msg)) {
            expect(State::AwaitAck, "push ack");
            push_wait_ = ctx.now() - t_push_;
            record_sample();
            begin_cycle(ctx);
            return;
        }
        throw ProtocolError("learner " + std::to_string(id_) + ": unexpected message");
    }

private:
    enum class State { Idle, AwaitTs, WaitFresh, AwaitWeights, Computing, AwaitAck };

    void expect(State s, const char* what) const {
        if (state_ != s)
            throw ProtocolError("learner " + std::to_string(id_) + ": " + what +
                                " out of order");
    }

    void begin_cycle(Context& ctx) {
        state_ = State::Idle;
        if (stopped_) {
            finish(ctx);
            return;
        }
        t_wait_start_ = ctx.now();
        if (advstar_) {
            try_use_buffer(ctx);
        } else {
            state_ = State::AwaitTs;
            ctx.send(parent_, MsgTimestampQuery{id_});
        }
    }

    /// advstar pull path: swap in the freshest broadcast weights at the
    /// batch boundary. Hardsync additionally requires a generation newer
    /// than the one the previous batch used.
    void try_use_buffer(Context& ctx) {
        if (has_latest_ && (!has_weights_ || latest_.timestamp > weights_.timestamp)) {
            weights_ = latest_;
            has_weights_ = true;
        }
        const bool fresh_enough =
            has_weights_ && (!hardsync_ || batch_ == 0 || weights_.timestamp > last_used_ts_);
        if (!fresh_enough) {
            state_ = State::WaitFresh;
            return;
        }
        pull_wait_ = ctx.now() - t_wait_start_;
        start_compute(ctx);
    }

    void start_compute(Context& ctx) {
        state_ = State::Computing;
        last_used_ts_ = weights_.timestamp;
        const MiniBatch batch = run_->data->get_minibatch(id_);
        if (ctx.mode() == ScheduleMode::Threads) {
            const auto t0 = std::chrono::steady_clock::now();
            auto [grad, batch_loss] = backward(weights_.weights, batch);
            compute_t_ = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                             .count();
            pending_grad_ = std::move(grad);
            pending_loss_ = batch_loss;
            ++computed_;
            push_gradient(ctx);
        } else {
            auto [grad, batch_loss] = backward(weights_.weights, batch);
            pending_grad_ = std::move(grad);
            pending_loss_ = batch_loss;
            ++computed_;
            compute_t_ = draw_compute_time();
            ctx.self_after(compute_t_, MsgComputeDone{});
        }
    }

    void push_gradient(Context& ctx) {
        GradientMessage gm(std::move(pending_grad_), last_used_ts_, id_);
        gm.loss = pending_loss_;
        t_push_ = ctx.now();
        if (advstar_) {
            ctx.send(parent_, MsgGradientPush{std::move(gm), false});
            push_wait_ = 0.0;
            record_sample();
            begin_cycle(ctx);
        } else {
            state_ = State::AwaitAck;
            ctx.send(parent_, MsgGradientPush{std::move(gm), true});
        }
    }

    void record_sample() {
        samples_.push_back(TimingSample{id_, batch_, compute_t_, pull_wait_, push_wait_});
        ++batch_;
        pull_wait_ = push_wait_ = compute_t_ = 0.0;
    }

    double draw_compute_time() {
        const TimingModel& tm = run_->cfg.timing;
        double t = tm.compute_base;
        if (id_ < tm.straggler_count) t *= tm.straggler_factor;
        if (tm.compute_jitter > 0.0) t *= 1.0 + tm.compute_jitter * compute_rng_.next_double();
        return t;
    }

    void finish(Context& ctx) {
        state_ = State::Idle;
        if (!finished_) {
            finished_ = true;
            ctx.learner_finished();
        }
    }

    LearnerId id_;
    NodeId parent_;
    std::vector<NodeId> bcast_children_;
    RunShared* run_;
    bool advstar_;
    bool hardsync_;
    RngStream compute_rng_;

    State state_ = State::Idle;
    bool stopped_ = false;
    bool finished_ = false;
    bool has_weights_ = false;
    bool has_latest_ = false;
    VersionedWeights weights_;
    VersionedWeights latest_;
    Timestamp last_used_ts_ = 0;
    std::uint64_t batch_ = 0;
    std::uint64_t computed_ = 0;
    std::uint64_t served_ = 0;
    std::uint64_t skipped_ = 0;
    double t_wait_start_ = 0.0;
    double t_push_ = 0.0;
    double pull_wait_ = 0.0;
    double push_wait_ = 0.0;
    double compute_t_ = 0.0;
    Gradient pending_grad_;
    double pending_loss_ = 0.0;
    std::vector<TimingSample> samples_;
};

// ---------------------------------------------------------------------------
// Root parameter server

class ServerActor final : public Node {
public:
    ServerActor(RunShared* run, VersionedWeights initial, std::vector<NodeId> relay_nodes,
                NodeId learner_base, std::uint32_t num_learner_nodes)
        : run_(run),
          state_(std::move(initial), run->cfg.policy, run->cfg.lambda, run->cfg.mu,
                 run->cfg.momentum, run->cfg.weight_decay),
          relay_nodes_(std::move(relay_nodes)),
          learner_base_(learner_base),
          num_learner_nodes_(num_learner_nodes),
          hardsync_(run->cfg.policy.kind == SyncKind::Hardsync) {}

    const AggregationState& state() const { return state_; }
    std::uint64_t received() const { return received_; }

    void on_start(Context& ctx) override {
        if (run_->cfg.arch == Arch::Adv)
            for (NodeId r : relay_nodes_) ctx.send(r, MsgWeightsBroadcast{state_.weights()});
        else if (run_->cfg.arch == Arch::AdvStar)
            ctx.send(learner_base_, MsgWeightsBroadcast{state_.weights()});
    }

    void on_message(Context& ctx, Message msg) override {
        if (auto* q = std::get_if<MsgTimestampQuery>(&msg)) {
            if (hardsync_ && !draining_ && contributed_.count(q->learner))
                held_.push_back(q->learner);
            else
                ctx.send(learner_base_ + q->learner, MsgTimestampReply{state_.timestamp()});
            return;
        }
        if (auto* p = std::get_if<MsgPullRequest>(&msg)) {
            ctx.send(learner_base_ + p->learner, MsgWeightsReply{state_.weights()});
            return;
        }
        if (auto* g = std::get_if<MsgGradientPush>(&msg)) {
            if (run_->cfg.arch == Arch::Base) received_ += g->grad.count;
            if (g->wants_ack) ctx.send(learner_base_ + g->grad.learner_id(), MsgPushAck{});
            for (LearnerId l : g->grad.learners) contributed_.insert(l);
            if (draining_) return;
            std::optional<WeightUpdate> up;
            try {
                up = state_.step(std::move(g->grad), run_->cfg.lr);
            } catch (const NumericOverflow&) {
                run_->log.diverged = true;
                initiate_shutdown(ctx);
                return;
            }
            if (up) handle_update(ctx, *up);
            return;
        }
        if (std::holds_alternative<MsgShutdown>(msg)) return;  // control plane echo
        throw ProtocolError("server: unexpected message");
    }

private:
    void handle_update(Context& ctx, const WeightUpdate& up) {
        RunLog& log = run_->log;
        log.staleness.record(up.record);
        log.updates_applied += 1;
        log.gradients_consumed += up.gradients_consumed;
        log.samples_consumed +=
            static_cast<std::uint64_t>(up.gradients_consumed) * run_->cfg.mu;

        if (baseline_loss_ < 0.0)
            baseline_loss_ = std::max(up.window_loss, 1e-12);
        else if (!std::isfinite(up.window_loss) ||
                 up.window_loss > run_->cfg.divergence_factor * baseline_loss_) {
            log.diverged = true;
            initiate_shutdown(ctx);
            return;
        }

        contributed_.clear();
        flush_held(ctx);
        if (run_->cfg.arch == Arch::Adv)
            for (NodeId r : relay_nodes_) ctx.send(r, MsgWeightsBroadcast{state_.weights()});
        else if (run_->cfg.arch == Arch::AdvStar)
            ctx.send(learner_base_, MsgWeightsBroadcast{state_.weights()});

        const std::uint64_t N = run_->train->size();
        while (next_epoch_ <= run_->cfg.epochs &&
               log.samples_consumed >= next_epoch_ * N) {
            EpochRow row;
            row.epoch = next_epoch_;
            row.train_error = evaluate(state_.weights().weights, *run_->train);
            row.test_error = evaluate(state_.weights().weights, *run_->test);
            row.samples_seen = log.samples_consumed;
            row.time = ctx.now();
            log.epochs.push_back(row);
            ++next_epoch_;
        }
        if (next_epoch_ > run_->cfg.epochs) {
            initiate_shutdown(ctx);
            return;
        }
        if (run_->cfg.max_updates > 0 && log.updates_applied >= run_->cfg.max_updates)
            initiate_shutdown(ctx);
    }

    void flush_held(Context& ctx) {
        for (LearnerId l : held_)
            ctx.send(learner_base_ + l, MsgTimestampReply{state_.timestamp()});
        held_.clear();
    }

    void initiate_shutdown(Context& ctx) {
        if (run_->stop_initiated) return;
        run_->stop_initiated = true;
        draining_ = true;
        run_->final_weights = state_.weights();
        flush_held(ctx);
        for (NodeId r : relay_nodes_) ctx.send(r, MsgShutdown{});
        for (NodeId l = 0; l < num_learner_nodes_; ++l)
            ctx.send(learner_base_ + l, MsgShutdown{});
    }

    RunShared* run_;
    AggregationState state_;
    std::vector<NodeId> relay_nodes_;
    NodeId learner_base_;
    std::uint32_t num_learner_nodes_;
    bool hardsync_;
    bool draining_ = false;
    std::uint64_t received_ = 0;
    std::set<LearnerId> contributed_;
    std::vector<LearnerId> held_;
    double baseline_loss_ = -1.0;
    std::uint64_t next_epoch_ = 1;
};

// ---------------------------------------------------------------------------
// Leaf relay of the PS tree (adv and advstar)

class RelayActor final : public Node {
public:
    RelayActor(RunShared* run, NodeId root, std::vector<LearnerId> children,
               NodeId learner_base)
        : run_(run),
          root_(root),
          children_(std::move(children)),
          learner_base_(learner_base),
          hardsync_(run->cfg.policy.kind == SyncKind::Hardsync) {
        for (LearnerId l : children_) buffers_[l];
    }

    std::uint64_t received() const { return received_; }

    void on_message(Context& ctx, Message msg) override {
        if (auto* q = std::get_if<MsgTimestampQuery>(&msg)) {
            // Queries wait until the cache holds real weights; before the
            // first root broadcast there is nothing a pull could serve.
            const bool must_hold =
                !draining_ && (!has_cache_ || (hardsync_ && contributed_.count(q->learner)));
            if (must_hold)
                held_.push_back(q->learner);
            else if (has_cache_)
                ctx.send(learner_base_ + q->learner, MsgTimestampReply{cache_.timestamp});
            return;
        }
        if (auto* p = std::get_if<MsgPullRequest>(&msg)) {
            ctx.send(learner_base_ + p->learner, MsgWeightsReply{cache_});
            return;
        }
        if (auto* g = std::get_if<MsgGradientPush>(&msg)) {
            received_ += g->grad.count;
            const LearnerId from = g->grad.learner_id();
            if (g->wants_ack) ctx.send(learner_base_ + from, MsgPushAck{});
            auto it = buffers_.find(from);
            if (it == buffers_.end())
                throw ProtocolError("relay: gradient from learner " + std::to_string(from) +
                                    " that is not a child");
            contributed_.insert(from);
            if (draining_) return;
            it->second.push_back(std::move(g->grad));
            relay_ready(ctx);
            return;
        }
        if (auto* b = std::get_if<MsgWeightsBroadcast>(&msg)) {
            cache_ = std::move(b->weights);
            has_cache_ = true;
            contributed_.clear();
            flush_held(ctx);
            return;
        }
        if (std::holds_alternative<MsgShutdown>(msg)) {
            draining_ = true;
            flush_held(ctx);
            return;
        }
        throw ProtocolError("relay: unexpected message");
    }

private:
    /// One contribution from every child forms one upward lump: the
    /// count-weighted mean with flattened contributor lists, child order.
    void relay_ready(Context& ctx) {
        for (;;) {
            for (const LearnerId l : children_)
                if (buffers_[l].empty()) return;
            std::vector<GradientMessage> window;
            window.reserve(children_.size());
            for (const LearnerId l : children_) {
                window.push_back(std::move(buffers_[l].front()));
                buffers_[l].pop_front();
            }
            GradientMessage lump;
            lump.gradient = aggregate_weighted(window);
            lump.count = 0;
            double loss_sum = 0.0;
            for (const auto& m : window) {
                lump.count += m.count;
                loss_sum += m.loss * static_cast<double>(m.count);
                lump.timestamps.insert(lump.timestamps.end(), m.timestamps.begin(),
                                       m.timestamps.end());
                lump.learners.insert(lump.learners.end(), m.learners.begin(),
                                     m.learners.end());
            }
            lump.loss = loss_sum / static_cast<double>(lump.count);
            ctx.send(root_, MsgGradientPush{std::move(lump), false});
        }
    }

    void flush_held(Context& ctx) {
        if (!has_cache_) {
            // Nothing valid to serve; the held learners were told to stop
            // and have abandoned the wait.
            held_.clear();
            return;
        }
        for (LearnerId l : held_)
            ctx.send(learner_base_ + l, MsgTimestampReply{cache_.timestamp});
        held_.clear();
    }

    RunShared* run_;
    NodeId root_;
    std::vector<LearnerId> children_;
    NodeId learner_base_;
    bool hardsync_;
    bool draining_ = false;
    std::uint64_t received_ = 0;
    bool has_cache_ = false;
    VersionedWeights cache_;
    std::map<LearnerId, std::deque<GradientMessage>> buffers_;
    std::set<LearnerId> contributed_;
    std::vector<LearnerId> held_;
};

// ---------------------------------------------------------------------------
// Topology assembly and the run driver

struct RunResult {
    RunLog log;
    VersionedWeights final_weights;
};

/// Node ids: 0 root, then tree relays, then learners in id order. Weight
/// broadcasts in advstar hop root -> learner 0 -> binary heap children.
inline RunResult run_cluster(const ClusterConfig& cfg, const ModelSpec& model,
                             const Dataset& train, const Dataset& test) {
    cfg.validate();
    train.validate();
    test.validate();
    if (train.inputs.cols != model.input_size() ||
        static_cast<std::size_t>(train.num_classes) != model.output_size())
        throw ConfigError("run_cluster: dataset shape does not match the model");

    RunShared run;
    run.cfg = cfg;
    run.model = model;
    run.train = &train;
    run.test = &test;
    run.data = std::make_unique<DataServer>(train, cfg.mu, cfg.lambda, cfg.sampling, cfg.seed);

    RngStream init_rng(cfg.seed, streams::kWeightInit);
    VersionedWeights initial{init_weights(model, init_rng), 0};

    const bool tree = cfg.arch != Arch::Base;
    const std::uint32_t num_relays = tree ? cfg.tree_leaves : 0;
    const NodeId learner_base = 1 + num_relays;
    const std::uint32_t group = tree ? cfg.lambda / cfg.tree_leaves : 0;

    std::vector<NodeId> relay_ids;
    for (std::uint32_t r = 0; r < num_relays; ++r) relay_ids.push_back(1 + r);

    auto server = std::make_unique<ServerActor>(&run, std::move(initial), relay_ids,
                                                learner_base, cfg.lambda);
    std::vector<std::unique_ptr<RelayActor>> relays;
    for (std::uint32_t r = 0; r < num_relays; ++r) {
        std::vector<LearnerId> kids;
        for (std::uint32_t k = 0; k < group; ++k) kids.push_back(r * group + k);
        relays.push_back(std::make_unique<RelayActor>(&run, 0, std::move(kids), learner_base));
    }
    std::vector<std::unique_ptr<LearnerActor>> learners;
    for (std::uint32_t l = 0; l < cfg.lambda; ++l) {
        const NodeId parent = tree ? 1 + l / group : 0;
        std::vector<NodeId> bcast;
        if (cfg.arch == Arch::AdvStar) {
            const std::uint32_t c1 = 2 * l + 1, c2 = 2 * l + 2;
            if (c1 < cfg.lambda) bcast.push_back(learner_base + c1);
            if (c2 < cfg.lambda) bcast.push_back(learner_base + c2);
        }
        learners.push_back(std::make_unique<LearnerActor>(l, parent, std::move(bcast), &run));
    }

    std::vector<Node*> nodes;
    nodes.push_back(server.get());
    for (auto& r : relays) nodes.push_back(r.get());
    for (auto& l : learners) nodes.push_back(l.get());

    double end_time = 0.0;
    if (cfg.mode == ScheduleMode::VirtualTime) {
        VirtualEngine engine(nodes, 1 + num_relays, cfg.timing, cfg.seed);
        end_time = engine.run();
    } else {
        ThreadEngine engine(nodes, 1 + num_relays, cfg.lambda);
        end_time = engine.run();
    }

    RunLog& log = run.log;
    log.gradients_received = server->received();
    for (const auto& r : relays) log.gradients_received += r->received();
    for (const auto& l : learners) {
        log.gradients_computed += l->computed();
        log.pulls_served += l->pulls_served();
        log.pulls_skipped += l->pulls_skipped();
        log.timing.insert(log.timing.end(), l->samples().begin(), l->samples().end());
    }
    std::sort(log.timing.begin(), log.timing.end(), [](const auto& a, const auto& b) {
        return a.learner_id != b.learner_id ? a.learner_id < b.learner_id
                                            : a.batch_index < b.batch_index;
    });

    if (!run.stop_initiated) run.final_weights = server->state().weights();
    log.total_time = end_time;
    log.final_checksum = checksum_values(run.final_weights.weights.values);
    if (!log.epochs.empty()) {
        log.final_train_error = log.epochs.back().train_error;
        log.final_test_error = log.epochs.back().test_error;
    } else {
        log.final_train_error = evaluate(run.final_weights.weights, train);
        log.final_test_error = evaluate(run.final_weights.weights, test);
    }
    return RunResult{std::move(run.log), std::move(run.final_weights)};
}

}  // namespace rudra
