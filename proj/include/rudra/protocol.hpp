#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "rudra/clock.hpp"
#include "rudra/errors.hpp"
#include "rudra/model.hpp"

namespace rudra {

enum class SyncKind { Hardsync, Softsync };

/// Synchronization protocol. Async is softsync with n = lambda: the server
/// then updates on every received gradient.
struct SyncPolicy {
    SyncKind kind = SyncKind::Hardsync;
    std::uint32_t n = 1;  // softsync splitting parameter, 1 <= n <= lambda

    static SyncPolicy hardsync() { return {SyncKind::Hardsync, 1}; }
    static SyncPolicy softsync(std::uint32_t n) { return {SyncKind::Softsync, n}; }
    static SyncPolicy async(std::uint32_t lambda) { return {SyncKind::Softsync, lambda}; }

    void validate(std::uint32_t lambda) const {
        if (lambda < 1) throw ConfigError("SyncPolicy: lambda must be >= 1");
        if (kind == SyncKind::Softsync && (n < 1 || n > lambda))
            throw ConfigError("SyncPolicy: require 1 <= n <= lambda, got n=" +
                              std::to_string(n) + " lambda=" + std::to_string(lambda));
    }

    bool operator==(const SyncPolicy&) const = default;
};

inline const char* to_string(SyncKind k) {
    return k == SyncKind::Hardsync ? "hardsync" : "softsync";
}

/// Gradients the server must collect before one weight update:
/// lambda under hardsync, floor(lambda/n) under n-softsync.
inline std::uint32_t required_gradient_count(const SyncPolicy& policy, std::uint32_t lambda) {
    policy.validate(lambda);
    if (policy.kind == SyncKind::Hardsync) return lambda;
    return lambda / policy.n;
}

enum class LrMode { HardsyncRescale, StalenessModulated, Unmodulated };

inline const char* to_string(LrMode m) {
    switch (m) {
        case LrMode::HardsyncRescale: return "rescale";
        case LrMode::StalenessModulated: return "modulated";
        case LrMode::Unmodulated: return "unmodulated";
    }
    return "?";
}

/// Learning-rate policy. alpha0 is the base rate of the reference (single
/// learner, batch B) configuration.
struct LearningRatePolicy {
    double alpha0 = 0.001;
    std::uint32_t ref_batch = 128;  // B
    LrMode mode = LrMode::Unmodulated;

    void validate() const {
        if (alpha0 <= 0.0) throw ConfigError("LearningRatePolicy: alpha0 must be > 0");
        if (ref_batch < 1) throw ConfigError("LearningRatePolicy: ref batch must be >= 1");
    }
};

/// The step size a run actually uses:
///   rescale    -> alpha0 * sqrt(lambda*mu/B)   (hardsync scale-out rule)
///   modulated  -> alpha0 / n                   (softsync staleness rule)
///   unmodulated-> alpha0
inline double effective_learning_rate(const LearningRatePolicy& lr, const SyncPolicy& policy,
                                      std::uint32_t lambda, std::uint32_t mu) {
    lr.validate();
    policy.validate(lambda);
    if (mu < 1) throw ConfigError("effective_learning_rate: mu must be >= 1");
    switch (lr.mode) {
        case LrMode::HardsyncRescale:
            return lr.alpha0 * std::sqrt(static_cast<double>(lambda) *
                                         static_cast<double>(mu) /
                                         static_cast<double>(lr.ref_batch));
        case LrMode::StalenessModulated:
            if (policy.kind != SyncKind::Softsync)
                throw ConfigError("staleness-modulated learning rate requires softsync");
            return lr.alpha0 / static_cast<double>(policy.n);
        case LrMode::Unmodulated:
            return lr.alpha0;
    }
    return lr.alpha0;
}

/// Flat parameter vector plus its scalar timestamp; the server's single
/// source of truth and the payload of every weights message.
struct VersionedWeights {
    Weights weights;
    Timestamp timestamp = 0;
};

/// One gradient contribution in flight. A learner's push carries a single
/// gradient (count 1); a tree node's upward relay carries the count-weighted
/// mean of its children with the flattened contributor lists.
struct GradientMessage {
    Vector gradient;
    std::uint32_t count = 1;                 // gradients this vector averages
    std::vector<Timestamp> timestamps;       // one per contributor, flattened
    std::vector<LearnerId> learners;         // parallel to timestamps
    double loss = 0.0;                       // count-weighted mean training loss

    GradientMessage() = default;
    GradientMessage(Vector g, Timestamp ts, LearnerId learner)
        : gradient(std::move(g)), count(1), timestamps{ts}, learners{learner} {}

    /// The singleton accessors; meaningful only for count == 1 pushes.
    Timestamp timestamp() const { return timestamps.at(0); }
    LearnerId learner_id() const { return learners.at(0); }
};

/// Count-weighted elementwise mean of gradient contributions, summed in
/// arrival order. With unit counts this is the plain arithmetic mean.
inline Vector aggregate_weighted(const std::vector<GradientMessage>& msgs) {
    if (msgs.empty()) throw PreconditionError("aggregate: empty gradient list");
    const std::size_t dim = msgs.front().gradient.size();
    Vector sum(dim, 0.0);
    double total = 0.0;
    for (const auto& m : msgs) {
        if (m.gradient.size() != dim)
            throw ShapeError("aggregate: gradient lengths differ");
        const double c = static_cast<double>(m.count);
        for (std::size_t i = 0; i < dim; ++i) sum[i] += c * m.gradient[i];
        total += c;
    }
    for (auto& v : sum) v /= total;
    return sum;
}

/// Elementwise arithmetic mean of equally weighted gradients, summed in
/// deterministic arrival order.
inline Gradient aggregate(const std::vector<Gradient>& gradients) {
    if (gradients.empty()) throw PreconditionError("aggregate: empty gradient list");
    std::vector<GradientMessage> msgs;
    msgs.reserve(gradients.size());
    for (const auto& g : gradients) msgs.emplace_back(g, 0, 0);
    return aggregate_weighted(msgs);
}

/// Everything a completed server update hands back: the new weights
/// snapshot and the vector clock of the gradients that produced it.
struct WeightUpdate {
    VersionedWeights weights;
    VectorClockRecord record;
    std::uint32_t gradients_consumed = 0;
    double window_loss = 0.0;  // mean training loss over the window
};

/// The parameter server's update-side state: the pending gradient window,
/// the authoritative weights, and the optimizer state (velocity lives here;
/// learners are stateless between batches).
class AggregationState {
public:
    AggregationState() = default;
    AggregationState(VersionedWeights initial, SyncPolicy policy, std::uint32_t lambda,
                     std::uint32_t mu, double momentum, double weight_decay)
        : weights_(std::move(initial)),
          policy_(policy),
          lambda_(lambda),
          mu_(mu),
          momentum_(momentum),
          weight_decay_(weight_decay),
          required_(required_gradient_count(policy, lambda)),
          velocity_(weights_.weights.values.size(), 0.0) {}

    const VersionedWeights& weights() const { return weights_; }
    Timestamp timestamp() const { return weights_.timestamp; }
    const SyncPolicy& policy() const { return policy_; }
    std::uint32_t lambda() const { return lambda_; }
    std::uint32_t mu() const { return mu_; }
    std::uint32_t required_count() const { return required_; }
    std::uint32_t pending_count() const { return pending_total_; }
    const Vector& velocity() const { return velocity_; }
    std::uint64_t updates_applied() const { return updates_applied_; }
    std::uint64_t gradients_consumed() const { return gradients_consumed_; }

    /// Buffer one incoming gradient message; when the window reaches the
    /// required count, apply the update and return it.
    std::optional<WeightUpdate> step(GradientMessage incoming, const LearningRatePolicy& lr) {
        if (incoming.timestamps.size() != incoming.count ||
            incoming.learners.size() != incoming.count || incoming.count == 0)
            throw ProtocolError("gradient message: malformed contributor lists");
        for (Timestamp ts : incoming.timestamps)
            if (ts > weights_.timestamp)
                throw ClockViolation("gradient timestamp " + std::to_string(ts) +
                                     " ahead of server timestamp " +
                                     std::to_string(weights_.timestamp));
        if (policy_.kind == SyncKind::Hardsync) {
            for (LearnerId id : incoming.learners)
                if (!window_learners_.insert(id).second)
                    throw ProtocolError("hardsync: learner " + std::to_string(id) +
                                        " pushed twice within one update window");
        }
        pending_total_ += incoming.count;
        pending_.push_back(std::move(incoming));
        if (pending_total_ < required_) return std::nullopt;
        if (pending_total_ > required_)
            throw ProtocolError("update window overshot: " + std::to_string(pending_total_) +
                                " gradients pending, " + std::to_string(required_) +
                                " required (tree lump does not divide the window)");
        return apply_window(lr);
    }

private:
    std::optional<WeightUpdate> apply_window(const LearningRatePolicy& lr) {
        const Vector grad = aggregate_weighted(pending_);
        double loss_sum = 0.0;
        for (const auto& m : pending_) loss_sum += m.loss * static_cast<double>(m.count);
        const double window_loss = loss_sum / static_cast<double>(pending_total_);
        const double alpha = effective_learning_rate(lr, policy_, lambda_, mu_);
        sgd_step(weights_.weights, grad, alpha, momentum_, weight_decay_, velocity_);
        weights_.timestamp += 1;

        VectorClockRecord rec;
        rec.update_index = weights_.timestamp;
        for (const auto& m : pending_) {
            rec.contributors.insert(rec.contributors.end(), m.timestamps.begin(),
                                    m.timestamps.end());
            rec.learner_ids.insert(rec.learner_ids.end(), m.learners.begin(),
                                   m.learners.end());
        }
        rec.validate();

        updates_applied_ += 1;
        gradients_consumed_ += pending_total_;
        pending_.clear();
        pending_total_ = 0;
        window_learners_.clear();
        return WeightUpdate{weights_, std::move(rec), required_, window_loss};
    }

    VersionedWeights weights_;
    SyncPolicy policy_;
    std::uint32_t lambda_ = 1;
    std::uint32_t mu_ = 1;
    double momentum_ = 0.0;
    double weight_decay_ = 0.0;
    std::uint32_t required_ = 1;
    Vector velocity_;
    std::vector<GradientMessage> pending_;
    std::uint32_t pending_total_ = 0;
    std::set<LearnerId> window_learners_;
    std::uint64_t updates_applied_ = 0;
    std::uint64_t gradients_consumed_ = 0;
};

}  // namespace rudra
