#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "rudra/protocol.hpp"
#include "rudra/rng.hpp"

using namespace rudra;

namespace {

Vector random_vec(RngStream& rng, std::size_t n) {
    Vector v(n);
    for (auto& x : v) x = rng.next_uniform(-1.0, 1.0);
    return v;
}

VersionedWeights tiny_weights(std::size_t seed = 1) {
    RngStream rng(seed, streams::kWeightInit);
    return VersionedWeights{init_weights(ModelSpec({2, 2}), rng), 0};
}

}  // namespace

TEST_CASE("required gradient counts") {
    CHECK(required_gradient_count(SyncPolicy::hardsync(), 30) == 30);
    CHECK(required_gradient_count(SyncPolicy::softsync(1), 30) == 30);
    CHECK(required_gradient_count(SyncPolicy::softsync(2), 30) == 15);
    CHECK(required_gradient_count(SyncPolicy::softsync(7), 30) == 4);  // floor
    CHECK(required_gradient_count(SyncPolicy::softsync(30), 30) == 1);
    CHECK(required_gradient_count(SyncPolicy::async(30), 30) == 1);
    CHECK(SyncPolicy::async(30) == SyncPolicy::softsync(30));
}

TEST_CASE("policy validation enforces 1 <= n <= lambda") {
    CHECK_THROWS_AS(SyncPolicy::softsync(31).validate(30), ConfigError);
    CHECK_THROWS_AS(SyncPolicy::softsync(0).validate(30), ConfigError);
    CHECK_THROWS_AS(SyncPolicy::hardsync().validate(0), ConfigError);
    SyncPolicy::softsync(30).validate(30);  // boundary is legal
}

TEST_CASE("effective learning rate rules") {
    LearningRatePolicy lr{0.1, 8, LrMode::HardsyncRescale};
    // sqrt(lambda*mu/B) = sqrt(4*8/8) = 2
    CHECK(effective_learning_rate(lr, SyncPolicy::hardsync(), 4, 8) ==
          doctest::Approx(0.2).epsilon(1e-15));

    lr.mode = LrMode::StalenessModulated;
    CHECK(effective_learning_rate(lr, SyncPolicy::softsync(4), 4, 8) ==
          doctest::Approx(0.025).epsilon(1e-15));
    CHECK_THROWS_AS(effective_learning_rate(lr, SyncPolicy::hardsync(), 4, 8), ConfigError);

    lr.mode = LrMode::Unmodulated;
    CHECK(effective_learning_rate(lr, SyncPolicy::hardsync(), 4, 8) == 0.1);
    CHECK(effective_learning_rate(lr, SyncPolicy::softsync(2), 4, 8) == 0.1);

    lr.alpha0 = 0.0;
    CHECK_THROWS_AS(effective_learning_rate(lr, SyncPolicy::hardsync(), 4, 8), ConfigError);
}

TEST_CASE("modulated rate at n=1 equals the unmodulated rate") {
    LearningRatePolicy mod{0.07, 8, LrMode::StalenessModulated};
    LearningRatePolicy plain{0.07, 8, LrMode::Unmodulated};
    CHECK(effective_learning_rate(mod, SyncPolicy::softsync(1), 4, 8) ==
          effective_learning_rate(plain, SyncPolicy::softsync(1), 4, 8));
}

TEST_CASE("aggregate equals the hand mean") {
    const Vector a = {1.0, 2.0}, b = {3.0, 6.0};
    const Gradient m = aggregate({a, b});
    CHECK(m == Vector{2.0, 4.0});
    CHECK_THROWS_AS(aggregate({}), PreconditionError);
    CHECK_THROWS_AS(aggregate({{1.0}, {1.0, 2.0}}), ShapeError);
}

TEST_CASE("aggregate matches a naive mean bitwise") {
    RngStream rng(8, 2);
    std::vector<Gradient> gs;
    for (int i = 0; i < 9; ++i) gs.push_back(random_vec(rng, 17));
    const Gradient got = aggregate(gs);
    for (std::size_t j = 0; j < 17; ++j) {
        double sum = 0.0;
        for (const auto& g : gs) sum += g[j];
        CHECK(got[j] == sum / 9.0);
    }
}

TEST_CASE("weighted aggregation uses counts") {
    GradientMessage lump;
    lump.gradient = {1.0, 1.0};
    lump.count = 2;
    lump.timestamps = {0, 0};
    lump.learners = {0, 1};
    GradientMessage single({4.0, 10.0}, 0, 2);
    const Vector m = aggregate_weighted({lump, single});
    // (2*1 + 4)/3 = 2, (2*1 + 10)/3 = 4
    CHECK(m == Vector{2.0, 4.0});
}

TEST_CASE("unit-count weighted aggregation is bitwise the plain mean") {
    RngStream rng(5, 3);
    std::vector<GradientMessage> msgs;
    std::vector<Gradient> plain;
    for (int i = 0; i < 7; ++i) {
        Vector g = random_vec(rng, 11);
        plain.push_back(g);
        msgs.emplace_back(std::move(g), 0, static_cast<LearnerId>(i));
    }
    CHECK(aggregate_weighted(msgs) == aggregate(plain));
}

TEST_CASE("hardsync window fires at lambda and clears") {
    AggregationState s(tiny_weights(), SyncPolicy::hardsync(), 3, 4, 0.0, 0.0);
    LearningRatePolicy lr{0.1, 8, LrMode::Unmodulated};

    CHECK_FALSE(s.step(GradientMessage(Vector(6, 1.0), 0, 0), lr).has_value());
    CHECK(s.pending_count() == 1);
    CHECK_FALSE(s.step(GradientMessage(Vector(6, 1.0), 0, 1), lr).has_value());
    auto up = s.step(GradientMessage(Vector(6, 1.0), 0, 2), lr);
    REQUIRE(up.has_value());
    CHECK(up->weights.timestamp == 1);
    CHECK(up->gradients_consumed == 3);
    CHECK(up->record.update_index == 1);
    CHECK(up->record.contributors == std::vector<Timestamp>{0, 0, 0});
    CHECK(up->record.learner_ids == std::vector<LearnerId>{0, 1, 2});
    CHECK(average_staleness(up->record) == 0.0);
    CHECK(s.pending_count() == 0);
    CHECK(s.timestamp() == 1);
    CHECK(s.updates_applied() == 1);
    CHECK(s.gradients_consumed() == 3);
}

TEST_CASE("aggregation state applies the same update as a manual step") {
    RngStream rng(21, 4);
    const VersionedWeights init = tiny_weights(3);
    AggregationState s(init, SyncPolicy::hardsync(), 2, 4, 0.9, 0.01);
    LearningRatePolicy lr{0.05, 8, LrMode::Unmodulated};

    Weights manual = init.weights;
    Vector velocity(manual.values.size(), 0.0);

    for (int round = 0; round < 10; ++round) {
        Vector g0 = random_vec(rng, manual.values.size());
        Vector g1 = random_vec(rng, manual.values.size());
        CHECK_FALSE(s.step(GradientMessage(g0, static_cast<Timestamp>(round), 0), lr).has_value());
        auto up = s.step(GradientMessage(g1, static_cast<Timestamp>(round), 1), lr);
        REQUIRE(up.has_value());
        sgd_step(manual, aggregate({g0, g1}), 0.05, 0.9, 0.01, velocity);
        CHECK(up->weights.weights.values == manual.values);
        CHECK(s.velocity() == velocity);
    }
}

TEST_CASE("hardsync rejects a duplicate learner in one window") {
    AggregationState s(tiny_weights(), SyncPolicy::hardsync(), 3, 4, 0.0, 0.0);
    LearningRatePolicy lr{0.1, 8, LrMode::Unmodulated};
    CHECK_FALSE(s.step(GradientMessage(Vector(6, 0.0), 0, 1), lr).has_value());
    CHECK_THROWS_AS(s.step(GradientMessage(Vector(6, 0.0), 0, 1), lr), ProtocolError);
}

TEST_CASE("softsync accepts repeat contributors in one window") {
    AggregationState s(tiny_weights(), SyncPolicy::softsync(1), 2, 4, 0.0, 0.0);
    LearningRatePolicy lr{0.1, 8, LrMode::Unmodulated};
    CHECK_FALSE(s.step(GradientMessage(Vector(6, 0.0), 0, 1), lr).has_value());
    CHECK(s.step(GradientMessage(Vector(6, 0.0), 0, 1), lr).has_value());
}

TEST_CASE("gradients from the future violate the clock") {
    AggregationState s(tiny_weights(), SyncPolicy::hardsync(), 2, 4, 0.0, 0.0);
    LearningRatePolicy lr{0.1, 8, LrMode::Unmodulated};
    CHECK_THROWS_AS(s.step(GradientMessage(Vector(6, 0.0), 1, 0), lr), ClockViolation);
}

TEST_CASE("malformed contributor lists are rejected") {
    AggregationState s(tiny_weights(), SyncPolicy::hardsync(), 2, 4, 0.0, 0.0);
    LearningRatePolicy lr{0.1, 8, LrMode::Unmodulated};
    GradientMessage bad;
    bad.gradient = Vector(6, 0.0);
    bad.count = 2;
    bad.timestamps = {0};
    bad.learners = {0, 1};
    CHECK_THROWS_AS(s.step(bad, lr), ProtocolError);
}

TEST_CASE("a lump that overshoots the window is a protocol error") {
    // softsync n=2 with lambda=4 requires exactly 2 per window
    AggregationState s(tiny_weights(), SyncPolicy::softsync(2), 4, 4, 0.0, 0.0);
    LearningRatePolicy lr{0.1, 8, LrMode::Unmodulated};
    GradientMessage lump;
    lump.gradient = Vector(6, 0.0);
    lump.count = 3;
    lump.timestamps = {0, 0, 0};
    lump.learners = {0, 1, 2};
    CHECK_THROWS_AS(s.step(lump, lr), ProtocolError);
}

TEST_CASE("async is bitwise identical to per-gradient softsync") {
    // Oracle: a hand-rolled server that applies every arriving gradient
    // immediately. Must match softsync with n = lambda gradient for gradient.
    const std::uint32_t lambda = 8;
    const VersionedWeights init = tiny_weights(9);
    AggregationState s(init, SyncPolicy::async(lambda), lambda, 4, 0.9, 0.001);
    LearningRatePolicy lr{0.02, 8, LrMode::Unmodulated};

    Weights manual = init.weights;
    Vector velocity(manual.values.size(), 0.0);
    Timestamp manual_ts = 0;

    RngStream rng(31, 6);
    for (int i = 0; i < 200; ++i) {
        const Timestamp gts = manual_ts == 0 ? 0 : manual_ts - rng.next_below(2);
        const Vector g = random_vec(rng, manual.values.size());
        auto up = s.step(GradientMessage(g, gts, static_cast<LearnerId>(i % lambda)), lr);
        REQUIRE(up.has_value());  // n = lambda updates on every gradient

        sgd_step(manual, g, 0.02, 0.9, 0.001, velocity);
        manual_ts += 1;
        CHECK(up->weights.weights.values == manual.values);
        CHECK(up->weights.timestamp == manual_ts);
        CHECK(up->record.contributors == std::vector<Timestamp>{gts});
    }
    CHECK(s.updates_applied() == 200);
    CHECK(s.gradients_consumed() == 200);
}

TEST_CASE("updates times window size equals gradients consumed exactly") {
    for (const SyncPolicy policy :
         {SyncPolicy::hardsync(), SyncPolicy::softsync(1), SyncPolicy::softsync(2),
          SyncPolicy::softsync(6)}) {
        const std::uint32_t lambda = 6;
        AggregationState s(tiny_weights(), policy, lambda, 4, 0.0, 0.0);
        LearningRatePolicy lr{0.001, 8, LrMode::Unmodulated};
        const std::uint32_t c = required_gradient_count(policy, lambda);
        std::uint64_t updates = 0;
        for (int i = 0; i < 120; ++i) {
            // hardsync windows need distinct learners; rotate ids
            const LearnerId id = static_cast<LearnerId>(i % lambda);
            if (s.step(GradientMessage(Vector(6, 0.01), s.timestamp(), id), lr).has_value())
                ++updates;
        }
        CHECK(s.updates_applied() == updates);
        CHECK(s.gradients_consumed() == updates * c);
        CHECK(s.gradients_consumed() + s.pending_count() == 120);
    }
}

TEST_CASE("window loss is the count-weighted mean of contribution losses") {
    AggregationState s(tiny_weights(), SyncPolicy::hardsync(), 2, 4, 0.0, 0.0);
    LearningRatePolicy lr{1e-9, 8, LrMode::Unmodulated};
    GradientMessage a(Vector(6, 0.0), 0, 0);
    a.loss = 1.0;
    GradientMessage b(Vector(6, 0.0), 0, 1);
    b.loss = 2.0;
    CHECK_FALSE(s.step(a, lr).has_value());
    auto up = s.step(b, lr);
    REQUIRE(up.has_value());
    CHECK(up->window_loss == doctest::Approx(1.5).epsilon(1e-15));
}
