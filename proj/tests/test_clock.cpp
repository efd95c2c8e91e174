#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "rudra/clock.hpp"

using namespace rudra;

TEST_CASE("scalar staleness") {
    CHECK(staleness(0, 0) == 0);
    CHECK(staleness(3, 7) == 4);
    CHECK_THROWS_AS(staleness(8, 7), ClockViolation);
}

TEST_CASE("vector clock record validation") {
    VectorClockRecord ok{3, {0, 2, 1}, {0, 1, 2}};
    ok.validate();

    VectorClockRecord empty{1, {}, {}};
    CHECK_THROWS_AS(empty.validate(), PreconditionError);

    VectorClockRecord ahead{3, {3}, {0}};  // contributor not older than index
    CHECK_THROWS_AS(ahead.validate(), ClockViolation);
}

TEST_CASE("average staleness hand values") {
    // i = 5, contributors {4, 4, 2}: (5-1) - 10/3 = 2/3
    VectorClockRecord rec{5, {4, 4, 2}, {0, 1, 2}};
    CHECK(average_staleness(rec) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));

    // fully fresh window: every contributor at i-1
    VectorClockRecord fresh{9, {8, 8, 8}, {0, 1, 2}};
    CHECK(average_staleness(fresh) == 0.0);
}

TEST_CASE("staleness stats accumulate histogram, mean, and tails") {
    StalenessStats s;
    s.record({1, {0, 0}, {0, 1}});  // sigmas 0, 0
    s.record({3, {1, 2}, {0, 1}});  // sigmas 1, 0

    CHECK(s.update_count() == 2);
    CHECK(s.gradient_count() == 4);
    CHECK(s.run_mean() == doctest::Approx(0.25).epsilon(1e-15));

    const auto& h = s.histogram();
    REQUIRE(h.size() == 2);
    CHECK(h.at(0) == 3);
    CHECK(h.at(1) == 1);

    CHECK(s.tail_fraction(0) == doctest::Approx(0.25).epsilon(1e-15));
    CHECK(s.tail_fraction(1) == 0.0);
    CHECK(s.max_sigma() == 1);

    REQUIRE(s.per_update_mean().size() == 2);
    CHECK(s.per_update_mean()[0] == 0.0);
    CHECK(s.per_update_mean()[1] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(s.per_update_max() == std::vector<std::uint64_t>{0, 1});
    CHECK(s.records()[1].update_index == 3);
}

TEST_CASE("staleness stats reject invalid records") {
    StalenessStats s;
    CHECK_THROWS_AS(s.record({2, {2}, {0}}), ClockViolation);
    CHECK(s.update_count() == 0);
    CHECK(s.run_mean() == 0.0);
    CHECK(s.tail_fraction(0) == 0.0);
    CHECK(s.max_sigma() == 0);
}
