#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "chainreduce/param.hpp"
#include "chainreduce/scheduler.hpp"

using namespace chainreduce;

namespace {

std::vector<int> iota_ids(int n) {
    std::vector<int> ids(static_cast<std::size_t>(n));
    std::iota(ids.begin(), ids.end(), 0);
    return ids;
}

// execute a plan via pair_aggregate and return the survivor's value
ParamVector execute_plan(const SchedulePlan& plan, std::vector<ParamVector> grads) {
    for (const auto& p : plan.all_pairs()) {
        grads[static_cast<std::size_t>(p.receiver)] =
            pair_aggregate(grads[static_cast<std::size_t>(p.receiver)],
                           grads[static_cast<std::size_t>(p.sender)]);
    }
    return grads[static_cast<std::size_t>(plan.survivor(static_cast<int>(grads.size())))];
}

} // namespace

TEST_CASE("ring_plan shape") {
    const auto p2 = ring_plan(iota_ids(2));
    CHECK(p2.rounds.size() == 1);
    CHECK(p2.pair_count() == 1);

    const auto p5 = ring_plan(iota_ids(5));
    CHECK(p5.rounds.size() == 4);  // N-1 sequential rounds
    for (const auto& r : p5.rounds) CHECK(r.size() == 1);
    CHECK(p5.survivor(5) == 4);

    for (int n = 2; n <= 16; ++n) {
        const auto p = ring_plan(iota_ids(n));
        validate_plan(p, iota_ids(n));
        std::map<int, int> recv_count;
        for (const auto& pr : p.all_pairs()) ++recv_count[pr.receiver];
        for (const auto& [d, c] : recv_count) CHECK(c <= 1);
    }
    CHECK_THROWS_AS(ring_plan({0}), InvalidInput);
}

TEST_CASE("tree_plan shape") {
    const auto p8 = tree_plan(iota_ids(8));
    REQUIRE(p8.rounds.size() == 3);
    CHECK(p8.rounds[0].size() == 4);
    CHECK(p8.rounds[1].size() == 2);
    CHECK(p8.rounds[2].size() == 1);

    const auto p5 = tree_plan(iota_ids(5));
    REQUIRE(p5.rounds.size() == 3);  // ceil(log2 5)
    CHECK(p5.rounds[0].size() == 2);
    CHECK(p5.rounds[1].size() == 1);
    CHECK(p5.rounds[2].size() == 1);

    CHECK(tree_plan(iota_ids(2)).rounds.size() == 1);
    for (int n = 2; n <= 16; ++n) {
        validate_plan(tree_plan(iota_ids(n)), iota_ids(n));
        const auto rounds = tree_plan(iota_ids(n)).rounds.size();
        CHECK(rounds == static_cast<std::size_t>(std::ceil(std::log2(n))));
    }
}

TEST_CASE("any planner's output reduces to the central mean") {
    for (int n = 2; n <= 9; ++n) {
        std::vector<ParamVector> grads;
        for (int d = 0; d < n; ++d)
            grads.emplace_back(std::vector<double>{static_cast<double>(d + 1)}, 1.0);
        const double mean = (n + 1) / 2.0;
        for (const auto& plan : {ring_plan(iota_ids(n)), tree_plan(iota_ids(n))}) {
            const auto res = execute_plan(plan, grads);
            CHECK(res.values[0] == doctest::Approx(mean).epsilon(1e-13));
            CHECK(res.theta == static_cast<double>(n));
        }
    }
}

TEST_CASE("validate_plan rejects malformed plans") {
    const auto ids = iota_ids(4);
    SchedulePlan missing;  // only 2 pairs for N=4
    missing.rounds = {{PairTask{0, 1}}, {PairTask{1, 2}}};
    CHECK_THROWS_AS(validate_plan(missing, ids), InvariantViolation);

    SchedulePlan dup;  // device 0 sends twice
    dup.rounds = {{PairTask{0, 1}}, {PairTask{0, 2}}, {PairTask{2, 3}}};
    CHECK_THROWS_AS(validate_plan(dup, ids), InvariantViolation);

    SchedulePlan self;
    self.rounds = {{PairTask{0, 0}}, {PairTask{1, 2}}, {PairTask{2, 3}}};
    CHECK_THROWS_AS(validate_plan(self, ids), InvariantViolation);

    SchedulePlan overlap;  // round not vertex-disjoint
    overlap.rounds = {{PairTask{0, 1}, PairTask{1, 2}}, {PairTask{2, 3}}};
    CHECK_THROWS_AS(validate_plan(overlap, ids), InvariantViolation);

    SchedulePlan cycle;  // 0->1, 1->0 orphans both; 2 sends to 3
    cycle.rounds = {{PairTask{0, 1}}, {PairTask{1, 0}}, {PairTask{2, 3}}};
    CHECK_THROWS_AS(validate_plan(cycle, ids), InvariantViolation);

    validate_plan(tree_plan(ids), ids);  // sanity: good plan passes
}

TEST_CASE("threshold terms reproduce the pinned values") {
    RLConfig cfg;  // beta = 0.1, phi = 0
    CHECK(threshold_battery_term(8, cfg.beta) == doctest::Approx(0.0));
    CHECK(threshold_battery_term(7, cfg.beta) == doctest::Approx(0.2));
    CHECK(threshold_latency_term(8, cfg.beta) == doctest::Approx(0.3));
    CHECK(threshold(8, cfg) == doctest::Approx(0.3));
    CHECK(threshold(7, cfg) ==
          doctest::Approx(0.2 + 0.1 * std::log2(7.0)));
    RLConfig off = cfg;
    off.phi = 0.1;
    CHECK(threshold(8, off) == doctest::Approx(0.2));
    CHECK_THROWS_AS(threshold(1, cfg), InvalidInput);
}

TEST_CASE("env_step reward examples") {
    RLConfig cfg;  // alpha=-0.04, beta=0.1, rho=-0.8

    // Free sender, n_agg = 0 -> alpha
    auto s = SchedEnvState::initial(std::vector<bool>(5, false));
    auto r = env_step(s, 0, cfg);
    CHECK(r.reward == doctest::Approx(-0.04));
    CHECK_FALSE(r.terminal);
    CHECK(r.next.states[0] == DeviceState::Send);
    CHECK(r.next.pending_sender == 0);

    // Free sender with n_agg = 2 -> alpha + 2*beta = 0.16
    auto s2 = SchedEnvState::initial(std::vector<bool>(5, false));
    s2.n_agg[1] = 2;
    CHECK(env_step(s2, 1, cfg).reward == doctest::Approx(0.16));

    // Busy device at t = 4, N = 5 -> rho + 4*rho/8 = -1.2
    std::vector<bool> busy(5, false);
    busy[4] = true;
    auto s3 = SchedEnvState::initial(busy);
    s3.t = 4;
    CHECK(env_step(s3, 4, cfg).reward == doctest::Approx(-1.2));

    // re-selecting a Done device -> -1 terminal
    auto s4 = SchedEnvState::initial(std::vector<bool>(5, false));
    s4.states[2] = DeviceState::Done;
    auto r4 = env_step(s4, 2, cfg);
    CHECK(r4.reward == doctest::Approx(-1.0));
    CHECK(r4.terminal);

    // exceeding 2(N-1) steps -> -1 terminal
    auto s5 = SchedEnvState::initial(std::vector<bool>(5, false));
    s5.t = 8;
    auto r5 = env_step(s5, 0, cfg);
    CHECK(r5.reward == doctest::Approx(-1.0));
    CHECK(r5.terminal);

    // out-of-range action
    CHECK(env_step(s, 7, cfg).terminal);
}

TEST_CASE("env_step pair dynamics and completion") {
    RLConfig cfg;
    auto s = SchedEnvState::initial(std::vector<bool>(2, false));
    auto r1 = env_step(s, 0, cfg);            // sender
    auto r2 = env_step(r1.next, 1, cfg);      // receiver completes the reduce
    CHECK(r2.reward == doctest::Approx(1.0));
    CHECK(r2.terminal);
    CHECK(r2.next.pairs.size() == 1);
    CHECK(r2.next.pairs[0] == PairTask{0, 1});
    CHECK(r2.next.states[0] == DeviceState::Done);
    CHECK(r2.next.states[1] == DeviceState::Free);
    CHECK(r2.next.n_agg[1] == 1);
    CHECK(r2.next.t == 2);

    // receiver reward is alpha - beta*n_agg (pre-increment)
    auto s4 = SchedEnvState::initial(std::vector<bool>(4, false));
    s4.n_agg[2] = 1;
    auto mid = env_step(s4, 0, cfg);
    CHECK(env_step(mid.next, 2, cfg).reward == doctest::Approx(-0.04 - 0.1));
}

TEST_CASE("busy pair is recorded as deferred") {
    RLConfig cfg;
    std::vector<bool> busy = {false, true, false};
    auto s = SchedEnvState::initial(busy);
    auto r1 = env_step(s, 0, cfg);        // free sender
    auto r2 = env_step(r1.next, 1, cfg);  // busy receiver
    CHECK(r2.reward < 0);                 // penalty, not terminal
    CHECK_FALSE(r2.terminal);
    REQUIRE(r2.next.pair_deferred.size() == 1);
    CHECK(r2.next.pair_deferred[0]);
    CHECK(r2.next.states[1] == DeviceState::Busy);  // returns to Busy after Get
}

TEST_CASE("valid_actions") {
    auto s = SchedEnvState::initial(std::vector<bool>(4, false));
    CHECK(valid_actions(s) == std::vector<int>{0, 1, 2, 3});

    auto r = env_step(s, 3, RLConfig{});
    CHECK(valid_actions(r.next) == std::vector<int>{0, 1, 2});  // pending sender excluded

    SchedEnvState done = s;
    done.states = {DeviceState::Done, DeviceState::Done, DeviceState::Done,
                   DeviceState::Free};
    CHECK(valid_actions(done) == std::vector<int>{3});
}

TEST_CASE("optimal episode takes exactly 2(N-1) steps") {
    RLConfig cfg;
    for (int n = 2; n <= 6; ++n) {
        auto s = SchedEnvState::initial(std::vector<bool>(static_cast<std::size_t>(n), false));
        int steps = 0;
        // ring-order rollout: (0->1), (1->2), ...
        for (int k = 0; k + 1 < n; ++k) {
            auto r1 = env_step(s, k, cfg);
            auto r2 = env_step(r1.next, k + 1, cfg);
            s = r2.next;
            steps += 2;
            if (k + 2 == n) {
                CHECK(r2.terminal);
                CHECK(r2.reward == doctest::Approx(1.0));
            }
        }
        CHECK(steps == 2 * (n - 1));
    }
}

TEST_CASE("encode_state layout") {
    std::vector<bool> busy = {false, true};
    auto s = SchedEnvState::initial(busy);
    s.n_agg[0] = 1;
    s.pending_sender = 0;
    const auto x = encode_state(s);
    REQUIRE(x.size() == 14);
    CHECK(x[0] == 1.0);                      // device 0 Free one-hot
    CHECK(x[5] == doctest::Approx(0.5));     // n_agg / n
    CHECK(x[6] == 1.0);                      // pending sender flag
    CHECK(x[7 + 1] == 1.0);                  // device 1 Busy one-hot
    CHECK(x[13] == 0.0);
}

TEST_CASE("pack_plan groups disjoint pairs and splits deferred") {
    std::vector<PairTask> pairs = {{0, 1}, {2, 3}, {1, 3}, {4, 5}};
    std::vector<bool> deferred = {false, false, false, true};
    const auto plan = pack_plan(pairs, deferred);
    REQUIRE(plan.rounds.size() == 2);
    CHECK(plan.rounds[0].size() == 2);  // (0->1) and (2->3) share a round
    CHECK(plan.rounds[1].size() == 1);  // (1->3) conflicts with both
    REQUIRE(plan.deferred.size() == 1);
    CHECK(plan.deferred[0] == PairTask{4, 5});
}

TEST_CASE("RLConfig validation") {
    RLConfig bad;
    bad.rho = 0.1;
    CHECK_THROWS_AS(bad.validate(), InvalidInput);
    bad = RLConfig{};
    bad.decay = 1.5;
    CHECK_THROWS_AS(bad.validate(), InvalidInput);
    bad = RLConfig{};
    bad.epsilon0 = -0.1;
    CHECK_THROWS_AS(bad.validate(), InvalidInput);
    CHECK_NOTHROW(RLConfig{}.validate());
}
