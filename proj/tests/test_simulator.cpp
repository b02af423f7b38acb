#include <cmath>
#include <sstream>

#include "catch_amalgamated.hpp"
#include "poolfund/simulator.hpp"

using namespace poolfund;
using Catch::Approx;

namespace {

const MortalityTable& fixture_table() {
    static const auto t = load_life_table_file(std::string(POOLFUND_TEST_DATA) + "/small_life_table.csv");
    return t;
}

WithdrawalPlan plan_for(const CohortMortality& c, int pool, double contribution) {
    WithdrawalPlan p;
    p.start_age = c.start_age;
    p.pool_size = pool;
    p.contribution = contribution;
    p.withdrawals = constant_schedule(c.horizon, 1.0);
    return p;
}

SimConfig sim(long paths, std::uint64_t seed = 1, int threads = 1) {
    SimConfig cfg;
    cfg.paths = paths;
    cfg.seed = seed;
    cfg.threads = threads;
    return cfg;
}

} // namespace

// All bonds at r = 0, one member: wealth P lasts floor(P) withdrawals, so
// success means death within the first floor(P) + 1 stages.
TEST_CASE("all-bond single member has an exact answer", "[simulator]") {
    const auto c = cohort(fixture_table(), 110);
    const ReturnModel model;
    for (double p : {0.5, 2.0, 3.7, 9.5}) {
        const int affordable = static_cast<int>(std::floor(p));
        double survive = 1.0;
        for (int i = 0; i <= affordable && i < c.horizon; ++i)
            survive *= 1.0 - c.at(i);
        const double exact = 1.0 - survive;
        const auto est = simulate_success_probability(plan_for(c, 1, p), c, model, ConstantPolicy{0.0}, sim(200000));
        INFO("P = " << p);
        CHECK(std::abs(est.probability - exact) <= 4 * std::max(est.std_error, 1e-4));
    }
    const auto funded = simulate_success_probability(plan_for(c, 3, 10.0), c, model, ConstantPolicy{0.0}, sim(5000));
    CHECK(funded.probability == 1.0);
    CHECK(funded.std_error == 0.0);
}

TEST_CASE("estimate bookkeeping", "[simulator]") {
    const auto c = cohort(fixture_table(), 112);
    const auto e = simulate_success_probability(plan_for(c, 2, 1.5), c, ReturnModel{}, ConstantPolicy{0.6}, sim(10000));
    CHECK(e.paths == 10000);
    CHECK(e.probability == Approx(e.successes / 10000.0));
    CHECK(e.std_error == Approx(std::sqrt(e.probability * (1 - e.probability) / 10000)));
}

TEST_CASE("seeds fix the outcome and workers do not change it", "[simulator]") {
    const auto c = cohort(fixture_table(), 110);
    const auto plan = plan_for(c, 4, 2.0);
    const ReturnModel model;
    const auto a = simulate_success_probability(plan, c, model, ConstantPolicy{0.5}, sim(30000, 9, 1));
    const auto b = simulate_success_probability(plan, c, model, ConstantPolicy{0.5}, sim(30000, 9, 4));
    const auto other = simulate_success_probability(plan, c, model, ConstantPolicy{0.5}, sim(30000, 10, 1));
    CHECK(a.successes == b.successes);
    CHECK(a.successes != other.successes);
    const auto all1 = simulate_all_annuitant(plan, c, model, ConstantPolicy{0.5}, sim(30000, 9, 1));
    const auto all4 = simulate_all_annuitant(plan, c, model, ConstantPolicy{0.5}, sim(30000, 9, 3));
    CHECK(all1.successes == all4.successes);
}

TEST_CASE("simulation agrees with the solved value", "[simulator]") {
    const auto t = load_life_table_file(std::string(POOLFUND_DATA_DIR) + "/ssa_2007_female_qx.csv");
    const auto c = cohort(t, 95);
    const auto plan = plan_for(c, 2, 2.0);
    const ReturnModel model;
    SolverConfig cfg;
    cfg.grid = 100;
    cfg.max_pool = 2;
    const auto sol = solve(plan, c, model, cfg);
    const auto est = simulate_success_probability(plan, c, model, GridPolicy(sol.policy), sim(200000));
    CHECK(std::abs(est.probability - sol.initial_value()) <= std::max(0.01, 4 * est.std_error));

    const auto all = solve_all_annuitant(plan, c, model, cfg);
    const auto all_est = simulate_all_annuitant(plan, c, model, GridPolicy(all.policy), sim(200000));
    CHECK(std::abs(all_est.probability - all.initial_value()) <= std::max(0.01, 4 * all_est.std_error));
}

TEST_CASE("traces record each stage", "[simulator]") {
    const auto c = cohort(fixture_table(), 110);
    const auto plan = plan_for(c, 3, 2.0);
    auto cfg = sim(100);
    cfg.trace_paths = 5;
    std::vector<Trajectory> traces;
    simulate_success_probability(plan, c, ReturnModel{}, ConstantPolicy{0.4}, cfg, &traces);
    REQUIRE(traces.size() == 5);
    for (const auto& t : traces) {
        REQUIRE(!t.empty());
        CHECK(t.front().stage == 0);
        CHECK(t.front().tracked == 6.0);
        CHECK(t.front().weight == 0.4);
        for (std::size_t k = 1; k < t.size(); ++k) {
            CHECK(t[k].stage == static_cast<int>(k));
            CHECK(t[k].alive <= t[k - 1].alive);
        }
        // A path stops at the focal member's death or at ruin, or runs to the horizon.
        const auto& end = t.back();
        CHECK((end.focal_alive == 0 || end.tracked < 0.0 || end.stage == c.horizon));
    }
    std::ostringstream out;
    write_trace(out, traces);
    CHECK(out.str().starts_with("path,stage,focal_alive,alive,tracked_wealth,weight\n"));
}

TEST_CASE("liquidity bound holds under a constant policy", "[simulator]") {
    const auto c = cohort(fixture_table(), 110);
    for (double q : {0.0, 0.5, 1.0}) {
        const auto report = simulate_liquidity(plan_for(c, 5, 1.2), c, ReturnModel{}, ConstantPolicy{q}, sim(20000));
        CHECK(report.paths == 20000);
        CHECK(report.violations == 0);
    }
    Trajectory broken{{0, 1, 2, 2.0, 2.0, 1.0, 0.0}, {1, 1, 2, -0.5, -0.5, 0.1, 0.0}};
    CHECK_FALSE(check_liquidity_bound(broken));
    broken[1].solo = -0.1;
    CHECK(check_liquidity_bound(broken));
}

TEST_CASE("bad policies and inputs are reported", "[simulator]") {
    const auto c = cohort(fixture_table(), 110);
    const auto plan = plan_for(c, 2, 1.0);
    auto rogue = [](int, double, int) { return 1.5; };
    CHECK_THROWS_AS(simulate_success_probability(plan, c, ReturnModel{}, rogue, sim(100)), ContractViolation);
    CHECK_THROWS_AS(simulate_success_probability(plan, c, ReturnModel{}, ConstantPolicy{0.5}, sim(0)),
                    ValidationError);
    const auto short_cohort = cohort(fixture_table(), 111);
    CHECK_THROWS_AS(simulate_all_annuitant(plan, short_cohort, ReturnModel{}, ConstantPolicy{0.5}, sim(100)),
                    ValidationError);
}
