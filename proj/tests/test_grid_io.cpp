#include <sstream>

#include "catch_amalgamated.hpp"
#include "poolfund/grid_io.hpp"

using namespace poolfund;

namespace {

Solution small_solution(Objective objective = Objective::focal) {
    const auto t = load_life_table_file(std::string(POOLFUND_TEST_DATA) + "/small_life_table.csv");
    const auto c = cohort(t, 112);
    WithdrawalPlan p;
    p.start_age = 112;
    p.pool_size = 2;
    p.contribution = 1.25;
    p.rate = 0.01;
    p.withdrawals = {1, 1, 1.5, 1.5, 2, 1, 1, 0.5};
    SolverConfig cfg;
    cfg.grid = 25;
    cfg.max_pool = 3;
    return solve(p, c, ReturnModel(1.07, 0.18, 0.01), cfg, objective);
}

std::string dump(const Solution& s) {
    std::ostringstream out;
    write_solution(out, s);
    return out.str();
}

} // namespace

TEST_CASE("grid artifacts round-trip exactly", "[grid_io]") {
    for (auto objective : {Objective::focal, Objective::all_members}) {
        const auto sol = small_solution(objective);
        const auto text = dump(sol);
        std::istringstream in(text);
        const auto back = read_solution(in);
        CHECK(back.objective == objective);
        CHECK(back.plan == sol.plan);
        CHECK(back.model == sol.model);
        CHECK(back.config == sol.config);
        CHECK(back.cohort.death == sol.cohort.death);
        CHECK(back.cohort.digest() == sol.cohort.digest());
        for (int i = 0; i < sol.plan.horizon(); ++i)
            for (int a = 1; a <= 3; ++a)
                for (int j = 1; j < 25; ++j) {
                    REQUIRE(back.values.stored(i, a, j) == sol.values.stored(i, a, j));
                    REQUIRE(back.policy.stored(i, a, j) == sol.policy.stored(i, a, j));
                    const double x = sol.values.node(i, a, j) * 1.01;
                    REQUIRE(back.values.value(i, a, x) == sol.values.value(i, a, x));
                }
        CHECK(back.initial_value() == sol.initial_value());
        CHECK(dump(back) == text);
    }
}

TEST_CASE("damaged artifacts are rejected", "[grid_io]") {
    const auto text = dump(small_solution());
    auto reject = [](const std::string& s) {
        std::istringstream in(s);
        CHECK_THROWS_AS(read_solution(in), ParseError);
    };
    SECTION("wrong magic") { reject("something-else 1\n"); }
    SECTION("future version") { reject("poolfund-grid 2\n"); }
    SECTION("truncated") { reject(text.substr(0, text.size() / 2)); }
    SECTION("missing end") { reject(text.substr(0, text.rfind("end"))); }
    SECTION("tampered death rate") {
        auto s = text;
        const auto at = s.find("death_rates ") + 12;
        s[at] = s[at] == '0' ? '1' : '0';
        reject(s);
    }
    SECTION("missing row") {
        auto s = text;
        const auto row = s.find("\n0,1,1,");
        s.erase(row, s.find('\n', row + 1) - row);
        reject(s);
    }
    SECTION("empty") { reject(""); }
}

TEST_CASE("digests", "[grid_io]") {
    CHECK(hex64(0) == "0000000000000000");
    CHECK(hex64(0xdeadbeefull) == "00000000deadbeef");
    CHECK(fnv1a("") == 14695981039346656037ull);
    CHECK(hex64(fnv1a("a")) == "af63dc4c8601ec8c");
}
