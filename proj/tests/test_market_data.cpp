#include <sstream>

#include "catch_amalgamated.hpp"
#include "poolfund/market_data.hpp"

using namespace poolfund;
using Catch::Approx;

TEST_CASE("fixture returns follow the real total return formula", "[market_data]") {
    const auto rows = load_market_csv_file(std::string(POOLFUND_TEST_DATA) + "/market_fixture.csv");
    REQUIRE(rows.size() == 4);
    CHECK(rows.front().year == 2000);
    const auto r = real_returns(rows);
    REQUIRE(r.size() == 3);
    // (110 + 2)/100 * 100/105, (99 + 3)/110 * 105/110, (120 + 2.5)/99 * 110/110
    CHECK(r[0] == Approx(16.0 / 15.0).epsilon(1e-15));
    CHECK(r[1] == Approx(10710.0 / 12100.0).epsilon(1e-15));
    CHECK(r[2] == Approx(122.5 / 99.0).epsilon(1e-15));

    const auto m = sample_moments(r);
    const double mean = (r[0] + r[1] + r[2]) / 3;
    const double var = ((r[0] - mean) * (r[0] - mean) + (r[1] - mean) * (r[1] - mean) + (r[2] - mean) * (r[2] - mean)) / 2;
    CHECK(m.mean == Approx(mean).epsilon(1e-15));
    CHECK(m.sd == Approx(std::sqrt(var)).epsilon(1e-14));
    const auto model = fit_return_model(r, 0.01);
    CHECK(model.mu() == m.mean);
    CHECK(model.sigma() == m.sd);
    CHECK(model.rate() == 0.01);
}

TEST_CASE("market data errors", "[market_data]") {
    SECTION("year gap") {
        std::istringstream in("year,I,D,C\n2000,1,0,1\n2002,1,0,1\n");
        CHECK_THROWS_AS(load_market_csv(in), ValidationError);
    }
    SECTION("bad number") {
        std::istringstream in("2000,1,0,1\n2001,x,0,1\n");
        try {
            load_market_csv(in);
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            CHECK(e.line() == 2);
        }
    }
    SECTION("short row") {
        std::istringstream in("2000,1,0\n");
        CHECK_THROWS_AS(load_market_csv(in), ParseError);
    }
    SECTION("non-positive values") {
        CHECK_THROWS_AS(real_returns(MarketSeries{{2000, 0, 0, 1}, {2001, 1, 0, 1}}), ValidationError);
        CHECK_THROWS_AS(real_returns(MarketSeries{{2000, 1, 0, 0}, {2001, 1, 0, 1}}), ValidationError);
        CHECK_THROWS_AS(real_returns(MarketSeries{{2000, 1, -1, 1}, {2001, 1, 0, 1}}), ValidationError);
        CHECK_THROWS_AS(real_returns(MarketSeries{{2000, 1, 0, 1}}), ValidationError);
    }
    SECTION("constant returns cannot be fitted") {
        const std::vector<double> flat{1.05, 1.05, 1.05};
        CHECK_THROWS_AS(fit_return_model(flat), ValidationError);
    }
    SECTION("missing file") { CHECK_THROWS_AS(load_market_csv_file("/nonexistent.csv"), ValidationError); }
}

TEST_CASE("worked return examples", "[market_data]") {
    CHECK(real_returns(MarketSeries{{1, 100, 0, 7}, {2, 110, 0, 7}})[0] == Approx(1.10).epsilon(1e-15));
    CHECK(real_returns(MarketSeries{{1, 100, 5, 100}, {2, 100, 0, 105}})[0] == Approx(1.0).epsilon(1e-15));
    const auto two = fit_return_model(std::vector<double>{1.0, 1.2});
    CHECK(two.mu() == Approx(1.1).epsilon(1e-15));
    CHECK(two.sigma() == Approx(0.1414213562373095).epsilon(1e-14));
}

TEST_CASE("returns ignore the index scale without dividends", "[market_data]") {
    const MarketSeries base{{1, 100, 0, 100}, {2, 120, 0, 103}, {3, 90, 0, 101}};
    auto scaled = base;
    for (auto& row : scaled)
        row.index *= 37.5;
    const auto a = real_returns(base);
    const auto b = real_returns(scaled);
    for (std::size_t k = 0; k < a.size(); ++k)
        CHECK(a[k] == Approx(b[k]).epsilon(1e-15));
    // Flat CPI: real equals nominal.
    const MarketSeries flat{{1, 50, 1, 9}, {2, 55, 2, 9}};
    CHECK(real_returns(flat)[0] == Approx(56.0 / 50.0).epsilon(1e-15));
}
