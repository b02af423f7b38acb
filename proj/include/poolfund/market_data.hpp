#pragma once

#include <cmath>
#include <fstream>
#include <istream>
#include <span>
#include <string>
#include <vector>

#include "poolfund/error.hpp"
#include "poolfund/market_model.hpp"
#include "poolfund/text.hpp"

namespace poolfund {

struct MarketRow {
    int year = 0;
    double index = 0.0;    // I: average monthly close of the composite index
    double dividend = 0.0; // D: dividend per share
    double cpi = 0.0;      // C: January consumer price index
};

using MarketSeries = std::vector<MarketRow>;

// CSV with header `year,I,D,C`; '#' lines are comments.
inline MarketSeries load_market_csv(std::istream& in) {
    MarketSeries rows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto f = text::split_fields(line);
        if (f.empty() || f.front().starts_with('#'))
            continue;
        if (rows.empty() && !text::looks_numeric(f.front()))
            continue; // header
        if (f.size() < 4)
            throw ParseError("expected `year,I,D,C`, got '" + line + "'", lineno);
        const auto year = text::parse_int(f[0]);
        const auto index = text::parse_double(f[1]);
        const auto dividend = text::parse_double(f[2]);
        const auto cpi = text::parse_double(f[3]);
        if (!year || !index || !dividend || !cpi)
            throw ParseError("cannot parse `year,I,D,C` from '" + line + "'", lineno);
        if (!rows.empty() && *year != rows.back().year + 1)
            throw ValidationError("market years must increase by 1: " + std::to_string(rows.back().year) +
                                  " then " + std::to_string(*year));
        rows.push_back({*year, *index, *dividend, *cpi});
    }
    return rows;
}

inline MarketSeries load_market_csv_file(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw ValidationError("cannot open market data '" + path + "'");
    return load_market_csv(in);
}

// Gross real total return for year k: (I_{k+1} + D_k) / I_k * C_k / C_{k+1}.
inline std::vector<double> real_returns(std::span<const MarketRow> series) {
    if (series.size() < 2)
        throw ValidationError("need at least two years of market data");
    for (const auto& row : series) {
        if (!(row.index > 0.0))
            throw ValidationError("non-positive index level in " + std::to_string(row.year));
        if (!(row.cpi > 0.0))
            throw ValidationError("non-positive CPI in " + std::to_string(row.year));
        if (!(row.dividend >= 0.0))
            throw ValidationError("negative dividend in " + std::to_string(row.year));
    }
    std::vector<double> out;
    out.reserve(series.size() - 1);
    for (std::size_t k = 0; k + 1 < series.size(); ++k) {
        const auto& now = series[k];
        const auto& next = series[k + 1];
        out.push_back((next.index + now.dividend) / now.index * (now.cpi / next.cpi));
    }
    return out;
}

struct ReturnMoments {
    double mean = 0.0;
    double sd = 0.0; // n - 1 denominator
};

inline ReturnMoments sample_moments(std::span<const double> returns) {
    if (returns.size() < 2)
        throw ValidationError("need at least two returns to fit a model");
    double mean = 0.0;
    for (double x : returns)
        mean += x;
    mean /= static_cast<double>(returns.size());
    double ss = 0.0;
    for (double x : returns)
        ss += (x - mean) * (x - mean);
    return {mean, std::sqrt(ss / static_cast<double>(returns.size() - 1))};
}

inline ReturnModel fit_return_model(std::span<const double> returns, double rate = 0.0) {
    const auto m = sample_moments(returns);
    if (!(m.sd > 0.0))
        throw ValidationError("returns are constant; cannot fit a positive standard deviation");
    return ReturnModel(m.mean, m.sd, rate);
}

} // namespace poolfund
