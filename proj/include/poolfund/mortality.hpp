#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <istream>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "poolfund/error.hpp"
#include "poolfund/text.hpp"

namespace poolfund {

// Ages beyond this are never modelled; every cohort is dead by then.
inline constexpr int terminal_age = 120;

// Period life table: death probability d_j for each integer age j in
// [min_age, max_age], with d_{max_age} = 1.
class MortalityTable {
public:
    MortalityTable(int min_age, std::vector<double> death_rate)
        : min_age_(min_age), death_rate_(std::move(death_rate)) {
        if (death_rate_.empty())
            throw ValidationError("life table is empty");
        if (min_age_ < 0)
            throw ValidationError("life table starts at a negative age");
        for (std::size_t k = 0; k < death_rate_.size(); ++k) {
            const double d = death_rate_[k];
            if (!(d >= 0.0 && d <= 1.0))
                throw ValidationError("death rate at age " + std::to_string(min_age_ + static_cast<int>(k)) +
                                      " outside [0,1]: " + std::to_string(d));
        }
        if (death_rate_.back() != 1.0)
            throw ValidationError("life table must end with death rate 1 at its terminal age");
    }

    int min_age() const noexcept { return min_age_; }
    int max_age() const noexcept { return min_age_ + static_cast<int>(death_rate_.size()) - 1; }

    // Ages past the terminal age are certain death.
    double death_rate(int age) const {
        if (age < min_age_)
            throw ContractViolation("age " + std::to_string(age) + " below life table minimum " +
                                    std::to_string(min_age_));
        if (age > max_age())
            return 1.0;
        return death_rate_[static_cast<std::size_t>(age - min_age_)];
    }

    const std::vector<double>& rates() const noexcept { return death_rate_; }

private:
    int min_age_;
    std::vector<double> death_rate_;
};

// Reads `age, qx` rows (comma, semicolon or whitespace separated). Lines
// starting with '#' are comments; a leading non-numeric line is a header.
// Rows past age 120 are dropped, and when the last rate is below 1 the table
// is padded with rate 1 up to age 120.
inline MortalityTable load_life_table(std::istream& in) {
    std::string line;
    std::size_t lineno = 0;
    bool seen_data = false;
    int first_age = 0;
    int prev_age = 0;
    std::vector<double> rates;
    while (std::getline(in, line)) {
        ++lineno;
        const auto fields = text::split_fields(line);
        if (fields.empty() || fields.front().starts_with('#'))
            continue;
        if (!seen_data && !text::looks_numeric(fields.front()))
            continue; // header
        if (fields.size() < 2)
            throw ParseError("expected `age, qx`, got '" + line + "'", lineno);
        const auto age = text::parse_int(fields[0]);
        const auto rate = text::parse_double(fields[1]);
        if (!age || !rate)
            throw ParseError("cannot parse `age, qx` from '" + line + "'", lineno);
        if (seen_data && *age != prev_age + 1)
            throw ValidationError("life table ages not contiguous: " + std::to_string(prev_age) + " then " +
                                  std::to_string(*age) + " (line " + std::to_string(lineno) + ")");
        if (!(*rate >= 0.0 && *rate <= 1.0))
            throw ValidationError("death rate at age " + std::to_string(*age) + " outside [0,1]: " +
                                  std::string(fields[1]) + " (line " + std::to_string(lineno) + ")");
        if (!seen_data)
            first_age = *age;
        seen_data = true;
        prev_age = *age;
        if (*age <= terminal_age)
            rates.push_back(*rate);
    }
    if (!seen_data)
        throw ValidationError("life table has no data rows");
    if (rates.empty())
        throw ValidationError("life table has no ages at or below " + std::to_string(terminal_age));
    if (rates.back() < 1.0) {
        int last = first_age + static_cast<int>(rates.size()) - 1;
        do {
            rates.push_back(1.0);
        } while (++last < terminal_age);
    }
    return MortalityTable(first_age, std::move(rates));
}

inline MortalityTable load_life_table_file(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw ValidationError("cannot open life table '" + path + "'");
    return load_life_table(in);
}

// Per-step death probabilities d_0..d_{k-1} for a cohort starting at age s,
// with horizon k = 120 - s and d_{k-1} = 1.
struct CohortMortality {
    int start_age = 0;
    int horizon = 0;
    std::vector<double> death;

    double at(int i) const { return death.at(static_cast<std::size_t>(i)); }

    // FNV-1a over the rate bytes; recorded in solver artifacts for provenance.
    std::uint64_t digest() const noexcept {
        std::uint64_t h = 14695981039346656037ull;
        auto mix = [&h](const void* p, std::size_t n) {
            const auto* b = static_cast<const unsigned char*>(p);
            for (std::size_t k = 0; k < n; ++k) {
                h ^= b[k];
                h *= 1099511628211ull;
            }
        };
        mix(&start_age, sizeof start_age);
        mix(&horizon, sizeof horizon);
        mix(death.data(), death.size() * sizeof(double));
        return h;
    }
};

inline CohortMortality cohort(const MortalityTable& table, int start_age) {
    if (start_age >= terminal_age)
        throw ValidationError("starting age must be below " + std::to_string(terminal_age) + ", got " +
                              std::to_string(start_age));
    if (start_age < table.min_age())
        throw ValidationError("life table does not cover starting age " + std::to_string(start_age));
    CohortMortality c;
    c.start_age = start_age;
    c.horizon = terminal_age - start_age;
    c.death.reserve(static_cast<std::size_t>(c.horizon));
    for (int i = 0; i < c.horizon; ++i)
        c.death.push_back(table.death_rate(start_age + i));
    c.death.back() = 1.0;
    return c;
}

// Number of deaths among `alive` independent members with death probability d.
template <class Rng>
long sample_deaths(double d, long alive, Rng& rng) {
    if (alive <= 0 || d <= 0.0)
        return 0;
    if (d >= 1.0)
        return alive;
    std::binomial_distribution<long> dist(alive, d);
    return dist(rng);
}

} // namespace poolfund
