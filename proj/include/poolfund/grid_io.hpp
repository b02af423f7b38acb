#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "poolfund/error.hpp"
#include "poolfund/solver.hpp"
#include "poolfund/text.hpp"

// Solved grids as delimited text. A `key value...` header records the plan,
// cohort, return model and solver settings; the body has one row per stored
// cell. Numbers are written in shortest round-trip form, so reading an
// artifact back reproduces the grids bit for bit.
//
//   poolfund-grid 1
//   objective focal
//   ...
//   data stage,pool,index,value,weight
//   54,1,1,0.01,0.1
//   ...
//   end
namespace poolfund {

inline constexpr int grid_format_version = 1;

inline std::string hex64(std::uint64_t v) {
    char buf[19];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

// FNV-1a of a byte string; used for file digests in manifests.
inline std::uint64_t fnv1a(std::string_view bytes) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

namespace detail {

inline std::string join(const std::vector<double>& xs) {
    std::string s;
    for (std::size_t k = 0; k < xs.size(); ++k) {
        if (k)
            s += ' ';
        s += text::format_double(xs[k]);
    }
    return s;
}

} // namespace detail

inline void write_solution(std::ostream& out, const Solution& sol) {
    const auto& p = sol.plan;
    const auto& c = sol.config;
    out << "poolfund-grid " << grid_format_version << '\n';
    out << "objective " << to_string(sol.objective) << '\n';
    out << "start_age " << p.start_age << '\n';
    out << "horizon " << p.horizon() << '\n';
    out << "contribution " << text::format_double(p.contribution) << '\n';
    out << "pool_size " << p.pool_size << '\n';
    out << "rate " << text::format_double(p.rate) << '\n';
    out << "withdrawals " << detail::join(p.withdrawals) << '\n';
    out << "cohort_digest " << hex64(sol.cohort.digest()) << '\n';
    out << "death_rates " << detail::join(sol.cohort.death) << '\n';
    out << "mu " << text::format_double(sol.model.mu()) << '\n';
    out << "sigma " << text::format_double(sol.model.sigma()) << '\n';
    out << "grid " << c.grid << '\n';
    out << "max_pool " << c.max_pool << '\n';
    out << "coarse_weights " << detail::join(c.coarse_weights) << '\n';
    out << "refine_step " << text::format_double(c.refine_step) << '\n';
    out << "refine_range " << c.refine_below << ' ' << c.refine_above << '\n';
    out << "weight_cutoff " << text::format_double(c.weight_cutoff) << '\n';
    out << "data stage,pool,index,value,weight\n";
    for (int i = 0; i < sol.values.horizon(); ++i)
        for (int a = 1; a <= sol.values.max_pool(); ++a)
            for (int j = 1; j < sol.values.resolution(); ++j)
                out << i << ',' << a << ',' << j << ',' << text::format_double(sol.values.stored(i, a, j)) << ','
                    << text::format_double(sol.policy.stored(i, a, j)) << '\n';
    out << "end\n";
}

inline void write_solution_file(const std::string& path, const Solution& sol) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw RuntimeFailure("cannot write grid artifact '" + path + "'");
    write_solution(out, sol);
    if (!out)
        throw RuntimeFailure("failed writing grid artifact '" + path + "'");
}

inline Solution read_solution(std::istream& in) {
    std::map<std::string, std::vector<std::string>> header;
    std::string line;
    std::size_t lineno = 0;
    auto fail = [&](const std::string& what) { throw ParseError(what, lineno); };

    if (!std::getline(in, line))
        throw ParseError("empty grid artifact", 1);
    ++lineno;
    {
        const auto f = text::split_fields(line);
        if (f.size() != 2 || f[0] != "poolfund-grid")
            fail("not a poolfund grid artifact");
        if (text::parse_int(f[1]) != grid_format_version)
            fail("unsupported grid artifact version " + std::string(f[1]));
    }
    while (std::getline(in, line)) {
        ++lineno;
        if (line.starts_with("data"))
            break;
        const auto f = text::split_fields(line);
        if (f.empty())
            continue;
        auto& dst = header[std::string(f[0])];
        for (std::size_t k = 1; k < f.size(); ++k)
            dst.emplace_back(f[k]);
    }

    auto field = [&](const std::string& key) -> const std::vector<std::string>& {
        const auto it = header.find(key);
        if (it == header.end() || it->second.empty())
            throw ParseError("grid artifact header lacks '" + key + "'", lineno);
        return it->second;
    };
    auto number = [&](const std::string& key, std::size_t k = 0) {
        const auto& f = field(key);
        const auto v = k < f.size() ? text::parse_double(f[k]) : std::nullopt;
        if (!v)
            throw ParseError("bad number for '" + key + "'", lineno);
        return *v;
    };
    auto numbers = [&](const std::string& key) {
        std::vector<double> out;
        for (std::size_t k = 0; k < field(key).size(); ++k)
            out.push_back(number(key, k));
        return out;
    };
    auto integer = [&](const std::string& key, std::size_t k = 0) {
        const auto& f = field(key);
        const auto v = k < f.size() ? text::parse_int(f[k]) : std::nullopt;
        if (!v)
            throw ParseError("bad integer for '" + key + "'", lineno);
        return *v;
    };

    Solution sol;
    const auto& objective = field("objective").front();
    if (objective == "focal")
        sol.objective = Objective::focal;
    else if (objective == "all")
        sol.objective = Objective::all_members;
    else
        fail("unknown objective '" + objective + "'");

    sol.plan.start_age = integer("start_age");
    sol.plan.contribution = number("contribution");
    sol.plan.pool_size = integer("pool_size");
    sol.plan.rate = number("rate");
    sol.plan.withdrawals = numbers("withdrawals");
    if (static_cast<int>(sol.plan.withdrawals.size()) != integer("horizon"))
        fail("withdrawal count does not match horizon");
    sol.cohort.start_age = sol.plan.start_age;
    sol.cohort.horizon = sol.plan.horizon();
    sol.cohort.death = numbers("death_rates");
    if (static_cast<int>(sol.cohort.death.size()) != sol.cohort.horizon)
        fail("death rate count does not match horizon");
    if (hex64(sol.cohort.digest()) != field("cohort_digest").front())
        fail("cohort digest mismatch: header says " + field("cohort_digest").front() + ", rates hash to " +
             hex64(sol.cohort.digest()));
    sol.model = ReturnModel(number("mu"), number("sigma"), sol.plan.rate);
    sol.config.grid = integer("grid");
    sol.config.max_pool = integer("max_pool");
    sol.config.coarse_weights = numbers("coarse_weights");
    sol.config.refine_step = number("refine_step");
    sol.config.refine_below = integer("refine_range", 0);
    sol.config.refine_above = integer("refine_range", 1);
    sol.config.weight_cutoff = number("weight_cutoff");
    sol.plan.validate();
    sol.config.validate();

    const auto floors = compute_floors(sol.plan, sol.config.max_pool);
    sol.values = ValueGrid(floors, sol.config.grid);
    sol.policy = PolicyGrid(floors, sol.config.grid);

    const long expected = static_cast<long>(sol.plan.horizon()) * sol.config.max_pool * (sol.config.grid - 1);
    long rows = 0;
    bool ended = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (line == "end") {
            ended = true;
            break;
        }
        const auto f = text::split_fields(line);
        if (f.size() != 5)
            fail("expected stage,pool,index,value,weight");
        const auto i = text::parse_int(f[0]);
        const auto a = text::parse_int(f[1]);
        const auto j = text::parse_int(f[2]);
        const auto v = text::parse_double(f[3]);
        const auto q = text::parse_double(f[4]);
        if (!i || !a || !j || !v || !q)
            fail("cannot parse grid row '" + line + "'");
        if (*i < 0 || *i >= sol.plan.horizon() || *a < 1 || *a > sol.config.max_pool || *j < 1 ||
            *j >= sol.config.grid)
            fail("grid row out of range");
        sol.values.store(*i, *a, *j, *v);
        sol.policy.store(*i, *a, *j, *q);
        ++rows;
    }
    if (!ended)
        fail("grid artifact truncated (no 'end' line)");
    if (rows != expected)
        fail("grid artifact has " + std::to_string(rows) + " rows, expected " + std::to_string(expected));
    sol.values.seal_all();
    return sol;
}

inline Solution read_solution_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw ValidationError("cannot open grid artifact '" + path + "'");
    return read_solution(in);
}

} // namespace poolfund
