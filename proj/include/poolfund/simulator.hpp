#pragma once

#include <cmath>
#include <concepts>
#include <cstdint>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "poolfund/error.hpp"
#include "poolfund/market_model.hpp"
#include "poolfund/mortality.hpp"
#include "poolfund/parallel.hpp"
#include "poolfund/schedule.hpp"
#include "poolfund/solver.hpp"

// Forward Monte-Carlo of the pooled wealth recursions under a rebalancing
// policy q(stage, wealth, alive).
//
// Paths are simulated in fixed-size chunks. Chunk c draws returns and deaths
// from two engines seeded from (seed, c), so the estimate does not depend on
// how many workers run the chunks.
namespace poolfund {

template <class P>
concept WeightPolicy = requires(const P& p, int stage, double wealth, int alive) {
    { p(stage, wealth, alive) } -> std::convertible_to<double>;
};

struct ConstantPolicy {
    double q = 1.0;
    double operator()(int, double, int) const noexcept { return q; }
};

// Interpolated optimal weights from a solved policy grid.
struct GridPolicy {
    const PolicyGrid* grid = nullptr;
    explicit GridPolicy(const PolicyGrid& g) : grid(&g) {}
    double operator()(int stage, double wealth, int alive) const { return grid->weight(stage, alive, wealth); }
};

struct SimConfig {
    long paths = 100000;
    std::uint64_t seed = 1;
    int threads = 1;
    long trace_paths = 0; // trajectories kept for the first trace_paths paths
};

struct Estimate {
    double probability = 0.0;
    double std_error = 0.0;
    long paths = 0;
    long successes = 0;
};

// One stage of a simulated path, after that stage's deaths and withdrawals.
struct PathState {
    int stage = 0;
    int focal_alive = 1; // I
    int alive = 0;       // A
    double tracked = 0.0; // W^, the pool wealth frozen at the focal member's death
    double pool = 0.0;    // W
    double solo = 0.0;    // W~, a lone investor following the pool's weights
    double weight = 0.0;  // stock weight chosen at this stage for the next step
};

using Trajectory = std::vector<PathState>;

namespace detail {

inline constexpr long sim_chunk = 2048;

inline std::uint64_t splitmix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

inline std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t chunk, std::uint64_t stream) {
    return splitmix64(splitmix64(seed ^ splitmix64(chunk)) + stream);
}

// Independent return and mortality streams for one chunk.
struct ChunkStreams {
    std::mt19937_64 returns;
    std::mt19937_64 deaths;
    std::normal_distribution<double> stock;

    ChunkStreams(std::uint64_t seed, std::uint64_t chunk, const ReturnModel& model)
        : returns(stream_seed(seed, chunk, 0)), deaths(stream_seed(seed, chunk, 1)),
          stock(model.mu(), model.sigma()) {}

    double draw_return() { return stock(returns); }
    bool draw_death(double d) { return d >= 1.0 || (d > 0.0 && std::bernoulli_distribution(d)(deaths)); }
    long draw_deaths(double d, long alive) { return sample_deaths(d, alive, deaths); }
};

template <class Policy>
double checked_weight(const Policy& policy, int stage, double wealth, int alive) {
    const double q = policy(stage, wealth, alive);
    if (!(q >= 0.0 && q <= 1.0))
        throw ContractViolation("policy weight " + std::to_string(q) + " outside [0,1] at stage " +
                                std::to_string(stage) + ", wealth " + std::to_string(wealth) + ", alive " +
                                std::to_string(alive));
    return q;
}

inline void check_inputs(const WithdrawalPlan& plan, const CohortMortality& mortality, const SimConfig& cfg) {
    plan.validate();
    if (mortality.horizon != plan.horizon())
        throw ValidationError("cohort horizon does not match the withdrawal schedule");
    if (cfg.paths < 1)
        throw ValidationError("path count must be >= 1");
}

inline Estimate make_estimate(long successes, long paths) {
    Estimate e;
    e.paths = paths;
    e.successes = successes;
    e.probability = static_cast<double>(successes) / static_cast<double>(paths);
    e.std_error = std::sqrt(e.probability * (1.0 - e.probability) / static_cast<double>(paths));
    return e;
}

// Runs path(streams, index, trajectory*) -> bool over all paths in chunks and
// counts successes; trajectories of the first trace_paths paths are kept.
template <class PathFn>
Estimate run_paths(const SimConfig& cfg, const ReturnModel& model, PathFn&& path,
                   std::vector<Trajectory>* traces) {
    const long chunks = (cfg.paths + sim_chunk - 1) / sim_chunk;
    std::vector<long> successes(static_cast<std::size_t>(chunks), 0);
    const long traced = traces ? std::min(cfg.trace_paths, cfg.paths) : 0;
    if (traces)
        traces->assign(static_cast<std::size_t>(traced), {});
    parallel_for(static_cast<std::size_t>(chunks), cfg.threads, [&](std::size_t c) {
        ChunkStreams streams(cfg.seed, c, model);
        const long first = static_cast<long>(c) * sim_chunk;
        const long last = std::min(cfg.paths, first + sim_chunk);
        long wins = 0;
        for (long p = first; p < last; ++p) {
            Trajectory* trace = p < traced ? &(*traces)[static_cast<std::size_t>(p)] : nullptr;
            if (path(streams, trace))
                ++wins;
        }
        successes[c] = wins;
    });
    long total = 0;
    for (long s : successes)
        total += s;
    return make_estimate(total, cfg.paths);
}

} // namespace detail

// P(W^_k >= 0): the focal member completes every withdrawal while alive.
//
// Each step draws the stock return, applies the weight chosen at the current
// (tracked wealth, alive count), then draws deaths (the focal member first,
// then the other members) and withdraws for the survivors. Once the focal
// member dies the outcome is fixed; once tracked wealth is negative it stays
// negative, so both end the path.
//
// W^ equals the pool wealth W-bar while the focal member is alive, which is
// the only time a weight is needed.
template <WeightPolicy Policy>
Estimate simulate_success_probability(const WithdrawalPlan& plan, const CohortMortality& mortality,
                                      const ReturnModel& model, const Policy& policy, const SimConfig& cfg,
                                      std::vector<Trajectory>* traces = nullptr) {
    detail::check_inputs(plan, mortality, cfg);
    const double growth = model.bond_return();
    auto path = [&](detail::ChunkStreams& rng, Trajectory* trace) {
        int alive = plan.pool_size;
        double wealth = plan.pool_size * plan.contribution;
        if (trace)
            trace->push_back({0, 1, alive, wealth, wealth, plan.contribution, 0.0});
        for (int i = 1; i <= plan.horizon(); ++i) {
            const double q = detail::checked_weight(policy, i - 1, wealth, alive);
            if (trace)
                trace->back().weight = q;
            const double y = q * rng.draw_return() + (1.0 - q) * growth;
            const double d = mortality.at(i - 1);
            const bool focal_dies = rng.draw_death(d);
            alive -= static_cast<int>(rng.draw_deaths(d, alive - 1)) + (focal_dies ? 1 : 0);
            wealth = y * wealth - (focal_dies ? 0.0 : alive * plan.withdrawal(i));
            if (trace)
                trace->push_back({i, focal_dies ? 0 : 1, alive, wealth, wealth, 0.0, 0.0});
            if (focal_dies || wealth < 0.0)
                break;
        }
        return wealth >= 0.0;
    };
    return detail::run_paths(cfg, model, path, traces);
}

// P(W_k >= 0): the pool covers every member's withdrawals until the last death.
template <WeightPolicy Policy>
Estimate simulate_all_annuitant(const WithdrawalPlan& plan, const CohortMortality& mortality,
                                const ReturnModel& model, const Policy& policy, const SimConfig& cfg,
                                std::vector<Trajectory>* traces = nullptr) {
    detail::check_inputs(plan, mortality, cfg);
    const double growth = model.bond_return();
    auto path = [&](detail::ChunkStreams& rng, Trajectory* trace) {
        int alive = plan.pool_size;
        double wealth = plan.pool_size * plan.contribution;
        if (trace)
            trace->push_back({0, 1, alive, wealth, wealth, plan.contribution, 0.0});
        for (int i = 1; i <= plan.horizon() && alive > 0; ++i) {
            const double q = detail::checked_weight(policy, i - 1, wealth, alive);
            if (trace)
                trace->back().weight = q;
            const double y = q * rng.draw_return() + (1.0 - q) * growth;
            alive -= static_cast<int>(rng.draw_deaths(mortality.at(i - 1), alive));
            wealth = y * wealth - alive * plan.withdrawal(i);
            if (trace)
                trace->push_back({i, 0, alive, wealth, wealth, 0.0, 0.0});
            if (wealth < 0.0)
                break;
        }
        return wealth >= 0.0;
    };
    return detail::run_paths(cfg, model, path, traces);
}

// W~_k >= 0 implies W_k >= 0 at every stage with a living member. In a
// closed pool W_k >= A_k W~_k whenever W~_k >= 0, since deaths only leave
// more wealth per survivor.
inline bool check_liquidity_bound(const Trajectory& path) {
    for (const auto& s : path)
        if (s.alive >= 1 && s.solo >= 0.0 && s.pool < 0.0)
            return false;
    return true;
}

struct LiquidityReport {
    long paths = 0;
    long violations = 0;
};

// Simulates the closed pool until its last death alongside a lone investor
// who starts with P and follows the pool's weights on the same returns, and
// checks the liquidity bound on every path.
template <WeightPolicy Policy>
LiquidityReport simulate_liquidity(const WithdrawalPlan& plan, const CohortMortality& mortality,
                                   const ReturnModel& model, const Policy& policy, const SimConfig& cfg) {
    detail::check_inputs(plan, mortality, cfg);
    const double growth = model.bond_return();
    const long chunks = (cfg.paths + detail::sim_chunk - 1) / detail::sim_chunk;
    std::vector<long> violations(static_cast<std::size_t>(chunks), 0);
    detail::parallel_for(static_cast<std::size_t>(chunks), cfg.threads, [&](std::size_t c) {
        detail::ChunkStreams rng(cfg.seed, c, model);
        const long first = static_cast<long>(c) * detail::sim_chunk;
        const long last = std::min(cfg.paths, first + detail::sim_chunk);
        Trajectory path;
        for (long p = first; p < last; ++p) {
            path.clear();
            int alive = plan.pool_size;
            int focal = 1;
            double pool = plan.pool_size * plan.contribution;
            double tracked = pool;
            double solo = plan.contribution;
            path.push_back({0, focal, alive, tracked, pool, solo, 0.0});
            for (int i = 1; i <= plan.horizon() && alive > 0; ++i) {
                const double q = detail::checked_weight(policy, i - 1, pool, alive);
                path.back().weight = q;
                const double y = q * rng.draw_return() + (1.0 - q) * growth;
                const double d = mortality.at(i - 1);
                const bool focal_dies = focal == 1 && rng.draw_death(d);
                alive -= static_cast<int>(rng.draw_deaths(d, alive - focal)) + (focal_dies ? 1 : 0);
                if (focal_dies)
                    focal = 0;
                const double w = plan.withdrawal(i);
                pool = y * pool - alive * w;
                tracked = y * tracked - focal * alive * w;
                solo = y * solo - w;
                path.push_back({i, focal, alive, tracked, pool, solo, 0.0});
            }
            if (!check_liquidity_bound(path))
                ++violations[c];
        }
    });
    LiquidityReport report;
    report.paths = cfg.paths;
    for (long v : violations)
        report.violations += v;
    return report;
}

// Delimited per-path trace: path, stage, I, A, W^, q.
inline void write_trace(std::ostream& out, const std::vector<Trajectory>& traces) {
    out << "path,stage,focal_alive,alive,tracked_wealth,weight\n";
    for (std::size_t p = 0; p < traces.size(); ++p)
        for (const auto& s : traces[p])
            out << p << ',' << s.stage << ',' << s.focal_alive << ',' << s.alive << ',' << text::format_double(s.tracked)
                << ',' << text::format_double(s.weight) << '\n';
}

} // namespace poolfund
