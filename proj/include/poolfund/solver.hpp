#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <new>
#include <span>
#include <string>
#include <vector>

#include "poolfund/error.hpp"
#include "poolfund/market_model.hpp"
#include "poolfund/mortality.hpp"
#include "poolfund/parallel.hpp"
#include "poolfund/schedule.hpp"

// Backward induction for the maximal probability that a pool member (or every
// member) completes the withdrawal schedule, with a stock/bond portfolio
// rebalanced once per step.
//
// Values v_i(x, a) are stored on the wealth grids
//     D_{a,i} = { j m_{a,i} / M : j = 1..M-1 },
// with v = 1 at or above the floor m_{a,i} and v = 0 below zero. The
// expectation over the stock return is a normalised sum over the nodes of
// D_{a,i+1}; the all-bond branch uses a stepwise lower bound of v_{i+1}.
namespace poolfund {

enum class Objective {
    focal,       // the distinguished member completes the schedule until death
    all_members, // every member does
};

inline const char* to_string(Objective o) { return o == Objective::focal ? "focal" : "all"; }

struct SolverConfig {
    int grid = 100; // M
    std::vector<double> coarse_weights = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
    double refine_step = 0.01;
    int refine_below = 9; // refined grid is q1 + step * j for j = -refine_below..refine_above
    int refine_above = 10;
    int max_pool = 1;
    int threads = 1;
    double weight_cutoff = 1e-15; // binomial mixture terms below this are dropped

    void validate() const {
        if (grid < 2)
            throw ValidationError("grid resolution must be >= 2");
        if (coarse_weights.empty())
            throw ValidationError("coarse weight grid is empty");
        for (double q : coarse_weights)
            if (!(q > 0.0 && q <= 1.0))
                throw ValidationError("coarse weights must lie in (0,1]");
        if (!(refine_step > 0.0))
            throw ValidationError("refine step must be > 0");
        if (max_pool < 1)
            throw ValidationError("max pool must be >= 1");
    }

    friend bool operator==(const SolverConfig&, const SolverConfig&) = default;
};

// v_k: success iff wealth is non-negative.
constexpr double terminal_value(double x, int /*pool*/ = 0) noexcept { return x >= 0.0 ? 1.0 : 0.0; }

namespace detail {

// Layout shared by the value and policy grids: one row of M+1 cells per
// (stage, pool size); cell 0 and cell M are boundary anchors.
class StageGrid {
public:
    StageGrid() = default;
    StageGrid(FloorMatrix floors, int resolution, double fill)
        : floors_(std::move(floors)), resolution_(resolution) {
        const auto cells = static_cast<std::size_t>(floors_.horizon() + 1) *
                           static_cast<std::size_t>(floors_.max_pool() + 1) *
                           static_cast<std::size_t>(resolution_ + 1);
        cells_.assign(cells, fill);
    }

    int horizon() const noexcept { return floors_.horizon(); }
    int max_pool() const noexcept { return floors_.max_pool(); }
    int resolution() const noexcept { return resolution_; }
    const FloorMatrix& floors() const noexcept { return floors_; }

    double node(int stage, int pool, int j) const { return j * floors_(pool, stage) / resolution_; }

    std::span<double> row(int stage, int pool) { return {cells_.data() + offset(stage, pool), row_size()}; }
    std::span<const double> row(int stage, int pool) const {
        return {cells_.data() + offset(stage, pool), row_size()};
    }

    // Wealth position in units of one grid cell.
    double position(int stage, int pool, double x) const { return x * resolution_ / floors_(pool, stage); }

protected:
    std::size_t row_size() const noexcept { return static_cast<std::size_t>(resolution_ + 1); }
    std::size_t offset(int stage, int pool) const {
        if (stage < 0 || stage > horizon() || pool < 0 || pool > max_pool())
            throw ContractViolation("grid lookup out of range: stage " + std::to_string(stage) + ", pool " +
                                    std::to_string(pool) + " (max pool " + std::to_string(max_pool()) + ")");
        return (static_cast<std::size_t>(stage) * static_cast<std::size_t>(max_pool() + 1) +
                static_cast<std::size_t>(pool)) *
               row_size();
    }

    FloorMatrix floors_;
    int resolution_ = 0;
    std::vector<double> cells_;
};

// Grid index tolerance so wealth that lands on a node up to rounding counts as on it.
inline constexpr double node_snap = 1e-9;

} // namespace detail

class ValueGrid : public detail::StageGrid {
public:
    ValueGrid() = default;
    ValueGrid(FloorMatrix floors, int resolution) : StageGrid(std::move(floors), resolution, 0.0) {
        envelope_.assign(cells_.size(), 0.0);
    }

    double stored(int stage, int pool, int j) const { return row(stage, pool)[static_cast<std::size_t>(j)]; }
    void store(int stage, int pool, int j, double v) { row(stage, pool)[static_cast<std::size_t>(j)] = v; }

    // Recomputes the running maximum over a finished row.
    void seal(int stage, int pool) {
        const auto src = row(stage, pool);
        auto* dst = envelope_.data() + offset(stage, pool);
        double best = 0.0;
        for (std::size_t j = 0; j < src.size(); ++j) {
            best = std::max(best, src[j]);
            dst[j] = best;
        }
    }

    void seal_all() {
        for (int i = 0; i <= horizon(); ++i)
            for (int a = 0; a <= max_pool(); ++a)
                seal(i, a);
    }

    // v_i(x, a) with boundary extension: 0 below zero, 1 at or above the
    // floor, and max{ v_i(y, a) : y in D_{a,i}, y <= x } in between (0 below
    // the first node).
    double value(int stage, int pool, double x) const {
        if (pool == 0 || stage == horizon())
            return terminal_value(x);
        if (x < 0.0)
            return 0.0;
        if (x >= floors_(pool, stage))
            return 1.0;
        auto j = static_cast<long>(std::floor(position(stage, pool, x) + detail::node_snap));
        if (j < 1)
            return 0.0;
        j = std::min<long>(j, resolution_ - 1);
        return envelope_[offset(stage, pool) + static_cast<std::size_t>(j)];
    }

private:
    std::vector<double> envelope_;
};

class PolicyGrid : public detail::StageGrid {
public:
    PolicyGrid() = default;
    PolicyGrid(FloorMatrix floors, int resolution) : StageGrid(std::move(floors), resolution, 0.0) {}

    double stored(int stage, int pool, int j) const { return row(stage, pool)[static_cast<std::size_t>(j)]; }
    void store(int stage, int pool, int j, double q) { row(stage, pool)[static_cast<std::size_t>(j)] = q; }

    // Optimal stock weight at arbitrary wealth: 1 at or below zero, 0 at or
    // above the floor, linear between neighbouring nodes (with q(0) = 1 and
    // q(m) = 0 as the outer anchors).
    double weight(int stage, int pool, double x) const {
        if (stage < 0 || stage >= horizon())
            throw ContractViolation("policy stage " + std::to_string(stage) + " outside [0, " +
                                    std::to_string(horizon()) + ")");
        if (pool < 0 || pool > max_pool())
            throw ContractViolation("policy pool size " + std::to_string(pool) + " outside [0, " +
                                    std::to_string(max_pool()) + "]");
        if (!std::isfinite(x))
            throw ContractViolation("policy queried at non-finite wealth (stage " + std::to_string(stage) +
                                    ", pool " + std::to_string(pool) + ")");
        if (x <= 0.0)
            return 1.0;
        if (pool == 0 || x >= floors_(pool, stage))
            return 0.0;
        const double t = position(stage, pool, x);
        const auto j = static_cast<int>(std::floor(t));
        const double frac = t - j;
        const auto cells = row(stage, pool);
        auto at = [&](int n) {
            if (n <= 0)
                return 1.0;
            if (n >= resolution_)
                return 0.0;
            return cells[static_cast<std::size_t>(n)];
        };
        if (frac < detail::node_snap)
            return at(j);
        if (frac > 1.0 - detail::node_snap)
            return at(j + 1);
        return at(j) + frac * (at(j + 1) - at(j));
    }
};

inline double value_at(const ValueGrid& grid, double x, int pool, int stage) { return grid.value(stage, pool, x); }
inline double policy_weight(const PolicyGrid& policy, double x, int pool, int stage) {
    return policy.weight(stage, pool, x);
}

// Binomial(n, p) probabilities in log space, keeping terms >= cutoff.
class BinomialRow {
public:
    struct Term {
        int deaths;
        double weight;
    };

    BinomialRow() = default;
    BinomialRow(int n, double p, double cutoff) {
        if (n == 0 || p <= 0.0) {
            terms_.push_back({0, 1.0});
            return;
        }
        if (p >= 1.0) {
            terms_.push_back({n, 1.0});
            return;
        }
        const double lp = std::log(p);
        const double lq = std::log1p(-p);
        const double lgn = std::lgamma(n + 1.0);
        for (int l = 0; l <= n; ++l) {
            const double lw = lgn - std::lgamma(l + 1.0) - std::lgamma(n - l + 1.0) + l * lp + (n - l) * lq;
            const double w = std::exp(lw);
            if (w >= cutoff)
                terms_.push_back({l, w});
        }
    }

    std::span<const Term> terms() const noexcept { return terms_; }

private:
    std::vector<Term> terms_;
};

// h_{i+1}(x, s, q): probability of continuing to succeed from stage i+1 when
// wealth x at stage i is invested with stock weight q and s members survive
// to withdraw w_{i+1}. The integral over the band where post-withdrawal
// wealth lands in (0, m_{s,i+1}) is the band's Normal mass times a
// density-weighted average of stored v_{i+1} over the nodes of D_{s,i+1};
// wealth at or above the floor contributes its tail probability.
inline double h_value(const ValueGrid& next, const ReturnModel& model, const WithdrawalPlan& plan, int stage,
                      double x, int survivors, double q) {
    if (!(q > 0.0 && q <= 1.0))
        throw ContractViolation("h_value needs a stock weight in (0,1]; the all-bond case is q_zero_value");
    if (!(x > 0.0))
        throw ContractViolation("h_value needs positive wealth");
    if (survivors < 0 || survivors > next.max_pool())
        throw ContractViolation("h_value survivor count " + std::to_string(survivors) + " outside grid");

    const int following = stage + 1;
    const double floor = next.floors()(survivors, following);
    const double growth = model.bond_return();
    const double qx = q * x;
    // Stock return at which post-withdrawal wealth is exactly 0, then exactly the floor.
    const double zero_at = growth - growth / q + survivors * plan.withdrawal(following) / qx;
    const double floor_at = zero_at + floor / qx;

    const double tail = model.survival(floor_at);
    if (floor <= 0.0)
        return tail;
    const double band = model.mass_between(zero_at, floor_at);
    if (band <= 0.0)
        return tail;

    const int resolution = next.resolution();
    const auto values = next.row(following, survivors);
    // Standardised return at node j is t0 + j dt. Weights are shifted by the
    // largest so the ratio never underflows.
    const double t0 = model.standardize(zero_at);
    const double dt = floor / (resolution * qx * model.sigma());
    const double peak = std::clamp(std::round(-t0 / dt), 1.0, static_cast<double>(resolution - 1));
    const double t_peak = t0 + peak * dt;
    const double shift = t_peak * t_peak;

    double weight_sum = 0.0;
    double weighted = 0.0;
    for (int j = 1; j < resolution; ++j) {
        const double t = t0 + j * dt;
        const double w = std::exp(-0.5 * (t * t - shift));
        weight_sum += w;
        weighted += w * values[static_cast<std::size_t>(j)];
    }
    return band * (weighted / weight_sum) + tail;
}

// g_{i+1}(x, a, q): the survivor mixture of h_value, plus the focal member's
// death term for the focal objective.
inline double mixture_value(const ValueGrid& next, const ReturnModel& model, const WithdrawalPlan& plan,
                            Objective objective, double death, const BinomialRow& deaths, int stage, double x,
                            int pool, double q) {
    double sum = 0.0;
    if (objective == Objective::focal) {
        if (death < 1.0)
            for (const auto& term : deaths.terms())
                sum += term.weight * h_value(next, model, plan, stage, x, pool - term.deaths, q);
        return (1.0 - death) * sum + death * terminal_value(x);
    }
    for (const auto& term : deaths.terms())
        sum += term.weight * h_value(next, model, plan, stage, x, pool - term.deaths, q);
    return sum;
}

// g_{i+1}(x, a, 0) with each v_{i+1} replaced by its stepwise lower bound.
inline double q_zero_value(const ValueGrid& next, const ReturnModel& model, const WithdrawalPlan& plan,
                           Objective objective, double death, const BinomialRow& deaths, int stage, double x,
                           int pool) {
    const int following = stage + 1;
    const double grown = model.bond_return() * x;
    auto bound = [&](int survivors) {
        return next.value(following, survivors, grown - survivors * plan.withdrawal(following));
    };
    double sum = 0.0;
    if (objective == Objective::focal) {
        if (death < 1.0)
            for (const auto& term : deaths.terms())
                sum += term.weight * bound(pool - term.deaths);
        return (1.0 - death) * sum + death * terminal_value(x);
    }
    for (const auto& term : deaths.terms())
        sum += term.weight * bound(pool - term.deaths);
    return sum;
}

// Deaths among the members whose fate matters at pool size a: the other
// a - 1 members for the focal objective, all a otherwise.
inline BinomialRow death_row(Objective objective, int pool, double death, double cutoff) {
    return BinomialRow(objective == Objective::focal ? pool - 1 : pool, death, cutoff);
}

struct StageResult {
    double value = 0.0;
    double weight = 0.0;
};

// Maximises g over the stock weight: coarse grid, refined grid around the
// coarse winner, then the all-bond branch. Ties go to the smaller weight.
inline StageResult stage_value(const ValueGrid& next, const ReturnModel& model, const WithdrawalPlan& plan,
                               const SolverConfig& cfg, Objective objective, double death,
                               const BinomialRow& deaths, int stage, double x, int pool) {
    if (x >= next.floors()(pool, stage))
        return {1.0, 0.0};
    if (x < 0.0)
        return {0.0, 1.0};

    StageResult best{q_zero_value(next, model, plan, objective, death, deaths, stage, x, pool), 0.0};
    if (!(x > 0.0))
        return best;
    auto g = [&](double q) { return mixture_value(next, model, plan, objective, death, deaths, stage, x, pool, q); };

    double coarse_q = cfg.coarse_weights.front();
    double coarse_v = -1.0;
    for (double q : cfg.coarse_weights) {
        const double v = g(q);
        if (v > coarse_v) {
            coarse_v = v;
            coarse_q = q;
        }
    }

    double fine_q = coarse_q;
    double fine_v = -1.0;
    for (int j = -cfg.refine_below; j <= cfg.refine_above; ++j) {
        // Snap to 1e-12 so 0.3 - 0.09 and friends compare equal across runs.
        const double q = std::round((coarse_q + j * cfg.refine_step) * 1e12) / 1e12;
        if (!(q > 0.0) || q > 1.0)
            continue;
        const double v = j == 0 ? coarse_v : g(q);
        if (v > fine_v) {
            fine_v = v;
            fine_q = q;
        }
    }

    if (best.value < fine_v)
        best = {fine_v, fine_q};
    return best;
}

// P(X/(1+r) >= 1 + (m_{a,k-1}/x - 1)/q): the one-step success probability
// from stage k-1 with a survivors withdrawing w_k.
inline double last_step_closed_form(double x, int pool, double q, const ReturnModel& model,
                                    const FloorMatrix& floors) {
    const double floor = floors(pool, floors.horizon() - 1);
    if (q == 0.0)
        return x >= floor ? 1.0 : 0.0;
    const double threshold = model.bond_return() * (1.0 + (floor / x - 1.0) / q);
    return model.survival(threshold);
}

struct Solution {
    WithdrawalPlan plan;
    CohortMortality cohort;
    ReturnModel model;
    SolverConfig config;
    Objective objective = Objective::focal;
    ValueGrid values;
    PolicyGrid policy;

    // v_0(A0 P, A0) for the plan the grids were solved with.
    double initial_value() const { return values.value(0, plan.pool_size, plan.pool_size * plan.contribution); }
    double initial_value(int pool, double per_capita) const { return values.value(0, pool, pool * per_capita); }
};

using ProgressFn = std::function<void(int stage, int horizon)>;

inline Solution solve(const WithdrawalPlan& plan, const CohortMortality& mortality, const ReturnModel& model,
                      const SolverConfig& cfg, Objective objective = Objective::focal,
                      const ProgressFn& progress = {}) {
    plan.validate();
    cfg.validate();
    if (mortality.horizon != plan.horizon())
        throw ValidationError("cohort horizon " + std::to_string(mortality.horizon) + " != schedule length " +
                              std::to_string(plan.horizon()));
    if (cfg.max_pool < plan.pool_size)
        throw ValidationError("solver max pool " + std::to_string(cfg.max_pool) + " below plan pool size " +
                              std::to_string(plan.pool_size));

    const int horizon = plan.horizon();
    Solution sol{plan, mortality, model, cfg, objective, {}, {}};
    try {
        auto floors = compute_floors(plan, cfg.max_pool);
        sol.values = ValueGrid(floors, cfg.grid);
        sol.policy = PolicyGrid(std::move(floors), cfg.grid);
    } catch (const std::bad_alloc&) {
        throw RuntimeFailure("out of memory allocating grids for horizon " + std::to_string(horizon) +
                             ", max pool " + std::to_string(cfg.max_pool) + ", resolution " +
                             std::to_string(cfg.grid));
    }

    auto& values = sol.values;
    auto& policy = sol.policy;
    const int cells_per_pool = cfg.grid - 1;
    for (int stage = horizon - 1; stage >= 0; --stage) {
        const double death = mortality.at(stage);
        int pool_in_progress = 0;
        try {
            std::vector<BinomialRow> rows;
            rows.reserve(static_cast<std::size_t>(cfg.max_pool + 1));
            for (int a = 0; a <= cfg.max_pool; ++a) {
                pool_in_progress = a;
                rows.push_back(a == 0 ? BinomialRow() : death_row(objective, a, death, cfg.weight_cutoff));
            }
            const auto tasks = static_cast<std::size_t>(cfg.max_pool) * static_cast<std::size_t>(cells_per_pool);
            detail::parallel_for(tasks, cfg.threads, [&](std::size_t task) {
                const int pool = 1 + static_cast<int>(task / static_cast<std::size_t>(cells_per_pool));
                const int j = 1 + static_cast<int>(task % static_cast<std::size_t>(cells_per_pool));
                const double x = values.node(stage, pool, j);
                const auto r = stage_value(values, model, plan, cfg, objective, death,
                                           rows[static_cast<std::size_t>(pool)], stage, x, pool);
                values.store(stage, pool, j, r.value);
                policy.store(stage, pool, j, r.weight);
            });
        } catch (const std::bad_alloc&) {
            throw RuntimeFailure("out of memory at stage " + std::to_string(stage) + ", pool " +
                                 std::to_string(pool_in_progress));
        }
        for (int a = 0; a <= cfg.max_pool; ++a)
            values.seal(stage, a);
        if (progress)
            progress(stage, horizon);
    }
    return sol;
}

inline Solution solve_all_annuitant(const WithdrawalPlan& plan, const CohortMortality& mortality,
                                    const ReturnModel& model, const SolverConfig& cfg,
                                    const ProgressFn& progress = {}) {
    return solve(plan, mortality, model, cfg, Objective::all_members, progress);
}

// Smallest per-member contribution x on the grid with v_0(a x, a) >= confidence;
// the per-member bond floor m_{a,0}/a when no grid node reaches it.
inline double required_contribution(const Solution& sol, int pool, double confidence) {
    if (!(confidence > 0.0 && confidence <= 1.0))
        throw ContractViolation("confidence must lie in (0,1]");
    const auto& grid = sol.values;
    for (int j = 1; j < grid.resolution(); ++j)
        if (grid.stored(0, pool, j) >= confidence)
            return grid.node(0, pool, j) / pool;
    return grid.floors()(pool, 0) / pool;
}

inline double required_contribution(const WithdrawalPlan& plan, const CohortMortality& mortality,
                                     const ReturnModel& model, SolverConfig cfg, double confidence) {
    cfg.max_pool = std::max(cfg.max_pool, plan.pool_size);
    return required_contribution(solve(plan, mortality, model, cfg), plan.pool_size, confidence);
}

// max over grid nodes j of v_0(a x_j, a) - v_0(b x_j, b). Floors scale
// linearly in the pool size, so node j is the same per-member wealth for
// every pool size.
inline double pooling_gap(const Solution& sol, int pool, int baseline) {
    const auto& grid = sol.values;
    double gap = -1.0;
    for (int j = 1; j < grid.resolution(); ++j)
        gap = std::max(gap, grid.stored(0, pool, j) - grid.stored(0, baseline, j));
    return gap;
}

} // namespace poolfund
