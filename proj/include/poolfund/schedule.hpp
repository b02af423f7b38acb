#pragma once

#include <fstream>
#include <istream>
#include <span>
#include <string>
#include <vector>

#include "poolfund/error.hpp"
#include "poolfund/text.hpp"

namespace poolfund {

// A homogeneous closed pool: A0 members each contribute P at time 0 and
// withdraw w_1..w_k (real units) at each step they are alive. The bond pays
// 1 + r per step.
struct WithdrawalPlan {
    double contribution = 1.0;
    int pool_size = 1;
    std::vector<double> withdrawals; // w_1..w_k, stored at index 0..k-1
    double rate = 0.0;
    int start_age = 65;

    int horizon() const noexcept { return static_cast<int>(withdrawals.size()); }

    // w_i for i in 1..k.
    double withdrawal(int i) const { return withdrawals.at(static_cast<std::size_t>(i - 1)); }

    void validate() const {
        if (!(contribution > 0.0))
            throw ValidationError("contribution must be > 0");
        if (pool_size < 1)
            throw ValidationError("pool size must be >= 1");
        if (withdrawals.empty())
            throw ValidationError("withdrawal schedule is empty");
        for (double w : withdrawals)
            if (!(w >= 0.0))
                throw ValidationError("withdrawals must be >= 0");
        if (!(withdrawals.back() > 0.0))
            throw ValidationError("the last withdrawal must be > 0");
        if (!(rate >= 0.0))
            throw ValidationError("bond rate must be >= 0");
    }

    friend bool operator==(const WithdrawalPlan&, const WithdrawalPlan&) = default;
};

inline std::vector<double> constant_schedule(int horizon, double amount) {
    return std::vector<double>(static_cast<std::size_t>(horizon), amount);
}

// One withdrawal per non-comment line.
inline std::vector<double> load_schedule(std::istream& in) {
    std::vector<double> w;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto fields = text::split_fields(line);
        if (fields.empty() || fields.front().starts_with('#'))
            continue;
        const auto v = text::parse_double(fields.front());
        if (!v) {
            if (w.empty())
                continue; // header
            throw ParseError("cannot parse withdrawal '" + std::string(fields.front()) + "'", lineno);
        }
        w.push_back(*v);
    }
    return w;
}

inline std::vector<double> load_schedule_file(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw ValidationError("cannot open withdrawal schedule '" + path + "'");
    return load_schedule(in);
}

// Riskless floors m_{a,i}: the wealth from which a survivors can fund the
// rest of the schedule with bonds alone. m_{a,k} = 0 and
// m_{a,i} = (m_{a,i+1} + a w_{i+1}) / (1 + r).
class FloorMatrix {
public:
    FloorMatrix() = default;

    FloorMatrix(const WithdrawalPlan& plan, int max_pool)
        : max_pool_(max_pool), horizon_(plan.horizon()),
          m_(static_cast<std::size_t>((max_pool + 1) * (plan.horizon() + 1)), 0.0) {
        const double growth = 1.0 + plan.rate;
        for (int a = 1; a <= max_pool_; ++a)
            for (int i = horizon_ - 1; i >= 0; --i)
                cell(a, i) = (cell(a, i + 1) + a * plan.withdrawal(i + 1)) / growth;
    }

    int max_pool() const noexcept { return max_pool_; }
    int horizon() const noexcept { return horizon_; }

    double operator()(int a, int i) const { return m_[index(a, i)]; }

private:
    std::size_t index(int a, int i) const {
        if (a < 0 || a > max_pool_ || i < 0 || i > horizon_)
            throw ContractViolation("floor lookup out of range: a=" + std::to_string(a) + " i=" + std::to_string(i));
        return static_cast<std::size_t>(a * (horizon_ + 1) + i);
    }
    double& cell(int a, int i) { return m_[index(a, i)]; }

    int max_pool_ = 0;
    int horizon_ = 0;
    std::vector<double> m_;
};

inline FloorMatrix compute_floors(const WithdrawalPlan& plan, int max_pool) { return FloorMatrix(plan, max_pool); }
inline FloorMatrix compute_floors(const WithdrawalPlan& plan) { return FloorMatrix(plan, plan.pool_size); }

// Solo wealth W~_0 = P, W~_i = Y_{i-1} W~_{i-1} - w_i along a path of
// portfolio gross returns Y_0..Y_{k-1}.
inline std::vector<double> present_value_individual(const WithdrawalPlan& plan, std::span<const double> path) {
    if (static_cast<int>(path.size()) != plan.horizon())
        throw ContractViolation("return path length " + std::to_string(path.size()) + " != horizon " +
                                std::to_string(plan.horizon()));
    std::vector<double> wealth;
    wealth.reserve(path.size() + 1);
    wealth.push_back(plan.contribution);
    for (int i = 1; i <= plan.horizon(); ++i)
        wealth.push_back(path[static_cast<std::size_t>(i - 1)] * wealth.back() - plan.withdrawal(i));
    return wealth;
}

} // namespace poolfund
