// poolfund: solve, simulate and tabulate withdrawal success probabilities for
// a closed pooled annuity fund.

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "poolfund/poolfund.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace poolfund;

namespace {

enum ExitCode : int {
    exit_ok = 0,
    exit_usage = 64,
    exit_data = 65,
    exit_runtime = 70,
};

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Options {
    int age = 65;
    int pool = 1;
    std::vector<double> contributions{18.0};
    std::string withdrawal = "1";
    double rate = 0.0;
    int grid = 100;
    double mu = ReturnModel::default_mu;
    double sigma = ReturnModel::default_sigma;
    std::string life_table = POOLFUND_DEFAULT_LIFE_TABLE;
    std::string market_csv;
    long paths = 100000;
    std::uint64_t seed = 1;
    std::vector<double> constant_q;
    std::string policy;
    std::string out = ".";
    int threads = 1;
    bool all_members = false;
    bool quiet = false;

    // simulate
    bool liquidity = false;
    std::string trace;
    long trace_paths = 10;

    // frontier
    std::vector<int> ages{55, 60, 65, 70, 75, 80};
    std::vector<int> pools{1, 2, 3, 5, 10, 20, 30};
    std::vector<double> confidence{0.95};

    // solve
    int solve_max_pool = 0;

    // pool-benefit
    int max_pool = 20;

    // sensitivity
    std::vector<double> mus;
    std::vector<double> sigmas;
};

std::string utc_now() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream s;
    s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return s.str();
}

// Records what a command read and wrote so the run can be repeated.
class Manifest {
public:
    Manifest(std::string command, int argc, char** argv) {
        doc_["tool"] = "poolfund";
        doc_["version"] = POOLFUND_VERSION;
        doc_["command"] = std::move(command);
        doc_["argv"] = std::vector<std::string>(argv, argv + argc);
        doc_["started"] = utc_now();
        doc_["outputs"] = json::array();
    }

    json& config() { return doc_["config"]; }
    json& operator[](const std::string& key) { return doc_[key]; }

    void add_output(const fs::path& path) {
        std::ifstream in(path, std::ios::binary);
        std::ostringstream bytes;
        bytes << in.rdbuf();
        const auto content = bytes.str();
        doc_["outputs"].push_back(
            {{"path", path.filename().string()}, {"bytes", content.size()}, {"fnv1a64", hex64(fnv1a(content))}});
    }

    fs::path write(const fs::path& dir) {
        doc_["finished"] = utc_now();
        const auto path = dir / (doc_["command"].get<std::string>() + ".manifest.json");
        std::ofstream out(path);
        out << doc_.dump(2) << '\n';
        if (!out)
            throw RuntimeFailure("cannot write manifest " + path.string());
        return path;
    }

private:
    json doc_;
};

ReturnModel make_model(const Options& o, Manifest& manifest) {
    if (!o.market_csv.empty()) {
        const auto series = load_market_csv_file(o.market_csv);
        const auto returns = real_returns(series);
        const auto model = fit_return_model(returns, o.rate);
        manifest["fitted_model"] = {{"source", o.market_csv},
                                    {"years", {series.front().year, series.back().year}},
                                    {"returns", returns.size()},
                                    {"mu", model.mu()},
                                    {"sigma", model.sigma()}};
        return model;
    }
    return ReturnModel(o.mu, o.sigma, o.rate);
}

std::vector<double> make_schedule(const Options& o, int horizon) {
    if (const auto amount = text::parse_double(o.withdrawal))
        return constant_schedule(horizon, *amount);
    auto w = load_schedule_file(o.withdrawal);
    if (static_cast<int>(w.size()) != horizon)
        throw ValidationError("withdrawal file has " + std::to_string(w.size()) + " entries; age " +
                              std::to_string(terminal_age - horizon) + " needs " + std::to_string(horizon));
    return w;
}

WithdrawalPlan make_plan(const Options& o, const CohortMortality& c, double contribution, int pool) {
    WithdrawalPlan plan;
    plan.start_age = c.start_age;
    plan.pool_size = pool;
    plan.contribution = contribution;
    plan.rate = o.rate;
    plan.withdrawals = make_schedule(o, c.horizon);
    plan.validate();
    return plan;
}

SolverConfig make_solver_config(const Options& o, int max_pool) {
    SolverConfig cfg;
    cfg.grid = o.grid;
    cfg.max_pool = max_pool;
    cfg.threads = o.threads;
    cfg.validate();
    return cfg;
}

SimConfig make_sim_config(const Options& o) {
    if (o.paths < 1)
        throw UsageError("--paths must be >= 1");
    SimConfig cfg;
    cfg.paths = o.paths;
    cfg.seed = o.seed;
    cfg.threads = o.threads;
    cfg.trace_paths = o.trace.empty() ? 0 : o.trace_paths;
    return cfg;
}

ProgressFn progress_reporter(const Options& o, std::string label) {
    if (o.quiet)
        return {};
    return [label = std::move(label)](int stage, int horizon) {
        std::cerr << label << ": stage " << stage << " of " << horizon << " done\n";
    };
}

void record_common(Manifest& m, const Options& o, const ReturnModel& model) {
    auto& c = m.config();
    c["age"] = o.age;
    c["pool"] = o.pool;
    c["contributions"] = o.contributions;
    c["withdrawal"] = o.withdrawal;
    c["rate"] = o.rate;
    c["grid"] = o.grid;
    c["mu"] = model.mu();
    c["sigma"] = model.sigma();
    c["life_table"] = o.life_table;
    c["market_csv"] = o.market_csv;
    c["paths"] = o.paths;
    c["seed"] = o.seed;
    c["threads"] = o.threads;
    c["objective"] = o.all_members ? "all" : "focal";
    m["seed"] = o.seed;
}

fs::path output_dir(const Options& o) {
    fs::path dir(o.out);
    fs::create_directories(dir);
    return dir;
}

// Writes `body` to dir/name and echoes it to stdout.
fs::path emit_table(const fs::path& dir, const std::string& name, const std::string& body) {
    const auto path = dir / name;
    std::ofstream out(path, std::ios::binary);
    out << body;
    if (!out)
        throw RuntimeFailure("cannot write " + path.string());
    std::cout << body;
    return path;
}

std::string fmt(double v) { return text::format_double(v); }

int cmd_solve(const Options& o, Manifest& manifest) {
    const auto model = make_model(o, manifest);
    record_common(manifest, o, model);
    if (o.contributions.size() != 1)
        throw UsageError("solve takes a single --contribution");
    const auto table = load_life_table_file(o.life_table);
    const auto c = cohort(table, o.age);
    const auto plan = make_plan(o, c, o.contributions.front(), o.pool);
    const auto cfg = make_solver_config(o, std::max(o.pool, o.solve_max_pool));
    const auto objective = o.all_members ? Objective::all_members : Objective::focal;
    const auto sol = solve(plan, c, model, cfg, objective, progress_reporter(o, "solve"));

    const auto dir = output_dir(o);
    const auto grid_path = dir / "grid.txt";
    write_solution_file(grid_path.string(), sol);
    manifest.add_output(grid_path);

    std::ostringstream s;
    s << "objective,pool,contribution,start_age,v0\n";
    s << to_string(objective) << ',' << plan.pool_size << ',' << fmt(plan.contribution) << ',' << plan.start_age
      << ',' << fmt(sol.initial_value()) << '\n';
    manifest.add_output(emit_table(dir, "summary.csv", s.str()));
    manifest["cohort_digest"] = hex64(c.digest());
    manifest.write(dir);
    return exit_ok;
}

// Loads a policy artifact and checks it was solved for this schedule and cohort.
Solution load_policy(const Options& o, const CohortMortality& c, const std::vector<double>& withdrawals) {
    auto sol = read_solution_file(o.policy);
    std::ifstream in(o.policy, std::ios::binary);
    std::ostringstream bytes;
    bytes << in.rdbuf();
    const auto digest = hex64(fnv1a(bytes.str()));
    auto mismatch = [&](const std::string& what) {
        return ValidationError("policy artifact " + o.policy + " (fnv1a64 " + digest + ") was solved for a different " +
                               what);
    };
    if (sol.plan.start_age != c.start_age)
        throw mismatch("starting age (" + std::to_string(sol.plan.start_age) + ")");
    if (sol.cohort.digest() != c.digest())
        throw mismatch("cohort: artifact cohort " + hex64(sol.cohort.digest()) + ", life table gives " +
                       hex64(c.digest()));
    if (sol.plan.withdrawals != withdrawals)
        throw mismatch("withdrawal schedule");
    if (sol.plan.rate != o.rate)
        throw mismatch("bond rate");
    if (sol.config.max_pool < o.pool)
        throw mismatch("pool range (max pool " + std::to_string(sol.config.max_pool) + ")");
    return sol;
}

int cmd_simulate(const Options& o, Manifest& manifest) {
    const auto model = make_model(o, manifest);
    record_common(manifest, o, model);
    const auto table = load_life_table_file(o.life_table);
    const auto c = cohort(table, o.age);
    const auto schedule = make_schedule(o, c.horizon);
    const auto sim = make_sim_config(o);

    struct Candidate {
        std::string name;
        std::optional<double> constant;
    };
    std::vector<Candidate> candidates;
    std::optional<Solution> optimal;
    if (!o.policy.empty()) {
        optimal = load_policy(o, c, schedule);
        if (!(optimal->model == model) && !o.quiet)
            std::cerr << "simulate: policy was solved under mu=" << optimal->model.mu()
                      << " sigma=" << optimal->model.sigma() << ", simulating under mu=" << model.mu()
                      << " sigma=" << model.sigma() << '\n';
        candidates.push_back({"optimal", std::nullopt});
        manifest["policy_artifact"] = o.policy;
    }
    for (double q : o.constant_q) {
        if (!(q >= 0.0 && q <= 1.0))
            throw UsageError("--constant-q must lie in [0,1]");
        candidates.push_back({"constant:" + fmt(q), q});
    }
    if (candidates.empty()) {
        const auto plan = make_plan(o, c, o.contributions.front(), o.pool);
        optimal = solve(plan, c, model, make_solver_config(o, o.pool),
                        o.all_members ? Objective::all_members : Objective::focal, progress_reporter(o, "solve"));
        candidates.push_back({"optimal", std::nullopt});
    }

    const auto dir = output_dir(o);
    std::ostringstream s;
    s << "policy,objective,pool,contribution,paths,estimate,std_error";
    if (optimal)
        s << ",v0";
    if (o.liquidity)
        s << ",liquidity_violations";
    s << '\n';
    std::vector<Trajectory> traces;
    bool traced = false;
    for (double contribution : o.contributions) {
        const auto plan = make_plan(o, c, contribution, o.pool);
        for (const auto& cand : candidates) {
            auto run = [&](const auto& policy) {
                auto* trace_sink = (!o.trace.empty() && !traced) ? &traces : nullptr;
                traced = traced || trace_sink;
                const auto est = o.all_members
                                     ? simulate_all_annuitant(plan, c, model, policy, sim, trace_sink)
                                     : simulate_success_probability(plan, c, model, policy, sim, trace_sink);
                s << cand.name << ',' << (o.all_members ? "all" : "focal") << ',' << plan.pool_size << ','
                  << fmt(contribution) << ',' << est.paths << ',' << fmt(est.probability) << ','
                  << fmt(est.std_error);
                if (optimal)
                    s << ',' << fmt(optimal->initial_value(plan.pool_size, contribution));
                if (o.liquidity)
                    s << ',' << simulate_liquidity(plan, c, model, policy, sim).violations;
                s << '\n';
            };
            if (cand.constant)
                run(ConstantPolicy{*cand.constant});
            else
                run(GridPolicy(optimal->policy));
        }
    }
    manifest.add_output(emit_table(dir, "simulate.csv", s.str()));
    if (!o.trace.empty()) {
        const fs::path trace_path = dir / o.trace;
        std::ofstream out(trace_path);
        write_trace(out, traces);
        out.close();
        manifest.add_output(trace_path);
    }
    manifest["cohort_digest"] = hex64(c.digest());
    manifest.write(dir);
    return exit_ok;
}

int cmd_frontier(const Options& o, Manifest& manifest) {
    const auto model = make_model(o, manifest);
    record_common(manifest, o, model);
    manifest.config()["ages"] = o.ages;
    manifest.config()["pools"] = o.pools;
    manifest.config()["confidence"] = o.confidence;
    for (double conf : o.confidence)
        if (!(conf > 0.0 && conf < 1.0))
            throw UsageError("--confidence values must lie in (0,1)");
    if (o.pools.empty() || o.ages.empty())
        throw UsageError("frontier needs --ages and --pools");
    const auto table = load_life_table_file(o.life_table);
    const int max_pool = *std::max_element(o.pools.begin(), o.pools.end());

    std::ostringstream s;
    s << "start_age,pool,confidence,required_contribution\n";
    for (int age : o.ages) {
        const auto c = cohort(table, age);
        const auto plan = make_plan(o, c, 1.0, 1);
        const auto sol = solve(plan, c, model, make_solver_config(o, max_pool), Objective::focal,
                               progress_reporter(o, "frontier age " + std::to_string(age)));
        for (int a : o.pools)
            for (double conf : o.confidence)
                s << age << ',' << a << ',' << fmt(conf) << ',' << fmt(required_contribution(sol, a, conf)) << '\n';
    }
    const auto dir = output_dir(o);
    manifest.add_output(emit_table(dir, "frontier.csv", s.str()));
    manifest.write(dir);
    return exit_ok;
}

int cmd_pool_benefit(const Options& o, Manifest& manifest) {
    const auto model = make_model(o, manifest);
    record_common(manifest, o, model);
    manifest.config()["max_pool"] = o.max_pool;
    if (o.max_pool < 1)
        throw UsageError("--max-pool must be >= 1");
    const auto table = load_life_table_file(o.life_table);
    const auto c = cohort(table, o.age);
    const auto plan = make_plan(o, c, 1.0, 1);
    const auto sol = solve(plan, c, model, make_solver_config(o, o.max_pool), Objective::focal,
                           progress_reporter(o, "pool-benefit"));

    std::ostringstream s;
    s << "pool,gap_vs_single,increment,log10_increment\n";
    for (int a = 1; a <= o.max_pool; ++a) {
        const double gap = pooling_gap(sol, a, 1);
        s << a << ',' << fmt(gap);
        if (a == 1) {
            s << ",,\n";
            continue;
        }
        const double inc = pooling_gap(sol, a, a - 1);
        s << ',' << fmt(inc) << ',' << (inc > 0.0 ? fmt(std::log10(inc)) : std::string()) << '\n';
    }
    const auto dir = output_dir(o);
    manifest.add_output(emit_table(dir, "pool_benefit.csv", s.str()));
    manifest.write(dir);
    return exit_ok;
}

int cmd_sensitivity(const Options& o, Manifest& manifest) {
    const auto baseline = make_model(o, manifest);
    record_common(manifest, o, baseline);
    const auto mus = o.mus.empty() ? std::vector<double>{baseline.mu()} : o.mus;
    const auto sigmas = o.sigmas.empty() ? std::vector<double>{baseline.sigma()} : o.sigmas;
    manifest.config()["mus"] = mus;
    manifest.config()["sigmas"] = sigmas;
    const auto table = load_life_table_file(o.life_table);
    const auto c = cohort(table, o.age);
    const auto sim = make_sim_config(o);
    const auto cfg = make_solver_config(o, o.pool);
    const auto base_plan = make_plan(o, c, o.contributions.front(), o.pool);
    const auto base = solve(base_plan, c, baseline, cfg, Objective::focal, progress_reporter(o, "baseline"));

    std::ostringstream s;
    s << "mu,sigma,pool,contribution,v0_matched,baseline_policy_estimate,std_error\n";
    for (double mu : mus)
        for (double sigma : sigmas) {
            const ReturnModel model(mu, sigma, o.rate);
            const auto matched = model == baseline ? base : solve(base_plan, c, model, cfg, Objective::focal,
                                                                  progress_reporter(o, "sensitivity"));
            for (double contribution : o.contributions) {
                const auto plan = make_plan(o, c, contribution, o.pool);
                const auto est = simulate_success_probability(plan, c, model, GridPolicy(base.policy), sim);
                s << fmt(mu) << ',' << fmt(sigma) << ',' << o.pool << ',' << fmt(contribution) << ','
                  << fmt(matched.initial_value(o.pool, contribution)) << ',' << fmt(est.probability) << ','
                  << fmt(est.std_error) << '\n';
            }
        }
    const auto dir = output_dir(o);
    manifest.add_output(emit_table(dir, "sensitivity.csv", s.str()));
    manifest.write(dir);
    return exit_ok;
}

int cmd_fit_returns(const Options& o, Manifest& manifest) {
    if (o.market_csv.empty())
        throw UsageError("fit-returns needs --market-csv");
    const auto model = make_model(o, manifest);
    record_common(manifest, o, model);
    const auto series = load_market_csv_file(o.market_csv);
    std::ostringstream s;
    s << "first_year,last_year,returns,mu,sigma\n";
    s << series.front().year << ',' << series.back().year << ',' << series.size() - 1 << ',' << fmt(model.mu())
      << ',' << fmt(model.sigma()) << '\n';
    const auto dir = output_dir(o);
    manifest.add_output(emit_table(dir, "fit.csv", s.str()));
    manifest.write(dir);
    return exit_ok;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Withdrawal success optimisation for a closed pooled annuity fund"};
    app.set_config("--config", "", "key = value configuration file; command-line flags take precedence");
    app.fallthrough();
    app.require_subcommand(1);
    Options o;

    app.add_option("--age", o.age, "Starting age of every member")->capture_default_str();
    app.add_option("--pool", o.pool, "Initial pool size A0")->capture_default_str();
    app.add_option("--contribution", o.contributions, "Per-member initial contribution P (repeatable)")
        ->delimiter(',');
    app.add_option("--withdrawal", o.withdrawal, "Per-step withdrawal: a number, or a file with one value per step")
        ->capture_default_str();
    app.add_option("--rate", o.rate, "Real bond rate r per step")->capture_default_str();
    app.add_option("--grid", o.grid, "Wealth grid resolution M")->capture_default_str();
    app.add_option("--mu", o.mu, "Mean gross real stock return")->capture_default_str();
    app.add_option("--sigma", o.sigma, "Standard deviation of the gross real stock return")->capture_default_str();
    app.add_option("--life-table", o.life_table, "Life table (age, qx)")->capture_default_str();
    app.add_option("--market-csv", o.market_csv, "Annual market data (year,I,D,C); fits mu and sigma");
    app.add_option("--paths", o.paths, "Monte-Carlo path count")->capture_default_str();
    app.add_option("--seed", o.seed, "Random seed")->capture_default_str();
    app.add_option("--constant-q", o.constant_q, "Simulate a constant stock weight (repeatable)")->delimiter(',');
    app.add_option("--policy", o.policy, "Solved grid artifact to simulate");
    app.add_option("--out", o.out, "Output directory")->capture_default_str();
    app.add_option("--threads", o.threads, "Worker threads")->capture_default_str();
    app.add_flag("--all-annuitants", o.all_members, "Every member must complete the schedule");
    app.add_flag("--quiet", o.quiet, "No progress on standard error");

    auto* solve_cmd = app.add_subcommand("solve", "Solve the optimal policy and write the grid artifact");
    solve_cmd->add_option("--max-pool", o.solve_max_pool, "Solve pool sizes up to this (default: --pool)");
    auto* simulate_cmd = app.add_subcommand("simulate", "Estimate success probabilities by simulation");
    simulate_cmd->add_flag("--liquidity", o.liquidity, "Check the liquidity bound on every path");
    simulate_cmd->add_option("--trace", o.trace, "Write per-path traces to this file in --out");
    simulate_cmd->add_option("--trace-paths", o.trace_paths, "Number of traced paths")->capture_default_str();
    auto* frontier_cmd = app.add_subcommand("frontier", "Required contribution by age, pool size and confidence");
    frontier_cmd->add_option("--ages", o.ages, "Starting ages")->delimiter(',');
    frontier_cmd->add_option("--pools", o.pools, "Pool sizes")->delimiter(',');
    frontier_cmd->add_option("--confidence", o.confidence, "Confidence levels")->delimiter(',');
    auto* benefit_cmd = app.add_subcommand("pool-benefit", "Success-probability gain from pooling");
    benefit_cmd->add_option("--max-pool", o.max_pool, "Largest pool size")->capture_default_str();
    auto* sens_cmd = app.add_subcommand("sensitivity", "Solve under other (mu, sigma) and reuse the baseline policy");
    sens_cmd->add_option("--mus", o.mus, "Means to test")->delimiter(',');
    sens_cmd->add_option("--sigmas", o.sigmas, "Standard deviations to test")->delimiter(',');
    auto* fit_cmd = app.add_subcommand("fit-returns", "Fit the return model to annual market data");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return exit_usage;
    }

    const auto* sub = app.get_subcommands().front();
    try {
        Manifest manifest(sub->get_name(), argc, argv);
        if (sub == solve_cmd)
            return cmd_solve(o, manifest);
        if (sub == simulate_cmd)
            return cmd_simulate(o, manifest);
        if (sub == frontier_cmd)
            return cmd_frontier(o, manifest);
        if (sub == benefit_cmd)
            return cmd_pool_benefit(o, manifest);
        if (sub == sens_cmd)
            return cmd_sensitivity(o, manifest);
        if (sub == fit_cmd)
            return cmd_fit_returns(o, manifest);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return exit_usage;
    } catch (const ParseError& e) {
        std::cerr << "parse error: " << e.what() << '\n';
        return exit_data;
    } catch (const ValidationError& e) {
        std::cerr << "invalid input: " << e.what() << '\n';
        return exit_data;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_runtime;
    }
    return exit_usage;
}
