#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "catch_amalgamated.hpp"
#include "json.hpp"

namespace fs = std::filesystem;

namespace {

struct Run {
    int status = -1;
    std::string out;
};

Run run(const std::string& args) {
    const std::string cmd = std::string(POOLFUND_CLI) + " " + args + " 2>/dev/null";
    Run r;
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    char buf[4096];
    while (const auto n = fread(buf, 1, sizeof buf, pipe))
        r.out.append(buf, n);
    const int status = pclose(pipe);
    r.status = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("poolfund_cli_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

const std::string table = std::string(POOLFUND_TEST_DATA) + "/small_life_table.csv";
const std::string small = " --life-table " + table + " --age 110 --grid 30 --quiet";

} // namespace

TEST_CASE("solve then simulate the stored policy", "[cli]") {
    const auto dir = scratch("solve");
    const auto solved = run("solve" + small + " --pool 2 --contribution 2 --out " + dir.string());
    REQUIRE(solved.status == 0);
    CHECK(solved.out.starts_with("objective,pool,contribution,start_age,v0\nfocal,2,2,110,"));
    REQUIRE(fs::exists(dir / "grid.txt"));
    const auto manifest = nlohmann::json::parse(slurp(dir / "solve.manifest.json"));
    CHECK(manifest["command"] == "solve");
    CHECK(manifest["seed"] == 1);
    CHECK(manifest["outputs"].size() == 2);

    const auto sim = run("simulate" + small + " --pool 2 --contribution 2,3 --paths 4000 --constant-q 1 --policy " +
                         (dir / "grid.txt").string() + " --out " + dir.string());
    REQUIRE(sim.status == 0);
    std::istringstream lines(sim.out);
    std::string header;
    std::getline(lines, header);
    CHECK(header == "policy,objective,pool,contribution,paths,estimate,std_error,v0");
    int rows = 0;
    for (std::string l; std::getline(lines, l);)
        ++rows;
    CHECK(rows == 4);
}

TEST_CASE("simulate output is reproducible", "[cli]") {
    const auto dir = scratch("repro");
    const std::string args =
        "simulate" + small + " --pool 3 --contribution 2 --paths 5000 --seed 4 --constant-q 0.5 --liquidity --out " +
        dir.string();
    const auto first = run(args);
    const auto second = run(args);
    REQUIRE(first.status == 0);
    CHECK(first.out == second.out);
    CHECK(first.out.find(",0\n") != std::string::npos); // no liquidity violations
}

TEST_CASE("policies from another cohort are refused", "[cli]") {
    const auto dir = scratch("provenance");
    REQUIRE(run("solve" + small + " --out " + dir.string()).status == 0);
    const auto r = run("simulate --life-table " + table + " --age 111 --grid 30 --quiet --policy " +
                       (dir / "grid.txt").string() + " --out " + dir.string());
    CHECK(r.status == 65);
    const auto schedule = run("simulate" + small + " --withdrawal 0.5 --policy " + (dir / "grid.txt").string() +
                              " --out " + dir.string());
    CHECK(schedule.status == 65);
}

TEST_CASE("exit codes", "[cli]") {
    const auto dir = scratch("codes");
    CHECK(run("").status == 64);
    CHECK(run("solve --no-such-flag").status == 64);
    CHECK(run("solve --life-table /nonexistent --out " + dir.string()).status == 65);
    CHECK(run("solve" + small + " --contribution -1 --out " + dir.string()).status == 65);
    CHECK(run("simulate" + small + " --constant-q 2 --out " + dir.string()).status == 64);
    CHECK(run("fit-returns --out " + dir.string()).status == 64);
    CHECK(run("--help").status == 0);
}

TEST_CASE("fit-returns, frontier and pool-benefit tables", "[cli]") {
    const auto dir = scratch("tables");
    const auto fit = run("fit-returns --market-csv " + std::string(POOLFUND_TEST_DATA) + "/market_fixture.csv --out " +
                         dir.string());
    REQUIRE(fit.status == 0);
    CHECK(fit.out.starts_with("first_year,last_year,returns,mu,sigma\n2000,2003,3,"));

    const auto frontier =
        run("frontier" + small + " --ages 110,112 --pools 1,2 --confidence 0.9 --out " + dir.string());
    REQUIRE(frontier.status == 0);
    CHECK(frontier.out.starts_with("start_age,pool,confidence,required_contribution\n110,1,0.9,"));

    const auto benefit = run("pool-benefit" + small + " --max-pool 3 --out " + dir.string());
    REQUIRE(benefit.status == 0);
    CHECK(benefit.out.starts_with("pool,gap_vs_single,increment,log10_increment\n1,0,,\n2,"));

    const auto sens = run("sensitivity" + small + " --mus 1.05,1.083 --paths 2000 --out " + dir.string());
    REQUIRE(sens.status == 0);
    CHECK(std::count(sens.out.begin(), sens.out.end(), '\n') == 3);
}

TEST_CASE("config file supplies defaults", "[cli]") {
    const auto dir = scratch("config");
    {
        std::ofstream cfg(dir / "run.ini");
        cfg << "age = 110\ngrid = 30\nlife-table = " << table << "\nquiet = true\npool = 2\n";
    }
    const auto r = run("solve --config " + (dir / "run.ini").string() + " --pool 3 --out " + dir.string());
    REQUIRE(r.status == 0);
    CHECK(r.out.find("\nfocal,3,18,110,") != std::string::npos);
}
