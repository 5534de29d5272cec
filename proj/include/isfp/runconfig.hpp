#pragma once

#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "isfp/stochastic.hpp"

namespace isfp {

// Plain-text sectioned key/value run configuration. Every key has a default
// except the file paths.
struct RunConfig {
    // [files]
    std::string network_path;
    std::string roles_path;
    std::string trips_path;

    // [utility]
    UtilityParams params{.beta0 = {}, .beta1 = 1.0, .beta2 = 0.06};

    // [costs] defaults, with optional per-location overrides and investor profiles
    QuadraticCost capital{0.1, 170.0};
    QuadraticCost operating{0.1, 130.0};
    std::map<NodeId, QuadraticCost> capital_override;
    std::map<NodeId, QuadraticCost> operating_override;
    std::map<NodeId, std::vector<InvestorProfile>> investors;  // aggregated when present

    // [network]
    double capacity_scale = 1.0;
    bool no_congestion = false;

    // [scenarios]
    int scenario_count = 1;
    double theta_min = 1.0;
    double theta_max = 1.0;
    std::uint64_t seed = 0;
    std::vector<Scenario> explicit_scenarios;  // overrides the generated set

    // [solver]
    double tol_mc = 1e-4;
    double tol_gap = 1e-4;
    int max_outer = 5000;
    int threads = 1;
    double initial_price = 0.0;
    double initial_step = -1.0;

    // [sweep]
    std::string sweep_parameter = "beta2";
    std::vector<double> sweep_values;

    std::string out_dir = ".";

    void validate() const;
};

RunConfig parse_config(std::istream& text);
RunConfig load_config(const std::string& path);

// Owns the loaded network/trips that the problem points into.
struct LoadedProblem {
    std::unique_ptr<Network> network;
    std::unique_ptr<TripTable> trips;
    EquilibriumProblem problem;
    ScenarioSet scenarios;
};

LoadedProblem build_problem(const RunConfig& config);

EquilibriumOptions solver_options(const RunConfig& config);

// summary.json + locations/links/triples CSVs in config.out_dir
void write_solution_files(const RunConfig& config, const LoadedProblem& lp,
                          const EquilibriumSolution& solution);

// Pipelines; return the CLI exit code (0 ok, 1 verify failure, 3 non-convergence).
// Configuration and file problems raise ParseError/ValidationError (exit code 2).
int run_solve(const RunConfig& config, std::ostream& log);
int run_metrics(const RunConfig& config, std::ostream& log);
int run_sweep(const RunConfig& config, std::ostream& log);
int run_verify(const RunConfig& config, const std::string& solution_path, std::ostream& log);

// Full-precision float formatting shared by every writer ("%.17g").
std::string fmt_double(double v);

}  // namespace isfp
