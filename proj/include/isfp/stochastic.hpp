#pragma once

#include <string>
#include <vector>

#include "isfp/equilibrium.hpp"

namespace isfp {

enum class CaseMode { deterministic, stochastic, wait_and_see };

// One information case: deterministic mean-demand planning, stochastic planning
// with shared first-stage capacity, or per-scenario wait-and-see planning.
struct CaseResults {
    CaseMode mode = CaseMode::deterministic;
    ScenarioSet scenarios;                    // evaluation scenario set
    std::vector<EquilibriumSolution> solutions;  // one, or one per scenario (wait-and-see)
    double provider_objective = 0.0;          // expected investor profit
    double user_utility = 0.0;                // expected total utility, money units
    double surplus = 0.0;                     // provider_objective + user_utility
};

struct MetricsReport {
    double vss_provider = 0.0, vss_user = 0.0, vss_surplus = 0.0;
    double evpi_provider = 0.0, evpi_user = 0.0, evpi_surplus = 0.0;
    std::string note;  // multi-agent caveat
};

// Expected total utility E sum (1/b2) q (b0 - b1 tau - b2 rho e).  b2 = 0 -> DomainError.
double total_utility(const EquilibriumSolution& solution, const UtilityParams& params,
                     const TripTable& trips, const Network& net);

// Solves one case. Deterministic mode plans against the expected demand level
// theta-bar and reports that solve's objectives as-is; wait-and-see solves each
// scenario separately and probability-averages the objectives.
CaseResults solve_case(const EquilibriumProblem& problem, const ScenarioSet& scenarios,
                       CaseMode mode, const EquilibriumOptions& opts = {});

// VSS = case2 - case1 (evaluated), EVPI = case3 - case2, per stakeholder.
MetricsReport compute_metrics(const CaseResults& case1, const CaseResults& case2,
                              const CaseResults& case3);

}  // namespace isfp
