#pragma once

#include <functional>
#include <map>
#include <optional>
#include <vector>

#include "isfp/gcda.hpp"
#include "isfp/investor.hpp"
#include "isfp/scenario.hpp"

namespace isfp {

// Locational prices rho^k_xi and the reformulation duals lambda = pi * rho.
struct PriceField {
    std::map<NodeId, std::vector<double>> rho;  // k -> per-scenario price
    std::vector<double> probs;

    double lambda(NodeId k, std::size_t xi) const { return probs[xi] * rho.at(k)[xi]; }
};

struct EquilibriumProblem {
    const Network* network = nullptr;
    const TripTable* trips = nullptr;
    UtilityParams params;
    std::map<NodeId, LocationCost> costs;
    ScenarioSet scenarios;

    // Aggregated multi-investor capital cost, replacing costs[k].capital when set.
    std::map<NodeId, PiecewiseQuadraticCost> capital_override;
    // When set, first-stage capacities are fixed (operational re-evaluation mode).
    std::optional<std::map<NodeId, double>> fixed_capacity;

    double total_service_demand(std::size_t xi) const;  // theta_xi * sum e*d
    void validate() const;
};

struct ResidualReport {
    double max_market_residual = 0.0;  // normalized by total service demand
    double duality_gap = 0.0;          // relative; NaN when no certificate applies
    double wardrop_gap = 0.0;          // max over scenarios
    int iterations = 0;
    bool converged = false;
};

struct EquilibriumSolution {
    InvestorSolution investor;
    std::vector<GcdaSolution> gcda;  // one per scenario
    PriceField prices;
    ResidualReport residuals;
};

struct EquilibriumOptions {
    double tol_mc = 1e-4;          // normalized market residual
    double tol_gap = 1e-4;         // relative duality gap
    int max_outer = 5000;
    int num_threads = 1;
    double initial_price = 0.0;
    double initial_step = -1.0;    // seeds the update damping; <=0 uses the default
    // observer for outer iterates (weak-duality audits in tests); args: primal, dual
    std::function<void(int, double, double)> iterate_hook;
};

// Signed residual g^k_xi - sum_rs e*q^{rsk}_xi per location and scenario.
std::map<NodeId, std::vector<double>> excess_supply(const InvestorSolution& investor,
                                                    const std::vector<GcdaSolution>& gcda,
                                                    const EquilibriumProblem& problem);

// Projected price update rho <- max(0, rho - eta * excess); lambda follows as pi*rho.
void dual_step(PriceField& prices, const std::map<NodeId, std::vector<double>>& excess,
               double eta);

EquilibriumSolution solve_equilibrium(const EquilibriumProblem& problem,
                                      const EquilibriumOptions& opts = {});

// Objective of the combined convex program at a feasible primal point.
double combined_objective(const EquilibriumSolution& solution, const EquilibriumProblem& problem);

// Relative gap between the combined objective at a restored feasible point and the
// Lagrangian dual value at the given prices (subproblems re-solved).
double duality_gap(const EquilibriumSolution& solution, const PriceField& prices,
                   const EquilibriumProblem& problem);

std::map<NodeId, std::vector<double>> recover_prices(
    const std::map<NodeId, std::vector<double>>& lambda, const std::vector<double>& probs);

struct EquilibriumCheck {
    double investor_residual = 0.0;  // relative (c, g) mismatch on re-solve
    double max_wardrop_logit = 0.0;
    double market_residual = 0.0;
    double gap = 0.0;
    bool pass = false;
    std::string failed_check;
};

EquilibriumCheck verify_equilibrium(const EquilibriumSolution& solution,
                                    const EquilibriumProblem& problem, double tol);

// Independent cross-validation oracle for small instances (interior-point on the
// path-enumerated reduced program). Never used by the main solver.
EquilibriumSolution solve_reference(const EquilibriumProblem& problem);

}  // namespace isfp
