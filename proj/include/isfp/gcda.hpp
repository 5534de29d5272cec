#pragma once

#include <functional>
#include <map>
#include <tuple>
#include <vector>

#include "isfp/network.hpp"

namespace isfp {

using Triple = std::tuple<NodeId, NodeId, NodeId>;  // (r, s, k)

struct UtilityParams {
    std::map<NodeId, double> beta0;  // locational attractiveness, defaults to 0
    double beta1 = 1.0;              // disutility per time unit
    double beta2 = 0.0;              // disutility per money unit

    double beta0_at(NodeId k) const {
        auto it = beta0.find(k);
        return it == beta0.end() ? 0.0 : it->second;
    }
    void validate() const {
        if (!(beta1 > 0.0)) throw DomainError("utility: beta1 must be positive");
        if (beta2 < 0.0) throw DomainError("utility: beta2 must be nonnegative");
    }
};

struct GcdaProblem {
    const Network* network = nullptr;
    const TripTable* trips = nullptr;
    UtilityParams params;
    std::map<NodeId, double> prices;  // rho^k, money per service unit
    double demand_scale = 1.0;        // theta multiplier on d^{rs}

    double price_at(NodeId k) const {
        auto it = prices.find(k);
        return it == prices.end() ? 0.0 : it->second;
    }
};

struct GcdaSolution {
    std::map<Triple, double> q;   // facility-choice flows
    std::vector<double> v;        // aggregate link flows
    std::map<Triple, double> tau; // leg times at the final flow pattern
    double objective = 0.0;
    double lower_bound = -std::numeric_limits<double>::infinity();
    double rel_gap = std::numeric_limits<double>::infinity();
    int iterations = 0;
    bool converged = false;
};

struct WardropLogitReport {
    double max_tau_residual = 0.0;    // relative leg-time mismatch
    double max_logit_residual = 0.0;  // share mismatch vs softmax of utilities
    double wardrop_gap = 0.0;         // normalized (sum t*v - sum q*tau_min)
    bool pass = false;
};

// Multinomial split of theta*d over allowed facilities, V = b0 - b1*tau - b2*rho*e.
std::map<Triple, double> logit_split(const LegTimes& tau, const GcdaProblem& problem);

// Assign each q^{rsk} along the current shortest r->k and k->s legs.
// When leg_flows is non-null, per-link leg flows are accumulated per triple
// (debug mode for incidence checks on small instances).
std::vector<double> all_or_nothing(const Network& net, const TreeSet& trees,
                                   const TripTable& trips,
                                   const std::map<Triple, double>& q,
                                   std::map<Triple, std::vector<double>>* leg_flows = nullptr);

double gcda_objective(const std::vector<double>& v, const std::map<Triple, double>& q,
                      const GcdaProblem& problem);

// Exact step for the partial linearization: minimizes the objective along the
// segment toward (y, q_aux). Bisection on the directional derivative.
double line_search(const Network& net, const std::vector<double>& v,
                   const std::map<Triple, double>& q, const std::vector<double>& y,
                   const std::map<Triple, double>& q_aux, const GcdaProblem& problem);

struct GcdaOptions {
    double tol = 1e-8;     // relative linearization gap
    int max_iter = 50000;
    int num_threads = 1;
    const GcdaSolution* warm_start = nullptr;
    // observer for the per-iteration objective (monotonicity audits in tests)
    std::function<void(int, double)> iterate_hook;
};

GcdaSolution solve_gcda(const GcdaProblem& problem, const GcdaOptions& opts = {});

WardropLogitReport verify_wardrop_logit(const GcdaProblem& problem,
                                        const GcdaSolution& solution, double tol);

}  // namespace isfp
