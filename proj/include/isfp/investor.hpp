#pragma once

#include <map>
#include <vector>

#include "isfp/common.hpp"
#include "isfp/network.hpp"

namespace isfp {

// phi(x) = a*x^2 + b*x
struct QuadraticCost {
    double a = 0.0;
    double b = 0.0;

    double value(double x) const { return a * x * x + b * x; }
    double marginal(double x) const { return 2.0 * a * x + b; }
    void validate() const {
        if (a < 0.0 || b < 0.0) throw DomainError("cost coefficients must be nonnegative");
    }
};

// Convex piecewise-quadratic cost given by breakpoints on the quantity axis.
// Piece i applies on [breaks[i], breaks[i+1]) with marginal 2*a_i*x + b_i;
// value offsets keep the function continuous with value(0) = 0.
struct PiecewiseQuadraticCost {
    std::vector<double> breaks;           // starts with 0
    std::vector<QuadraticCost> pieces;    // same length as breaks
    std::vector<double> offsets;          // value at each break

    static PiecewiseQuadraticCost from_quadratic(const QuadraticCost& q);
    double value(double x) const;
    double marginal(double x) const;
    void validate() const;
};

struct LocationCost {
    QuadraticCost capital;    // phi_c
    QuadraticCost operating;  // phi_g
};

// Per-investor capital cost Phi_i(c) = a_i c^2 + b_i c at one location.
struct InvestorProfile {
    double a = 0.0;
    double b = 0.0;
};

struct InvestorSolution {
    std::map<NodeId, double> capacity;                   // c^k
    std::map<NodeId, std::vector<double>> supply;        // k -> g^k per scenario
    double profit = 0.0;
};

// Stage-two supply at one location and scenario: argmax rho*g - phi_g(g) s.t. 0<=g<=cap.
double optimal_supply(double price, const QuadraticCost& operating, double cap);

// One-location two-stage solve over scenario prices. Capital cost may be
// piecewise quadratic (aggregated investor profiles).
struct LocationSolve {
    double capacity = 0.0;
    std::vector<double> supply;
    double profit = 0.0;
};
LocationSolve solve_location(const std::vector<double>& prices, const std::vector<double>& probs,
                             const PiecewiseQuadraticCost& capital, const QuadraticCost& operating);
LocationSolve solve_location(const std::vector<double>& prices, const std::vector<double>& probs,
                             const LocationCost& cost);

// Representative investor across locations; prices[k][xi].
InvestorSolution solve_investor(const std::map<NodeId, std::vector<double>>& prices,
                                const std::vector<double>& probs,
                                const std::map<NodeId, LocationCost>& costs);

double investor_objective(const InvestorSolution& solution,
                          const std::map<NodeId, std::vector<double>>& prices,
                          const std::vector<double>& probs,
                          const std::map<NodeId, LocationCost>& costs);

// Infimal convolution of individual quadratic capital costs over nonnegative splits.
PiecewiseQuadraticCost aggregate_profiles(const std::vector<InvestorProfile>& profiles);

// Unique marginal-cost-equalizing split of a total capacity (sums exactly).
std::vector<double> allocate_capacity(double total, const std::vector<InvestorProfile>& profiles);

}  // namespace isfp
