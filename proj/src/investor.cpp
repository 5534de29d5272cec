#include "isfp/investor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

namespace isfp {

PiecewiseQuadraticCost PiecewiseQuadraticCost::from_quadratic(const QuadraticCost& q) {
    PiecewiseQuadraticCost p;
    p.breaks = {0.0};
    p.pieces = {q};
    p.offsets = {0.0};
    return p;
}

void PiecewiseQuadraticCost::validate() const {
    if (breaks.empty() || breaks.size() != pieces.size() || breaks.size() != offsets.size())
        throw DomainError("piecewise cost: inconsistent piece data");
    for (const auto& p : pieces) p.validate();
}

// pieces are expressed in the offset dx = x - breaks[i]
double PiecewiseQuadraticCost::value(double x) const {
    std::size_t i = breaks.size() - 1;
    while (i > 0 && breaks[i] > x) --i;
    return offsets[i] + pieces[i].value(x - breaks[i]);
}

double PiecewiseQuadraticCost::marginal(double x) const {
    std::size_t i = breaks.size() - 1;
    while (i > 0 && breaks[i] > x) --i;
    return pieces[i].marginal(x - breaks[i]);
}

double optimal_supply(double price, const QuadraticCost& operating, double cap) {
    if (cap < 0.0) throw DomainError("optimal_supply: negative capacity");
    if (operating.a > 0.0) {
        const double g = (price - operating.b) / (2.0 * operating.a);
        return std::clamp(g, 0.0, cap);
    }
    // linear operating cost: bang-bang; flat-profit tie at price == b resolved to 0
    return price > operating.b ? cap : 0.0;
}

namespace {

// d/dc of the reduced expected profit (strictly decreasing in c)
double reduced_profit_slope(double c, const std::vector<double>& prices,
                            const std::vector<double>& probs,
                            const PiecewiseQuadraticCost& capital,
                            const QuadraticCost& operating) {
    double s = 0.0;
    for (std::size_t i = 0; i < prices.size(); ++i)
        s += probs[i] * std::max(0.0, prices[i] - operating.marginal(c));
    return s - capital.marginal(c);
}

}  // namespace

LocationSolve solve_location(const std::vector<double>& prices, const std::vector<double>& probs,
                             const PiecewiseQuadraticCost& capital, const QuadraticCost& operating) {
    if (prices.size() != probs.size())
        throw DomainError("solve_location: prices/probs size mismatch");
    double psum = 0.0;
    for (double p : probs) {
        if (!(p > 0.0)) throw DomainError("solve_location: probabilities must be positive");
        psum += p;
    }
    if (std::abs(psum - 1.0) > 1e-9) throw DomainError("solve_location: probabilities must sum to 1");
    capital.validate();
    operating.validate();

    const double rho_max = prices.empty() ? 0.0 : *std::max_element(prices.begin(), prices.end());
    double c_hi;
    if (operating.a > 0.0) {
        c_hi = std::max(0.0, (rho_max - operating.b) / (2.0 * operating.a));
    } else {
        // supply unbounded by operating cost alone; bound via capital marginal
        c_hi = 1.0;
        while (reduced_profit_slope(c_hi, prices, probs, capital, operating) > 0.0 && c_hi < 1e12)
            c_hi *= 2.0;
    }

    LocationSolve out;
    if (c_hi <= 0.0 || reduced_profit_slope(0.0, prices, probs, capital, operating) <= 0.0) {
        out.capacity = 0.0;
    } else if (reduced_profit_slope(c_hi, prices, probs, capital, operating) >= 0.0) {
        out.capacity = c_hi;
    } else {
        double lo = 0.0, hi = c_hi;
        while (hi - lo > 1e-10) {
            const double mid = 0.5 * (lo + hi);
            if (reduced_profit_slope(mid, prices, probs, capital, operating) > 0.0)
                lo = mid;
            else
                hi = mid;
        }
        out.capacity = 0.5 * (lo + hi);
    }

    out.supply.resize(prices.size());
    out.profit = -capital.value(out.capacity);
    for (std::size_t i = 0; i < prices.size(); ++i) {
        out.supply[i] = optimal_supply(prices[i], operating, out.capacity);
        out.profit += probs[i] * (prices[i] * out.supply[i] - operating.value(out.supply[i]));
    }
    return out;
}

LocationSolve solve_location(const std::vector<double>& prices, const std::vector<double>& probs,
                             const LocationCost& cost) {
    return solve_location(prices, probs, PiecewiseQuadraticCost::from_quadratic(cost.capital),
                          cost.operating);
}

InvestorSolution solve_investor(const std::map<NodeId, std::vector<double>>& prices,
                                const std::vector<double>& probs,
                                const std::map<NodeId, LocationCost>& costs) {
    InvestorSolution sol;
    for (const auto& [k, rho] : prices) {
        auto it = costs.find(k);
        if (it == costs.end())
            throw DomainError("solve_investor: no cost data for location " + std::to_string(k));
        const LocationSolve ls = solve_location(rho, probs, it->second);
        sol.capacity[k] = ls.capacity;
        sol.supply[k] = ls.supply;
        sol.profit += ls.profit;
    }
    return sol;
}

double investor_objective(const InvestorSolution& solution,
                          const std::map<NodeId, std::vector<double>>& prices,
                          const std::vector<double>& probs,
                          const std::map<NodeId, LocationCost>& costs) {
    double obj = 0.0;
    for (const auto& [k, c] : solution.capacity) {
        const auto& cost = costs.at(k);
        const auto& g = solution.supply.at(k);
        const auto& rho = prices.at(k);
        obj -= cost.capital.value(c);
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (g[i] > c + 1e-9)
                throw DomainError("investor_objective: supply exceeds capacity at location " +
                                  std::to_string(k));
            obj += probs[i] * (rho[i] * g[i] - cost.operating.value(g[i]));
        }
    }
    return obj;
}

PiecewiseQuadraticCost aggregate_profiles(const std::vector<InvestorProfile>& profiles) {
    if (profiles.empty()) throw DomainError("aggregate_profiles: empty profile list");
    for (const auto& p : profiles)
        if (!(p.a > 0.0)) throw DomainError("aggregate_profiles: each a_i must be positive");

    // market supply at marginal cost m: S(m) = sum_i max(0, (m - b_i) / (2 a_i))
    std::set<double> bset;
    for (const auto& p : profiles) bset.insert(p.b);
    std::vector<double> bs(bset.begin(), bset.end());

    PiecewiseQuadraticCost agg;
    double prev_c = 0.0;
    double prev_val = 0.0;
    for (std::size_t j = 0; j < bs.size(); ++j) {
        // active set on this piece: b_i <= bs[j]
        double H = 0.0, B = 0.0;
        for (const auto& p : profiles)
            if (p.b <= bs[j]) {
                H += 1.0 / (2.0 * p.a);
                B += p.b / (2.0 * p.a);
            }
        // c(m) = m*H - B on this piece, so marginal(c) = (c + B)/H
        QuadraticCost piece{1.0 / (2.0 * H), (prev_c + B) / H};
        if (j > 0) {
            // value continuity across the previous break
            const double span = prev_c - agg.breaks.back();
            prev_val = agg.offsets.back() + agg.pieces.back().value(span);
        }
        agg.breaks.push_back(prev_c);
        agg.pieces.push_back(piece);
        agg.offsets.push_back(prev_val);
        if (j + 1 < bs.size()) {
            double c_next = 0.0;
            for (const auto& p : profiles) c_next += std::max(0.0, (bs[j + 1] - p.b) / (2.0 * p.a));
            prev_c = c_next;
        }
    }
    agg.validate();
    return agg;
}

std::vector<double> allocate_capacity(double total, const std::vector<InvestorProfile>& profiles) {
    if (total < 0.0) throw DomainError("allocate_capacity: negative total");
    const PiecewiseQuadraticCost agg = aggregate_profiles(profiles);
    const double m = agg.marginal(total);
    std::vector<double> split(profiles.size());
    double sum = 0.0;
    std::size_t largest = 0;
    for (std::size_t i = 0; i < profiles.size(); ++i) {
        split[i] = std::max(0.0, (m - profiles[i].b) / (2.0 * profiles[i].a));
        sum += split[i];
        if (split[i] > split[largest]) largest = i;
    }
    split[largest] += total - sum;  // exact sum, absorbing round-off in the largest share
    return split;
}

}  // namespace isfp
