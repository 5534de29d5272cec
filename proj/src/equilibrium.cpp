#include "isfp/equilibrium.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include <Eigen/Dense>

namespace isfp {

double EquilibriumProblem::total_service_demand(std::size_t xi) const {
    double total = 0.0;
    for (const auto& e : trips->entries) total += e.service_quantity * e.demand;
    return scenarios.scenarios[xi].theta * total;
}

void EquilibriumProblem::validate() const {
    if (!network || !trips) throw DomainError("equilibrium problem: missing network or trips");
    params.validate();
    scenarios.validate();
    trips->validate(*network);
    for (NodeId k : network->candidates)
        if (!costs.count(k))
            throw DomainError("equilibrium problem: no cost data for location " + std::to_string(k));
}

namespace {

PiecewiseQuadraticCost capital_of(const EquilibriumProblem& p, NodeId k) {
    auto it = p.capital_override.find(k);
    if (it != p.capital_override.end()) return it->second;
    return PiecewiseQuadraticCost::from_quadratic(p.costs.at(k).capital);
}

// Best investor response at given prices; honors fixed first-stage capacities.
InvestorSolution investor_response(const EquilibriumProblem& p, const PriceField& prices) {
    InvestorSolution sol;
    const auto probs = p.scenarios.probs();
    for (NodeId k : p.network->candidates) {
        const auto& rho = prices.rho.at(k);
        const auto& op = p.costs.at(k).operating;
        const PiecewiseQuadraticCost cap = capital_of(p, k);
        if (p.fixed_capacity) {
            const double c = p.fixed_capacity->at(k);
            sol.capacity[k] = c;
            auto& g = sol.supply[k];
            g.resize(rho.size());
            double profit = -cap.value(c);
            for (std::size_t i = 0; i < rho.size(); ++i) {
                g[i] = optimal_supply(rho[i], op, c);
                profit += probs[i] * (rho[i] * g[i] - op.value(g[i]));
            }
            sol.profit += profit;
        } else {
            const LocationSolve ls = solve_location(rho, probs, cap, op);
            sol.capacity[k] = ls.capacity;
            sol.supply[k] = ls.supply;
            sol.profit += ls.profit;
        }
    }
    return sol;
}

GcdaProblem scenario_problem(const EquilibriumProblem& p, const PriceField& prices,
                             std::size_t xi) {
    GcdaProblem gp;
    gp.network = p.network;
    gp.trips = p.trips;
    gp.params = p.params;
    gp.demand_scale = p.scenarios.scenarios[xi].theta;
    for (NodeId k : p.network->candidates) gp.prices[k] = prices.rho.at(k)[xi];
    return gp;
}

void solve_scenarios(const EquilibriumProblem& p, const PriceField& prices, double inner_tol,
                     int num_threads, std::vector<GcdaSolution>& out) {
    const std::size_t n = p.scenarios.size();
    std::vector<GcdaSolution> next(n);
    auto run = [&](std::size_t b, std::size_t e) {
        for (std::size_t xi = b; xi < e; ++xi) {
            GcdaOptions go;
            go.tol = inner_tol;
            go.warm_start = (out.size() == n) ? &out[xi] : nullptr;
            next[xi] = solve_gcda(scenario_problem(p, prices, xi), go);
        }
    };
    if (num_threads <= 1 || n < 2) {
        run(0, n);
    } else {
        const std::size_t nt = std::min<std::size_t>(num_threads, n);
        const std::size_t chunk = (n + nt - 1) / nt;
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < nt; ++t) {
            const std::size_t b = t * chunk;
            const std::size_t e = std::min(n, b + chunk);
            if (b < e) pool.emplace_back(run, b, e);
        }
        for (auto& th : pool) th.join();
    }
    out = std::move(next);
}

// service demand sum_rs e*q per location, one scenario
std::map<NodeId, double> service_demand(const EquilibriumProblem& p, const GcdaSolution& g) {
    std::map<NodeId, double> dem;
    for (NodeId k : p.network->candidates) dem[k] = 0.0;
    for (const auto& e : p.trips->entries)
        for (NodeId k : p.trips->facilities_for(e, *p.network)) {
            auto it = g.q.find({e.origin, e.destination, k});
            if (it != g.q.end()) dem[k] += e.service_quantity * it->second;
        }
    return dem;
}

// Lagrangian dual value at the prices implied by the already-solved subproblems.
// Uses the GCDA linearization lower bounds so weak duality survives inexact inner solves.
double dual_value(const EquilibriumProblem& p, const InvestorSolution& inv,
                  const std::vector<GcdaSolution>& gcda) {
    const auto probs = p.scenarios.probs();
    double d = -inv.profit;
    const double w = p.params.beta1 / p.params.beta2;
    for (std::size_t xi = 0; xi < gcda.size(); ++xi) {
        const double zlb = std::isfinite(gcda[xi].lower_bound) ? gcda[xi].lower_bound
                                                               : gcda[xi].objective;
        d += probs[xi] * w * zlb;
    }
    return d;
}

// Market-feasible restoration: g := sum e*q, c := max_xi g (or the fixed c).
// Returns false when the fixed capacity cannot carry the demand.
bool restore_primal(const EquilibriumProblem& p, const std::vector<GcdaSolution>& gcda,
                    InvestorSolution& restored) {
    restored.capacity.clear();
    restored.supply.clear();
    const std::size_t n = gcda.size();
    for (NodeId k : p.network->candidates) restored.supply[k].assign(n, 0.0);
    for (std::size_t xi = 0; xi < n; ++xi) {
        const auto dem = service_demand(p, gcda[xi]);
        for (const auto& [k, d] : dem) restored.supply[k][xi] = d;
    }
    for (NodeId k : p.network->candidates) {
        double cmax = 0.0;
        for (double g : restored.supply[k]) cmax = std::max(cmax, g);
        if (p.fixed_capacity) {
            const double c = p.fixed_capacity->at(k);
            if (cmax > c * (1.0 + 1e-9) + 1e-9) return false;
            restored.capacity[k] = c;
        } else {
            restored.capacity[k] = cmax;
        }
    }
    return true;
}

double primal_value(const EquilibriumProblem& p, const InvestorSolution& inv,
                    const std::vector<GcdaSolution>& gcda) {
    const auto probs = p.scenarios.probs();
    const double w = p.params.beta1 / p.params.beta2;
    double val = 0.0;
    for (const auto& [k, c] : inv.capacity) {
        val += capital_of(p, k).value(c);
        for (std::size_t xi = 0; xi < gcda.size(); ++xi)
            val += probs[xi] * p.costs.at(k).operating.value(inv.supply.at(k)[xi]);
    }
    for (std::size_t xi = 0; xi < gcda.size(); ++xi) {
        double t_int = 0.0;
        for (std::size_t a = 0; a < p.network->num_links(); ++a)
            t_int += link_time_integral(p.network->links[a], gcda[xi].v[a]);
        double ent = 0.0;
        for (const auto& [key, qv] : gcda[xi].q) {
            const NodeId k = std::get<2>(key);
            ent += (qv > 0.0 ? qv * std::log(qv) : 0.0) - qv - qv * p.params.beta0_at(k);
        }
        val += probs[xi] * (w * t_int + ent / p.params.beta2);
    }
    return val;
}

// Newton direction on the market-clearing map. d(excess)/d(rho) couples
// locations within a scenario through logit demand substitution
// (beta2 * e^2 * q_k * (delta_kj - share_j)) and scenarios within a location
// through supply response: 1/(2a) while the second stage is interior, and a
// capacity coupling dc/drho_xi = pi_xi / (K''(c) + 2a * P_bind) across the
// scenarios where capacity binds. The system is small (locations x scenarios),
// so it is assembled dense and solved directly.
struct NewtonSystem {
    Eigen::MatrixXd jac;
    Eigen::VectorXd rhs;
    std::vector<NodeId> order;  // candidate order; index = order_pos * n + xi
    std::size_t n = 0;
    double diag_scale = 1.0;  // mean diagonal, sets the unit for the LM ridge
};

// Congestion-aware demand sensitivities: re-solve one scenario's GCDA with one
// location's price nudged and difference the service demands. Exact up to the
// inner tolerance (includes the travel-time feedback the analytic logit block
// ignores), at the cost of one warm-started subproblem solve per (location,
// scenario) pair.
Eigen::MatrixXd fd_demand_block(const EquilibriumProblem& p, const PriceField& prices,
                                const std::vector<GcdaSolution>& gcda, double tol,
                                int num_threads) {
    const std::size_t n = gcda.size();
    const auto& cands = p.network->candidates;
    const std::size_t nk = cands.size();
    Eigen::MatrixXd dem = Eigen::MatrixXd::Zero(nk * n, nk * n);
    // The block only steers the price update, so ~1% relative accuracy is
    // plenty — but the differencing itself must sit well above the subproblem
    // noise, which scales like sqrt(tol). A generous step and a fixed tight
    // tolerance on both sides of the difference keep the entries clean even
    // when the surrounding outer iteration runs loose.
    constexpr double h = 4.0;
    tol = std::clamp(tol, 1e-8, 1e-6);

    auto parallel = [&](std::size_t total, auto&& body) {
        if (num_threads <= 1 || total < 2) {
            for (std::size_t i = 0; i < total; ++i) body(i);
            return;
        }
        const std::size_t nt = std::min<std::size_t>(num_threads, total);
        const std::size_t chunk = (total + nt - 1) / nt;
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < nt; ++t) {
            const std::size_t b = t * chunk;
            const std::size_t e = std::min(total, b + chunk);
            if (b < e)
                pool.emplace_back([&body, b, e]() {
                    for (std::size_t i = b; i < e; ++i) body(i);
                });
        }
        for (auto& th : pool) th.join();
    };

    // unperturbed baselines re-solved at the differencing tolerance
    std::vector<GcdaSolution> base(n);
    parallel(n, [&](std::size_t xi) {
        GcdaOptions go;
        go.tol = tol;
        go.warm_start = &gcda[xi];
        base[xi] = solve_gcda(scenario_problem(p, prices, xi), go);
    });

    parallel(n * nk, [&](std::size_t idx) {
        const std::size_t xi = idx / nk;
        const std::size_t ji = idx % nk;
        const auto d0 = service_demand(p, base[xi]);
        GcdaProblem gp = scenario_problem(p, prices, xi);
        gp.prices[cands[ji]] += h;
        GcdaOptions go;
        go.tol = tol;
        go.warm_start = &base[xi];
        const GcdaSolution pert = solve_gcda(gp, go);
        const auto d1 = service_demand(p, pert);
        for (std::size_t ki = 0; ki < nk; ++ki)
            dem(ki * n + xi, ji * n + xi) = -(d1.at(cands[ki]) - d0.at(cands[ki])) / h;
    });
    return dem;
}

NewtonSystem newton_system(const EquilibriumProblem& p, const InvestorSolution& inv,
                           const std::vector<GcdaSolution>& gcda,
                           const std::map<NodeId, std::vector<double>>& excess,
                           const Eigen::MatrixXd* demand_override = nullptr) {
    const std::size_t n = gcda.size();
    const auto probs = p.scenarios.probs();
    const auto& cands = p.network->candidates;
    const std::size_t nk = cands.size();
    std::map<NodeId, std::size_t> kidx;
    for (std::size_t i = 0; i < nk; ++i) kidx[cands[i]] = i;
    const auto at = [n](std::size_t ki, std::size_t xi) { return ki * n + xi; };

    Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(nk * n, nk * n);
    Eigen::VectorXd rhs(nk * n);

    if (demand_override) {
        jac = *demand_override;
    } else {
        // demand block: within each scenario, logit substitution across
        // locations (travel times held fixed)
        for (std::size_t xi = 0; xi < n; ++xi) {
            for (const auto& e : p.trips->entries) {
                const double total = p.scenarios.scenarios[xi].theta * e.demand;
                if (!(total > 0.0)) continue;
                const auto facs = p.trips->facilities_for(e, *p.network);
                const double e2 = e.service_quantity * e.service_quantity;
                for (NodeId k : facs) {
                    auto it = gcda[xi].q.find({e.origin, e.destination, k});
                    if (it == gcda[xi].q.end()) continue;
                    const double qk = it->second;
                    for (NodeId j : facs) {
                        auto jt = gcda[xi].q.find({e.origin, e.destination, j});
                        const double sj = jt == gcda[xi].q.end() ? 0.0 : jt->second / total;
                        jac(at(kidx[k], xi), at(kidx[j], xi)) +=
                            p.params.beta2 * e2 * qk * ((k == j ? 1.0 : 0.0) - sj);
                    }
                }
            }
        }
    }

    // supply block: within each location, interior response and capacity coupling
    for (std::size_t ki = 0; ki < nk; ++ki) {
        const NodeId k = cands[ki];
        const double op_a = p.costs.at(k).operating.a;
        const double c = inv.capacity.at(k);
        const auto& g = inv.supply.at(k);
        const auto& ex = excess.at(k);

        std::vector<bool> binding(n, false);
        double p_bind = 0.0;
        for (std::size_t xi = 0; xi < n; ++xi)
            if (c > 1e-12 && g[xi] >= c * (1.0 - 1e-9)) {
                binding[xi] = true;
                p_bind += probs[xi];
            }
        const PiecewiseQuadraticCost cap = capital_of(p, k);
        std::size_t piece = 0;
        while (piece + 1 < cap.breaks.size() && c >= cap.breaks[piece + 1]) ++piece;
        const double denom = std::max(2.0 * cap.pieces[piece].a + 2.0 * op_a * p_bind, 1e-12);

        for (std::size_t xi = 0; xi < n; ++xi) {
            rhs(at(ki, xi)) = ex[xi];
            if (binding[xi]) {
                for (std::size_t xj = 0; xj < n; ++xj)
                    if (binding[xj]) jac(at(ki, xi), at(ki, xj)) += probs[xj] / denom;
            } else if (g[xi] > 1e-12) {
                jac(at(ki, xi), at(ki, xi)) += 1.0 / (2.0 * op_a);
            }
        }
    }

    NewtonSystem sys;
    sys.jac = std::move(jac);
    sys.rhs = std::move(rhs);
    sys.order = cands;
    sys.n = n;
    sys.diag_scale = std::max(sys.jac.diagonal().mean(), 1e-12);
    return sys;
}

std::map<NodeId, std::vector<double>> newton_direction(const NewtonSystem& sys, double mu) {
    Eigen::MatrixXd reg = sys.jac;
    reg.diagonal().array() += mu;
    Eigen::VectorXd delta = reg.partialPivLu().solve(sys.rhs);
    if (!delta.allFinite()) {
        for (Eigen::Index i = 0; i < sys.rhs.size(); ++i)
            delta(i) = sys.rhs(i) / std::max(reg(i, i), 1e-12);
    }
    std::map<NodeId, std::vector<double>> dir;
    for (std::size_t ki = 0; ki < sys.order.size(); ++ki) {
        auto& d = dir[sys.order[ki]];
        d.assign(sys.n, 0.0);
        for (std::size_t xi = 0; xi < sys.n; ++xi) d[xi] = delta(ki * sys.n + xi);
    }
    return dir;
}

}  // namespace

std::map<NodeId, std::vector<double>> excess_supply(const InvestorSolution& investor,
                                                    const std::vector<GcdaSolution>& gcda,
                                                    const EquilibriumProblem& problem) {
    std::map<NodeId, std::vector<double>> ex;
    const std::size_t n = gcda.size();
    if (n != problem.scenarios.size())
        throw DomainError("excess_supply: scenario count mismatch");
    for (const auto& [k, g] : investor.supply) {
        if (g.size() != n) throw DomainError("excess_supply: supply/scenario index mismatch");
        ex[k].assign(n, 0.0);
        for (std::size_t xi = 0; xi < n; ++xi) ex[k][xi] = g[xi];
    }
    for (std::size_t xi = 0; xi < n; ++xi) {
        const auto dem = service_demand(problem, gcda[xi]);
        for (const auto& [k, d] : dem) {
            auto it = ex.find(k);
            if (it == ex.end()) throw DomainError("excess_supply: location index mismatch");
            it->second[xi] -= d;
        }
    }
    return ex;
}

void dual_step(PriceField& prices, const std::map<NodeId, std::vector<double>>& excess,
               double eta) {
    if (!(eta > 0.0)) throw DomainError("dual_step: step must be positive");
    for (auto& [k, rho] : prices.rho) {
        const auto& ex = excess.at(k);
        for (std::size_t xi = 0; xi < rho.size(); ++xi)
            rho[xi] = std::max(0.0, rho[xi] - eta * ex[xi]);
    }
}

std::map<NodeId, std::vector<double>> recover_prices(
    const std::map<NodeId, std::vector<double>>& lambda, const std::vector<double>& probs) {
    for (double p : probs)
        if (!(p > 0.0)) throw DomainError("recover_prices: zero scenario probability");
    std::map<NodeId, std::vector<double>> rho;
    for (const auto& [k, lam] : lambda) {
        auto& r = rho[k];
        r.resize(lam.size());
        for (std::size_t xi = 0; xi < lam.size(); ++xi) r[xi] = lam[xi] / probs[xi];
    }
    return rho;
}

double combined_objective(const EquilibriumSolution& solution, const EquilibriumProblem& problem) {
    if (!(problem.params.beta2 > 0.0))
        throw DomainError("combined_objective: beta2 must be positive");
    const auto probs = problem.scenarios.probs();
    const std::size_t n = problem.scenarios.size();

    // feasibility audit at 1e-6 (relative to natural scales)
    for (const auto& [k, c] : solution.investor.capacity)
        for (double g : solution.investor.supply.at(k))
            if (g > c + 1e-6 * std::max(1.0, c))
                throw DomainError("combined_objective: capacity constraint violated at location " +
                                  std::to_string(k));
    for (std::size_t xi = 0; xi < n; ++xi) {
        for (const auto& e : problem.trips->entries) {
            double tot = 0.0;
            for (NodeId k : problem.trips->facilities_for(e, *problem.network))
                tot += solution.gcda[xi].q.at({e.origin, e.destination, k});
            const double want = problem.scenarios.scenarios[xi].theta * e.demand;
            if (std::abs(tot - want) > 1e-6 * std::max(1.0, want))
                throw DomainError("combined_objective: demand conservation violated");
        }
        const auto dem = service_demand(problem, solution.gcda[xi]);
        for (const auto& [k, d] : dem)
            if (std::abs(solution.investor.supply.at(k)[xi] - d) >
                1e-6 * std::max(1.0, problem.total_service_demand(xi)))
                throw DomainError("combined_objective: market clearing violated at location " +
                                  std::to_string(k));
    }
    (void)probs;
    return primal_value(problem, solution.investor, solution.gcda);
}

double duality_gap(const EquilibriumSolution& solution, const PriceField& prices,
                   const EquilibriumProblem& problem) {
    if (!(problem.params.beta2 > 0.0))
        throw DomainError("duality_gap: certificate requires beta2 > 0");
    // dual value: re-solve both subproblems at the given prices
    const InvestorSolution inv = investor_response(problem, prices);
    std::vector<GcdaSolution> gcda;
    solve_scenarios(problem, prices, 1e-9, 1, gcda);
    const double d = dual_value(problem, inv, gcda);

    InvestorSolution restored;
    if (!restore_primal(problem, solution.gcda, restored))
        return std::numeric_limits<double>::infinity();
    const double p = primal_value(problem, restored, solution.gcda);
    return (p - d) / std::max(1.0, std::abs(d));
}

EquilibriumSolution solve_equilibrium(const EquilibriumProblem& problem,
                                      const EquilibriumOptions& opts) {
    problem.validate();
    const std::size_t n = problem.scenarios.size();
    const bool has_certificate = problem.params.beta2 > 0.0;

    EquilibriumSolution sol;
    sol.prices.probs = problem.scenarios.probs();
    for (NodeId k : problem.network->candidates)
        sol.prices.rho[k].assign(n, opts.initial_price);

    // typical price magnitude, used only to cap a single scaled step
    double price_scale = 0.0;
    for (NodeId k : problem.network->candidates)
        price_scale += problem.costs.at(k).operating.b + problem.costs.at(k).capital.b;
    price_scale /= std::max<std::size_t>(1, problem.network->candidates.size());
    price_scale = std::max(price_scale, 1.0);

    // Levenberg-Marquardt ridge, in units of the problem's curvature scale;
    // inflated on rejected steps, deflated on accepted ones
    double mu = (opts.initial_step > 0.0) ? 1e-2 / opts.initial_step : 1e-2;
    // curvature unit for the ridge: the Jacobian diagonal can vanish outright
    // (prices below marginal cost, no supply response yet), so floor it with
    // the typical interior supply slope 1/(2a)
    double curv_scale = 0.0;
    for (NodeId k : problem.network->candidates)
        curv_scale += 0.5 / std::max(problem.costs.at(k).operating.a, 1e-12);
    curv_scale /= std::max<std::size_t>(1, problem.network->candidates.size());
    curv_scale = std::max(curv_scale, 1e-6);
    // inner (GCDA) tolerance ceiling; tightened only when no step can be
    // accepted, since subproblem noise of order sqrt(tol) caps the reachable
    // residual
    double inner_cap = 1e-5;

    struct Eval {
        std::map<NodeId, std::vector<double>> excess;
        double resid = 0.0;  // max market residual, demand-relative
        double norm = 0.0;   // l2 norm of the relative excess, line-search merit
        double dual = 0.0;
    };
    auto evaluate = [&](const PriceField& prices, InvestorSolution& inv,
                        std::vector<GcdaSolution>& gcda, double inner_tol) {
        inv = investor_response(problem, prices);
        solve_scenarios(problem, prices, inner_tol, opts.num_threads, gcda);
        Eval ev;
        ev.excess = excess_supply(inv, gcda, problem);
        for (const auto& [k, ex] : ev.excess) {
            (void)k;
            for (std::size_t xi = 0; xi < n; ++xi) {
                const double r = ex[xi] / std::max(1.0, problem.total_service_demand(xi));
                ev.resid = std::max(ev.resid, std::abs(r));
                ev.norm += r * r;
            }
        }
        ev.norm = std::sqrt(ev.norm);
        if (has_certificate) ev.dual = dual_value(problem, inv, gcda);
        return ev;
    };

    Eval cur = evaluate(sol.prices, sol.investor, sol.gcda, inner_cap);
    double best_resid = std::numeric_limits<double>::infinity();
    double best_dual = -std::numeric_limits<double>::infinity();
    int since_progress = 0;
    constexpr int kStallWindow = 20;
    bool fd_mode = false;
    Eigen::MatrixXd fd_block;
    int fd_age = 0;

    for (int outer = 0; outer < opts.max_outer; ++outer) {
        sol.residuals.iterations = outer + 1;
        sol.residuals.max_market_residual = cur.resid;

        double gap = std::numeric_limits<double>::quiet_NaN();
        if (has_certificate) {
            InvestorSolution restored;
            double p = std::numeric_limits<double>::infinity();
            if (restore_primal(problem, sol.gcda, restored))
                p = primal_value(problem, restored, sol.gcda);
            gap = (p - cur.dual) / std::max(1.0, std::abs(cur.dual));
            if (opts.iterate_hook) opts.iterate_hook(outer, p, cur.dual);
        }
        sol.residuals.duality_gap = gap;
        if (cur.resid <= opts.tol_mc && (!has_certificate || gap <= opts.tol_gap)) {
            sol.residuals.converged = true;
            break;
        }

        // Levenberg-Marquardt step on the market-clearing map. The ridge mu
        // adapts the step per subspace: directions whose curvature exceeds mu
        // get a full Newton step, near-degenerate directions (e.g. scarcity
        // rents with capacity binding in every scenario) get a gradient-like
        // step of length 1/mu, so flat-residual valley stretches are traversed
        // quickly once mu deflates. With a certificate acceptance is an Armijo
        // test on the concave dual, whose exact gradient is the probability-
        // weighted excess; otherwise the merit is the residual norm.
        // Subproblem noise in the excess is of order sqrt(tol), so measuring a
        // residual r takes an inner tolerance of order r^2.
        const double inner_tol = std::max(
            std::min({0.01 * cur.resid, cur.resid * cur.resid, inner_cap}), 1e-12);
        // In fd mode the demand block is refreshed only periodically: it is
        // the expensive part of the system and drifts slowly near the solution
        if (fd_mode && (fd_block.size() == 0 || fd_age >= 8)) {
            fd_block =
                fd_demand_block(problem, sol.prices, sol.gcda, inner_tol, opts.num_threads);
            fd_age = 0;
        }
        NewtonSystem sys = newton_system(problem, sol.investor, sol.gcda, cur.excess,
                                         fd_mode ? &fd_block : nullptr);
        double ridge_unit = std::max(sys.diag_scale, curv_scale);
        const auto probs = problem.scenarios.probs();
        const double mu_entry = mu;
        bool accepted = false;
        for (int attempt = 0; attempt < 15 && !accepted; ++attempt) {
            const auto dir = newton_direction(sys, mu * ridge_unit);
            double m = 0.0;  // predicted dual increase along the step
            PriceField trial = sol.prices;
            for (auto& [k, rho] : trial.rho) {
                const auto& d = dir.at(k);
                const auto& ex = cur.excess.at(k);
                for (std::size_t xi = 0; xi < rho.size(); ++xi) {
                    const double step = std::clamp(d[xi], -price_scale, price_scale);
                    m += probs[xi] * ex[xi] * step;
                    rho[xi] = std::max(0.0, rho[xi] - step);
                }
            }
            InvestorSolution tinv;
            std::vector<GcdaSolution> tgcda = sol.gcda;  // warm start
            Eval tev = evaluate(trial, tinv, tgcda, inner_tol);
            // Dual-based acceptance only while the predicted gain is large
            // enough to discriminate; in the endgame the dual flattens out
            // (the gain shrinks quadratically with the residual) and the
            // residual norm becomes the reliable merit.
            const bool use_dual =
                has_certificate && m > 1e-8 * std::max(1.0, std::abs(cur.dual));
            const bool ok = use_dual ? tev.dual >= cur.dual + 1e-4 * m
                                     : tev.norm <= cur.norm * (1.0 - 0.1 / (1.0 + mu));
            if (ok) {
                sol.prices = std::move(trial);
                sol.investor = std::move(tinv);
                sol.gcda = std::move(tgcda);
                cur = std::move(tev);
                mu = std::max(mu / 3.0, 1e-8);
                accepted = true;
            } else if (!fd_mode && cur.resid < 1e-2) {
                // A rejected step near the solution usually means the analytic
                // demand block overstates the response under congestion; switch
                // to the differenced block right away instead of shrinking the
                // step against a bad direction.
                fd_mode = true;
                fd_block = fd_demand_block(problem, sol.prices, sol.gcda, inner_tol,
                                           opts.num_threads);
                fd_age = 0;
                sys = newton_system(problem, sol.investor, sol.gcda, cur.excess, &fd_block);
                ridge_unit = std::max(sys.diag_scale, curv_scale);
                mu = mu_entry;
            } else {
                mu = std::min(mu * 4.0, 1e8);
            }
        }

        if (std::getenv("ISFP_TRACE")) {
            static const auto t0 = std::chrono::steady_clock::now();
            std::fprintf(stderr,
                         "outer=%d acc=%d mu=%.3g resid=%.3e norm=%.3e dual=%.6f cap=%.1e fd=%d t=%.1f\n",
                         outer, accepted ? 1 : 0, mu, cur.resid, cur.norm, cur.dual, inner_cap,
                         fd_mode ? 1 : 0,
                         std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
        }

        if (fd_mode) ++fd_age;

        // Guard against stagnation at the subproblem noise floor: if neither
        // the residual nor the dual improves materially for a while (noisy
        // dual comparisons can keep accepting steps that go nowhere), or no
        // step is accepted at all, tighten the inner tolerance.
        bool progressed = cur.resid < best_resid * (1.0 - 1e-3);
        if (has_certificate && cur.dual > best_dual + 1e-7 * std::max(1.0, std::abs(best_dual)))
            progressed = true;
        best_resid = std::min(best_resid, cur.resid);
        best_dual = std::max(best_dual, cur.dual);
        if (progressed) since_progress = 0;
        if (!accepted || ++since_progress >= kStallWindow) {
            if (inner_cap <= 1.5e-12) {
                if (!accepted) break;  // no further progress at this precision
            } else {
                inner_cap = std::max(0.1 * inner_cap, 1e-12);
                cur = evaluate(
                    sol.prices, sol.investor, sol.gcda,
                    std::max(std::min({0.01 * cur.resid, cur.resid * cur.resid, inner_cap}),
                             1e-12));
                // the ridge may have inflated chasing noise; let the sharper
                // measurements see a genuine Newton step again
                mu = std::min(mu, 1e-2);
                // the analytic Jacobian holds travel times fixed; once the
                // easy progress is exhausted, switch to finite-differenced
                // demand sensitivities that include the congestion feedback
                if (cur.resid < 1e-2) {
                    fd_mode = true;
                    fd_block.resize(0, 0);  // force a rebuild at the new tolerance
                }
            }
            since_progress = 0;
        }
    }

    if (!sol.residuals.converged) {
        // re-evaluate at the best prices so the reported iterate is consistent
        sol.investor = investor_response(problem, sol.prices);
        solve_scenarios(problem, sol.prices, 1e-10, opts.num_threads, sol.gcda);
        const auto excess = excess_supply(sol.investor, sol.gcda, problem);
        double resid = 0.0;
        for (const auto& [k, ex] : excess) {
            (void)k;
            for (std::size_t xi = 0; xi < n; ++xi)
                resid = std::max(resid, std::abs(ex[xi]) /
                                            std::max(1.0, problem.total_service_demand(xi)));
        }
        sol.residuals.max_market_residual = resid;
        if (has_certificate) {
            const double d = dual_value(problem, sol.investor, sol.gcda);
            InvestorSolution restored;
            double p = std::numeric_limits<double>::infinity();
            if (restore_primal(problem, sol.gcda, restored))
                p = primal_value(problem, restored, sol.gcda);
            sol.residuals.duality_gap = (p - d) / std::max(1.0, std::abs(d));
        }
        sol.residuals.converged =
            resid <= opts.tol_mc &&
            (!has_certificate || sol.residuals.duality_gap <= opts.tol_gap);
    }

    // final verification artifacts
    double wgap = 0.0;
    for (std::size_t xi = 0; xi < n; ++xi) {
        const auto rep = verify_wardrop_logit(scenario_problem(problem, sol.prices, xi),
                                              sol.gcda[xi], 1.0);
        wgap = std::max(wgap, std::abs(rep.wardrop_gap));
    }
    sol.residuals.wardrop_gap = wgap;
    return sol;
}

EquilibriumCheck verify_equilibrium(const EquilibriumSolution& solution,
                                    const EquilibriumProblem& problem, double tol) {
    EquilibriumCheck chk;

    // (a) investor optimality at the solution prices
    const InvestorSolution re = investor_response(problem, solution.prices);
    for (const auto& [k, c] : re.capacity) {
        const double c0 = solution.investor.capacity.at(k);
        chk.investor_residual =
            std::max(chk.investor_residual, std::abs(c - c0) / std::max(1.0, std::abs(c)));
        for (std::size_t xi = 0; xi < re.supply.at(k).size(); ++xi) {
            const double g = re.supply.at(k)[xi];
            const double g0 = solution.investor.supply.at(k)[xi];
            chk.investor_residual =
                std::max(chk.investor_residual, std::abs(g - g0) / std::max(1.0, std::abs(g)));
        }
    }

    // (b) GCDA optimality per scenario
    for (std::size_t xi = 0; xi < problem.scenarios.size(); ++xi) {
        GcdaProblem gp;
        gp.network = problem.network;
        gp.trips = problem.trips;
        gp.params = problem.params;
        gp.demand_scale = problem.scenarios.scenarios[xi].theta;
        for (NodeId k : problem.network->candidates) gp.prices[k] = solution.prices.rho.at(k)[xi];
        const auto rep = verify_wardrop_logit(gp, solution.gcda[xi], tol);
        chk.max_wardrop_logit =
            std::max({chk.max_wardrop_logit, rep.max_tau_residual, rep.max_logit_residual,
                      std::abs(rep.wardrop_gap)});
    }

    // (c) market clearing
    const auto excess = excess_supply(solution.investor, solution.gcda, problem);
    for (const auto& [k, ex] : excess) {
        (void)k;
        for (std::size_t xi = 0; xi < ex.size(); ++xi)
            chk.market_residual =
                std::max(chk.market_residual,
                         std::abs(ex[xi]) / std::max(1.0, problem.total_service_demand(xi)));
    }

    // (d) duality gap certificate
    chk.gap = 0.0;
    if (problem.params.beta2 > 0.0 && !problem.fixed_capacity)
        chk.gap = duality_gap(solution, solution.prices, problem);

    chk.pass = true;
    if (chk.investor_residual > tol) { chk.pass = false; chk.failed_check = "investor-optimality"; }
    else if (chk.max_wardrop_logit > tol) { chk.pass = false; chk.failed_check = "wardrop-logit"; }
    else if (chk.market_residual > tol) { chk.pass = false; chk.failed_check = "market-clearing"; }
    else if (chk.gap > tol) { chk.pass = false; chk.failed_check = "duality-gap"; }
    return chk;
}

}  // namespace isfp
