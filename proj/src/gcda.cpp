#include "isfp/gcda.hpp"

#include <algorithm>
#include <cmath>

namespace isfp {

namespace {

constexpr double kProbFloor = 1e-300;

double xlogx(double x) { return x > 0.0 ? x * std::log(x) : 0.0; }

using PairKey = std::pair<NodeId, NodeId>;

std::map<PairKey, double> service_quantities(const GcdaProblem& p) {
    std::map<PairKey, double> e_of;
    for (const auto& entry : p.trips->entries)
        e_of[{entry.origin, entry.destination}] = entry.service_quantity;
    return e_of;
}

// entropy + price/attractiveness part of the objective, (1/b1)*sum q(ln q - 1 + b2*rho*e - b0)
double demand_term(const std::map<Triple, double>& q, const GcdaProblem& p,
                   const std::map<PairKey, double>& e_of) {
    double sum = 0.0;
    for (const auto& [key, qv] : q) {
        if (qv < 0.0) throw DomainError("gcda_objective: negative q");
        const auto& [r, s, k] = key;
        const double e = e_of.at({r, s});
        sum += xlogx(qv) + qv * (-1.0 + p.params.beta2 * p.price_at(k) * e - p.params.beta0_at(k));
    }
    return sum / p.params.beta1;
}

double demand_term(const std::map<Triple, double>& q, const GcdaProblem& p) {
    return demand_term(q, p, service_quantities(p));
}

double bpr_derivative(const Link& l, double v) {
    if (l.bpr_alpha == 0.0 || l.bpr_beta == 0) return 0.0;
    double p = 1.0;
    for (int i = 0; i < l.bpr_beta - 1; ++i) p *= v / l.capacity_param;
    return l.free_flow_time * l.bpr_alpha * l.bpr_beta * p / l.capacity_param;
}

}  // namespace

std::map<Triple, double> logit_split(const LegTimes& tau, const GcdaProblem& problem) {
    const auto& net = *problem.network;
    const auto& trips = *problem.trips;
    std::map<Triple, double> q;
    for (const auto& e : trips.entries) {
        const auto& ks = trips.facilities_for(e, net);
        std::vector<double> util;
        util.reserve(ks.size());
        double vmax = -std::numeric_limits<double>::infinity();
        for (NodeId k : ks) {
            const double t = tau.at(e.origin, e.destination, k);
            const double u = problem.params.beta0_at(k) - problem.params.beta1 * t -
                             problem.params.beta2 * problem.price_at(k) * e.service_quantity;
            util.push_back(u);
            vmax = std::max(vmax, u);
        }
        if (!std::isfinite(vmax)) {
            if (e.demand * problem.demand_scale > 0.0)
                throw ValidationError("logit_split: all utilities are -inf for a pair with demand");
            vmax = 0.0;
        }
        double denom = 0.0;
        for (double& u : util) {
            u = std::exp(u - vmax);
            denom += u;
        }
        const double total = problem.demand_scale * e.demand;
        for (std::size_t i = 0; i < ks.size(); ++i) {
            double share = std::max(util[i] / denom, kProbFloor);
            q[{e.origin, e.destination, ks[i]}] = total * share;
        }
        // renormalize so the pair total is exact
        double got = 0.0;
        for (NodeId k : ks) got += q[{e.origin, e.destination, k}];
        if (got > 0.0)
            for (NodeId k : ks) q[{e.origin, e.destination, k}] *= total / got;
    }
    return q;
}

std::vector<double> all_or_nothing(const Network& net, const TreeSet& trees,
                                   const TripTable& trips,
                                   const std::map<Triple, double>& q,
                                   std::map<Triple, std::vector<double>>* leg_flows) {
    std::vector<double> y(net.num_links(), 0.0);
    auto walk = [&](const ShortestPathTree& tree, NodeId to, double flow,
                    std::vector<double>* extra) {
        int idx = net.index_of(to);
        const int src = net.index_of(tree.source);
        if (!tree.reached[idx])
            throw ValidationError("all_or_nothing: node " + std::to_string(to) +
                                  " unreachable from " + std::to_string(tree.source));
        while (idx != src) {
            const int a = tree.pred_link[idx];
            y[a] += flow;
            if (extra) (*extra)[a] += flow;
            idx = net.index_of(net.links[a].tail);
        }
    };
    for (const auto& e : trips.entries) {
        const auto& rt = trees.from_origin.at(e.origin);
        for (NodeId k : trips.facilities_for(e, net)) {
            const auto it = q.find({e.origin, e.destination, k});
            if (it == q.end()) continue;
            std::vector<double>* extra = nullptr;
            if (leg_flows) {
                auto& v = (*leg_flows)[{e.origin, e.destination, k}];
                v.assign(net.num_links(), 0.0);
                extra = &v;
            }
            walk(rt, k, it->second, extra);
            walk(trees.from_facility.at(k), e.destination, it->second, extra);
        }
    }
    return y;
}

double gcda_objective(const std::vector<double>& v, const std::map<Triple, double>& q,
                      const GcdaProblem& problem) {
    const auto& net = *problem.network;
    double obj = 0.0;
    for (std::size_t a = 0; a < net.num_links(); ++a)
        obj += link_time_integral(net.links[a], v[a]);
    return obj + demand_term(q, problem);
}

double line_search(const Network& net, const std::vector<double>& v,
                   const std::map<Triple, double>& q, const std::vector<double>& y,
                   const std::map<Triple, double>& q_aux, const GcdaProblem& problem) {
    const auto e_of = service_quantities(problem);
    // directional derivative of the objective at v + a*(y-v), q + a*(q_aux-q)
    auto deriv = [&](double alpha) {
        double d = 0.0;
        for (std::size_t a = 0; a < net.num_links(); ++a) {
            const double dv = y[a] - v[a];
            if (dv != 0.0) d += link_time(net.links[a], v[a] + alpha * dv) * dv;
        }
        for (const auto& [key, q0] : q) {
            const auto& [r, s, k] = key;
            const double dq = q_aux.at(key) - q0;
            if (dq == 0.0) continue;
            const double qa = std::max(q0 + alpha * dq, kProbFloor);
            const double c = problem.params.beta2 * problem.price_at(k) * e_of.at({r, s}) -
                             problem.params.beta0_at(k);
            d += (std::log(qa) + c) * dq / problem.params.beta1;
        }
        return d;
    };

    double lo = 0.0, hi = 1.0;
    double dlo = deriv(0.0);
    if (dlo >= 0.0) return 0.0;
    double dhi = deriv(1.0);
    if (dhi <= 0.0) return 1.0;
    while (hi - lo > 1e-12) {
        const double mid = 0.5 * (lo + hi);
        const double dm = deriv(mid);
        if (std::abs(dm) <= 1e-10) return mid;
        if (dm < 0.0)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

GcdaSolution solve_gcda(const GcdaProblem& problem, const GcdaOptions& opts) {
    problem.params.validate();
    const auto& net = *problem.network;
    const auto& trips = *problem.trips;
    for (const auto& [k, rho] : problem.prices)
        if (rho < 0.0) throw DomainError("solve_gcda: negative price");
    if (!(problem.demand_scale > 0.0)) throw DomainError("solve_gcda: demand_scale must be positive");

    GcdaSolution sol;

    bool warm = false;
    if (opts.warm_start && !opts.warm_start->q.empty() &&
        opts.warm_start->v.size() == net.num_links()) {
        // accept only if per-pair totals still match theta*d
        warm = true;
        for (const auto& e : trips.entries) {
            double tot = 0.0;
            for (NodeId k : trips.facilities_for(e, net)) {
                auto it = opts.warm_start->q.find({e.origin, e.destination, k});
                if (it == opts.warm_start->q.end()) { warm = false; break; }
                tot += it->second;
            }
            const double want = problem.demand_scale * e.demand;
            if (!warm || std::abs(tot - want) > 1e-9 * std::max(1.0, want)) { warm = false; break; }
        }
        if (warm) {
            sol.q = opts.warm_start->q;
            sol.v = opts.warm_start->v;
        }
    }
    if (!warm) {
        const TimeField t0 = free_flow_times(net);
        const TreeSet trees0 = build_trees(net, t0, trips, opts.num_threads);
        const LegTimes tau0 = leg_times_from_trees(net, trees0, trips);
        sol.q = logit_split(tau0, problem);
        sol.v = all_or_nothing(net, trees0, trips, sol.q);
    }

    double best_lb = -std::numeric_limits<double>::infinity();
    const auto e_of = service_quantities(problem);

    // conjugate-direction acceleration state: the previous combined target point
    bool have_bar = false;
    std::vector<double> v_bar;
    std::map<Triple, double> q_bar;

    TreeSet trees;
    for (int it = 0; it < opts.max_iter; ++it) {
        const TimeField times = evaluate_times(net, sol.v);
        trees = build_trees(net, times, trips, opts.num_threads);
        const LegTimes tau = leg_times_from_trees(net, trees, trips);
        const auto q_aux = logit_split(tau, problem);
        const auto y = all_or_nothing(net, trees, trips, q_aux);

        const double z = gcda_objective(sol.v, sol.q, problem);
        if (opts.iterate_hook) opts.iterate_hook(it, z);
        // linearization lower bound: z + t(v)'(y - v) + G(q_aux) - G(q)
        double lin = 0.0;
        for (std::size_t a = 0; a < net.num_links(); ++a)
            lin += times.link_times[a] * (y[a] - sol.v[a]);
        lin += demand_term(q_aux, problem, e_of) - demand_term(sol.q, problem, e_of);
        best_lb = std::max(best_lb, z + lin);

        sol.objective = z;
        sol.lower_bound = best_lb;
        sol.iterations = it + 1;
        sol.rel_gap = (z - best_lb) / std::max(1e-12, std::abs(best_lb));
        if (sol.rel_gap <= opts.tol) {
            sol.converged = true;
            for (const auto& [key, t] : tau.tau) sol.tau[key] = t;
            return sol;
        }

        // blend the fresh linearization target with the previous one so the
        // step direction is Hessian-conjugate to the last step (tames the
        // sublinear tail of pure partial linearization)
        std::vector<double> y_c = y;
        std::map<Triple, double> q_c = q_aux;
        if (have_bar) {
            double n_dot = 0.0, b_dot = 0.0;
            for (std::size_t a = 0; a < net.num_links(); ++a) {
                const double h = bpr_derivative(net.links[a], sol.v[a]);
                const double db = v_bar[a] - sol.v[a];
                n_dot += h * db * (y[a] - sol.v[a]);
                b_dot += h * db * db;
            }
            for (const auto& [key, q0] : sol.q) {
                const double h = 1.0 / (problem.params.beta1 * std::max(q0, 1e-12));
                const double db = q_bar.at(key) - q0;
                n_dot += h * db * (q_aux.at(key) - q0);
                b_dot += h * db * db;
            }
            double beta = 0.0;
            const double denom = n_dot - b_dot;
            if (std::abs(denom) > 1e-300) beta = n_dot / denom;
            if (!std::isfinite(beta)) beta = 0.0;
            beta = std::clamp(beta, 0.0, 0.999);
            if (beta > 0.0) {
                for (std::size_t a = 0; a < net.num_links(); ++a)
                    y_c[a] = beta * v_bar[a] + (1.0 - beta) * y[a];
                for (auto& [key, qc] : q_c) qc = beta * q_bar.at(key) + (1.0 - beta) * qc;
            }
        }

        double alpha = line_search(net, sol.v, sol.q, y_c, q_c, problem);
        if (alpha == 0.0 && have_bar) {
            // conjugate blend was not a descent direction; fall back to the
            // plain linearization target
            y_c = y;
            q_c = q_aux;
            alpha = line_search(net, sol.v, sol.q, y_c, q_c, problem);
        }
        for (std::size_t a = 0; a < net.num_links(); ++a)
            sol.v[a] += alpha * (y_c[a] - sol.v[a]);
        for (auto& [key, qv] : sol.q) qv += alpha * (q_c.at(key) - qv);
        v_bar = std::move(y_c);
        q_bar = std::move(q_c);
        have_bar = true;
    }
    // max_iter reached: report the best iterate, flag unconverged
    const TimeField times = evaluate_times(net, sol.v);
    const LegTimes tau = leg_times(net, times, trips, opts.num_threads);
    for (const auto& [key, t] : tau.tau) sol.tau[key] = t;
    sol.objective = gcda_objective(sol.v, sol.q, problem);
    sol.lower_bound = best_lb;
    sol.converged = false;
    return sol;
}

WardropLogitReport verify_wardrop_logit(const GcdaProblem& problem, const GcdaSolution& solution,
                                        double tol) {
    const auto& net = *problem.network;
    const auto& trips = *problem.trips;
    WardropLogitReport rep;

    const TimeField times = evaluate_times(net, solution.v);
    const LegTimes tau = leg_times(net, times, trips);

    double qtau = 0.0;
    for (const auto& e : trips.entries) {
        const auto& ks = trips.facilities_for(e, net);
        // (a) stored leg times vs recomputed shortest leg times
        double total = 0.0;
        for (NodeId k : ks) {
            const Triple key{e.origin, e.destination, k};
            const double t_re = tau.at(e.origin, e.destination, k);
            auto st = solution.tau.find(key);
            if (st != solution.tau.end()) {
                const double res = std::abs(st->second - t_re) / std::max(1.0, std::abs(t_re));
                rep.max_tau_residual = std::max(rep.max_tau_residual, res);
            }
            const double qv = solution.q.count(key) ? solution.q.at(key) : 0.0;
            if (qv < 0.0) throw DomainError("verify_wardrop_logit: negative flow");
            total += qv;
            qtau += qv * t_re;
        }
        // (b) logit shares vs softmax of utilities at recomputed times
        if (total > 0.0) {
            double vmax = -std::numeric_limits<double>::infinity();
            std::vector<double> util(ks.size());
            for (std::size_t i = 0; i < ks.size(); ++i) {
                util[i] = problem.params.beta0_at(ks[i]) -
                          problem.params.beta1 * tau.at(e.origin, e.destination, ks[i]) -
                          problem.params.beta2 * problem.price_at(ks[i]) * e.service_quantity;
                vmax = std::max(vmax, util[i]);
            }
            double denom = 0.0;
            for (double& u : util) {
                u = std::exp(u - vmax);
                denom += u;
            }
            for (std::size_t i = 0; i < ks.size(); ++i) {
                const Triple key{e.origin, e.destination, ks[i]};
                const double qv = solution.q.count(key) ? solution.q.at(key) : 0.0;
                const double res = std::abs(qv / total - util[i] / denom);
                rep.max_logit_residual = std::max(rep.max_logit_residual, res);
            }
        }
    }
    // (c) Wardrop gap: total experienced time vs total shortest-leg time
    double tv = 0.0;
    for (std::size_t a = 0; a < net.num_links(); ++a) tv += times.link_times[a] * solution.v[a];
    rep.wardrop_gap = (tv - qtau) / std::max(1.0, qtau);

    rep.pass = rep.max_tau_residual <= tol && rep.max_logit_residual <= tol &&
               std::abs(rep.wardrop_gap) <= tol;
    return rep;
}

}  // namespace isfp
