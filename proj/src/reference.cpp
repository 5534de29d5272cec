#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

#include "isfp/equilibrium.hpp"

// Cross-validation oracle: interior-point Newton on the combined convex program
// after enumerating all simple paths for each r->k and k->s leg. Dense linear
// algebra, small instances only; completely independent of the Evans/dual-ascent
// production path.

namespace isfp {

namespace {

constexpr std::size_t kMaxPathsPerLeg = 200;
constexpr std::size_t kMaxVars = 6000;

double bpr_derivative(const Link& l, double v) {
    if (l.bpr_beta == 0) return 0.0;
    double p = 1.0;
    for (int i = 0; i < l.bpr_beta - 1; ++i) p *= v / l.capacity_param;
    return l.free_flow_time * l.bpr_alpha * l.bpr_beta * p / l.capacity_param;
}

std::vector<std::vector<int>> enumerate_paths(const Network& net, NodeId from, NodeId to) {
    std::vector<std::vector<int>> paths;
    if (from == to) {
        paths.push_back({});
        return paths;
    }
    std::vector<int> stack;
    std::vector<bool> visited(net.num_nodes(), false);
    std::function<void(int)> dfs = [&](int node_idx) {
        if (paths.size() > kMaxPathsPerLeg)
            throw DomainError("reference solver: too many paths, instance too large");
        if (net.nodes[node_idx] == to) {
            paths.push_back(stack);
            return;
        }
        visited[node_idx] = true;
        for (int li : net.out_links[node_idx]) {
            const int next = net.index_of(net.links[li].head);
            if (visited[next]) continue;
            stack.push_back(li);
            dfs(next);
            stack.pop_back();
        }
        visited[node_idx] = false;
    };
    dfs(net.index_of(from));
    return paths;
}

PiecewiseQuadraticCost capital_of(const EquilibriumProblem& p, NodeId k) {
    auto it = p.capital_override.find(k);
    if (it != p.capital_override.end()) return it->second;
    return PiecewiseQuadraticCost::from_quadratic(p.costs.at(k).capital);
}

double piecewise_curvature(const PiecewiseQuadraticCost& c, double x) {
    std::size_t i = 0;
    while (i + 1 < c.breaks.size() && x >= c.breaks[i + 1]) ++i;
    return 2.0 * c.pieces[i].a;
}

// one path-pair variable
struct Var {
    std::size_t triple;   // entropy group
    std::size_t cons;     // equality constraint (entry, scenario)
    std::size_t group;    // (facility, scenario) supply group
    std::size_t xi;
    double e;             // service quantity
    std::vector<std::pair<int, int>> links;  // (link id, multiplicity)
};

struct TripleInfo {
    Triple key;
    std::size_t xi;
    double beta0;
    std::vector<std::size_t> vars;
};

struct GroupInfo {  // one (candidate, scenario)
    NodeId k;
    std::size_t xi;
    std::vector<std::size_t> vars;
};

}  // namespace

EquilibriumSolution solve_reference(const EquilibriumProblem& problem) {
    problem.validate();
    if (!(problem.params.beta2 > 0.0))
        throw DomainError("reference solver: beta2 must be positive");
    const Network& net = *problem.network;
    const std::size_t ns = problem.scenarios.size();
    const auto probs = problem.scenarios.probs();
    const double w = problem.params.beta1 / problem.params.beta2;
    const bool fixed_c = problem.fixed_capacity.has_value();

    // leg path caches
    std::map<std::pair<NodeId, NodeId>, std::vector<std::vector<int>>> legs;
    auto paths_between = [&](NodeId a, NodeId b) -> const std::vector<std::vector<int>>& {
        auto it = legs.find({a, b});
        if (it == legs.end()) it = legs.emplace(std::pair{a, b}, enumerate_paths(net, a, b)).first;
        if (it->second.empty())
            throw DomainError("reference solver: no path between required nodes");
        return it->second;
    };

    std::vector<Var> vars;
    std::vector<TripleInfo> triples;
    std::vector<GroupInfo> groups;
    std::map<std::pair<NodeId, std::size_t>, std::size_t> group_index;
    std::vector<double> cons_rhs;

    for (std::size_t xi = 0; xi < ns; ++xi) {
        const double theta = problem.scenarios.scenarios[xi].theta;
        for (const auto& entry : problem.trips->entries) {
            const std::size_t cons = cons_rhs.size();
            cons_rhs.push_back(theta * entry.demand);
            for (NodeId k : problem.trips->facilities_for(entry, net)) {
                const std::size_t t_idx = triples.size();
                triples.push_back({{entry.origin, entry.destination, k}, xi,
                                   problem.params.beta0_at(k), {}});
                auto git = group_index.find({k, xi});
                if (git == group_index.end()) {
                    git = group_index.emplace(std::pair{k, xi}, groups.size()).first;
                    groups.push_back({k, xi, {}});
                }
                const auto& in_paths = paths_between(entry.origin, k);
                const auto& out_paths = paths_between(k, entry.destination);
                for (const auto& pin : in_paths)
                    for (const auto& pout : out_paths) {
                        Var v;
                        v.triple = t_idx;
                        v.cons = cons;
                        v.group = git->second;
                        v.xi = xi;
                        v.e = entry.service_quantity;
                        std::map<int, int> mult;
                        for (int li : pin) ++mult[li];
                        for (int li : pout) ++mult[li];
                        v.links.assign(mult.begin(), mult.end());
                        triples[t_idx].vars.push_back(vars.size());
                        groups[git->second].vars.push_back(vars.size());
                        vars.push_back(std::move(v));
                        if (vars.size() > kMaxVars)
                            throw DomainError("reference solver: instance too large");
                    }
            }
        }
    }

    const std::size_t nf = vars.size();
    const std::size_t nk = net.candidates.size();
    const std::size_t nc = fixed_c ? 0 : nk;
    const std::size_t nx = nf + nc;
    const std::size_t nm = cons_rhs.size();
    std::map<NodeId, std::size_t> cand_index;
    for (std::size_t i = 0; i < nk; ++i) cand_index[net.candidates[i]] = i;

    // strictly feasible start: even split per constraint, slack capacity
    Eigen::VectorXd x(nx);
    {
        std::vector<double> per_cons(nm, 0.0);
        for (const auto& v : vars) per_cons[v.cons] += 1.0;
        for (std::size_t i = 0; i < nf; ++i) x[i] = cons_rhs[vars[i].cons] / per_cons[vars[i].cons];
    }
    auto group_supply = [&](const Eigen::VectorXd& xx, std::size_t gi) {
        double g = 0.0;
        for (std::size_t vi : groups[gi].vars) g += vars[vi].e * xx[vi];
        return g;
    };
    auto capacity_at = [&](const Eigen::VectorXd& xx, NodeId k) {
        return fixed_c ? problem.fixed_capacity->at(k) : xx[nf + cand_index.at(k)];
    };
    if (!fixed_c) {
        for (std::size_t i = 0; i < nk; ++i) {
            double gmax = 1.0;
            for (std::size_t gi = 0; gi < groups.size(); ++gi)
                if (groups[gi].k == net.candidates[i]) gmax = std::max(gmax, group_supply(x, gi));
            x[nf + i] = 2.0 * gmax + 1.0;
        }
    } else {
        for (std::size_t gi = 0; gi < groups.size(); ++gi)
            if (group_supply(x, gi) >= capacity_at(x, groups[gi].k))
                throw DomainError("reference solver: fixed capacity infeasible at start");
    }

    auto flows_of = [&](const Eigen::VectorXd& xx, std::size_t xi) {
        std::vector<double> v(net.num_links(), 0.0);
        for (std::size_t i = 0; i < nf; ++i)
            if (vars[i].xi == xi)
                for (auto [li, m] : vars[i].links) v[li] += m * xx[i];
        return v;
    };

    // t * F(x) + barrier, with gradient and Hessian
    auto objective_F = [&](const Eigen::VectorXd& xx) {
        double val = 0.0;
        std::vector<double> q(triples.size(), 0.0);
        for (std::size_t i = 0; i < nf; ++i) q[vars[i].triple] += xx[i];
        for (std::size_t t = 0; t < triples.size(); ++t) {
            const double qv = q[t];
            val += probs[triples[t].xi] / problem.params.beta2 *
                   ((qv > 0.0 ? qv * std::log(qv) : 0.0) - qv - qv * triples[t].beta0);
        }
        for (std::size_t gi = 0; gi < groups.size(); ++gi)
            val += probs[groups[gi].xi] *
                   problem.costs.at(groups[gi].k).operating.value(group_supply(xx, gi));
        for (std::size_t xi = 0; xi < ns; ++xi) {
            const auto v = flows_of(xx, xi);
            double ti = 0.0;
            for (std::size_t a = 0; a < net.num_links(); ++a)
                ti += link_time_integral(net.links[a], v[a]);
            val += probs[xi] * w * ti;
        }
        for (NodeId k : net.candidates) val += capital_of(problem, k).value(capacity_at(xx, k));
        return val;
    };
    auto barrier = [&](const Eigen::VectorXd& xx) {
        double val = 0.0;
        for (std::size_t i = 0; i < nf; ++i) {
            if (xx[i] <= 0.0) return std::numeric_limits<double>::infinity();
            val -= std::log(xx[i]);
        }
        for (std::size_t i = nf; i < nx; ++i) {
            if (xx[i] <= 0.0) return std::numeric_limits<double>::infinity();
            val -= std::log(xx[i]);
        }
        for (std::size_t gi = 0; gi < groups.size(); ++gi) {
            const double s = capacity_at(xx, groups[gi].k) - group_supply(xx, gi);
            if (s <= 0.0) return std::numeric_limits<double>::infinity();
            val -= std::log(s);
        }
        return val;
    };

    const double n_ineq = static_cast<double>(nf + nc + groups.size());
    double t_barrier = 1.0;
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(nm, nx);
    for (std::size_t i = 0; i < nf; ++i) A(vars[i].cons, i) = 1.0;

    std::vector<double> final_slack_mult(groups.size(), 0.0);

    while (true) {
        for (int newton = 0; newton < 200; ++newton) {
            // assemble gradient and Hessian of t*F + barrier
            Eigen::VectorXd grad = Eigen::VectorXd::Zero(nx);
            Eigen::MatrixXd H = Eigen::MatrixXd::Zero(nx, nx);

            std::vector<double> q(triples.size(), 0.0);
            for (std::size_t i = 0; i < nf; ++i) q[vars[i].triple] += x[i];
            std::vector<double> gsup(groups.size());
            for (std::size_t gi = 0; gi < groups.size(); ++gi) gsup[gi] = group_supply(x, gi);

            // entropy
            for (std::size_t t = 0; t < triples.size(); ++t) {
                const double pi = probs[triples[t].xi];
                const double gq = t_barrier * pi / problem.params.beta2 *
                                  (std::log(q[t]) - triples[t].beta0);
                const double hq = t_barrier * pi / (problem.params.beta2 * q[t]);
                for (std::size_t i : triples[t].vars) {
                    grad[i] += gq;
                    for (std::size_t j : triples[t].vars) H(i, j) += hq;
                }
            }
            // operating cost and capacity slack barriers
            for (std::size_t gi = 0; gi < groups.size(); ++gi) {
                const auto& op = problem.costs.at(groups[gi].k).operating;
                const double pi = probs[groups[gi].xi];
                const double gm = t_barrier * pi * op.marginal(gsup[gi]);
                const double hm = t_barrier * pi * 2.0 * op.a;
                const double s = capacity_at(x, groups[gi].k) - gsup[gi];
                const double inv_s = 1.0 / s;
                const double inv_s2 = inv_s * inv_s;
                const std::size_t ci = fixed_c ? 0 : nf + cand_index.at(groups[gi].k);
                for (std::size_t i : groups[gi].vars) {
                    grad[i] += vars[i].e * (gm + inv_s);
                    for (std::size_t j : groups[gi].vars)
                        H(i, j) += vars[i].e * vars[j].e * (hm + inv_s2);
                    if (!fixed_c) {
                        H(i, ci) -= vars[i].e * inv_s2;
                        H(ci, i) -= vars[i].e * inv_s2;
                    }
                }
                if (!fixed_c) {
                    grad[ci] -= inv_s;
                    H(ci, ci) += inv_s2;
                }
            }
            // congestion
            for (std::size_t xi = 0; xi < ns; ++xi) {
                const auto v = flows_of(x, xi);
                std::vector<std::vector<std::pair<std::size_t, int>>> on_link(net.num_links());
                for (std::size_t i = 0; i < nf; ++i)
                    if (vars[i].xi == xi)
                        for (auto [li, m] : vars[i].links) on_link[li].push_back({i, m});
                for (std::size_t a = 0; a < net.num_links(); ++a) {
                    if (on_link[a].empty()) continue;
                    const double gt = t_barrier * probs[xi] * w * link_time(net.links[a], v[a]);
                    const double ht = t_barrier * probs[xi] * w * bpr_derivative(net.links[a], v[a]);
                    for (auto [i, mi] : on_link[a]) {
                        grad[i] += mi * gt;
                        for (auto [j, mj] : on_link[a]) H(i, j) += mi * mj * ht;
                    }
                }
            }
            // capital cost and positivity barriers
            if (!fixed_c)
                for (std::size_t i = 0; i < nk; ++i) {
                    const auto cap = capital_of(problem, net.candidates[i]);
                    grad[nf + i] += t_barrier * cap.marginal(x[nf + i]);
                    H(nf + i, nf + i) += t_barrier * piecewise_curvature(cap, x[nf + i]);
                }
            for (std::size_t i = 0; i < nx; ++i) {
                grad[i] -= 1.0 / x[i];
                H(i, i) += 1.0 / (x[i] * x[i]);
            }

            // KKT solve with the equality constraints
            Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(nx + nm, nx + nm);
            kkt.topLeftCorner(nx, nx) = H;
            kkt.topRightCorner(nx, nm) = A.transpose();
            kkt.bottomLeftCorner(nm, nx) = A;
            Eigen::VectorXd rhs = Eigen::VectorXd::Zero(nx + nm);
            rhs.head(nx) = -grad;
            const Eigen::VectorXd sol = kkt.partialPivLu().solve(rhs);
            const Eigen::VectorXd dx = sol.head(nx);

            const double decrement = -grad.dot(dx);
            if (!(decrement > 0.0) || 0.5 * decrement < 1e-12) break;

            // keep strictly feasible, then backtrack on the merit value
            double alpha = 1.0;
            for (std::size_t i = 0; i < nx; ++i)
                if (dx[i] < 0.0) alpha = std::min(alpha, -0.99 * x[i] / dx[i]);
            for (std::size_t gi = 0; gi < groups.size(); ++gi) {
                double ds = fixed_c ? 0.0 : dx[nf + cand_index.at(groups[gi].k)];
                for (std::size_t vi : groups[gi].vars) ds -= vars[vi].e * dx[vi];
                if (ds < 0.0) {
                    const double s = capacity_at(x, groups[gi].k) - gsup[gi];
                    alpha = std::min(alpha, -0.99 * s / ds);
                }
            }
            const double merit0 = t_barrier * objective_F(x) + barrier(x);
            int bt = 0;
            for (; bt < 60; ++bt) {
                const Eigen::VectorXd cand = x + alpha * dx;
                const double merit = t_barrier * objective_F(cand) + barrier(cand);
                if (merit <= merit0 - 0.25 * alpha * decrement) break;
                alpha *= 0.5;
            }
            if (bt == 60) break;
            x += alpha * dx;
        }
        for (std::size_t gi = 0; gi < groups.size(); ++gi)
            final_slack_mult[gi] =
                1.0 / (t_barrier * (capacity_at(x, groups[gi].k) - group_supply(x, gi)));
        if (n_ineq / t_barrier <= 1e-8 || t_barrier >= 1e13) break;
        t_barrier *= 10.0;
    }

    // assemble the solution in the production data structures
    EquilibriumSolution out;
    out.prices.probs = probs;
    for (NodeId k : net.candidates) out.prices.rho[k].assign(ns, 0.0);
    out.investor.profit = 0.0;
    for (NodeId k : net.candidates) {
        out.investor.capacity[k] = capacity_at(x, k);
        out.investor.supply[k].assign(ns, 0.0);
    }
    // The barrier multipliers 1/(t*s) carry the right per-scenario split but an
    // inexact scale; capital stationarity pins the scale: sum_xi mu = phi_c'(c).
    std::map<NodeId, double> mult_sum;
    for (std::size_t gi = 0; gi < groups.size(); ++gi)
        mult_sum[groups[gi].k] += final_slack_mult[gi];
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
        const NodeId k = groups[gi].k;
        const std::size_t xi = groups[gi].xi;
        const double g = group_supply(x, gi);
        out.investor.supply[k][xi] = g;
        double mu = final_slack_mult[gi];
        if (!fixed_c && mult_sum[k] > 0.0)
            mu *= capital_of(problem, k).marginal(out.investor.capacity[k]) / mult_sum[k];
        out.prices.rho[k][xi] = problem.costs.at(k).operating.marginal(g) + mu / probs[xi];
    }
    for (NodeId k : net.candidates) {
        out.investor.profit -= capital_of(problem, k).value(out.investor.capacity[k]);
        for (std::size_t xi = 0; xi < ns; ++xi) {
            const double g = out.investor.supply[k][xi];
            out.investor.profit +=
                probs[xi] * (out.prices.rho[k][xi] * g - problem.costs.at(k).operating.value(g));
        }
    }

    out.gcda.resize(ns);
    std::vector<double> qv(triples.size(), 0.0);
    for (std::size_t i = 0; i < nf; ++i) qv[vars[i].triple] += x[i];
    for (std::size_t t = 0; t < triples.size(); ++t)
        out.gcda[triples[t].xi].q[triples[t].key] += qv[t];
    for (std::size_t xi = 0; xi < ns; ++xi) {
        auto& g = out.gcda[xi];
        g.v = flows_of(x, xi);
        GcdaProblem gp;
        gp.network = problem.network;
        gp.trips = problem.trips;
        gp.params = problem.params;
        gp.demand_scale = problem.scenarios.scenarios[xi].theta;
        for (NodeId k : net.candidates) gp.prices[k] = out.prices.rho[k][xi];
        const auto times = evaluate_times(net, g.v);
        const auto tau = leg_times(net, times, *problem.trips);
        for (const auto& [key, qq] : g.q) {
            (void)qq;
            g.tau[key] = tau.at(std::get<0>(key), std::get<1>(key), std::get<2>(key));
        }
        g.objective = gcda_objective(g.v, g.q, gp);
        g.lower_bound = g.objective;
        g.rel_gap = 0.0;
        g.converged = true;
    }

    const auto excess = excess_supply(out.investor, out.gcda, problem);
    for (const auto& [k, ex] : excess) {
        (void)k;
        for (std::size_t xi = 0; xi < ex.size(); ++xi)
            out.residuals.max_market_residual =
                std::max(out.residuals.max_market_residual,
                         std::abs(ex[xi]) / std::max(1.0, problem.total_service_demand(xi)));
    }
    out.residuals.converged = true;
    out.residuals.duality_gap = 0.0;
    return out;
}

}  // namespace isfp
