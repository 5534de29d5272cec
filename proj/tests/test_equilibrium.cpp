#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "isfp/equilibrium.hpp"

using namespace isfp;

namespace {

struct Fixture {
    Network net;
    TripTable trips;
    EquilibriumProblem prob;
};

// 1 -> 2 -> 3 line with one candidate at 2; effectively uncongested
Fixture make_single() {
    Fixture f;
    std::istringstream net(
        "<NUMBER OF NODES> 3\n<NUMBER OF LINKS> 2\n<END OF METADATA>\n"
        "1 2 1000000 10 ;\n"
        "2 3 1000000 10 ;\n");
    std::istringstream roles("ORIGINS\n1\nDESTINATIONS\n3\nCANDIDATES\n2\n");
    f.net = parse_network(net, roles);
    std::istringstream ts("1 3 100 1\n");
    f.trips = parse_trips(ts);
    f.prob.network = &f.net;
    f.prob.trips = &f.trips;
    f.prob.params.beta1 = 1.0;
    f.prob.params.beta2 = 0.06;
    f.prob.costs[2] = {{0.1, 170.0}, {0.1, 130.0}};
    f.prob.scenarios.scenarios = {{1.0, 1.0}};
    return f;
}

// congested diamond with two candidates and two scenarios
Fixture make_diamond() {
    Fixture f;
    std::istringstream net(
        "<NUMBER OF NODES> 4\n<NUMBER OF LINKS> 4\n<END OF METADATA>\n"
        "1 2 60 10 ;\n"
        "1 3 50 12 ;\n"
        "2 4 55 8 ;\n"
        "3 4 45 6 ;\n");
    std::istringstream roles("ORIGINS\n1\nDESTINATIONS\n4\nCANDIDATES\n2 3\n");
    f.net = parse_network(net, roles);
    std::istringstream ts("1 4 80 1\n");
    f.trips = parse_trips(ts);
    f.prob.network = &f.net;
    f.prob.trips = &f.trips;
    f.prob.params.beta1 = 1.0;
    f.prob.params.beta2 = 0.08;
    f.prob.costs[2] = {{0.12, 90.0}, {0.1, 70.0}};
    f.prob.costs[3] = {{0.08, 110.0}, {0.15, 60.0}};
    f.prob.scenarios.scenarios = {{1.0, 0.6}, {1.25, 0.4}};
    return f;
}

}  // namespace

TEST_CASE("single-facility fixture clears at the closed-form price") {
    // Demand is price-inelastic at 100 service units; the clearing price
    // equates investor marginal cost: rho = 0.2c+130 + 0.2c+170 at c = g = 100
    // gives rho = 340.
    Fixture f = make_single();
    EquilibriumOptions o;
    o.tol_mc = 1e-8;
    o.tol_gap = 1e-6;
    EquilibriumSolution s = solve_equilibrium(f.prob, o);
    REQUIRE(s.residuals.converged);
    CHECK(s.prices.rho.at(2)[0] == doctest::Approx(340.0).epsilon(1e-6));
    CHECK(s.investor.capacity.at(2) == doctest::Approx(100.0).epsilon(1e-6));
    CHECK(s.investor.supply.at(2)[0] == doctest::Approx(100.0).epsilon(1e-6));
    CHECK(s.investor.profit == doctest::Approx(2000.0).epsilon(1e-5));
    CHECK(s.residuals.duality_gap <= 1e-6);
}

TEST_CASE("excess_supply is supply minus served demand") {
    Fixture f = make_single();
    EquilibriumSolution s = solve_equilibrium(f.prob);
    auto ex = excess_supply(s.investor, s.gcda, f.prob);
    REQUIRE(ex.count(2) == 1);
    double served = 0.0;
    for (const auto& [key, qv] : s.gcda[0].q) served += qv;  // e = 1
    CHECK(ex.at(2)[0] == doctest::Approx(s.investor.supply.at(2)[0] - served).epsilon(1e-12));
}

TEST_CASE("dual_step projects prices and rejects bad step sizes") {
    PriceField p;
    p.rho = {{2, {10.0, 50.0}}};
    p.probs = {0.5, 0.5};
    std::map<NodeId, std::vector<double>> ex = {{2, {30.0, -20.0}}};
    dual_step(p, ex, 1.0);
    CHECK(p.rho.at(2)[0] == 0.0);   // 10 - 30 projected to 0
    CHECK(p.rho.at(2)[1] == 70.0);  // 50 + 20
    CHECK_THROWS_AS(dual_step(p, ex, 0.0), DomainError);
}

TEST_CASE("recover_prices inverts the probability weighting") {
    std::map<NodeId, std::vector<double>> lambda = {{2, {17.0, 3.0}}};
    auto rho = recover_prices(lambda, {0.05, 0.95});
    CHECK(rho.at(2)[0] == doctest::Approx(340.0).epsilon(1e-12));
    CHECK(rho.at(2)[1] == doctest::Approx(3.0 / 0.95).epsilon(1e-12));
}

TEST_CASE("dual gradient matches finite differences of the assembled dual") {
    Fixture f = make_diamond();
    const auto probs = f.prob.scenarios.probs();
    const double w = f.prob.params.beta1 / f.prob.params.beta2;

    // D(rho) assembled from the public subproblem solvers
    auto dual_at = [&](const PriceField& prices) {
        std::map<NodeId, std::vector<double>> pr;
        for (const auto& [k, v] : prices.rho) pr[k] = v;
        InvestorSolution inv = solve_investor(pr, probs, f.prob.costs);
        double d = -inv.profit;
        for (std::size_t xi = 0; xi < probs.size(); ++xi) {
            GcdaProblem gp;
            gp.network = &f.net;
            gp.trips = &f.trips;
            gp.params = f.prob.params;
            gp.demand_scale = f.prob.scenarios.scenarios[xi].theta;
            for (const auto& [k, v] : prices.rho) gp.prices[k] = v[xi];
            GcdaOptions go;
            go.tol = 1e-13;
            d += probs[xi] * w * solve_gcda(gp, go).objective;
        }
        return d;
    };
    auto excess_at = [&](const PriceField& prices) {
        std::map<NodeId, std::vector<double>> pr;
        for (const auto& [k, v] : prices.rho) pr[k] = v;
        InvestorSolution inv = solve_investor(pr, probs, f.prob.costs);
        std::vector<GcdaSolution> g;
        for (std::size_t xi = 0; xi < probs.size(); ++xi) {
            GcdaProblem gp;
            gp.network = &f.net;
            gp.trips = &f.trips;
            gp.params = f.prob.params;
            gp.demand_scale = f.prob.scenarios.scenarios[xi].theta;
            for (const auto& [k, v] : prices.rho) gp.prices[k] = v[xi];
            GcdaOptions go;
            go.tol = 1e-13;
            g.push_back(solve_gcda(gp, go));
        }
        return excess_supply(inv, g, f.prob);
    };

    PriceField prices;
    prices.probs = probs;
    prices.rho = {{2, {140.0, 150.0}}, {3, {135.0, 160.0}}};
    const auto ex = excess_at(prices);
    const double h = 1e-3;
    for (NodeId k : {2, 3})
        for (std::size_t xi = 0; xi < 2; ++xi) {
            PriceField up = prices, dn = prices;
            up.rho[k][xi] += h;
            dn.rho[k][xi] -= h;
            const double fd = (dual_at(up) - dual_at(dn)) / (2.0 * h);
            // dD/drho_k,xi = -pi_xi * excess_k,xi
            const double an = -probs[xi] * ex.at(k)[xi];
            CHECK(std::abs(fd - an) <= 1e-5 * std::max(1.0, std::abs(an)));
        }
}

TEST_CASE("congested two-scenario instance converges and verifies") {
    Fixture f = make_diamond();
    EquilibriumOptions o;
    o.tol_mc = 1e-6;
    o.tol_gap = 1e-6;
    EquilibriumSolution s = solve_equilibrium(f.prob, o);
    REQUIRE(s.residuals.converged);
    CHECK(s.residuals.max_market_residual <= 1e-6);
    CHECK(s.residuals.duality_gap <= 1e-6);
    CHECK(s.residuals.wardrop_gap <= 1e-4);

    EquilibriumCheck chk = verify_equilibrium(s, f.prob, 1e-4);
    CHECK(chk.pass);
    CHECK(chk.failed_check.empty());

    // capacity covers every scenario's supply
    for (const auto& [k, c] : s.investor.capacity)
        for (double g : s.investor.supply.at(k)) CHECK(g <= c * (1.0 + 1e-8) + 1e-8);
}

TEST_CASE("solver agrees with the independent reference oracle") {
    Fixture f = make_diamond();
    EquilibriumSolution ref = solve_reference(f.prob);
    EquilibriumOptions o;
    o.tol_mc = 1e-7;
    o.tol_gap = 1e-7;
    o.max_outer = 20000;
    EquilibriumSolution s = solve_equilibrium(f.prob, o);
    for (const auto& [k, c] : ref.investor.capacity) {
        CHECK(s.investor.capacity.at(k) == doctest::Approx(c).epsilon(1e-4));
        for (std::size_t xi = 0; xi < 2; ++xi)
            CHECK(s.investor.supply.at(k)[xi] ==
                  doctest::Approx(ref.investor.supply.at(k)[xi]).epsilon(1e-4));
        double er = 0.0, es = 0.0;
        for (std::size_t xi = 0; xi < 2; ++xi) {
            er += ref.prices.probs[xi] * ref.prices.rho.at(k)[xi];
            es += s.prices.probs[xi] * s.prices.rho.at(k)[xi];
        }
        CHECK(es == doctest::Approx(er).epsilon(1e-4));
    }
    for (std::size_t xi = 0; xi < 2; ++xi)
        for (const auto& [key, qv] : ref.gcda[xi].q)
            CHECK(s.gcda[xi].q.at(key) == doctest::Approx(qv).epsilon(1e-3));
}

TEST_CASE("weak duality holds along the outer iterates") {
    Fixture f = make_diamond();
    EquilibriumOptions o;
    o.tol_mc = 1e-6;
    o.tol_gap = 1e-6;
    double worst = 0.0;
    o.iterate_hook = [&](int, double primal, double dual) {
        worst = std::max(worst, (dual - primal) / std::max(1.0, std::abs(primal)));
    };
    solve_equilibrium(f.prob, o);
    CHECK(worst <= 1e-9);
}

TEST_CASE("price initialization does not change the equilibrium allocation") {
    Fixture f = make_diamond();
    EquilibriumOptions o;
    o.tol_mc = 1e-7;
    o.tol_gap = 1e-7;
    o.max_outer = 20000;
    EquilibriumSolution a = solve_equilibrium(f.prob, o);
    o.initial_price = 500.0;
    EquilibriumSolution b = solve_equilibrium(f.prob, o);
    for (const auto& [k, c] : a.investor.capacity) {
        CHECK(b.investor.capacity.at(k) == doctest::Approx(c).epsilon(1e-4));
        for (std::size_t xi = 0; xi < 2; ++xi)
            CHECK(b.investor.supply.at(k)[xi] ==
                  doctest::Approx(a.investor.supply.at(k)[xi]).epsilon(1e-4));
    }
}

TEST_CASE("combined_objective rejects infeasible points and verify flags tampering") {
    Fixture f = make_single();
    EquilibriumOptions o;
    o.tol_mc = 1e-9;  // combined_objective audits feasibility tightly
    EquilibriumSolution s = solve_equilibrium(f.prob, o);
    const double base = combined_objective(s, f.prob);
    CHECK(std::isfinite(base));

    EquilibriumSolution bad = s;
    bad.investor.supply[2][0] *= 0.5;  // supply no longer covers demand
    CHECK_THROWS_AS(combined_objective(bad, f.prob), DomainError);

    EquilibriumSolution off = s;
    off.prices.rho[2][0] += 25.0;
    EquilibriumCheck chk = verify_equilibrium(off, f.prob, 1e-4);
    CHECK(!chk.pass);
    CHECK(!chk.failed_check.empty());
}

TEST_CASE("fixed capacities are honored in re-evaluation mode") {
    Fixture f = make_diamond();
    EquilibriumSolution s = solve_equilibrium(f.prob);
    std::map<NodeId, double> caps;
    for (const auto& [k, c] : s.investor.capacity) caps[k] = c * 1.5;  // slack caps
    f.prob.fixed_capacity = caps;
    EquilibriumSolution r = solve_equilibrium(f.prob);
    for (const auto& [k, c] : caps) {
        CHECK(r.investor.capacity.at(k) == doctest::Approx(c).epsilon(1e-12));
        for (double g : r.investor.supply.at(k)) CHECK(g <= c * (1.0 + 1e-9) + 1e-9);
    }
}

TEST_CASE("aggregated investor profiles reproduce the single-investor total") {
    Fixture f = make_single();
    EquilibriumOptions o;
    o.tol_mc = 1e-8;
    EquilibriumSolution base = solve_equilibrium(f.prob, o);

    // two investors whose infimal convolution equals the original quadratic:
    // identical (0.2, 170) profiles aggregate to (0.1, 170)
    f.prob.capital_override[2] = aggregate_profiles({{0.2, 170.0}, {0.2, 170.0}});
    EquilibriumSolution agg = solve_equilibrium(f.prob, o);
    CHECK(agg.investor.capacity.at(2) ==
          doctest::Approx(base.investor.capacity.at(2)).epsilon(1e-6));

    auto split = allocate_capacity(agg.investor.capacity.at(2), {{0.2, 170.0}, {0.2, 170.0}});
    CHECK(split[0] + split[1] == doctest::Approx(agg.investor.capacity.at(2)).epsilon(1e-14));
    CHECK(split[0] == doctest::Approx(split[1]).epsilon(1e-9));
}

TEST_CASE("solve_equilibrium is deterministic") {
    Fixture f = make_diamond();
    EquilibriumOptions o;
    o.tol_mc = 1e-6;
    EquilibriumSolution a = solve_equilibrium(f.prob, o);
    EquilibriumSolution b = solve_equilibrium(f.prob, o);
    CHECK(a.residuals.iterations == b.residuals.iterations);
    for (const auto& [k, c] : a.investor.capacity) CHECK(b.investor.capacity.at(k) == c);
    for (const auto& [k, v] : a.prices.rho)
        for (std::size_t xi = 0; xi < v.size(); ++xi) CHECK(b.prices.rho.at(k)[xi] == v[xi]);
}
