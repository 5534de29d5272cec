#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "isfp/investor.hpp"

using namespace isfp;

TEST_CASE("optimal_supply hits the interior stationary point and the bounds") {
    QuadraticCost op{0.1, 130.0};
    // interior: g = (rho - b) / (2a) = (340 - 130) / 0.2 = 1050
    CHECK(optimal_supply(340.0, op, 1e9) == doctest::Approx(1050.0).epsilon(1e-12));
    // capacity cap binds
    CHECK(optimal_supply(340.0, op, 100.0) == doctest::Approx(100.0).epsilon(1e-12));
    // price below marginal cost at zero -> no supply
    CHECK(optimal_supply(120.0, op, 100.0) == 0.0);
    // linear operating cost: bang-bang at the cap
    QuadraticCost lin{0.0, 130.0};
    CHECK(optimal_supply(131.0, lin, 80.0) == doctest::Approx(80.0));
    CHECK(optimal_supply(129.0, lin, 80.0) == 0.0);
}

TEST_CASE("solve_location matches the closed-form single-scenario optimum") {
    // marginal revenue 340 - (0.2c + 130) equals marginal capital 0.2c + 170 at c = 100
    LocationCost cost{{0.1, 170.0}, {0.1, 130.0}};
    LocationSolve ls = solve_location({340.0}, {1.0}, cost);
    CHECK(ls.capacity == doctest::Approx(100.0).epsilon(1e-9));
    REQUIRE(ls.supply.size() == 1);
    CHECK(ls.supply[0] == doctest::Approx(100.0).epsilon(1e-9));
    // profit = 340*100 - (0.1*100^2 + 130*100) - (0.1*100^2 + 170*100) = 2000
    CHECK(ls.profit == doctest::Approx(2000.0).epsilon(1e-9));
}

TEST_CASE("solve_location beats a dense grid over capacity") {
    LocationCost cost{{0.07, 55.0}, {0.12, 40.0}};
    const std::vector<double> prices = {80.0, 140.0, 260.0};
    const std::vector<double> probs = {0.5, 0.3, 0.2};
    LocationSolve ls = solve_location(prices, probs, cost);

    auto profit_at = [&](double c) {
        double p = -cost.capital.value(c);
        for (std::size_t i = 0; i < prices.size(); ++i) {
            const double g = optimal_supply(prices[i], cost.operating, c);
            p += probs[i] * (prices[i] * g - cost.operating.value(g));
        }
        return p;
    };
    double best = 0.0, best_val = profit_at(0.0);
    for (int i = 1; i <= 40000; ++i) {
        const double c = i * 0.05;
        const double val = profit_at(c);
        if (val > best_val) {
            best_val = val;
            best = c;
        }
    }
    CHECK(ls.capacity == doctest::Approx(best).epsilon(1e-3));
    CHECK(ls.profit >= best_val - 1e-6 * std::abs(best_val));
    CHECK(ls.profit == doctest::Approx(profit_at(ls.capacity)).epsilon(1e-10));
}

TEST_CASE("solve_investor sums locations and investor_objective agrees") {
    std::map<NodeId, LocationCost> costs = {
        {2, {{0.1, 170.0}, {0.1, 130.0}}},
        {3, {{0.2, 60.0}, {0.05, 90.0}}},
    };
    std::map<NodeId, std::vector<double>> prices = {{2, {340.0}}, {3, {200.0}}};
    const std::vector<double> probs = {1.0};
    InvestorSolution s = solve_investor(prices, probs, costs);
    CHECK(s.capacity.at(2) == doctest::Approx(100.0).epsilon(1e-9));
    CHECK(investor_objective(s, prices, probs, costs) == doctest::Approx(s.profit).epsilon(1e-10));
    // any feasible perturbation does worse
    InvestorSolution worse = s;
    worse.capacity[3] += 5.0;
    CHECK(investor_objective(worse, prices, probs, costs) <= s.profit + 1e-9);
}

TEST_CASE("aggregate_profiles of identical investors halves the curvature") {
    PiecewiseQuadraticCost agg = aggregate_profiles({{0.2, 35.0}, {0.2, 35.0}});
    REQUIRE(agg.pieces.size() >= 1);
    CHECK(agg.pieces.front().a == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(agg.pieces.front().b == doctest::Approx(35.0).epsilon(1e-12));
    CHECK(agg.value(10.0) == doctest::Approx(0.1 * 100.0 + 350.0).epsilon(1e-10));
}

TEST_CASE("aggregate_profiles with distinct intercepts has the right breakpoint") {
    // investor 2 alone until its marginal 2*1*x + 17 reaches 170, i.e. x = 76.5
    PiecewiseQuadraticCost agg = aggregate_profiles({{0.1, 170.0}, {1.0, 17.0}});
    bool found = false;
    for (double b : agg.breaks)
        if (std::abs(b - 76.5) < 1e-9) found = true;
    CHECK(found);
    // below the breakpoint the cheap investor's quadratic applies exactly
    CHECK(agg.value(50.0) == doctest::Approx(1.0 * 2500.0 + 17.0 * 50.0).epsilon(1e-10));
    CHECK(agg.marginal(50.0) == doctest::Approx(117.0).epsilon(1e-10));
    // above it, marginal follows the harmonic-mean curvature
    const double a_joint = 1.0 / (1.0 / 0.1 + 1.0 / 1.0);
    CHECK(agg.marginal(100.0) ==
          doctest::Approx(170.0 + 2.0 * a_joint * (100.0 - 76.5)).epsilon(1e-9));
    agg.validate();
}

TEST_CASE("aggregate_profiles equals a brute-force split minimization") {
    const std::vector<InvestorProfile> profs = {{0.3, 20.0}, {0.15, 45.0}, {0.6, 10.0}};
    PiecewiseQuadraticCost agg = aggregate_profiles(profs);
    auto single = [&](const InvestorProfile& pr, double x) { return pr.a * x * x + pr.b * x; };
    for (double total : {5.0, 30.0, 120.0, 400.0}) {
        // scan splits (x1, x2), x3 = total - x1 - x2
        double best = 1e300;
        const int n = 400;
        for (int i = 0; i <= n; ++i)
            for (int j = 0; j <= n - i; ++j) {
                const double x1 = total * i / n;
                const double x2 = total * j / n;
                const double x3 = total - x1 - x2;
                best = std::min(best, single(profs[0], x1) + single(profs[1], x2) +
                                          single(profs[2], x3));
            }
        CHECK(agg.value(total) <= best + 1e-9 * std::max(1.0, best));
        CHECK(agg.value(total) >= best - 0.05 * total);  // grid resolution slack
    }
}

TEST_CASE("allocate_capacity sums exactly and equalizes marginals") {
    const std::vector<InvestorProfile> profs = {{0.1, 170.0}, {1.0, 17.0}};
    for (double total : {10.0, 76.5, 120.0, 500.0}) {
        auto split = allocate_capacity(total, profs);
        REQUIRE(split.size() == 2);
        CHECK(split[0] + split[1] == doctest::Approx(total).epsilon(1e-14));
        CHECK(split[0] >= 0.0);
        CHECK(split[1] >= 0.0);
        // active investors share a common marginal; inactive ones are priced out
        const double m0 = 2.0 * profs[0].a * split[0] + profs[0].b;
        const double m1 = 2.0 * profs[1].a * split[1] + profs[1].b;
        if (split[0] > 1e-12 && split[1] > 1e-12)
            CHECK(m0 == doctest::Approx(m1).epsilon(1e-9));
        else if (split[0] <= 1e-12)
            CHECK(profs[0].b >= m1 - 1e-9);
    }
    // below the 76.5 breakpoint only the cheap investor builds
    auto small = allocate_capacity(40.0, profs);
    CHECK(small[0] == 0.0);
    CHECK(small[1] == doctest::Approx(40.0));
}

TEST_CASE("piecewise cost validation catches broken structures") {
    PiecewiseQuadraticCost bad;
    bad.breaks = {0.0, 10.0};
    bad.pieces = {{0.1, 5.0}};
    CHECK_THROWS_AS(bad.validate(), DomainError);
    QuadraticCost neg{-0.1, 3.0};
    CHECK_THROWS_AS(neg.validate(), DomainError);
}

TEST_CASE("from_quadratic round-trips value and marginal") {
    QuadraticCost qc{0.25, 12.0};
    PiecewiseQuadraticCost pw = PiecewiseQuadraticCost::from_quadratic(qc);
    for (double x : {0.0, 1.0, 7.3, 250.0}) {
        CHECK(pw.value(x) == doctest::Approx(qc.value(x)).epsilon(1e-12));
        CHECK(pw.marginal(x) == doctest::Approx(qc.marginal(x)).epsilon(1e-12));
    }
}
