#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "isfp/stochastic.hpp"

using namespace isfp;

namespace {

struct Fixture {
    Network net;
    TripTable trips;
    EquilibriumProblem prob;
};

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

CaseResults fake_case(double provider, double user, const ScenarioSet& s) {
    CaseResults r;
    r.scenarios = s;
    r.provider_objective = provider;
    r.user_utility = user;
    r.surplus = provider + user;
    return r;
}

}  // namespace

TEST_CASE("total_utility matches the hand-computed logit surplus") {
    // one trip class, q = 100 at tau = 20, rho = 340, e = 1, b0 = 0:
    // U = (1/0.06) * 100 * (0 - 1*20 - 0.06*340) = (100/0.06) * (-40.4)
    Fixture f = make_single();
    EquilibriumOptions o;
    o.tol_mc = 1e-8;
    EquilibriumSolution s = solve_equilibrium(f.prob, o);
    const double u = total_utility(s, f.prob.params, f.trips, f.net);
    CHECK(u == doctest::Approx((100.0 / 0.06) * (-20.0 - 0.06 * 340.0)).epsilon(1e-6));

    // tau = 10 variant computed directly on a hand-built solution
    EquilibriumSolution hand = s;
    hand.gcda[0].tau[{1, 3, 2}] = 10.0;
    const double u2 = total_utility(hand, f.prob.params, f.trips, f.net);
    CHECK(u2 == doctest::Approx((100.0 / 0.06) * (-10.0 - 20.4)).epsilon(1e-9));
    CHECK(u2 == doctest::Approx(-50666.6667).epsilon(1e-7));
}

TEST_CASE("total_utility requires a positive money weight") {
    Fixture f = make_single();
    EquilibriumSolution s = solve_equilibrium(f.prob);
    UtilityParams p = f.prob.params;
    p.beta2 = 0.0;
    CHECK_THROWS_AS(total_utility(s, p, f.trips, f.net), DomainError);
}

TEST_CASE("compute_metrics differences the three cases") {
    ScenarioSet s;
    s.scenarios = {{1.0, 0.5}, {1.2, 0.5}};
    CaseResults c1 = fake_case(10.0, 100.0, s);
    c1.scenarios.scenarios = {{1.1, 1.0}};  // deterministic solves at the mean
    CaseResults c2 = fake_case(12.0, 95.0, s);
    CaseResults c3 = fake_case(11.0, 103.0, s);
    MetricsReport m = compute_metrics(c1, c2, c3);
    CHECK(m.vss_provider == doctest::Approx(2.0));
    CHECK(m.vss_user == doctest::Approx(-5.0));
    CHECK(m.vss_surplus == doctest::Approx(-3.0));
    CHECK(m.evpi_provider == doctest::Approx(-1.0));
    CHECK(m.evpi_user == doctest::Approx(8.0));
    CHECK(m.evpi_surplus == doctest::Approx(7.0));
    CHECK(!m.note.empty());
}

TEST_CASE("compute_metrics rejects mismatched scenario sets") {
    ScenarioSet a, b;
    a.scenarios = {{1.0, 0.5}, {1.2, 0.5}};
    b.scenarios = {{1.0, 0.5}, {1.3, 0.5}};
    CaseResults c1 = fake_case(1, 1, a);
    c1.scenarios.scenarios = {{1.1, 1.0}};
    CaseResults c2 = fake_case(1, 1, a);
    CaseResults c3 = fake_case(1, 1, b);
    CHECK_THROWS_AS(compute_metrics(c1, c2, c3), DomainError);

    CaseResults c1_off = fake_case(1, 1, a);
    c1_off.scenarios.scenarios = {{1.4, 1.0}};  // wrong planning mean
    CHECK_THROWS_AS(compute_metrics(c1_off, c2, fake_case(1, 1, a)), DomainError);
}

TEST_CASE("a single scenario makes all three cases coincide") {
    Fixture f = make_single();
    ScenarioSet s;
    s.scenarios = {{1.0, 1.0}};
    EquilibriumOptions o;
    o.tol_mc = 1e-8;
    o.tol_gap = 1e-6;
    CaseResults c1 = solve_case(f.prob, s, CaseMode::deterministic, o);
    CaseResults c2 = solve_case(f.prob, s, CaseMode::stochastic, o);
    CaseResults c3 = solve_case(f.prob, s, CaseMode::wait_and_see, o);
    MetricsReport m = compute_metrics(c1, c2, c3);
    CHECK(m.vss_provider == 0.0);
    CHECK(m.vss_user == 0.0);
    CHECK(m.vss_surplus == 0.0);
    CHECK(m.evpi_provider == 0.0);
    CHECK(m.evpi_user == 0.0);
    CHECK(m.evpi_surplus == 0.0);
}

TEST_CASE("stochastic case carries one capacity across scenarios") {
    Fixture f = make_single();
    ScenarioSet s;
    s.scenarios = {{0.9, 0.5}, {1.1, 0.5}};
    EquilibriumOptions o;
    o.tol_mc = 1e-7;
    CaseResults c2 = solve_case(f.prob, s, CaseMode::stochastic, o);
    REQUIRE(c2.solutions.size() == 1);
    const auto& inv = c2.solutions[0].investor;
    for (const auto& [k, c] : inv.capacity)
        for (double g : inv.supply.at(k)) CHECK(g <= c * (1.0 + 1e-8) + 1e-8);
    // demand is price-inelastic here, so the shared capacity carries the peak
    CHECK(inv.capacity.at(2) == doctest::Approx(110.0).epsilon(1e-5));

    CaseResults c3 = solve_case(f.prob, s, CaseMode::wait_and_see, o);
    REQUIRE(c3.solutions.size() == 2);
    CHECK(c3.solutions[0].investor.capacity.at(2) == doctest::Approx(90.0).epsilon(1e-5));
    CHECK(c3.solutions[1].investor.capacity.at(2) == doctest::Approx(110.0).epsilon(1e-5));
    // expected objectives are the probability average of the scenario solves
    double prov = 0.0;
    for (std::size_t i = 0; i < 2; ++i)
        prov += s.scenarios[i].prob * c3.solutions[i].investor.profit;
    CHECK(c3.provider_objective == doctest::Approx(prov).epsilon(1e-12));
}

TEST_CASE("parallel and serial wait-and-see agree") {
    Fixture f = make_single();
    ScenarioSet s;
    s.scenarios = {{0.9, 0.25}, {1.0, 0.25}, {1.1, 0.25}, {1.2, 0.25}};
    EquilibriumOptions o;
    o.tol_mc = 1e-7;
    o.num_threads = 1;
    CaseResults serial = solve_case(f.prob, s, CaseMode::wait_and_see, o);
    o.num_threads = 4;
    CaseResults par = solve_case(f.prob, s, CaseMode::wait_and_see, o);
    REQUIRE(serial.solutions.size() == par.solutions.size());
    for (std::size_t i = 0; i < serial.solutions.size(); ++i)
        CHECK(par.solutions[i].investor.capacity.at(2) ==
              doctest::Approx(serial.solutions[i].investor.capacity.at(2)).epsilon(1e-9));
    CHECK(par.provider_objective == doctest::Approx(serial.provider_objective).epsilon(1e-9));
    CHECK(par.user_utility == doctest::Approx(serial.user_utility).epsilon(1e-9));
}

TEST_CASE("deterministic case plans against the mean demand") {
    Fixture f = make_single();
    ScenarioSet s;
    s.scenarios = {{0.8, 0.5}, {1.2, 0.5}};
    EquilibriumOptions o;
    o.tol_mc = 1e-7;
    CaseResults c1 = solve_case(f.prob, s, CaseMode::deterministic, o);
    REQUIRE(c1.solutions.size() == 1);
    // mean theta is 1.0, so the plan matches the base fixture: c = 100
    CHECK(c1.solutions[0].investor.capacity.at(2) == doctest::Approx(100.0).epsilon(1e-5));
    CHECK(c1.scenarios.scenarios.size() == 2);  // evaluation set is recorded
}
