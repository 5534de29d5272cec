#pragma once

#include <cstdint>
#include <vector>

#include "isfp/common.hpp"

namespace isfp {

// Demand-scale scenarios: theta multiplies every d^{rs}.
struct Scenario {
    double theta = 1.0;
    double prob = 1.0;
};

struct ScenarioSet {
    std::vector<Scenario> scenarios;
    std::uint64_t seed = 0;

    std::size_t size() const { return scenarios.size(); }
    std::vector<double> probs() const {
        std::vector<double> p;
        p.reserve(scenarios.size());
        for (const auto& s : scenarios) p.push_back(s.prob);
        return p;
    }
    double mean_theta() const {
        double m = 0.0;
        for (const auto& s : scenarios) m += s.prob * s.theta;
        return m;
    }
    void validate() const;
};

// n i.i.d. uniform draws on [theta_min, theta_max], probability 1/n each.
// Deterministic given the seed: mt19937_64 with u = draw / 2^64.
ScenarioSet generate_scenarios(int n, double theta_min, double theta_max, std::uint64_t seed);

}  // namespace isfp
