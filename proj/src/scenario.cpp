#include "isfp/scenario.hpp"

#include <cmath>
#include <random>

namespace isfp {

void ScenarioSet::validate() const {
    if (scenarios.empty()) throw DomainError("scenario set is empty");
    double total = 0.0;
    for (const auto& s : scenarios) {
        if (!(s.prob > 0.0)) throw DomainError("scenario probability must be positive");
        if (!(s.theta > 0.0)) throw DomainError("scenario theta must be positive");
        total += s.prob;
    }
    if (std::abs(total - 1.0) > 1e-9)
        throw DomainError("scenario probabilities must sum to 1");
}

ScenarioSet generate_scenarios(int n, double theta_min, double theta_max, std::uint64_t seed) {
    if (n < 1) throw DomainError("scenario count must be at least 1");
    if (!(theta_min > 0.0) || theta_max < theta_min)
        throw DomainError("invalid theta range");
    ScenarioSet set;
    set.seed = seed;
    std::mt19937_64 rng(seed);
    set.scenarios.reserve(n);
    for (int i = 0; i < n; ++i) {
        // explicit mapping (not std::uniform_real_distribution) so the stream is
        // reproducible across standard library implementations
        const double u = static_cast<double>(rng()) * 0x1p-64;
        set.scenarios.push_back({theta_min + u * (theta_max - theta_min), 1.0 / n});
    }
    return set;
}

}  // namespace isfp
