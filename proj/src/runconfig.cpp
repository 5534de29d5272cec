#include "isfp/runconfig.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace isfp {

using json = nlohmann::json;

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

double parse_num(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ParseError("config: bad numeric value for '" + key + "': " + v);
    }
}

long parse_int(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const long x = std::stol(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ParseError("config: bad integer value for '" + key + "': " + v);
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ParseError("config: bad boolean value for '" + key + "': " + v);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, sep)) out.push_back(trim(item));
    return out;
}

// "key.13" -> ("key", 13); plain keys return id -1
std::pair<std::string, NodeId> split_key(const std::string& key) {
    const auto dot = key.find('.');
    if (dot == std::string::npos) return {key, -1};
    return {key.substr(0, dot),
            static_cast<NodeId>(parse_int(key, key.substr(dot + 1)))};
}

}  // namespace

RunConfig parse_config(std::istream& text) {
    RunConfig cfg;
    std::string line, section;
    int lineno = 0;
    while (std::getline(text, line)) {
        ++lineno;
        const auto hash = line.find_first_of("#;");
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ParseError("config line " + std::to_string(lineno) + ": bad section header");
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ParseError("config line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        const auto [base, id] = split_key(key);

        if (section == "files") {
            if (key == "network") cfg.network_path = val;
            else if (key == "roles") cfg.roles_path = val;
            else if (key == "trips") cfg.trips_path = val;
            else throw ParseError("config: unknown key files." + key);
        } else if (section == "utility") {
            if (key == "beta1") cfg.params.beta1 = parse_num(key, val);
            else if (key == "beta2") cfg.params.beta2 = parse_num(key, val);
            else if (base == "beta0" && id >= 0) cfg.params.beta0[id] = parse_num(key, val);
            else throw ParseError("config: unknown key utility." + key);
        } else if (section == "costs") {
            if (key == "capital_a") cfg.capital.a = parse_num(key, val);
            else if (key == "capital_b") cfg.capital.b = parse_num(key, val);
            else if (key == "operating_a") cfg.operating.a = parse_num(key, val);
            else if (key == "operating_b") cfg.operating.b = parse_num(key, val);
            else if (base == "capital_a" && id >= 0) cfg.capital_override[id].a = parse_num(key, val);
            else if (base == "capital_b" && id >= 0) cfg.capital_override[id].b = parse_num(key, val);
            else if (base == "operating_a" && id >= 0) cfg.operating_override[id].a = parse_num(key, val);
            else if (base == "operating_b" && id >= 0) cfg.operating_override[id].b = parse_num(key, val);
            else if (base == "investors" && id >= 0) {
                // "a1:b1,a2:b2" individual capital-cost profiles at one location
                for (const auto& part : split(val, ',')) {
                    const auto ab = split(part, ':');
                    if (ab.size() != 2) throw ParseError("config: bad investor profile: " + part);
                    cfg.investors[id].push_back(
                        {parse_num(key, ab[0]), parse_num(key, ab[1])});
                }
            } else throw ParseError("config: unknown key costs." + key);
        } else if (section == "network") {
            if (key == "capacity_scale") cfg.capacity_scale = parse_num(key, val);
            else if (key == "no_congestion") cfg.no_congestion = parse_bool(key, val);
            else throw ParseError("config: unknown key network." + key);
        } else if (section == "scenarios") {
            if (key == "count") cfg.scenario_count = static_cast<int>(parse_int(key, val));
            else if (key == "theta_min") cfg.theta_min = parse_num(key, val);
            else if (key == "theta_max") cfg.theta_max = parse_num(key, val);
            else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(parse_int(key, val));
            else if (key == "explicit") {
                // "theta:prob,theta:prob,..."
                cfg.explicit_scenarios.clear();
                for (const auto& part : split(val, ',')) {
                    const auto tp = split(part, ':');
                    if (tp.size() != 2) throw ParseError("config: bad scenario entry: " + part);
                    cfg.explicit_scenarios.push_back(
                        {parse_num(key, tp[0]), parse_num(key, tp[1])});
                }
            } else throw ParseError("config: unknown key scenarios." + key);
        } else if (section == "solver") {
            if (key == "tol_mc") cfg.tol_mc = parse_num(key, val);
            else if (key == "tol_gap") cfg.tol_gap = parse_num(key, val);
            else if (key == "max_outer") cfg.max_outer = static_cast<int>(parse_int(key, val));
            else if (key == "threads") cfg.threads = static_cast<int>(parse_int(key, val));
            else if (key == "initial_price") cfg.initial_price = parse_num(key, val);
            else if (key == "initial_step") cfg.initial_step = parse_num(key, val);
            else throw ParseError("config: unknown key solver." + key);
        } else if (section == "sweep") {
            if (key == "parameter") cfg.sweep_parameter = val;
            else if (key == "values") {
                cfg.sweep_values.clear();
                if (!val.empty())
                    for (const auto& part : split(val, ',')) {
                        if (part.empty()) continue;
                        cfg.sweep_values.push_back(parse_num(key, part));
                    }
            } else throw ParseError("config: unknown key sweep." + key);
        } else if (section == "output") {
            if (key == "dir") cfg.out_dir = val;
            else throw ParseError("config: unknown key output." + key);
        } else {
            throw ParseError("config: unknown section [" + section + "]");
        }
    }
    return cfg;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open config file: " + path);
    RunConfig cfg = parse_config(in);
    // relative data paths resolve against the config file location
    const auto base = std::filesystem::path(path).parent_path();
    auto resolve = [&](std::string& p) {
        if (!p.empty() && std::filesystem::path(p).is_relative()) p = (base / p).string();
    };
    resolve(cfg.network_path);
    resolve(cfg.roles_path);
    resolve(cfg.trips_path);
    return cfg;
}

void RunConfig::validate() const {
    if (network_path.empty() || roles_path.empty() || trips_path.empty())
        throw ValidationError("config: network, roles and trips paths are required");
    for (const std::string& p : {network_path, roles_path, trips_path})
        if (!std::filesystem::exists(p)) throw ValidationError("config: file not found: " + p);
    if (!(tol_mc > 0.0) || !(tol_gap > 0.0)) throw ValidationError("config: tolerances must be positive");
    if (max_outer < 1) throw ValidationError("config: max_outer must be at least 1");
    if (threads < 1) throw ValidationError("config: threads must be at least 1");
    if (explicit_scenarios.empty()) {
        if (scenario_count < 1) throw ValidationError("config: scenario count must be at least 1");
        if (!(theta_min > 0.0) || theta_max < theta_min)
            throw ValidationError("config: bad theta range");
    }
    if (!(capacity_scale > 0.0)) throw ValidationError("config: capacity_scale must be positive");
    params.validate();
}

LoadedProblem build_problem(const RunConfig& config) {
    config.validate();
    LoadedProblem lp;
    lp.network = std::make_unique<Network>(load_network(config.network_path, config.roles_path));
    lp.trips = std::make_unique<TripTable>(load_trips(config.trips_path));
    for (auto& link : lp.network->links) {
        link.capacity_param *= config.capacity_scale;
        if (config.no_congestion) link.bpr_alpha = 0.0;
    }
    lp.trips->validate(*lp.network);
    validate_connectivity(*lp.network, *lp.trips);

    if (!config.explicit_scenarios.empty()) {
        lp.scenarios.scenarios = config.explicit_scenarios;
        lp.scenarios.seed = config.seed;
    } else {
        lp.scenarios = generate_scenarios(config.scenario_count, config.theta_min,
                                          config.theta_max, config.seed);
    }
    lp.scenarios.validate();

    lp.problem.network = lp.network.get();
    lp.problem.trips = lp.trips.get();
    lp.problem.params = config.params;
    lp.problem.scenarios = lp.scenarios;
    for (NodeId k : lp.network->candidates) {
        LocationCost lc{config.capital, config.operating};
        if (auto it = config.capital_override.find(k); it != config.capital_override.end())
            lc.capital = it->second;
        if (auto it = config.operating_override.find(k); it != config.operating_override.end())
            lc.operating = it->second;
        lp.problem.costs[k] = lc;
        if (auto it = config.investors.find(k); it != config.investors.end())
            lp.problem.capital_override[k] = aggregate_profiles(it->second);
    }
    return lp;
}

EquilibriumOptions solver_options(const RunConfig& cfg) {
    EquilibriumOptions opts;
    opts.tol_mc = cfg.tol_mc;
    opts.tol_gap = cfg.tol_gap;
    opts.max_outer = cfg.max_outer;
    opts.num_threads = cfg.threads;
    opts.initial_price = cfg.initial_price;
    opts.initial_step = cfg.initial_step;
    return opts;
}

namespace {

std::ofstream open_out(const RunConfig& cfg, const std::string& name) {
    std::filesystem::create_directories(cfg.out_dir);
    const auto path = std::filesystem::path(cfg.out_dir) / name;
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write output file: " + path.string());
    return out;
}

constexpr const char* kSchemaVersion = "isfp-solution/1";

json solution_to_json(const EquilibriumSolution& sol, const ScenarioSet& scenarios) {
    json doc;
    doc["schema_version"] = kSchemaVersion;
    doc["seed"] = scenarios.seed;
    doc["scenarios"] = json::array();
    for (const auto& s : scenarios.scenarios)
        doc["scenarios"].push_back({{"theta", s.theta}, {"prob", s.prob}});
    doc["residuals"] = {{"max_market_residual", sol.residuals.max_market_residual},
                        {"duality_gap", sol.residuals.duality_gap},
                        {"wardrop_gap", sol.residuals.wardrop_gap},
                        {"iterations", sol.residuals.iterations},
                        {"converged", sol.residuals.converged}};
    doc["investor"]["profit"] = sol.investor.profit;
    for (const auto& [k, c] : sol.investor.capacity) {
        json loc;
        loc["capacity"] = c;
        loc["supply"] = sol.investor.supply.at(k);
        loc["price"] = sol.prices.rho.at(k);
        doc["investor"]["locations"][std::to_string(k)] = std::move(loc);
    }
    doc["gcda"] = json::array();
    for (const auto& g : sol.gcda) {
        json gs;
        gs["objective"] = g.objective;
        gs["v"] = g.v;
        gs["q"] = json::array();
        for (const auto& [key, qv] : g.q)
            gs["q"].push_back({{"r", std::get<0>(key)},
                               {"s", std::get<1>(key)},
                               {"k", std::get<2>(key)},
                               {"q", qv},
                               {"tau", g.tau.at(key)}});
        doc["gcda"].push_back(std::move(gs));
    }
    return doc;
}

EquilibriumSolution solution_from_json(const json& doc, ScenarioSet& scenarios) {
    if (!doc.contains("schema_version") || doc["schema_version"] != kSchemaVersion)
        throw ParseError("solution document: unsupported schema version");
    EquilibriumSolution sol;
    scenarios.scenarios.clear();
    scenarios.seed = doc.value("seed", 0ULL);
    for (const auto& s : doc.at("scenarios"))
        scenarios.scenarios.push_back({s.at("theta").get<double>(), s.at("prob").get<double>()});
    sol.prices.probs = scenarios.probs();
    const auto& res = doc.at("residuals");
    sol.residuals.max_market_residual = res.at("max_market_residual").get<double>();
    sol.residuals.duality_gap = res.at("duality_gap").get<double>();
    sol.residuals.wardrop_gap = res.at("wardrop_gap").get<double>();
    sol.residuals.iterations = res.at("iterations").get<int>();
    sol.residuals.converged = res.at("converged").get<bool>();
    sol.investor.profit = doc.at("investor").at("profit").get<double>();
    for (const auto& [key, loc] : doc.at("investor").at("locations").items()) {
        const NodeId k = std::stoi(key);
        sol.investor.capacity[k] = loc.at("capacity").get<double>();
        sol.investor.supply[k] = loc.at("supply").get<std::vector<double>>();
        sol.prices.rho[k] = loc.at("price").get<std::vector<double>>();
    }
    for (const auto& gs : doc.at("gcda")) {
        GcdaSolution g;
        g.objective = gs.at("objective").get<double>();
        g.v = gs.at("v").get<std::vector<double>>();
        for (const auto& e : gs.at("q")) {
            const Triple key{e.at("r").get<NodeId>(), e.at("s").get<NodeId>(),
                             e.at("k").get<NodeId>()};
            g.q[key] = e.at("q").get<double>();
            g.tau[key] = e.at("tau").get<double>();
        }
        g.converged = true;
        sol.gcda.push_back(std::move(g));
    }
    return sol;
}

}  // namespace

void write_solution_files(const RunConfig& cfg, const LoadedProblem& lp,
                          const EquilibriumSolution& sol) {
    {
        auto out = open_out(cfg, "summary.json");
        out << solution_to_json(sol, lp.scenarios).dump(2) << "\n";
    }
    {
        auto out = open_out(cfg, "locations.csv");
        out << "location,scenario,theta,capacity,supply,price\n";
        for (const auto& [k, c] : sol.investor.capacity)
            for (std::size_t xi = 0; xi < lp.scenarios.size(); ++xi)
                out << k << ',' << xi << ',' << fmt_double(lp.scenarios.scenarios[xi].theta) << ','
                    << fmt_double(c) << ',' << fmt_double(sol.investor.supply.at(k)[xi]) << ','
                    << fmt_double(sol.prices.rho.at(k)[xi]) << "\n";
    }
    {
        auto out = open_out(cfg, "links.csv");
        out << "scenario,link,tail,head,flow,capacity,ratio,time\n";
        for (std::size_t xi = 0; xi < sol.gcda.size(); ++xi)
            for (std::size_t a = 0; a < lp.network->num_links(); ++a) {
                const Link& l = lp.network->links[a];
                const double v = sol.gcda[xi].v[a];
                out << xi << ',' << a << ',' << l.tail << ',' << l.head << ',' << fmt_double(v)
                    << ',' << fmt_double(l.capacity_param) << ','
                    << fmt_double(v / l.capacity_param) << ',' << fmt_double(link_time(l, v))
                    << "\n";
            }
    }
    {
        auto out = open_out(cfg, "triples.csv");
        out << "scenario,origin,destination,facility,q,tau\n";
        for (std::size_t xi = 0; xi < sol.gcda.size(); ++xi)
            for (const auto& [key, qv] : sol.gcda[xi].q)
                out << xi << ',' << std::get<0>(key) << ',' << std::get<1>(key) << ','
                    << std::get<2>(key) << ',' << fmt_double(qv) << ','
                    << fmt_double(sol.gcda[xi].tau.at(key)) << "\n";
    }
}

namespace {

double expected_travel_time(const LoadedProblem& lp, const EquilibriumSolution& sol) {
    double total = 0.0;
    const auto probs = lp.scenarios.probs();
    for (std::size_t xi = 0; xi < sol.gcda.size(); ++xi) {
        double t = 0.0;
        for (std::size_t a = 0; a < lp.network->num_links(); ++a)
            t += link_time(lp.network->links[a], sol.gcda[xi].v[a]) * sol.gcda[xi].v[a];
        total += probs[xi] * t;
    }
    return total;
}

}  // namespace

int run_solve(const RunConfig& config, std::ostream& log) {
    LoadedProblem lp = build_problem(config);
    const EquilibriumSolution sol = solve_equilibrium(lp.problem, solver_options(config));
    write_solution_files(config, lp, sol);
    log << "iterations: " << sol.residuals.iterations << "\n"
        << "market residual: " << fmt_double(sol.residuals.max_market_residual) << "\n"
        << "duality gap: " << fmt_double(sol.residuals.duality_gap) << "\n"
        << "wardrop gap: " << fmt_double(sol.residuals.wardrop_gap) << "\n"
        << "converged: " << (sol.residuals.converged ? "yes" : "no") << "\n";
    return sol.residuals.converged ? 0 : 3;
}

int run_metrics(const RunConfig& config, std::ostream& log) {
    LoadedProblem lp = build_problem(config);
    const auto opts = solver_options(config);
    const CaseResults c1 = solve_case(lp.problem, lp.scenarios, CaseMode::deterministic, opts);
    const CaseResults c2 = solve_case(lp.problem, lp.scenarios, CaseMode::stochastic, opts);
    const CaseResults c3 = solve_case(lp.problem, lp.scenarios, CaseMode::wait_and_see, opts);
    const MetricsReport m = compute_metrics(c1, c2, c3);

    bool converged = true;
    for (const auto* c : {&c1, &c2, &c3})
        for (const auto& s : c->solutions) converged = converged && s.residuals.converged;

    {
        auto out = open_out(config, "cases.csv");
        out << "case,provider_objective,user_utility,surplus\n";
        const char* names[] = {"deterministic", "stochastic", "wait_and_see"};
        const CaseResults* cases[] = {&c1, &c2, &c3};
        for (int i = 0; i < 3; ++i)
            out << names[i] << ',' << fmt_double(cases[i]->provider_objective) << ','
                << fmt_double(cases[i]->user_utility) << ',' << fmt_double(cases[i]->surplus)
                << "\n";
    }
    {
        auto out = open_out(config, "metrics.csv");
        out << "metric,provider,user,surplus,note\n";
        out << "vss," << fmt_double(m.vss_provider) << ',' << fmt_double(m.vss_user) << ','
            << fmt_double(m.vss_surplus) << ",\"" << m.note << "\"\n";
        out << "evpi," << fmt_double(m.evpi_provider) << ',' << fmt_double(m.evpi_user) << ','
            << fmt_double(m.evpi_surplus) << ",\"" << m.note << "\"\n";
    }
    log << "vss provider: " << fmt_double(m.vss_provider)
        << "  user: " << fmt_double(m.vss_user) << "  surplus: " << fmt_double(m.vss_surplus)
        << "\n"
        << "evpi provider: " << fmt_double(m.evpi_provider)
        << "  user: " << fmt_double(m.evpi_user) << "  surplus: " << fmt_double(m.evpi_surplus)
        << "\n"
        << "note: " << m.note << "\n";
    return converged ? 0 : 3;
}

int run_sweep(const RunConfig& config, std::ostream& log) {
    const std::string& p = config.sweep_parameter;
    if (p != "beta2" && p != "demand_scale" && p != "theta_max")
        throw ValidationError("sweep: unknown parameter '" + p + "'");

    auto out = open_out(config, "sweep.csv");
    out << "parameter,value,metric,location,amount\n";
    bool converged = true;
    for (double value : config.sweep_values) {
        RunConfig cfg = config;
        if (p == "beta2") cfg.params.beta2 = value;
        else if (p == "theta_max") cfg.theta_max = value;
        LoadedProblem lp = build_problem(cfg);
        if (p == "demand_scale")
            for (auto& e : lp.trips->entries) e.demand *= value;
        const EquilibriumSolution sol = solve_equilibrium(lp.problem, solver_options(cfg));
        converged = converged && sol.residuals.converged;

        out << p << ',' << fmt_double(value) << ",total_travel_time,,"
            << fmt_double(expected_travel_time(lp, sol)) << "\n";
        const auto probs = lp.scenarios.probs();
        for (const auto& [k, c] : sol.investor.capacity) {
            out << p << ',' << fmt_double(value) << ",capacity," << k << ',' << fmt_double(c)
                << "\n";
            double mean_price = 0.0;
            for (std::size_t xi = 0; xi < probs.size(); ++xi)
                mean_price += probs[xi] * sol.prices.rho.at(k)[xi];
            out << p << ',' << fmt_double(value) << ",mean_price," << k << ','
                << fmt_double(mean_price) << "\n";
        }
        log << p << " = " << fmt_double(value)
            << (sol.residuals.converged ? "  (converged)" : "  (NOT converged)") << "\n";
    }
    return converged ? 0 : 3;
}

int run_verify(const RunConfig& config, const std::string& solution_path, std::ostream& log) {
    std::ifstream in(solution_path);
    if (!in) throw ParseError("cannot open solution file: " + solution_path);
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        throw ParseError(std::string("solution document: ") + e.what());
    }
    ScenarioSet scenarios;
    EquilibriumSolution sol;
    try {
        sol = solution_from_json(doc, scenarios);
    } catch (const json::exception& e) {
        throw ParseError(std::string("solution document: ") + e.what());
    }

    LoadedProblem lp = build_problem(config);
    lp.scenarios = scenarios;       // the stored draws take precedence over regeneration
    lp.problem.scenarios = scenarios;

    const double tol = std::max(10.0 * config.tol_mc, 1e-6);
    const EquilibriumCheck chk = verify_equilibrium(sol, lp.problem, tol);
    log << "tolerance: " << fmt_double(tol) << "\n"
        << "investor residual:  " << fmt_double(chk.investor_residual) << "\n"
        << "wardrop/logit:      " << fmt_double(chk.max_wardrop_logit) << "\n"
        << "market residual:    " << fmt_double(chk.market_residual) << "\n"
        << "duality gap:        " << fmt_double(chk.gap) << "\n"
        << "verdict: " << (chk.pass ? "pass" : "FAIL (" + chk.failed_check + ")") << "\n";
    return chk.pass ? 0 : 1;
}

}  // namespace isfp
