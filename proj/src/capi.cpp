#include "isfp.h"

#include <array>
#include <filesystem>
#include <memory>
#include <fstream>
#include <sstream>
#include <string>

#include "isfp/runconfig.hpp"

namespace {

thread_local std::string g_last_error = "";

struct ConfigHandle {
    std::string base_dir;
    std::string text;                                   // original file contents
    std::vector<std::array<std::string, 3>> overrides;  // (section, key, value)
    std::string log;
};

struct ResultHandle {
    isfp::RunConfig config;
    isfp::LoadedProblem loaded;
    isfp::EquilibriumSolution solution;
};

isfp::RunConfig materialize(const ConfigHandle& h) {
    std::ostringstream text;
    text << h.text << "\n";
    for (const auto& ov : h.overrides)
        text << "[" << ov[0] << "]\n" << ov[1] << " = " << ov[2] << "\n";
    std::istringstream in(text.str());
    isfp::RunConfig cfg = isfp::parse_config(in);
    auto resolve = [&](std::string& p) {
        if (!p.empty() && std::filesystem::path(p).is_relative())
            p = (std::filesystem::path(h.base_dir) / p).string();
    };
    resolve(cfg.network_path);
    resolve(cfg.roles_path);
    resolve(cfg.trips_path);
    return cfg;
}

isfp_status fail(isfp_status code, const std::string& msg) {
    g_last_error = msg;
    return code;
}

template <typename Fn>
isfp_status guarded(Fn&& fn) {
    try {
        return fn();
    } catch (const isfp::ParseError& e) {
        return fail(ISFP_CONFIG_ERROR, e.what());
    } catch (const isfp::ValidationError& e) {
        return fail(ISFP_CONFIG_ERROR, e.what());
    } catch (const isfp::DomainError& e) {
        return fail(ISFP_CONFIG_ERROR, e.what());
    } catch (const std::exception& e) {
        return fail(ISFP_INTERNAL_ERROR, e.what());
    } catch (...) {
        return fail(ISFP_INTERNAL_ERROR, "unknown error");
    }
}

isfp_status from_exit_code(int code) {
    switch (code) {
        case 0: return ISFP_OK;
        case 1: return fail(ISFP_VERIFY_FAILED, "verification failed");
        case 3: return fail(ISFP_NOT_CONVERGED, "solver did not converge");
        default: return fail(ISFP_INTERNAL_ERROR, "unexpected pipeline exit code");
    }
}

template <typename Fn>
isfp_status run_pipeline(isfp_config* cfg, Fn&& fn) {
    if (!cfg) return fail(ISFP_INVALID_ARGUMENT, "null argument");
    auto* h = reinterpret_cast<ConfigHandle*>(cfg);
    return guarded([&] {
        const isfp::RunConfig rc = materialize(*h);
        std::ostringstream log;
        const int code = fn(rc, log);
        h->log = log.str();
        return from_exit_code(code);
    });
}

}  // namespace

extern "C" {

const char* isfp_version(void) { return "1.0.0"; }

const char* isfp_last_error(void) { return g_last_error.c_str(); }

isfp_status isfp_config_load(const char* path, isfp_config** out) {
    if (!path || !out) return fail(ISFP_INVALID_ARGUMENT, "null argument");
    *out = nullptr;
    return guarded([&] {
        std::ifstream in(path);
        if (!in) throw isfp::ParseError(std::string("cannot open config file: ") + path);
        std::ostringstream buf;
        buf << in.rdbuf();
        auto* h = new ConfigHandle;
        h->base_dir = std::filesystem::path(path).parent_path().string();
        h->text = buf.str();
        isfp::RunConfig probe = materialize(*h);  // reject malformed files eagerly
        (void)probe;
        *out = reinterpret_cast<isfp_config*>(h);
        return ISFP_OK;
    });
}

isfp_status isfp_config_set(isfp_config* cfg, const char* section_key, const char* value) {
    if (!cfg || !section_key || !value) return fail(ISFP_INVALID_ARGUMENT, "null argument");
    auto* h = reinterpret_cast<ConfigHandle*>(cfg);
    const std::string sk = section_key;
    const auto dot = sk.find('.');
    if (dot == std::string::npos || dot == 0 || dot + 1 == sk.size())
        return fail(ISFP_INVALID_ARGUMENT, "expected section.key: " + sk);
    h->overrides.push_back({sk.substr(0, dot), sk.substr(dot + 1), value});
    return guarded([&] {
        try {
            isfp::RunConfig probe = materialize(*h);  // reject bad keys/values eagerly
            (void)probe;
        } catch (...) {
            h->overrides.pop_back();
            throw;
        }
        return ISFP_OK;
    });
}

void isfp_config_free(isfp_config* cfg) { delete reinterpret_cast<ConfigHandle*>(cfg); }

const char* isfp_config_log(const isfp_config* cfg) {
    if (!cfg) return "";
    return reinterpret_cast<const ConfigHandle*>(cfg)->log.c_str();
}

isfp_status isfp_solve(isfp_config* cfg, isfp_result** out) {
    if (!cfg || !out) return fail(ISFP_INVALID_ARGUMENT, "null argument");
    *out = nullptr;
    auto* h = reinterpret_cast<ConfigHandle*>(cfg);
    return guarded([&] {
        auto res = std::make_unique<ResultHandle>();
        res->config = materialize(*h);
        res->loaded = isfp::build_problem(res->config);
        res->solution =
            isfp::solve_equilibrium(res->loaded.problem, isfp::solver_options(res->config));
        const bool ok = res->solution.residuals.converged;
        *out = reinterpret_cast<isfp_result*>(res.release());
        return ok ? ISFP_OK : from_exit_code(3);
    });
}

isfp_status isfp_result_get(const isfp_result* res, const char* field, double* out) {
    if (!res || !field || !out) return fail(ISFP_INVALID_ARGUMENT, "null argument");
    const auto* h = reinterpret_cast<const ResultHandle*>(res);
    return guarded([&]() -> isfp_status {
        const std::string f = field;
        const auto& sol = h->solution;
        if (f == "market_residual") *out = sol.residuals.max_market_residual;
        else if (f == "duality_gap") *out = sol.residuals.duality_gap;
        else if (f == "wardrop_gap") *out = sol.residuals.wardrop_gap;
        else if (f == "iterations") *out = sol.residuals.iterations;
        else if (f == "converged") *out = sol.residuals.converged ? 1.0 : 0.0;
        else if (f == "profit") *out = sol.investor.profit;
        else {
            std::vector<std::string> parts;
            std::stringstream ss(f);
            std::string item;
            while (std::getline(ss, item, '.')) parts.push_back(item);
            auto node = [&](const std::string& s) { return isfp::NodeId(std::stoi(s)); };
            if (parts.size() == 2 && parts[0] == "capacity")
                *out = sol.investor.capacity.at(node(parts[1]));
            else if (parts.size() == 3 && parts[0] == "supply")
                *out = sol.investor.supply.at(node(parts[1])).at(std::stoul(parts[2]));
            else if (parts.size() == 3 && parts[0] == "price")
                *out = sol.prices.rho.at(node(parts[1])).at(std::stoul(parts[2]));
            else
                return fail(ISFP_INVALID_ARGUMENT, "unknown result field: " + f);
        }
        return ISFP_OK;
    });
}

isfp_status isfp_result_write(const isfp_result* res, const char* out_dir) {
    if (!res) return fail(ISFP_INVALID_ARGUMENT, "null argument");
    const auto* h = reinterpret_cast<const ResultHandle*>(res);
    return guarded([&] {
        isfp::RunConfig cfg = h->config;
        if (out_dir) cfg.out_dir = out_dir;
        isfp::write_solution_files(cfg, h->loaded, h->solution);
        return ISFP_OK;
    });
}

void isfp_result_free(isfp_result* res) { delete reinterpret_cast<ResultHandle*>(res); }

isfp_status isfp_run_solve(isfp_config* cfg) {
    return run_pipeline(cfg, [](const isfp::RunConfig& rc, std::ostream& log) {
        return isfp::run_solve(rc, log);
    });
}

isfp_status isfp_run_metrics(isfp_config* cfg) {
    return run_pipeline(cfg, [](const isfp::RunConfig& rc, std::ostream& log) {
        return isfp::run_metrics(rc, log);
    });
}

isfp_status isfp_run_sweep(isfp_config* cfg) {
    return run_pipeline(cfg, [](const isfp::RunConfig& rc, std::ostream& log) {
        return isfp::run_sweep(rc, log);
    });
}

isfp_status isfp_run_verify(isfp_config* cfg, const char* solution_path) {
    if (!solution_path) return fail(ISFP_INVALID_ARGUMENT, "null argument");
    const std::string path = solution_path;
    return run_pipeline(cfg, [&path](const isfp::RunConfig& rc, std::ostream& log) {
        return isfp::run_verify(rc, path, log);
    });
}

}  // extern "C"
