// Command-line frontend; talks to the solver only through the C API.

#include <CLI11.hpp>

#include <cstdio>
#include <string>

#include "isfp.h"

namespace {

struct CommonFlags {
    std::string config_path;
    std::string out_dir;
    bool no_congestion = false;
    long long seed = -1;
    int threads = 0;
    double tol_mc = -1.0;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
    cmd->add_option("--config", f.config_path, "run configuration file")->required();
    cmd->add_option("--out", f.out_dir, "output directory");
    cmd->add_flag("--no-congestion", f.no_congestion, "force free-flow link times (BPR alpha = 0)");
    cmd->add_option("--seed", f.seed, "scenario seed override");
    cmd->add_option("--threads", f.threads, "worker thread cap");
    cmd->add_option("--tol-mc", f.tol_mc, "market-clearing tolerance override");
}

// config/flag problems -> exit 2 per the CLI contract
int fatal_config(const char* what) {
    std::fprintf(stderr, "error: %s\n", what);
    return 2;
}

isfp_config* load_with_flags(const CommonFlags& f, int& err) {
    isfp_config* cfg = nullptr;
    if (isfp_config_load(f.config_path.c_str(), &cfg) != ISFP_OK) {
        err = fatal_config(isfp_last_error());
        return nullptr;
    }
    auto set = [&](const char* key, const std::string& value) {
        if (cfg && isfp_config_set(cfg, key, value.c_str()) != ISFP_OK) {
            err = fatal_config(isfp_last_error());
            isfp_config_free(cfg);
            cfg = nullptr;
        }
    };
    if (!f.out_dir.empty()) set("output.dir", f.out_dir);
    if (f.no_congestion) set("network.no_congestion", "true");
    if (f.seed >= 0) set("scenarios.seed", std::to_string(f.seed));
    if (f.threads > 0) set("solver.threads", std::to_string(f.threads));
    if (f.tol_mc > 0.0) set("solver.tol_mc", std::to_string(f.tol_mc));
    return cfg;
}

int exit_code_of(isfp_status st) {
    switch (st) {
        case ISFP_OK: return 0;
        case ISFP_VERIFY_FAILED: return 1;
        case ISFP_NOT_CONVERGED: return 3;
        default: return 2;
    }
}

int run(isfp_status (*pipeline)(isfp_config*), const CommonFlags& flags) {
    int err = 0;
    isfp_config* cfg = load_with_flags(flags, err);
    if (!cfg) return err;
    const isfp_status st = pipeline(cfg);
    std::fputs(isfp_config_log(cfg), stdout);
    if (st != ISFP_OK) std::fprintf(stderr, "error: %s\n", isfp_last_error());
    isfp_config_free(cfg);
    return exit_code_of(st);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"competitive equilibrium solver for intermediate service facility planning"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(isfp_version()));

    CommonFlags solve_f, metrics_f, sweep_f, verify_f;
    std::string solution_path;

    auto* solve = app.add_subcommand("solve", "solve one equilibrium and write artifacts");
    add_common(solve, solve_f);
    auto* metrics = app.add_subcommand("metrics", "run the three information cases and VSS/EVPI");
    add_common(metrics, metrics_f);
    auto* sweep = app.add_subcommand("sweep", "solve across a parameter value list");
    add_common(sweep, sweep_f);
    auto* verify = app.add_subcommand("verify", "check a stored solution document");
    add_common(verify, verify_f);
    verify->add_option("solution", solution_path, "summary.json produced by solve")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    if (solve->parsed()) return run(&isfp_run_solve, solve_f);
    if (metrics->parsed()) return run(&isfp_run_metrics, metrics_f);
    if (sweep->parsed()) return run(&isfp_run_sweep, sweep_f);
    if (verify->parsed()) {
        int err = 0;
        isfp_config* cfg = load_with_flags(verify_f, err);
        if (!cfg) return err;
        const isfp_status st = isfp_run_verify(cfg, solution_path.c_str());
        std::fputs(isfp_config_log(cfg), stdout);
        if (st != ISFP_OK && st != ISFP_VERIFY_FAILED)
            std::fprintf(stderr, "error: %s\n", isfp_last_error());
        isfp_config_free(cfg);
        return exit_code_of(st);
    }
    return 2;
}
