#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include "isfp.h"

namespace fs = std::filesystem;

namespace {

fs::path write_fixture() {
    const fs::path dir = fs::temp_directory_path() / "isfp_capi_test";
    fs::create_directories(dir);
    std::ofstream(dir / "net.tntp")
        << "<NUMBER OF NODES> 3\n<NUMBER OF LINKS> 2\n<END OF METADATA>\n"
        << "1 2 1000000 10 ;\n"
        << "2 3 1000000 10 ;\n";
    std::ofstream(dir / "roles.txt") << "ORIGINS\n1\nDESTINATIONS\n3\nCANDIDATES\n2\n";
    std::ofstream(dir / "trips.txt") << "1 3 100 1\n";
    std::ofstream(dir / "run.cfg") << "[files]\n"
                                      "network = net.tntp\n"
                                      "roles = roles.txt\n"
                                      "trips = trips.txt\n"
                                      "[utility]\n"
                                      "beta1 = 1\n"
                                      "beta2 = 0.06\n"
                                      "[costs]\n"
                                      "capital_a = 0.1\n"
                                      "capital_b = 170\n"
                                      "operating_a = 0.1\n"
                                      "operating_b = 130\n"
                                      "[solver]\n"
                                      "tol_mc = 1e-7\n";
    return dir;
}

}  // namespace

TEST_CASE("version and error strings are always available") {
    REQUIRE(isfp_version() != nullptr);
    CHECK(std::strlen(isfp_version()) > 0);
    REQUIRE(isfp_last_error() != nullptr);
}

TEST_CASE("config load reports missing and malformed files") {
    isfp_config* cfg = nullptr;
    CHECK(isfp_config_load("/nonexistent/path.cfg", &cfg) == ISFP_CONFIG_ERROR);
    CHECK(cfg == nullptr);
    CHECK(std::string(isfp_last_error()).find("cannot open") != std::string::npos);

    const fs::path dir = write_fixture();
    const fs::path bad = dir / "bad.cfg";
    std::ofstream(bad) << "[solver]\nbogus_key = 1\n";
    CHECK(isfp_config_load(bad.string().c_str(), &cfg) == ISFP_CONFIG_ERROR);
    CHECK(cfg == nullptr);

    CHECK(isfp_config_load(nullptr, &cfg) == ISFP_INVALID_ARGUMENT);
}

TEST_CASE("config overrides validate eagerly") {
    const fs::path dir = write_fixture();
    isfp_config* cfg = nullptr;
    REQUIRE(isfp_config_load((dir / "run.cfg").string().c_str(), &cfg) == ISFP_OK);
    CHECK(isfp_config_set(cfg, "solver.threads", "2") == ISFP_OK);
    CHECK(isfp_config_set(cfg, "solver.threads", "abc") == ISFP_CONFIG_ERROR);
    CHECK(isfp_config_set(cfg, "nodots", "1") == ISFP_INVALID_ARGUMENT);
    CHECK(isfp_config_set(cfg, "solver.nosuch", "1") == ISFP_CONFIG_ERROR);
    // the failed overrides were rolled back; the handle still works
    isfp_result* res = nullptr;
    CHECK(isfp_solve(cfg, &res) == ISFP_OK);
    isfp_result_free(res);
    isfp_config_free(cfg);
}

TEST_CASE("solve produces a queryable result") {
    const fs::path dir = write_fixture();
    isfp_config* cfg = nullptr;
    REQUIRE(isfp_config_load((dir / "run.cfg").string().c_str(), &cfg) == ISFP_OK);
    isfp_result* res = nullptr;
    REQUIRE(isfp_solve(cfg, &res) == ISFP_OK);
    REQUIRE(res != nullptr);

    double v = 0.0;
    CHECK(isfp_result_get(res, "converged", &v) == ISFP_OK);
    CHECK(v == 1.0);
    CHECK(isfp_result_get(res, "market_residual", &v) == ISFP_OK);
    CHECK(v <= 1e-7);
    CHECK(isfp_result_get(res, "duality_gap", &v) == ISFP_OK);
    CHECK(v <= 1e-4);
    CHECK(isfp_result_get(res, "capacity.2", &v) == ISFP_OK);
    CHECK(v == doctest::Approx(100.0).epsilon(1e-5));
    CHECK(isfp_result_get(res, "supply.2.0", &v) == ISFP_OK);
    CHECK(v == doctest::Approx(100.0).epsilon(1e-5));
    CHECK(isfp_result_get(res, "price.2.0", &v) == ISFP_OK);
    CHECK(v == doctest::Approx(340.0).epsilon(1e-5));
    CHECK(isfp_result_get(res, "profit", &v) == ISFP_OK);
    CHECK(v == doctest::Approx(2000.0).epsilon(1e-4));
    CHECK(isfp_result_get(res, "nosuch", &v) == ISFP_INVALID_ARGUMENT);
    CHECK(isfp_result_get(nullptr, "profit", &v) == ISFP_INVALID_ARGUMENT);

    const fs::path out = dir / "via_capi";
    CHECK(isfp_result_write(res, out.string().c_str()) == ISFP_OK);
    CHECK(fs::exists(out / "summary.json"));

    isfp_result_free(res);
    isfp_config_free(cfg);
}

TEST_CASE("pipelines run end to end and logs are captured") {
    const fs::path dir = write_fixture();
    isfp_config* cfg = nullptr;
    REQUIRE(isfp_config_load((dir / "run.cfg").string().c_str(), &cfg) == ISFP_OK);
    const fs::path out = dir / "pipe_out";
    REQUIRE(isfp_config_set(cfg, "output.dir", out.string().c_str()) == ISFP_OK);

    CHECK(isfp_run_solve(cfg) == ISFP_OK);
    CHECK(std::string(isfp_config_log(cfg)).find("converged: yes") != std::string::npos);
    CHECK(fs::exists(out / "summary.json"));

    CHECK(isfp_run_verify(cfg, (out / "summary.json").string().c_str()) == ISFP_OK);
    CHECK(std::string(isfp_config_log(cfg)).find("verdict: pass") != std::string::npos);

    CHECK(isfp_run_metrics(cfg) == ISFP_OK);
    CHECK(fs::exists(out / "metrics.csv"));

    REQUIRE(isfp_config_set(cfg, "sweep.values", "0.06, 0.6") == ISFP_OK);
    CHECK(isfp_run_sweep(cfg) == ISFP_OK);
    CHECK(fs::exists(out / "sweep.csv"));

    CHECK(isfp_run_verify(cfg, nullptr) == ISFP_INVALID_ARGUMENT);
    CHECK(isfp_run_solve(nullptr) == ISFP_INVALID_ARGUMENT);
    isfp_config_free(cfg);
    isfp_config_free(nullptr);  // must be a no-op
}
